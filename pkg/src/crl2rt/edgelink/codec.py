"""Binary wire formats shared by the plant, edge and cloud processes.

Every packet is little-endian, starts with a four-byte magic and a u16
version, and ends with a CRC32 of everything before it. On a stream each
packet is preceded by a u32 byte length (see :func:`frame`).

Weight packet (``CRLW``)::

    magic 4s | version u16 | sequence u32 | layers u16
    per layer: rows u32 | cols u32 | rows*cols f32 (row-major) | rows f32
    crc32 u32

Buffer packet (``CRLB``)::

    magic 4s | version u16 | step u32 | count u32 | echoes u16
    echoes * f64
    count * (state 80 f32 | action 4 f32 | reward f32 | next_state 80 f32
             | next_action 4 f32 | source u8)
    crc32 u32

Sensor packet (``CRLS``): step u32 | t f64 | phi 4 f64.
Action packet (``CRLA``): step u32 | generation u32 | source u8 | action 4 f64.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..rl_core import ACTION_DIM, STATE_DIM, Source, Transition

__all__ = [
    "VERSION",
    "ActionPacket",
    "BufferPacket",
    "ChecksumError",
    "FrameDecoder",
    "FramingError",
    "ProtocolError",
    "SensorPacket",
    "WeightPacket",
    "decode_action_packet",
    "decode_any",
    "decode_buffer_packet",
    "decode_sensor_packet",
    "decode_weight_packet",
    "encode_action_packet",
    "encode_buffer_packet",
    "encode_sensor_packet",
    "encode_weight_packet",
    "frame",
]

VERSION = 1
WEIGHT_MAGIC = b"CRLW"
BUFFER_MAGIC = b"CRLB"
SENSOR_MAGIC = b"CRLS"
ACTION_MAGIC = b"CRLA"

_WEIGHT_HEADER = struct.Struct("<4sHIH")
_LAYER_HEADER = struct.Struct("<II")
_BUFFER_HEADER = struct.Struct("<4sHIIH")
_SENSOR = struct.Struct("<4sHId4d")
_ACTION = struct.Struct("<4sHIIB4d")
_CRC = struct.Struct("<I")
_LENGTH = struct.Struct("<I")

_TRANSITION_DTYPE = np.dtype(
    [
        ("state", "<f4", (STATE_DIM,)),
        ("action", "<f4", (ACTION_DIM,)),
        ("reward", "<f4"),
        ("next_state", "<f4", (STATE_DIM,)),
        ("next_action", "<f4", (ACTION_DIM,)),
        ("source", "u1"),
    ]
)


class ProtocolError(ValueError):
    """Bytes that are not a packet of the expected kind."""


class FramingError(ProtocolError):
    """Truncated or oversized data."""


class ChecksumError(ProtocolError):
    pass


def _seal(body: bytes) -> bytes:
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _open(data: bytes, magic: bytes, min_len: int) -> memoryview:
    if len(data) < 6:
        raise FramingError("packet shorter than magic and version")
    if bytes(data[:4]) != magic:
        raise ProtocolError(f"bad magic {bytes(data[:4])!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if len(data) < min_len + _CRC.size:
        raise FramingError("packet truncated")
    body = memoryview(data)[: len(data) - _CRC.size]
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC mismatch")
    return body


@dataclass
class WeightPacket:
    sequence: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = VERSION

    @classmethod
    def from_network(cls, net, sequence: int) -> WeightPacket:
        return cls(sequence, [w.astype(np.float32) for w in net.weights], [b.astype(np.float32) for b in net.biases])

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightPacket):
            return NotImplemented
        return (
            self.sequence == other.sequence
            and self.version == other.version
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def encode_weight_packet(pkt: WeightPacket) -> bytes:
    parts = [_WEIGHT_HEADER.pack(WEIGHT_MAGIC, pkt.version, pkt.sequence, len(pkt.weights))]
    for w, b in zip(pkt.weights, pkt.biases):
        rows, cols = w.shape
        if b.shape != (rows,):
            raise ProtocolError("bias length must equal weight rows")
        parts.append(_LAYER_HEADER.pack(rows, cols))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return _seal(b"".join(parts))


def decode_weight_packet(data: bytes) -> WeightPacket:
    body = _open(data, WEIGHT_MAGIC, _WEIGHT_HEADER.size)
    _, version, sequence, n_layers = _WEIGHT_HEADER.unpack_from(body, 0)
    offset = _WEIGHT_HEADER.size
    weights, biases = [], []
    for _ in range(n_layers):
        if offset + _LAYER_HEADER.size > len(body):
            raise FramingError("truncated layer header")
        rows, cols = _LAYER_HEADER.unpack_from(body, offset)
        offset += _LAYER_HEADER.size
        end = offset + 4 * (rows * cols + rows)
        if end > len(body):
            raise FramingError("truncated layer payload")
        weights.append(np.frombuffer(body, "<f4", rows * cols, offset).reshape(rows, cols).astype(np.float32))
        biases.append(np.frombuffer(body, "<f4", rows, offset + 4 * rows * cols).astype(np.float32))
        offset = end
    if offset != len(body):
        raise FramingError("trailing bytes after last layer")
    return WeightPacket(sequence, weights, biases, version)


@dataclass
class BufferPacket:
    step: int
    transitions: list[Transition]
    echoes: list[float] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BufferPacket):
            return NotImplemented
        return (
            self.step == other.step
            and list(self.echoes) == list(other.echoes)
            and len(self.transitions) == len(other.transitions)
            and all(a == b for a, b in zip(self.transitions, other.transitions))
        )


def encode_buffer_packet(pkt: BufferPacket) -> bytes:
    n = len(pkt.transitions)
    records = np.zeros(n, dtype=_TRANSITION_DTYPE)
    for i, tr in enumerate(pkt.transitions):
        rec = records[i]
        rec["state"] = tr.state
        rec["action"] = tr.action
        rec["reward"] = tr.reward
        rec["next_state"] = tr.next_state
        rec["next_action"] = tr.next_action
        rec["source"] = int(tr.source)
    header = _BUFFER_HEADER.pack(BUFFER_MAGIC, VERSION, pkt.step, n, len(pkt.echoes))
    echoes = np.asarray(pkt.echoes, dtype="<f8").tobytes()
    return _seal(header + echoes + records.tobytes())


def decode_buffer_packet(data: bytes) -> BufferPacket:
    body = _open(data, BUFFER_MAGIC, _BUFFER_HEADER.size)
    _, _, step, n, n_echo = _BUFFER_HEADER.unpack_from(body, 0)
    offset = _BUFFER_HEADER.size
    expected = offset + 8 * n_echo + n * _TRANSITION_DTYPE.itemsize
    if expected != len(body):
        raise FramingError(f"buffer packet length {len(body)} != declared {expected}")
    echoes = np.frombuffer(body, "<f8", n_echo, offset).tolist()
    offset += 8 * n_echo
    records = np.frombuffer(body, _TRANSITION_DTYPE, n, offset)
    transitions = [
        Transition(
            rec["state"].astype(np.float32),
            rec["action"].astype(np.float32),
            float(rec["reward"]),
            rec["next_state"].astype(np.float32),
            rec["next_action"].astype(np.float32),
            Source(int(rec["source"])),
        )
        for rec in records
    ]
    return BufferPacket(step, transitions, echoes)


@dataclass(frozen=True)
class SensorPacket:
    step: int
    t: float
    phi: tuple[float, float, float, float]


def encode_sensor_packet(pkt: SensorPacket) -> bytes:
    return _seal(_SENSOR.pack(SENSOR_MAGIC, VERSION, pkt.step, pkt.t, *pkt.phi))


def decode_sensor_packet(data: bytes) -> SensorPacket:
    body = _open(data, SENSOR_MAGIC, _SENSOR.size)
    if len(body) != _SENSOR.size:
        raise FramingError("sensor packet length mismatch")
    _, _, step, t, *phi = _SENSOR.unpack_from(body, 0)
    return SensorPacket(step, t, tuple(phi))


@dataclass(frozen=True)
class ActionPacket:
    step: int
    generation: int
    source: int
    action: tuple[float, float, float, float]


def encode_action_packet(pkt: ActionPacket) -> bytes:
    return _seal(_ACTION.pack(ACTION_MAGIC, VERSION, pkt.step, pkt.generation, pkt.source, *pkt.action))


def decode_action_packet(data: bytes) -> ActionPacket:
    body = _open(data, ACTION_MAGIC, _ACTION.size)
    if len(body) != _ACTION.size:
        raise FramingError("action packet length mismatch")
    _, _, step, generation, source, *action = _ACTION.unpack_from(body, 0)
    return ActionPacket(step, generation, source, tuple(action))


_DECODERS = {
    WEIGHT_MAGIC: decode_weight_packet,
    BUFFER_MAGIC: decode_buffer_packet,
    SENSOR_MAGIC: decode_sensor_packet,
    ACTION_MAGIC: decode_action_packet,
}


def decode_any(data: bytes):
    if len(data) < 4:
        raise FramingError("packet shorter than magic")
    decoder = _DECODERS.get(bytes(data[:4]))
    if decoder is None:
        raise ProtocolError(f"unknown magic {bytes(data[:4])!r}")
    return decoder(data)


MAX_FRAME = 64 * 1024 * 1024


def frame(payload: bytes) -> bytes:
    return _LENGTH.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental splitter for a stream of length-prefixed frames."""

    def __init__(self, max_frame: int = MAX_FRAME):
        self._buf = bytearray()
        self.max_frame = max_frame

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _LENGTH.size:
            (n,) = _LENGTH.unpack_from(self._buf, 0)
            if n > self.max_frame:
                raise FramingError(f"frame of {n} bytes exceeds limit")
            if len(self._buf) < _LENGTH.size + n:
                break
            out.append(bytes(self._buf[_LENGTH.size : _LENGTH.size + n]))
            del self._buf[: _LENGTH.size + n]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def transitions_from_arrays(states, actions, rewards, next_states, next_actions, sources) -> list[Transition]:
    return [
        Transition(states[i], actions[i], float(rewards[i]), next_states[i], next_actions[i], Source(int(sources[i])))
        for i in range(len(rewards))
    ]
