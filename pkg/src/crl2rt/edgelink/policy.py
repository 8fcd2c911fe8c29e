"""Edge-side actor: allocation-free inference and staged weight installation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..concerto import Mode
from .codec import ChecksumError, ProtocolError, WeightPacket, decode_weight_packet

__all__ = ["EdgePolicy", "ShapeMismatch", "WeightReceiver", "hot_swap"]


class ShapeMismatch(ValueError):
    pass


class EdgePolicy:
    """Tanh MLP evaluated with preallocated float32 buffers.

    Parameters live in a single ``(generation, weights, biases)`` tuple that is
    replaced wholesale on install, so an inference started on one generation
    finishes on it.
    """

    def __init__(self, weights, biases, output_activation: str = "tanh"):
        weights = [np.ascontiguousarray(w, dtype=np.float32) for w in weights]
        biases = [np.ascontiguousarray(b, dtype=np.float32) for b in biases]
        self._check(weights, biases)
        self.shapes = tuple(w.shape for w in weights)
        self.input_dim = self.shapes[0][1]
        self.output_dim = self.shapes[-1][0]
        self.output_tanh = output_activation == "tanh"
        self._scratch = [np.zeros(w.shape[0], np.float32) for w in weights]
        self._input = np.zeros(self.input_dim, np.float32)
        self._params = (0, tuple(weights), tuple(biases))
        self.sequence: int | None = None
        self.last_generation = 0

    @classmethod
    def from_network(cls, net) -> EdgePolicy:
        return cls(
            [w.astype(np.float32) for w in net.weights],
            [b.astype(np.float32) for b in net.biases],
            net.spec.output_activation,
        )

    @staticmethod
    def _check(weights, biases) -> None:
        if len(weights) != len(biases) or not weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input {w.shape[1]} != previous output {weights[i - 1].shape[0]}")

    @property
    def generation(self) -> int:
        return self._params[0]

    def check_input(self, state) -> None:
        """Validate a state vector's shape once, before the loop starts."""
        if np.shape(state) != (self.input_dim,):
            raise ShapeMismatch(f"state shape {np.shape(state)} != ({self.input_dim},)")

    def infer(self, state: np.ndarray) -> np.ndarray:
        """Forward pass; returns an internal buffer that is overwritten next call.

        ``state`` should be a float32 vector of the input length; other
        dtypes are copied into a preallocated staging buffer.
        """
        gen, weights, biases = self._params
        x = state
        if x.dtype != np.float32:
            np.copyto(self._input, x, casting="unsafe")
            x = self._input
        last = len(weights) - 1
        for i in range(last + 1):
            buf = self._scratch[i]
            np.dot(weights[i], x, out=buf)
            np.add(buf, biases[i], out=buf)
            if i < last or self.output_tanh:
                np.tanh(buf, out=buf)
            x = buf
        self.last_generation = gen
        return x

    __call__ = infer

    def install(self, weights, biases, sequence: int | None = None) -> int:
        """Atomically replace all parameters; returns the new generation."""
        weights = tuple(np.ascontiguousarray(w, dtype=np.float32) for w in weights)
        biases = tuple(np.ascontiguousarray(b, dtype=np.float32) for b in biases)
        if tuple(w.shape for w in weights) != self.shapes or any(
            b.shape != (w.shape[0],) for w, b in zip(weights, biases)
        ):
            raise ShapeMismatch("packet layer shapes differ from the running policy")
        self._params = (self._params[0] + 1, weights, biases)
        self.sequence = sequence
        return self._params[0]

    def weights(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        _, w, b = self._params
        return [a.copy() for a in w], [a.copy() for a in b]


@dataclass
class ReceiverStats:
    accepted: int = 0
    applied: int = 0
    crc_rejects: int = 0
    shape_rejects: int = 0
    protocol_rejects: int = 0
    stale_discards: int = 0
    superseded: int = 0


class WeightReceiver:
    """Validates incoming weight packets and stages them for a Mode-1 install.

    :meth:`receive` may run on a network thread; :meth:`service` runs on the
    control thread. They communicate through a one-slot deque whose
    ``append``/``popleft`` are atomic, so no lock is taken.
    """

    def __init__(self, policy: EdgePolicy):
        self.policy = policy
        self.stats = ReceiverStats()
        self._slot: deque[WeightPacket] = deque(maxlen=1)
        self._last_seq = -1

    def receive(self, data: bytes | WeightPacket) -> bool:
        if isinstance(data, WeightPacket):
            pkt = data
        else:
            try:
                pkt = decode_weight_packet(data)
            except ChecksumError:
                self.stats.crc_rejects += 1
                return False
            except ProtocolError:
                self.stats.protocol_rejects += 1
                return False
        if pkt.shapes != list(self.policy.shapes) or any(
            b.shape != (w.shape[0],) for w, b in zip(pkt.weights, pkt.biases)
        ):
            self.stats.shape_rejects += 1
            return False
        if pkt.sequence <= self._last_seq:
            self.stats.stale_discards += 1
            return False
        self._last_seq = pkt.sequence
        if self._slot:
            self.stats.superseded += 1
        self._slot.append(pkt)
        self.stats.accepted += 1
        return True

    @property
    def staged(self) -> bool:
        return bool(self._slot)

    def service(self, mode: Mode) -> bool:
        """Install the staged packet if this is a Mode-1 step."""
        if mode != Mode.CLASSICAL:
            return False
        try:
            pkt = self._slot.popleft()
        except IndexError:
            return False
        self.policy.install(pkt.weights, pkt.biases, pkt.sequence)
        self.stats.applied += 1
        return True


def hot_swap(receiver: WeightReceiver, packet: bytes | WeightPacket, mode: Mode) -> bool:
    """Validate and stage ``packet``; install it immediately when ``mode`` is Mode 1."""
    receiver.receive(packet)
    return receiver.service(mode)
