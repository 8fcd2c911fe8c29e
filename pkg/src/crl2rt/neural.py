"""Dense feed-forward networks with exact reverse-mode gradients and Lion.

Weights are stored as ``(out, in)`` matrices so a single input vector is
propagated with ``W @ x + b`` and a batch with ``X @ W.T + b``.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Gradients",
    "LionState",
    "Network",
    "NetworkSpec",
    "SnapshotError",
    "backward",
    "forward",
    "init_xavier",
    "lion_update",
    "load_snapshot",
    "save_snapshot",
]

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "tanh"

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"need at least two positive layer widths, got {self.layer_sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def actor(cls, state_dim: int = 80, action_dim: int = 4, hidden: Sequence[int] = (128, 128)) -> NetworkSpec:
        return cls((state_dim, *hidden, action_dim), "tanh", "tanh")

    @classmethod
    def critic(
        cls, state_dim: int = 80, action_dim: int = 4, hidden: Sequence[int] = (256, 256, 256, 256, 256)
    ) -> NetworkSpec:
        return cls((state_dim + action_dim, *hidden, 1), "tanh", "identity")

    @property
    def n_layers(self) -> int:
        """Number of affine layers (one fewer than the number of widths)."""
        return len(self.layer_sizes) - 1


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


class Network:
    """An MLP holding its parameters and the activations of the last forward pass."""

    def __init__(self, spec: NetworkSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != spec.n_layers or len(biases) != spec.n_layers:
            raise ValueError("parameter count does not match spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (spec.layer_sizes[i + 1], spec.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ValueError(f"layer {i}: got W{w.shape} b{b.shape}, expected W{expected}")
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self._acts: list[np.ndarray] | None = None

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def input_dim(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.spec.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> Network:
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> Network:
        return Network(
            self.spec, [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vector: np.ndarray) -> None:
        vector = np.asarray(vector)
        if vector.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vector.size}")
        offset = 0
        for p in self.params():
            p[...] = vector[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _activate(self, z: np.ndarray, last: bool) -> np.ndarray:
        act = self.spec.output_activation if last else self.spec.hidden_activation
        return np.tanh(z) if act == "tanh" else z

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input width {x.shape[-1]} does not match network input {self.input_dim}")
        acts = [x]
        h = x
        n = self.spec.n_layers
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = self._activate(h @ w.T + b, i == n - 1)
            acts.append(h)
        if cache:
            self._acts = acts
        return h

    __call__ = forward

    def backward(self, output_grad) -> Gradients:
        """Vector-Jacobian product of the cached forward pass.

        For a batched forward pass the parameter gradients are summed over
        the batch.
        """
        if self._acts is None:
            raise RuntimeError("backward called before forward")
        acts = self._acts
        g = np.asarray(output_grad, dtype=self.dtype)
        if g.shape != acts[-1].shape:
            raise ValueError(f"output_grad shape {g.shape} != output shape {acts[-1].shape}")
        n = self.spec.n_layers
        gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
        gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
        for i in range(n - 1, -1, -1):
            act = self.spec.output_activation if i == n - 1 else self.spec.hidden_activation
            if act == "tanh":
                y = acts[i + 1]
                g = g * (1.0 - y * y)
            a_in = acts[i]
            if g.ndim == 1:
                gw[i] = np.outer(g, a_in)
                gb[i] = g.copy()
            else:
                gw[i] = g.T @ a_in
                gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        return Gradients(gw, gb, g)


def init_xavier(spec: NetworkSpec, seed: int, dtype=np.float32) -> Network:
    """Xavier-uniform weights (gain 1) and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return Network(spec, weights, biases)


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Network, x, output_grad) -> Gradients:
    net.forward(x)
    return net.backward(output_grad)


@dataclass
class LionState:
    momentum: list[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> LionState:
        return cls([np.zeros_like(p) for p in params], **kwargs)


def lion_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: LionState, lr: float) -> None:
    """In-place Lion step on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.momentum):
        raise ValueError("params, grads and momentum must align")
    b1, b2, wd = state.beta1, state.beta2, state.weight_decay
    for p, g, m in zip(params, grads, state.momentum):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        direction = np.sign(b1 * m + (1.0 - b1) * g)
        if wd:
            direction = direction + wd * p
        p -= (lr * direction).astype(p.dtype, copy=False)
        m *= b2
        m += (1.0 - b2) * g


# Snapshot file: little-endian "CRLW", u16 version, u16 layer count, then per
# layer u32 rows, u32 cols, rows*cols f32 weights (row-major), rows f32 biases.
SNAPSHOT_MAGIC = b"CRLW"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHH")
_SNAP_LAYER = struct.Struct("<II")


class SnapshotError(ValueError):
    pass


def save_snapshot(net: Network, path: str | Path) -> None:
    parts = [_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, net.spec.n_layers)]
    for w, b in zip(net.weights, net.biases):
        parts.append(_SNAP_LAYER.pack(*w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_snapshot(path: str | Path, spec: NetworkSpec | None = None) -> Network:
    """Read a snapshot; without ``spec`` activations default to a tanh actor."""
    data = Path(path).read_bytes()
    if len(data) < _SNAP_HEADER.size:
        raise SnapshotError("truncated snapshot header")
    magic, version, n_layers = _SNAP_HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    offset = _SNAP_HEADER.size
    weights, biases, sizes = [], [], []
    for _ in range(n_layers):
        if offset + _SNAP_LAYER.size > len(data):
            raise SnapshotError("truncated layer header")
        rows, cols = _SNAP_LAYER.unpack_from(data, offset)
        offset += _SNAP_LAYER.size
        need = 4 * (rows * cols + rows)
        if offset + need > len(data):
            raise SnapshotError("truncated layer payload")
        w = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += 4 * rows * cols
        b = np.frombuffer(data, dtype="<f4", count=rows, offset=offset)
        offset += 4 * rows
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
        if not sizes:
            sizes.append(cols)
        sizes.append(rows)
    if spec is None:
        spec = NetworkSpec(tuple(sizes))
    elif tuple(sizes) != spec.layer_sizes:
        raise SnapshotError(f"snapshot shape {tuple(sizes)} does not match spec {spec.layer_sizes}")
    return Network(spec, weights, biases)
