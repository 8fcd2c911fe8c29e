"""Fixed-step three-stage Radau IIA integrator (order 5, L-stable).

Stage equations are solved with simplified Newton iterations using a single
Jacobian and LU factorisation per step. When Newton fails to converge the
step is split in two and retried, up to ``max_halvings`` times.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

_S6 = np.sqrt(6.0)

NODES = np.array([(4.0 - _S6) / 10.0, (4.0 + _S6) / 10.0, 1.0])
COEFFS = np.array(
    [
        [(88.0 - 7.0 * _S6) / 360.0, (296.0 - 169.0 * _S6) / 1800.0, (-2.0 + 3.0 * _S6) / 225.0],
        [(296.0 + 169.0 * _S6) / 1800.0, (88.0 + 7.0 * _S6) / 360.0, (-2.0 - 3.0 * _S6) / 225.0],
        [(16.0 - _S6) / 36.0, (16.0 + _S6) / 36.0, 1.0 / 9.0],
    ]
)


class StepFailure(RuntimeError):
    """Raised when the implicit stage equations cannot be solved."""

    def __init__(self, message: str, *, t: float, h: float, iterations: int, residual: float):
        super().__init__(f"{message} (t={t:.6g}, h={h:.3g}, iterations={iterations}, residual={residual:.3g})")
        self.t = t
        self.h = h
        self.iterations = iterations
        self.residual = residual


@dataclass
class RadauIIA:
    """Implicit integrator for ``y' = fun(t, y)``.

    ``fun`` must accept a state array of shape ``(..., n)`` together with a
    matching time array of shape ``(...)`` so the three stages can be
    evaluated in one call. ``jac(t, y)`` returns the ``(n, n)`` Jacobian,
    or, for a system made of ``B`` uncoupled blocks of ``m`` variables laid
    out variable-major (``y[v * B + b]``), a ``(B, m, m)`` stack of blocks.
    The block form replaces one ``3n`` linear system by ``B`` systems of
    size ``3m``.
    """

    fun: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[float, np.ndarray], np.ndarray]
    atol: float = 1e-10
    rtol: float = 1e-9
    max_newton: int = 8
    max_halvings: int = 5

    extrapolate: bool = True

    def __post_init__(self) -> None:
        self.newton_iterations = 0
        self.halvings = 0
        self._last: tuple[float, float, np.ndarray] | None = None

    def step(self, t: float, y: np.ndarray, h: float) -> np.ndarray:
        return self._advance(t, np.asarray(y, dtype=np.float64), h, 0)

    def _advance(self, t: float, y: np.ndarray, h: float, depth: int) -> np.ndarray:
        try:
            return self._single(t, y, h)
        except StepFailure:
            if depth >= self.max_halvings:
                raise
        self.halvings += 1
        half = 0.5 * h
        mid = self._advance(t, y, half, depth + 1)
        return self._advance(t + half, mid, half, depth + 1)

    def _single(self, t: float, y: np.ndarray, h: float) -> np.ndarray:
        n = y.size
        J = self.jac(t, y)
        if J.ndim == 3:
            solve = self._block_solver(J, h, n)
        else:
            lu = lu_factor(np.eye(3 * n) - h * np.kron(COEFFS, J))

            def solve(rhs):
                return lu_solve(lu, rhs.ravel()).reshape(3, n)

        times = t + NODES * h
        hA = h * COEFFS
        scale = self.atol + self.rtol * np.abs(y)
        Z = self._guess(t, h, n)
        residual = np.inf
        for it in range(1, self.max_newton + 1):
            F = self.fun(times, y + Z)
            G = Z - hA @ F
            dZ = solve(-G)
            Z += dZ
            self.newton_iterations += 1
            w = dZ / scale
            residual = math.sqrt(float(np.vdot(w, w)) / w.size)
            if not np.isfinite(residual):
                break
            if residual <= 1.0:
                self._last = (t + h, h, Z.copy())
                return y + Z[2]
        raise StepFailure("Radau stage equations did not converge", t=t, h=h, iterations=it, residual=residual)

    @staticmethod
    def _block_solver(J: np.ndarray, h: float, n: int):
        B, m, _ = J.shape
        # Newton matrix per block: I - h * kron(A, J_b), size 3m.
        K = (COEFFS[None, :, None, :, None] * J[:, None, :, None, :]).reshape(B, 3 * m, 3 * m)
        inv = np.linalg.inv(np.eye(3 * m) - h * K)

        def solve(rhs: np.ndarray) -> np.ndarray:
            # (3, m*B) variable-major -> (B, 3m) per block and back.
            r = rhs.reshape(3, m, B).transpose(2, 0, 1).reshape(B, 3 * m, 1)
            x = (inv @ r).reshape(B, 3, m)
            return x.transpose(1, 2, 0).reshape(3, n)

        return solve

    def _guess(self, t: float, h: float, n: int) -> np.ndarray:
        """Stage start values from the previous step's collocation polynomial."""
        last = self._last
        if not self.extrapolate or last is None or last[1] != h or abs(last[0] - t) > 1e-9 * h or last[2].shape[1] != n:
            return np.zeros((3, n))
        Zp = last[2]
        # Interpolate through (0, 0), (c_i, Z_i) and evaluate at 1 + c_j.
        x = 1.0 + NODES
        out = np.zeros((3, n))
        for i in range(3):
            li = x / NODES[i]
            for m in range(3):
                if m != i:
                    li = li * (x - NODES[m]) / (NODES[i] - NODES[m])
            out += li[:, None] * Zp[i]
        return out - Zp[2]
