"""Classical wing controllers: PID, MIT-rule adaptive PID and MRAC.

All controllers act on the four wings at once (arrays of shape ``(4,)``),
take the tracking error in radians and return motor torque in N*m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

__all__ = [
    "APID_GAINS",
    "MRAC_FEEDBACK_GAINS",
    "PID_GAINS",
    "ApidController",
    "ApidState",
    "MracController",
    "MracState",
    "PidController",
    "PidGains",
    "TicpConfig",
    "apid_step",
    "apply_ticp",
    "make_controller",
    "mrac_step",
    "pid_step",
]


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.kp, self.ki, self.kd)):
            raise ValueError("gains must be finite")

    def scaled(self, factor: float) -> PidGains:
        return PidGains(self.kp * factor, self.ki * factor, self.kd * factor)


PID_GAINS = PidGains(kp=4.80e-1, ki=2.00e-5, kd=7.00e-4)
APID_GAINS = PidGains(kp=5.76e-1, ki=2.40e-5, kd=8.40e-4)
MRAC_FEEDBACK_GAINS = PidGains(kp=5.76e-1, ki=2.40e-5, kd=8.40e-4)


def pid_step(gains: PidGains, error, integ, prev_error, dt: float):
    """One discrete PID evaluation.

    Rectangular integration and a backward-difference derivative. Pass
    ``prev_error=None`` on the first call to suppress the derivative kick.
    Returns ``(torque, integ', prev_error')``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    error = np.asarray(error, dtype=np.float64)
    if prev_error is None:
        prev_error = error
    integ = integ + error * dt
    u = gains.kp * error + gains.ki * integ + gains.kd * (error - prev_error) / dt
    return u, integ, error


@dataclass(frozen=True)
class TicpConfig:
    epsilon: float = 0.05
    sign: int = 1

    def __post_init__(self) -> None:
        if abs(self.epsilon) > 0.2:
            raise ValueError("|epsilon| must not exceed 0.2")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def factor(self) -> float:
        return 1.0 + self.sign * self.epsilon


def apply_ticp(gains: PidGains, cfg: TicpConfig) -> PidGains:
    return gains.scaled(cfg.factor)


@dataclass
class ApidState:
    """Per-wing adaptive gains plus PID memory."""

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    mit_rate: float = 5e-6
    integrator: np.ndarray = field(default_factory=lambda: np.zeros(4))
    prev_error: np.ndarray | None = None
    adapt: tuple[bool, bool, bool] = (True, True, True)
    clamp_events: int = 0

    @classmethod
    def initial(cls, gains: PidGains = APID_GAINS, mit_rate: float = 5e-6, n: int = 4, **kwargs) -> ApidState:
        return cls(
            kp=np.full(n, gains.kp), ki=np.full(n, gains.ki), kd=np.full(n, gains.kd), mit_rate=mit_rate, **kwargs
        )


def apid_step(state: ApidState, error, ref_out, dt: float):
    """MIT-rule gain adaptation followed by a PID step with the adapted gains.

    Each gain moves by ``-mit_rate * error * sensitivity`` where the
    sensitivities are the proportional, integral and derivative signals.
    ``ref_out`` is accepted for interface symmetry with MRAC and unused.
    Returns ``(torque, state')``; the input state is not modified.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(error, dtype=np.float64)
    prev = e if state.prev_error is None else state.prev_error
    integ_next = state.integrator + e * dt
    sens = (e, integ_next, (e - prev) / dt)
    gains = [state.kp, state.ki, state.kd]
    clamps = state.clamp_events
    if state.mit_rate:
        for idx in range(3):
            if not state.adapt[idx]:
                continue
            g = gains[idx] - state.mit_rate * e * sens[idx]
            below = g < 0
            clamps += int(np.count_nonzero(below))
            gains[idx] = np.where(below, 0.0, g)
    kp, ki, kd = gains
    u = kp * e + ki * integ_next + kd * (e - prev) / dt
    new = replace(state, kp=kp, ki=ki, kd=kd, integrator=integ_next, prev_error=e, clamp_events=clamps)
    return u, new


@dataclass
class MracState:
    """Reference model, per-wing ARX(3) plant model and feedback PID memory.

    The plant model predicts ``y[k+1] = a1*y[k] + a2*y[k-1] + a3*y[k-2] + b*u[k]``
    and is fitted online by recursive least squares. The feedforward inverts
    that model only partially (``feedforward_gain``): a full one-step
    inversion cancels the sampling zero near -1 of a second-order plant and
    rings.
    """

    feedback: PidGains = MRAC_FEEDBACK_GAINS
    natural_freq: float = 2 * math.pi * 20.0
    damping: float = 1.0
    forgetting: float = 0.995
    feedforward: bool = True
    ar_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    covariance: np.ndarray = field(default_factory=lambda: np.tile(np.eye(4) * 1e3, (4, 1, 1)))
    ref_state: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))
    y_hist: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    last_u: np.ndarray = field(default_factory=lambda: np.zeros(4))
    integrator: np.ndarray = field(default_factory=lambda: np.zeros(4))
    prev_error: np.ndarray | None = None
    steps: int = 0
    covariance_resets: int = 0
    max_cov_trace: float = 1e8
    max_feedforward: float = 1.0
    feedforward_gain: float = 0.5

    def __post_init__(self) -> None:
        if self.damping <= 0 or self.natural_freq <= 0:
            raise ValueError("reference model must be stable")


_REF_CACHE: dict[tuple[float, float, float], tuple[np.ndarray, np.ndarray]] = {}


def _reference_discretisation(wn: float, zeta: float, dt: float):
    key = (wn, zeta, dt)
    if key not in _REF_CACHE:
        a = np.array([[0.0, 1.0, 0.0], [-wn * wn, -2.0 * zeta * wn, wn * wn], [0.0, 0.0, 0.0]])
        m = expm(a * dt)
        _REF_CACHE[key] = (m[:2, :2].copy(), m[:2, 2].copy())
    return _REF_CACHE[key]


def mrac_step(state: MracState, desired, measured, dt: float):
    """Advance the reference model, refit the plant model and compute torque.

    Returns ``(torque, state')``; the input state is not modified.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    desired = np.asarray(desired, dtype=np.float64)
    y = np.asarray(measured, dtype=np.float64)
    theta = state.ar_coeffs.copy()
    P = state.covariance.copy()
    resets = state.covariance_resets
    if state.feedforward and state.steps > 0:
        # RLS on the sample produced by the previous torque.
        phi = np.concatenate([state.y_hist, state.last_u[:, None]], axis=1)
        Pphi = np.einsum("wij,wj->wi", P, phi)
        denom = state.forgetting + np.einsum("wi,wi->w", phi, Pphi)
        gain = Pphi / denom[:, None]
        err = y - np.einsum("wi,wi->w", theta, phi)
        theta = theta + gain * err[:, None]
        P = (P - np.einsum("wi,wj->wij", gain, Pphi)) / state.forgetting
        blown = ~np.isfinite(P).all(axis=(1, 2)) | (np.trace(P, axis1=1, axis2=2) > state.max_cov_trace)
        if blown.any():
            P[blown] = np.eye(4) * 1e3
            theta[blown] = np.where(np.isfinite(theta[blown]), theta[blown], 0.0)
            resets += int(np.count_nonzero(blown))
    y_hist = np.concatenate([y[:, None], state.y_hist[:, :2]], axis=1)

    ad, bd = _reference_discretisation(state.natural_freq, state.damping, dt)
    ref_state = state.ref_state @ ad.T + np.outer(desired, bd)
    ref_out = ref_state[:, 0]

    u_ff = np.zeros_like(y)
    if state.feedforward:
        b = theta[:, 3]
        ok = np.abs(b) > 1e-9
        pred = np.einsum("wi,wi->w", theta[:, :3], y_hist)
        u_ff = np.where(ok, state.feedforward_gain * (ref_out - pred) / np.where(ok, b, 1.0), 0.0)
        u_ff = np.clip(u_ff, -state.max_feedforward, state.max_feedforward)

    u_fb, integ, prev = pid_step(state.feedback, ref_out - y, state.integrator, state.prev_error, dt)
    u = u_ff + u_fb
    new = replace(
        state,
        ar_coeffs=theta,
        covariance=P,
        ref_state=ref_state,
        y_hist=y_hist,
        last_u=u,
        integrator=integ,
        prev_error=prev,
        steps=state.steps + 1,
        covariance_resets=resets,
    )
    return u, new


class PidController:
    """Stateful PID over the four wings."""

    name = "PID"

    def __init__(self, gains: PidGains = PID_GAINS, n: int = 4):
        self.base_gains = gains
        self.ticp_factor = 1.0
        self.integrator = np.zeros(n)
        self.prev_error: np.ndarray | None = None

    @property
    def gains(self) -> PidGains:
        return self.base_gains.scaled(self.ticp_factor)

    def perturb(self, cfg: TicpConfig | None) -> None:
        self.ticp_factor = 1.0 if cfg is None else cfg.factor

    def __call__(self, desired, measured, dt: float) -> np.ndarray:
        u, self.integrator, self.prev_error = pid_step(
            self.gains, np.asarray(desired) - np.asarray(measured), self.integrator, self.prev_error, dt
        )
        return u


class ApidController:
    name = "APID"

    def __init__(self, gains: PidGains = APID_GAINS, mit_rate: float = 5e-6, n: int = 4):
        self.state = ApidState.initial(gains, mit_rate, n)
        self.ticp_factor = 1.0

    def perturb(self, cfg: TicpConfig | None) -> None:
        self.ticp_factor = 1.0 if cfg is None else cfg.factor

    def __call__(self, desired, measured, dt: float) -> np.ndarray:
        u, self.state = apid_step(self.state, np.asarray(desired) - np.asarray(measured), None, dt)
        return self.ticp_factor * u


class MracController:
    name = "MRAC"

    def __init__(self, frequency: float, feedback: PidGains = MRAC_FEEDBACK_GAINS, **kwargs):
        self.state = MracState(feedback=feedback, natural_freq=2 * math.pi * frequency, **kwargs)
        self.base_feedback = feedback

    def perturb(self, cfg: TicpConfig | None) -> None:
        gains = self.base_feedback if cfg is None else apply_ticp(self.base_feedback, cfg)
        self.state = replace(self.state, feedback=gains)

    def __call__(self, desired, measured, dt: float) -> np.ndarray:
        u, self.state = mrac_step(self.state, desired, measured, dt)
        return u


def make_controller(kind: str, frequency: float):
    kind = kind.upper()
    if kind == "PID":
        return PidController()
    if kind == "APID":
        return ApidController()
    if kind == "MRAC":
        return MracController(frequency)
    raise ValueError(f"unknown classical controller {kind!r}")
