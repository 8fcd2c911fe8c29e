"""Eight-degree-of-freedom tandem-wing bench simulator.

Four wings, each with a flapping angle ``phi`` driven by a direct-drive motor
through a torsion spring and a passive torsion angle ``theta`` held by the
wing membrane. The aerodynamic, tandem-interference, membrane and yaw loads
are surrogate models; every coefficient lives in :class:`LoadModelConfig`.

State vector layout used by the integrator::

    y = [phi_1..4, theta_1..4, phi_dot_1..4, theta_dot_1..4]
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .radau import RadauIIA, StepFailure

__all__ = [
    "CONTROL_PERIOD",
    "TRAJECTORY_HEADER",
    "InertiaParams",
    "LoadModelConfig",
    "LoadSet",
    "MotorCommand",
    "Plant",
    "PlantState",
    "SafetyVerdict",
    "SingularInertiaError",
    "SpringBank",
    "StepFailure",
    "accelerations",
    "check_safety",
    "compose_loads",
    "motor_torques",
    "spring_stiffness",
    "write_trajectory_csv",
]

CONTROL_PERIOD = 5e-4
N_WINGS = 4
# Wings 2 and 3 carry the -pi spring offset of the bench geometry.
REST_OFFSET = np.array([0.0, math.pi, math.pi, 0.0])
SAFETY_LIMIT = math.pi / 2

TRAJECTORY_HEADER = (
    ["t"]
    + [f"phi{i}" for i in range(1, 5)]
    + [f"theta{i}" for i in range(1, 5)]
    + [f"phi_dot{i}" for i in range(1, 5)]
    + [f"theta_dot{i}" for i in range(1, 5)]
)


class SingularInertiaError(ValueError):
    pass


def _finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class InertiaParams:
    """Wing and rotor inertias in kg*m^2."""

    j_w_yy: float = 1e-6
    j_w_yz: float = 2e-7
    j_w_zz: float = 8e-7
    j_m_zz: float = 1e-6

    @property
    def c_det(self) -> float:
        return self.j_m_zz * self.j_w_yy + self.j_w_yy * self.j_w_zz - self.j_w_yz**2

    def validate(self) -> None:
        for f in fields(self):
            _finite(f.name, getattr(self, f.name))
        if min(self.j_w_yy, self.j_w_zz, self.j_m_zz) <= 0:
            raise SingularInertiaError("diagonal inertias must be positive")
        if self.c_det <= 0:
            raise SingularInertiaError(f"inertia determinant C={self.c_det:.3e} must be positive")


def spring_stiffness(f_exp: float, j_m_zz: float) -> float:
    """Torsion spring stiffness (N*m/rad) resonating the rotor at ``f_exp`` Hz."""
    _finite("f_exp", f_exp)
    _finite("j_m_zz", j_m_zz)
    if f_exp < 0:
        raise ValueError("f_exp must be non-negative")
    if j_m_zz <= 0:
        raise ValueError("j_m_zz must be positive")
    return 4.0 * math.pi**2 * f_exp**2 * j_m_zz


@dataclass(frozen=True)
class SpringBank:
    k_a: tuple[float, float, float, float]
    f_exp: float

    @classmethod
    def for_frequency(cls, f_exp: float, inertia: InertiaParams) -> SpringBank:
        k = spring_stiffness(f_exp, inertia.j_m_zz)
        return cls(k_a=(k, k, k, k), f_exp=f_exp)

    def __post_init__(self) -> None:
        if len(self.k_a) != N_WINGS or min(self.k_a) < 0:
            raise ValueError("k_a must hold four non-negative stiffnesses")


@dataclass(frozen=True)
class PlantState:
    phi: np.ndarray
    phi_dot: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, t: float = 0.0) -> PlantState:
        z = np.zeros(N_WINGS)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), t)

    @classmethod
    def from_vector(cls, y: np.ndarray, t: float) -> PlantState:
        y = np.asarray(y, dtype=np.float64)
        return cls(y[0:4].copy(), y[8:12].copy(), y[4:8].copy(), y[12:16].copy(), t)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.theta, self.phi_dot, self.theta_dot]).astype(np.float64)

    def as_row(self) -> list[float]:
        return [self.t, *self.phi, *self.theta, *self.phi_dot, *self.theta_dot]


@dataclass(frozen=True)
class LoadSet:
    """Per-wing load torques in N*m; t_yw and t_zw already include tandem scaling."""

    t_yw: np.ndarray
    t_zw: np.ndarray
    t_vtm: np.ndarray
    t_yaw: np.ndarray
    c_tandem: np.ndarray

    @classmethod
    def zeros(cls) -> LoadSet:
        z = np.zeros(N_WINGS)
        return cls(z, z, z, z, z)


@dataclass(frozen=True)
class LoadModelConfig:
    """Surrogate load-model coefficients.

    ``tandem_frequency`` is the flapping frequency that drives the periodic
    interference coefficient; ``tandem_phase`` is per wing.
    """

    aero_drag_coeff: float = 2e-7
    aero_couple_coeff: float = 1e-7
    tandem_mean: float = 0.15
    tandem_amp: float = 0.25
    tandem_phase: tuple[float, float, float, float] = (0.0, 0.0, math.pi / 2, math.pi / 2)
    tandem_frequency: float = 20.0
    membrane_stiffness: float = 0.5
    membrane_damping: float = 1e-2
    membrane_slack: float = 0.1
    yaw_amp: float = 0.01
    yaw_period: float = 0.1
    yaw_enabled: bool = False
    enabled: bool = True

    def validate(self) -> None:
        for name in (
            "aero_drag_coeff",
            "aero_couple_coeff",
            "tandem_mean",
            "tandem_amp",
            "tandem_frequency",
            "membrane_stiffness",
            "membrane_damping",
            "yaw_amp",
        ):
            v = getattr(self, name)
            _finite(name, v)
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.membrane_slack <= math.pi / 4:
            raise ValueError("membrane_slack must lie in [0, pi/4]")
        if self.yaw_enabled and self.yaw_period <= 0:
            raise ValueError("yaw_period must be positive")
        if len(self.tandem_phase) != N_WINGS:
            raise ValueError("tandem_phase needs one entry per wing")

    @classmethod
    def disabled(cls) -> LoadModelConfig:
        return cls(enabled=False, yaw_enabled=False)


def _load_arrays(phi_dot, theta, theta_dot, t, cfg: LoadModelConfig):
    """Vectorised surrogate loads; ``t`` broadcasts against the leading axes."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    phase = np.asarray(cfg.tandem_phase)
    c_tandem = cfg.tandem_mean + cfg.tandem_amp * np.sin(2.0 * math.pi * cfg.tandem_frequency * t + phase)
    scale = c_tandem + 1.0
    t_yw = cfg.aero_couple_coeff * phi_dot**2 * scale
    t_zw = -cfg.aero_drag_coeff * phi_dot * np.abs(phi_dot) * scale
    over = np.maximum(np.abs(theta) - cfg.membrane_slack, 0.0)
    t_vtm = -cfg.membrane_stiffness * np.sign(theta) * over - cfg.membrane_damping * theta_dot
    if cfg.yaw_enabled:
        # Square wave, positive over the first half of each period.
        half = np.mod(t, cfg.yaw_period) < 0.5 * cfg.yaw_period
        t_yaw = np.where(half, cfg.yaw_amp, -cfg.yaw_amp) * np.ones_like(phi_dot)
    else:
        t_yaw = np.zeros_like(phi_dot)
    return t_yw, t_zw, t_vtm, t_yaw, c_tandem * np.ones_like(phi_dot)


def compose_loads(state: PlantState, cfg: LoadModelConfig, t: float | None = None) -> LoadSet:
    t = state.t if t is None else t
    if not cfg.enabled:
        return LoadSet.zeros()
    arrays = _load_arrays(state.phi_dot, state.theta, state.theta_dot, t, cfg)
    return LoadSet(*(np.asarray(a, dtype=np.float64).reshape(N_WINGS) for a in arrays))


def _accel_arrays(phi, t_m, t_yw, t_zw, t_vtm, t_yaw, inertia: InertiaParams, k_a, offset):
    C = inertia.c_det
    yy, yz, zz, mz = inertia.j_w_yy, inertia.j_w_yz, inertia.j_w_zz, inertia.j_m_zz
    spring = k_a * (phi + offset)
    phi_dd = (yy * (t_m + t_zw - spring) - yz * (t_yw + t_vtm + t_yaw)) / C
    theta_dd = ((mz + zz) * (t_vtm + t_yw) + yz * (spring - t_m - t_zw) + zz * t_yaw) / C
    return phi_dd, theta_dd


def accelerations(
    state: PlantState,
    t_m: Sequence[float],
    loads: LoadSet,
    inertia: InertiaParams,
    springs: SpringBank,
    zero_rest_offset: bool = False,
) -> np.ndarray:
    """Return ``(phi_ddot_1..4, theta_ddot_1..4)`` in rad/s^2."""
    if inertia.c_det <= 0:
        raise SingularInertiaError(f"inertia determinant C={inertia.c_det:.3e} must be positive")
    offset = 0.0 if zero_rest_offset else REST_OFFSET
    phi_dd, theta_dd = _accel_arrays(
        np.asarray(state.phi, dtype=np.float64),
        np.asarray(t_m, dtype=np.float64),
        loads.t_yw,
        loads.t_zw,
        loads.t_vtm,
        loads.t_yaw,
        inertia,
        np.asarray(springs.k_a),
        offset,
    )
    return np.concatenate([phi_dd, theta_dd])


@dataclass
class MotorCommand:
    """Action-to-torque scaling with clamp accounting."""

    const_motor: float = 1.0
    clamp_events: int = 0

    def __call__(self, action) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        self.clamp_events += int(np.count_nonzero(np.abs(action) > 1.0))
        return motor_torques(action, self.const_motor)


def motor_torques(action, const_motor: float) -> np.ndarray:
    if const_motor <= 0:
        raise ValueError("const_motor must be positive")
    return np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0) * const_motor


@dataclass(frozen=True)
class SafetyVerdict:
    ok: bool
    max_error: float
    wing: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_safety(phi, phi_exp) -> SafetyVerdict:
    """A tracking error strictly beyond 90 degrees on any wing is a violation."""
    err = np.abs(np.asarray(phi, dtype=np.float64) - np.asarray(phi_exp, dtype=np.float64))
    worst = int(np.argmax(err))
    max_error = float(err[worst])
    if max_error > SAFETY_LIMIT:
        return SafetyVerdict(False, max_error, worst + 1)
    return SafetyVerdict(True, max_error, None)


@dataclass
class Plant:
    """Simulated bench: holds parameters and advances :class:`PlantState`."""

    inertia: InertiaParams = field(default_factory=InertiaParams)
    springs: SpringBank | None = None
    loads: LoadModelConfig = field(default_factory=LoadModelConfig)
    zero_rest_offset: bool = False
    atol: float = 1e-10
    rtol: float = 1e-9

    def __post_init__(self) -> None:
        self.inertia.validate()
        self.loads.validate()
        if self.springs is None:
            self.springs = SpringBank.for_frequency(self.loads.tandem_frequency, self.inertia)
        self._k = np.asarray(self.springs.k_a, dtype=np.float64)
        self._offset = np.zeros(N_WINGS) if self.zero_rest_offset else REST_OFFSET.copy()
        self._t_m = np.zeros(N_WINGS)
        inr, cfg = self.inertia, self.loads
        C = inr.c_det
        self._rhs_consts = {
            "k": self._k,
            "yy": inr.j_w_yy / C,
            "yz": inr.j_w_yz / C,
            "zz": inr.j_w_zz / C,
            "mzz": (inr.j_m_zz + inr.j_w_zz) / C,
            "tandem_mean1": cfg.tandem_mean + 1.0,
            "tandem_amp": cfg.tandem_amp,
            "omega": 2.0 * math.pi * cfg.tandem_frequency,
            "phase": np.asarray(cfg.tandem_phase, dtype=np.float64),
            "couple": cfg.aero_couple_coeff,
            "drag": cfg.aero_drag_coeff,
            "slack": cfg.membrane_slack,
            "kmem": cfg.membrane_stiffness,
            "cmem": cfg.membrane_damping,
            "yaw": cfg.yaw_enabled,
            "yaw_amp": cfg.yaw_amp,
            "yaw_period": cfg.yaw_period,
            "yaw_half": 0.5 * cfg.yaw_period,
        }
        self._integrator = RadauIIA(self._rhs, self._jacobian, atol=self.atol, rtol=self.rtol)

    @classmethod
    def for_condition(cls, frequency: float, yaw_enabled: bool, **overrides) -> Plant:
        loads = overrides.pop("loads", LoadModelConfig())
        loads = replace(loads, tandem_frequency=frequency, yaw_enabled=yaw_enabled)
        inertia = overrides.pop("inertia", InertiaParams())
        return cls(inertia=inertia, springs=SpringBank.for_frequency(frequency, inertia), loads=loads, **overrides)

    def _rhs(self, t, Y):
        # Same algebra as _load_arrays/_accel_arrays with constants hoisted.
        phi, theta, phi_dot, theta_dot = Y[..., 0:4], Y[..., 4:8], Y[..., 8:12], Y[..., 12:16]
        c = self._rhs_consts
        t = np.asarray(t, dtype=np.float64)[..., None]
        spring = c["k"] * (phi + self._offset)
        if self.loads.enabled:
            scale = c["tandem_mean1"] + c["tandem_amp"] * np.sin(c["omega"] * t + c["phase"])
            pd2 = phi_dot * phi_dot
            t_yw = c["couple"] * pd2 * scale
            t_zw = -c["drag"] * phi_dot * np.abs(phi_dot) * scale
            over = np.abs(theta) - c["slack"]
            np.maximum(over, 0.0, out=over)
            t_vtm = -c["kmem"] * np.sign(theta) * over - c["cmem"] * theta_dot
            if c["yaw"]:
                t_yaw = np.where(np.mod(t, c["yaw_period"]) < c["yaw_half"], c["yaw_amp"], -c["yaw_amp"])
                side = t_yw + t_vtm + t_yaw
                theta_dd = c["mzz"] * (t_vtm + t_yw) + c["yz"] * (spring - self._t_m - t_zw) + c["zz"] * t_yaw
            else:
                side = t_yw + t_vtm
                theta_dd = c["mzz"] * side + c["yz"] * (spring - self._t_m - t_zw)
            phi_dd = c["yy"] * (self._t_m + t_zw - spring) - c["yz"] * side
        else:
            phi_dd = c["yy"] * (self._t_m - spring) + 0.0 * phi
            theta_dd = c["yz"] * (spring - self._t_m) + 0.0 * phi
        return np.concatenate([phi_dot, theta_dot, phi_dd, theta_dd], axis=-1)

    def _jacobian(self, t, y):
        """Per-wing 4x4 Jacobian blocks over ``(phi, theta, phi_dot, theta_dot)``."""
        inr = self.inertia
        C = inr.c_det
        yy, yz, mzz = inr.j_w_yy / C, inr.j_w_yz / C, (inr.j_m_zz + inr.j_w_zz) / C
        theta, phi_dot = y[4:8], y[8:12]
        if self.loads.enabled:
            cfg = self.loads
            c_t = cfg.tandem_mean + cfg.tandem_amp * np.sin(
                2.0 * math.pi * cfg.tandem_frequency * t + np.asarray(cfg.tandem_phase)
            )
            s = c_t + 1.0
            d_zw = -2.0 * cfg.aero_drag_coeff * np.abs(phi_dot) * s
            d_yw = 2.0 * cfg.aero_couple_coeff * phi_dot * s
            d_vtm_th = np.where(np.abs(theta) > cfg.membrane_slack, -cfg.membrane_stiffness, 0.0)
            d_vtm_thd = np.full(N_WINGS, -cfg.membrane_damping)
        else:
            d_zw = d_yw = d_vtm_th = d_vtm_thd = np.zeros(N_WINGS)
        J = np.zeros((N_WINGS, 4, 4))
        J[:, 0, 2] = 1.0
        J[:, 1, 3] = 1.0
        J[:, 2, 0] = -yy * self._k
        J[:, 2, 1] = -yz * d_vtm_th
        J[:, 2, 2] = yy * d_zw - yz * d_yw
        J[:, 2, 3] = -yz * d_vtm_thd
        J[:, 3, 0] = yz * self._k
        J[:, 3, 1] = mzz * d_vtm_th
        J[:, 3, 2] = mzz * d_yw - yz * d_zw
        J[:, 3, 3] = mzz * d_vtm_thd
        return J

    def dense_jacobian(self, t, y) -> np.ndarray:
        """Full 16x16 Jacobian in the integrator's state layout."""
        blocks = self._jacobian(t, y)
        J = np.zeros((16, 16))
        for w in range(N_WINGS):
            idx = np.arange(4) * N_WINGS + w
            J[np.ix_(idx, idx)] = blocks[w]
        return J

    def derivative(self, state: PlantState, t_m) -> np.ndarray:
        self._t_m = np.asarray(t_m, dtype=np.float64)
        return self._rhs(np.asarray(state.t), state.to_vector())

    def step(self, state: PlantState, t_m, dt: float = CONTROL_PERIOD) -> PlantState:
        """Advance by one event step holding the motor torques constant."""
        self._t_m = np.asarray(t_m, dtype=np.float64).copy()
        y = self._integrator.step(state.t, state.to_vector(), dt)
        if not np.all(np.isfinite(y)):
            raise StepFailure("non-finite state after step", t=state.t, h=dt, iterations=0, residual=math.inf)
        return PlantState.from_vector(y, state.t + dt)

    def to_dict(self) -> dict:
        return {
            "inertia": asdict(self.inertia),
            "springs": {"k_a": list(self.springs.k_a), "f_exp": self.springs.f_exp},
            "loads": asdict(self.loads),
            "zero_rest_offset": self.zero_rest_offset,
        }


def write_trajectory_csv(path: str | Path, states: Iterable[PlantState]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for s in states:
            writer.writerow([repr(float(v)) for v in s.as_row()])
