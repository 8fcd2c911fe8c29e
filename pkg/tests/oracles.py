"""Independent reference implementations used only by the tests.

Everything here is written from the governing formulas directly, with plain
Python floats and loops, and never calls into the package under test.
"""

from __future__ import annotations

import math


def flapping_accel(i, phi, t_m, t_yw, t_zw, t_vtm, t_yaw, yy, yz, zz, mzz, k_a):
    """Flapping acceleration of wing ``i`` (1-based), term by term."""
    C1 = mzz * yy + yy * zz - yz * yz
    out = (
        -(yy * k_a) / C1 * phi
        + yy / C1 * t_m
        + yy / C1 * t_zw
        - yz / C1 * t_yw
        - yz / C1 * t_vtm
        - yz / C1 * t_yaw
    )
    if i in (2, 3):
        out += -(math.pi * yy * k_a) / C1
    return out


def torsion_accel(i, phi, t_m, t_yw, t_zw, t_vtm, t_yaw, yy, yz, zz, mzz, k_a):
    """Torsion acceleration of wing ``i`` (1-based), term by term."""
    C1 = mzz * yy + yy * zz - yz * yz
    out = (
        mzz / C1 * t_vtm
        + mzz / C1 * t_yw
        + yz / C1 * k_a * phi
        - yz / C1 * t_m
        - yz / C1 * t_zw
        + zz / C1 * t_vtm
        + zz / C1 * t_yw
        + zz / C1 * t_yaw
    )
    if i in (2, 3):
        out += (math.pi * yz * k_a) / C1
    return out


def lion_reference(param, grad, mom, lr, beta1=0.9, beta2=0.99, wd=0.0):
    """Scalar-loop Lion step; returns (new_param, new_momentum) as lists."""
    new_p, new_m = [], []
    for p, g, m in zip(param, grad, mom):
        c = beta1 * m + (1.0 - beta1) * g
        s = 1.0 if c > 0 else (-1.0 if c < 0 else 0.0)
        new_p.append(p - lr * (s + wd * p))
        new_m.append(beta2 * m + (1.0 - beta2) * g)
    return new_p, new_m


def mlp_forward64(weights, biases, x, activations):
    """Double-precision forward pass with explicit loops over neurons."""
    h = [float(v) for v in x]
    for W, b, act in zip(weights, biases, activations):
        nxt = []
        for row, bias in zip(W, b):
            z = float(bias) + sum(float(w) * v for w, v in zip(row, h))
            nxt.append(math.tanh(z) if act == "tanh" else z)
        h = nxt
    return h


def least_squares_line(q):
    """Slope, intercept and RMS residual via the 2x2 normal equations."""
    n = len(q)
    sx = sum(range(n))
    sxx = sum(k * k for k in range(n))
    sy = sum(q)
    sxy = sum(k * v for k, v in enumerate(q))
    det = n * sxx - sx * sx
    a = (n * sxy - sx * sy) / det
    b = (sxx * sy - sx * sxy) / det
    rss = sum((v - (a * k + b)) ** 2 for k, v in enumerate(q))
    return a, b, math.sqrt(rss / n)


def discounted_rollout(rbar, gamma, horizon=20000):
    """Brute-force discounted sum of a constant cost stream."""
    total, w = 0.0, 1.0
    for _ in range(horizon):
        total += w * rbar
        w *= gamma
    return total


def mechanical_energy(phi, theta, phi_dot, theta_dot, yy, yz, zz, mzz, k_a, offset):
    """Kinetic plus spring energy of one wing with loads removed.

    The mass matrix over (phi, theta) is [[mzz + zz, yz], [yz, yy]]; its
    inverse times the generalised torques reproduces the equations of motion.
    """
    kin = 0.5 * ((mzz + zz) * phi_dot**2 + 2.0 * yz * phi_dot * theta_dot + yy * theta_dot**2)
    return kin + 0.5 * k_a * (phi + offset) ** 2


def pid_reference(kp, ki, kd, errors, dt):
    """Discrete PID on a scalar error sequence; first step has no derivative kick."""
    integ, prev, out = 0.0, None, []
    for e in errors:
        integ += e * dt
        d = 0.0 if prev is None else (e - prev) / dt
        out.append(kp * e + ki * integ + kd * d)
        prev = e
    return out
