import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import least_squares_line

from crl2rt.concerto import (
    Accumulator,
    Branch,
    ComposerConfig,
    ComposerLog,
    DdpRecord,
    GdsRecord,
    Mode,
    SafetyMonitor,
    accumulate,
    compose,
    convergence_diagnostics,
    fit_gds,
    monitor_pair,
    required_pc,
    select_mode,
)

DT = 5e-4


def test_mode_parity():
    assert select_mode(0) is Mode.CLASSICAL
    assert select_mode(1) is Mode.LEARNED
    assert select_mode(7) is Mode.LEARNED
    with pytest.raises(ValueError):
        select_mode(-1)


@given(st.integers(0, 10_000), st.integers(1, 200))
def test_mode_balance_over_even_windows(start, k):
    modes = [select_mode(i) for i in range(start, start + 2 * k)]
    assert modes.count(Mode.CLASSICAL) == k == modes.count(Mode.LEARNED)


def test_monitor_decreasing_error_is_fine():
    violated, delta, mon = monitor_pair(1.0, 1.01, 0.9, SafetyMonitor(pc_class=0.0), 2 * DT)
    assert not violated and delta == pytest.approx(-0.1)
    assert mon.pairs == 1 and mon.pe_rl_max == pytest.approx(0.01 / DT)


def test_monitor_critical_point_flags_any_growth():
    pe = 4.0
    mon = SafetyMonitor(pc_class=pe, pe_rl_max=pe)
    assert mon.lambda_lipschitz == 0.0
    violated, _, mon = monitor_pair(1.0, 1.0 + pe * DT, 1.0 + 1e-9, mon, 2 * DT)
    assert violated and mon.violations == 1


def test_monitor_bound_substitution():
    mon = SafetyMonitor(pc_class=1.0, pe_rl_max=2.0)
    assert mon.lambda_lipschitz * 2 * DT == pytest.approx(0.5 * 2 * DT)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_pe_rl_max_is_monotone(rates):
    mon = SafetyMonitor()
    last = -math.inf
    for r in rates:
        _, _, mon = monitor_pair(1.0, 1.0 + r * DT, 1.0, mon, 2 * DT)
        assert mon.pe_rl_max >= last
        last = mon.pe_rl_max


def test_required_pc():
    assert required_pc(2.0, 0.001, 0.001) == pytest.approx(1.0)
    assert required_pc(2.0, 0.0, 0.001) == 2.0
    assert required_pc(2.0, 1e300, 1e-3) < -1e299
    with pytest.raises(ValueError):
        required_pc(1.0, 1.0, 0.0)


def test_fit_gds_exact_lines():
    q = [-0.01 * k + 5 for k in range(50)]
    a, b, c = fit_gds(q)
    assert a == pytest.approx(-0.01, abs=1e-14) and b == pytest.approx(5.0, abs=1e-12) and c < 1e-12
    assert fit_gds([3.0] * 10) == (0.0, 3.0, 0.0)
    with pytest.raises(ValueError):
        fit_gds([1.0])


def test_fit_gds_matches_normal_equations():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = (rng.uniform(-1, 1) * np.arange(500) + rng.normal(0, 2, 500)).tolist()
        got = fit_gds(q)
        ref = least_squares_line(q)
        for g, r in zip(got, ref):
            assert g == pytest.approx(r, abs=1e-10)


def _records(a_prev, c_prev, a_cur, c_cur, q_cur=1.0):
    return GdsRecord(0, a_prev, 0.0, c_prev, None, 2.0), GdsRecord(1, a_cur, 0.0, c_cur, None, q_cur)


def _setup(seed=0, n=64):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n)
    delta = rng.standard_normal(n) * 1e-2
    anchor = rng.standard_normal(n)
    ddp = DdpRecord(3, anchor.copy(), best_qbar=0.5)
    return theta, delta, anchor, ddp


def test_branch_improved_accepts_everything_and_moves_anchor():
    theta, delta, _, ddp = _setup()
    prev, cur = _records(0.0, 0.0, 0.0, 0.0, q_cur=0.4)
    nxt, new_ddp, j, branch = compose(theta, delta, prev, cur, ddp, ComposerConfig(), np.random.default_rng(0), 5)
    assert branch is Branch.IMPROVED and j == 0
    assert np.max(np.abs(nxt - (theta + delta))) <= 1e-15
    np.testing.assert_array_equal(new_ddp.theta_g0, nxt)
    assert new_ddp.best_qbar == 0.4 and new_ddp.g == ddp.g + 1


def test_literal_direction_switch():
    theta, delta, _, ddp = _setup()
    prev, cur = _records(0.0, 0.0, 0.0, 0.0, q_cur=0.6)
    cfg = ComposerConfig(cost_semantics=False)
    assert compose(theta, delta, prev, cur, ddp, cfg, np.random.default_rng(0), 1)[3] is Branch.IMPROVED


def test_branch_timeout_restores_anchor_bit_exactly():
    theta, delta, anchor, ddp = _setup()
    cfg = ComposerConfig(N=8)
    prev, cur = _records(0.0, 0.0, 1.0, 1.0)
    nxt, new_ddp, j, branch = compose(theta, delta, prev, cur, ddp, cfg, np.random.default_rng(0), cfg.N + 1)
    assert branch is Branch.TIMEOUT and j == 0
    np.testing.assert_array_equal(nxt, anchor)
    assert new_ddp.best_qbar == ddp.best_qbar


@pytest.mark.parametrize(
    "a_prev, c_prev, a_cur, c_cur, expected",
    [
        (0.0, 0.0, 1.0, 1.0, Branch.EXPECTED),
        (0.0, 1.0, 1.0, 0.0, Branch.PARTIAL),
        (1.0, 0.0, 0.0, 1.0, Branch.SLOWING),
        (1.0, 1.0, 0.0, 0.0, Branch.FAILED),
    ],
)
def test_slope_spread_branches(a_prev, c_prev, a_cur, c_cur, expected):
    theta, delta, anchor, ddp = _setup()
    cfg = ComposerConfig()
    prev, cur = _records(a_prev, c_prev, a_cur, c_cur)
    nxt, new_ddp, j, branch = compose(theta, delta, prev, cur, ddp, cfg, np.random.default_rng(42), 2)
    assert branch is expected and j == 3
    assert new_ddp is ddp
    # Replay the noise draw with the same seed to check the exact transform.
    rng = np.random.default_rng(42)
    s_partial, s_slow, s_fail = cfg.noise_sigmas
    floor = cfg.noise_floor
    if expected is Branch.EXPECTED:
        assert np.max(np.abs(nxt - (theta + delta))) <= 1e-15
    elif expected is Branch.PARTIAL:
        noise = rng.standard_normal(theta.shape) * (s_partial * np.abs(theta) + s_partial * floor)
        np.testing.assert_array_equal(nxt, theta + cfg.beta * delta + noise)
    elif expected is Branch.SLOWING:
        noise = rng.standard_normal(theta.shape) * (s_slow * np.abs(theta) + s_slow * floor)
        np.testing.assert_array_equal(nxt, theta + noise)
    else:
        noise = rng.standard_normal(theta.shape) * (s_fail * np.abs(anchor) + s_fail * floor)
        np.testing.assert_array_equal(nxt, anchor + noise)


def test_noise_scale_per_branch_statistics():
    """The empirical spread of each noisy branch matches its sigma."""
    n = 200_000
    theta = np.full(n, 2.0)
    anchor = np.full(n, -4.0)
    ddp = DdpRecord(0, anchor, best_qbar=0.0)
    cfg = ComposerConfig(noise_floor=0.0)
    cases = [
        ((0.0, 1.0, 1.0, 0.0), Branch.PARTIAL, 0.064 * 2.0, theta),
        ((1.0, 0.0, 0.0, 1.0), Branch.SLOWING, 0.04 * 2.0, theta),
        ((1.0, 1.0, 0.0, 0.0), Branch.FAILED, 0.2 * 4.0, anchor),
    ]
    for rec, branch, sd, centre in cases:
        prev, cur = _records(*rec)
        nxt, _, _, got = compose(theta, np.zeros(n), prev, cur, ddp, cfg, np.random.default_rng(1), 0)
        assert got is branch
        assert np.std(nxt - centre) == pytest.approx(sd, rel=0.01)
        assert abs(np.mean(nxt - centre)) < 5 * sd / math.sqrt(n)


def test_noise_reproducible_per_seed_and_moves_zero_params():
    theta = np.zeros(16)
    ddp = DdpRecord(0, theta.copy(), best_qbar=0.0)
    prev, cur = _records(1.0, 0.0, 0.0, 1.0)
    a = compose(theta, theta, prev, cur, ddp, ComposerConfig(), np.random.default_rng(9), 0)[0]
    b = compose(theta, theta, prev, cur, ddp, ComposerConfig(), np.random.default_rng(9), 0)[0]
    np.testing.assert_array_equal(a, b)
    assert np.all(a != 0.0)


def test_best_qbar_nonincreasing_over_a_run():
    rng = np.random.default_rng(3)
    cfg = ComposerConfig(N=3)
    theta = rng.standard_normal(8)
    ddp = DdpRecord(0, theta.copy(), math.inf)
    prev, j, bests = None, 0, []
    for i in range(300):
        cur = GdsRecord(i, rng.normal(), 0.0, abs(rng.normal()), None, float(rng.uniform(0, 1)))
        theta, ddp, j, _ = compose(theta, rng.standard_normal(8) * 1e-3, prev, cur, ddp, cfg, rng, j)
        prev = cur
        bests.append(ddp.best_qbar)
    assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))


def test_config_validation():
    for kwargs in ({"L": 1}, {"N": 0}, {"beta": 1.5}):
        with pytest.raises(ValueError):
            ComposerConfig(**kwargs)


def test_accumulate_inclusive_segments():
    L, N = 4, 2
    d = np.array([0.5, -1.0])
    segs, phases = accumulate([d] * ((L + 1) * (N + 1)), L, N)
    assert len(segs) == N + 1 and len(phases) == 1
    for s in segs:
        np.testing.assert_array_equal(s, (L + 1) * d)
    zero_segs, _ = accumulate([np.zeros(2)] * (L + 1), L, N)
    assert not zero_segs[0].any()


def test_accumulate_phase_is_sum_of_segments():
    rng = np.random.default_rng(0)
    L, N = 7, 3
    stream = [rng.standard_normal(5) for _ in range((L + 1) * (N + 1) * 2 + 3)]
    segs, phases = accumulate(stream, L, N)
    per_phase = N + 1
    np.testing.assert_allclose(phases[0], np.sum(segs[:per_phase], axis=0), atol=1e-12)
    np.testing.assert_allclose(phases[1], np.sum(segs[per_phase : 2 * per_phase], axis=0), atol=1e-12)
    np.testing.assert_allclose(np.sum(phases, axis=0), np.sum(stream, axis=0), atol=1e-12)
    acc = Accumulator(L, N)
    assert all(acc.add(x) is None for x in stream[:L])
    assert acc.add(stream[L]) is not None


def test_convergence_geometric_constant_increasing():
    report = convergence_diagnostics([0.5**g for g in range(8)])
    np.testing.assert_allclose(report.m, 1.0, atol=1e-12)
    assert report.accelerating and not report.diverging
    assert report.cumulative[-1] == pytest.approx(2.0**7)
    flat = convergence_diagnostics([0.3] * 5)
    assert all(m == 0 for m in flat.m) and not flat.accelerating
    up = convergence_diagnostics([0.1, 0.2, 0.4])
    assert all(m < 0 for m in up.m) and up.diverging
    assert convergence_diagnostics([1.0]) is None


def test_convergence_fits_power_law_decay():
    # Q_{g+1} = Q_g - c * Q_g**alpha with c=0.1, alpha=1.5.
    q = [1.0]
    for _ in range(10):
        q.append(q[-1] - 0.1 * q[-1] ** 1.5)
    report = convergence_diagnostics(q)
    assert report.alpha == pytest.approx(1.5, rel=1e-9)
    assert report.c == pytest.approx(0.1, rel=1e-9)


def test_composer_log_jsonl(tmp_path):
    path = tmp_path / "composer.jsonl"
    log = ComposerLog(path)
    log.write(1, 2, Branch.PARTIAL, GdsRecord(2, -0.1, 3.0, 0.2, None, 1.5), 77)
    log.close()
    entry = json.loads(path.read_text())
    assert entry == {"g": 1, "j": 2, "branch": "partial_with_noise", "qbar": 1.5, "a": -0.1, "b": 3.0, "c": 0.2,
                     "noise_seed": 77}
