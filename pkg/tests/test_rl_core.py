import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import discounted_rollout

from crl2rt.neural import LionState, Network, NetworkSpec, init_xavier
from crl2rt.rl_core import (
    ReplayBuffer,
    RewardSpec,
    Source,
    TrainerHyper,
    Transition,
    actor_update,
    critic_update,
    estimate_delta_q,
    estimate_qbar,
    policy_action,
    policy_gradient,
    reward,
    td_error,
)


def test_reward_values():
    assert reward(np.zeros(4)) == 0.0
    assert reward(np.full(4, math.pi / 2)) == pytest.approx(1.0)
    assert reward([0.1, 0, 0, 0]) == pytest.approx(0.0159155, abs=1e-7)
    assert reward(np.full(4, 10.0)) == 1.0
    with pytest.raises(ValueError):
        RewardSpec(0.0)


@given(st.lists(st.floats(-1.6, 1.6), min_size=4, max_size=4), st.permutations(range(4)), st.integers(0, 3))
def test_reward_symmetric_and_monotone(errors, perm, i):
    e = np.array(errors)
    assert reward(e) == pytest.approx(reward(e[list(perm)]), abs=1e-15)
    bigger = e.copy()
    bigger[i] = math.copysign(abs(bigger[i]) + 0.1, bigger[i] if bigger[i] else 1.0)
    assert reward(bigger) >= reward(e)
    assert 0.0 <= reward(e) <= 1.0


def test_td_error_values():
    assert td_error(0.1, 0.9, 1.0, 0.95) == pytest.approx(0.05)
    assert td_error(0.0, 0.9, 1.0, 0.9) == pytest.approx(0.0)
    assert td_error(0.5, 0.0, 123.0, 0.0) == 0.5


def _transition(rng, source=Source.RL):
    return Transition(
        rng.standard_normal(80).astype(np.float32),
        rng.uniform(-1, 1, 4).astype(np.float32),
        float(rng.uniform()),
        rng.standard_normal(80).astype(np.float32),
        rng.uniform(-1, 1, 4).astype(np.float32),
        source,
    )


def test_replay_fifo_eviction_and_order():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(capacity=5)
    items = [_transition(rng) for _ in range(8)]
    buf.extend(items)
    assert len(buf) == 5
    assert buf.transitions() == items[3:]


def test_replay_sampling_without_replacement():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(capacity=50)
    for k in range(30):
        tr = _transition(rng)
        tr.reward = float(k)
        buf.add(tr)
    _, _, rewards, _, _ = buf.sample(np.random.default_rng(2), 30)
    assert sorted(rewards.tolist()) == list(range(30))
    with pytest.raises(ValueError):
        ReplayBuffer().sample(rng, 4)


def test_replay_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    buf = ReplayBuffer(capacity=10)
    buf.extend(_transition(rng, src) for src in (Source.CLASSICAL, Source.RL, Source.COMPOSER))
    path = tmp_path / "buf.jsonl"
    buf.export_jsonl(path)
    assert ReplayBuffer.read_jsonl(path) == buf.transitions()
    assert '"source": "classical"' in path.read_text().splitlines()[0]


def test_hyper_validation():
    with pytest.raises(ValueError):
        TrainerHyper(gamma=1.0)
    h = TrainerHyper()
    assert (h.gamma, h.alpha_actor, h.alpha_critic, h.critic_batch, h.policy_batch) == (0.9, 0.015, 0.0015, 512, 16)


def _batch(rng, n, state_dim=80):
    return (
        rng.standard_normal((n, state_dim)).astype(np.float32),
        rng.uniform(-1, 1, (n, 4)).astype(np.float32),
        rng.uniform(0, 1, n).astype(np.float32),
        rng.standard_normal((n, state_dim)).astype(np.float32),
        rng.uniform(-1, 1, (n, 4)).astype(np.float32),
    )


def test_critic_zero_rate_leaves_weights():
    critic = init_xavier(NetworkSpec.critic(hidden=(32, 32)), seed=0)
    before = critic.flat().copy()
    critic_update(critic, LionState.for_params(critic.params()), _batch(np.random.default_rng(0), 8),
                  TrainerHyper(alpha_critic=0.0))
    np.testing.assert_array_equal(critic.flat(), before)


def test_critic_zero_td_error_is_still():
    # Identity critic with zero weights: q = q_next = 0 and r = 0 gives delta = 0.
    critic = Network(NetworkSpec((84, 1), "identity", "identity"), [np.zeros((1, 84))], [np.zeros(1)])
    rng = np.random.default_rng(1)
    batch = list(_batch(rng, 4))
    batch[2] = np.zeros(4, np.float32)
    delta = critic_update(critic, LionState.for_params(critic.params()), tuple(batch), TrainerHyper())
    assert not delta.any()
    assert not critic.flat().any()


def test_critic_single_linear_layer_follows_sign_rule():
    spec = NetworkSpec((84, 1), "identity", "identity")
    rng = np.random.default_rng(2)
    W = rng.standard_normal((1, 84)) * 0.01
    critic = Network(spec, [W.copy()], [np.zeros(1)])
    s, a, _, s2, a2 = _batch(rng, 1)
    x = np.concatenate([s, a], 1)[0].astype(np.float64)
    x2 = np.concatenate([s2, a2], 1)[0].astype(np.float64)
    r = 0.7
    hyper = TrainerHyper(alpha_critic=1e-3)
    delta = critic_update(critic, LionState.for_params(critic.params()), (s, a, np.array([r]), s2, a2), hyper)
    expected_delta = r + 0.9 * float(W[0] @ x2) - float(W[0] @ x)
    assert delta[0] == pytest.approx(expected_delta, rel=1e-6)
    # Semi-gradient step w += alpha * delta * x, passed through Lion's sign.
    expected = W[0] + 1e-3 * np.sign(expected_delta * x) * (np.abs(x) > 0)
    np.testing.assert_allclose(critic.weights[0][0], expected, rtol=0, atol=1e-12)


def _tiny_pair(seed):
    actor = init_xavier(NetworkSpec((6, 5, 2)), seed, dtype=np.float64)
    critic = init_xavier(NetworkSpec((8, 7, 1), "tanh", "identity"), seed + 1, dtype=np.float64)
    return actor, critic


def test_actor_zero_rate_and_dead_action_path():
    actor, critic = _tiny_pair(0)
    states = np.random.default_rng(0).standard_normal((4, 6))
    before = actor.flat().copy()
    step = actor_update(actor, critic, LionState.for_params(actor.params()), states, TrainerHyper(alpha_actor=0.0))
    assert not step.any()
    critic.weights[0][:, 6:] = 0.0
    grads = policy_gradient(actor, critic, states)
    assert all(not g.any() for g in grads)
    step = actor_update(actor, critic, LionState.for_params(actor.params()), states, TrainerHyper())
    assert not step.any()
    np.testing.assert_array_equal(actor.flat(), before)


def test_policy_gradient_matches_finite_differences():
    actor, critic = _tiny_pair(5)
    states = np.random.default_rng(5).standard_normal((3, 6))
    grad = np.concatenate([g.ravel() for g in policy_gradient(actor, critic, states)])

    def objective(vec):
        probe = actor.copy()
        probe.set_flat(vec)
        acts = probe.forward(states, cache=False)
        return float(critic.forward(np.concatenate([states, acts], 1), cache=False).mean())

    theta = actor.flat()
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = 1e-5
        fd[i] = (objective(theta + e) - objective(theta - e)) / 2e-5
    cosine = grad @ fd / (np.linalg.norm(grad) * np.linalg.norm(fd))
    assert cosine > 0.999


def test_actor_update_descends_cost():
    actor, critic = _tiny_pair(9)
    states = np.random.default_rng(9).standard_normal((16, 6))

    def q_mean():
        acts = actor.forward(states, cache=False)
        return float(critic.forward(np.concatenate([states, acts], 1), cache=False).mean())

    before = q_mean()
    lion = LionState.for_params(actor.params())
    step = actor_update(actor, critic, lion, states, TrainerHyper(alpha_actor=1e-3))
    assert q_mean() < before
    assert step.dtype == np.float64 and np.abs(step).max() == pytest.approx(1e-3, rel=1e-6)


def test_estimate_qbar_closed_forms():
    assert estimate_qbar([0.05] * 10, 0.9) == pytest.approx(0.5, abs=1e-15)
    assert estimate_qbar([0.0] * 5, 0.9) == 0.0
    with pytest.raises(ValueError):
        estimate_qbar([], 0.9)
    with pytest.raises(ValueError):
        estimate_qbar([0.1], 1.0)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=600), st.floats(0.05, 0.99))
def test_estimate_qbar_matches_brute_force_rollout(window, gamma):
    rbar = math.fsum(window) / len(window)
    horizon = int(40 / (1 - gamma)) + 10
    brute = discounted_rollout(rbar, gamma, horizon)
    got = estimate_qbar(window, gamma)
    assert got == pytest.approx(rbar / (1 - gamma), rel=1e-12, abs=1e-300)
    assert got == pytest.approx(brute, rel=1e-12, abs=1e-300)


def test_delta_q_consistency():
    assert estimate_delta_q(0.05, 0.05, 0.9) == 0.0
    assert estimate_delta_q(0.05, 0.03, 0.9) == pytest.approx(-0.2)
    rng = np.random.default_rng(0)
    for _ in range(100):
        before, after = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)
        g = float(rng.uniform(0.1, 0.99))
        diff = estimate_qbar(after, g) - estimate_qbar(before, g)
        assert estimate_delta_q(before.mean(), after.mean(), g) == pytest.approx(diff, abs=1e-12)


def test_residual_policy_gradient_matches_finite_differences():
    actor, critic = _tiny_pair(7)
    rng = np.random.default_rng(7)
    states = rng.standard_normal((4, 6))
    states[:, 4:6] = rng.uniform(-0.5, 0.5, (4, 2))
    base = slice(4, 6)
    grad = np.concatenate([g.ravel() for g in policy_gradient(actor, critic, states, base)])

    def objective(vec):
        probe = actor.copy()
        probe.set_flat(vec)
        acts = np.clip(probe.forward(states, cache=False) + states[:, base], -1, 1)
        return float(critic.forward(np.concatenate([states, acts], 1), cache=False).mean())

    theta = actor.flat()
    fd = np.array([
        (objective(theta + e) - objective(theta - e)) / 2e-5 for e in np.eye(theta.size) * 1e-5
    ])
    assert grad @ fd / (np.linalg.norm(grad) * np.linalg.norm(fd)) > 0.999


def test_residual_action_adds_previous_and_saturates():
    actor, critic = _tiny_pair(8)
    for w in actor.weights:
        w[...] = 0.0
    states = np.zeros((2, 6))
    states[:, 4:6] = [[0.3, -0.2], [5.0, -5.0]]
    np.testing.assert_array_equal(policy_action(actor, states, slice(4, 6)), [[0.3, -0.2], [1.0, -1.0]])
    # Fully saturated rows contribute nothing to the actor gradient.
    grads = policy_gradient(actor, critic, states[1:], slice(4, 6))
    assert all(not g.any() for g in grads)
