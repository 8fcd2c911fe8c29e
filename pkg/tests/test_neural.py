import numpy as np
import pytest
from oracles import lion_reference, mlp_forward64

from crl2rt.neural import (
    LionState,
    Network,
    NetworkSpec,
    SnapshotError,
    backward,
    forward,
    init_xavier,
    lion_update,
    load_snapshot,
    save_snapshot,
)


def _acts(spec):
    return [spec.hidden_activation] * (spec.n_layers - 1) + [spec.output_activation]


def fd_max_relative_error(net, x, coords_per_param=None, h=1e-3, seed=0):
    """Backprop against central differences of sum(output * w) for a fixed w.

    The central difference at ``h`` is combined with one at ``h/2``
    (Richardson) so the oracle's own O(h^2) truncation error, which reaches
    a few 1e-4 on the deep critic, does not mask the comparison.
    """
    rng = np.random.default_rng(seed)
    out = net.forward(x)
    w_out = rng.standard_normal(out.shape)
    grads = net.backward(w_out).params()

    def objective():
        return float((net.forward(x, cache=False) * w_out).sum())

    def central(flat_p, i, step):
        old = flat_p[i]
        flat_p[i] = old + step
        up = objective()
        flat_p[i] = old - step
        down = objective()
        flat_p[i] = old
        return (up - down) / (2 * step)

    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        idx = np.arange(flat_p.size)
        if coords_per_param is not None and flat_p.size > coords_per_param:
            idx = rng.choice(flat_p.size, coords_per_param, replace=False)
        for i in idx:
            fd = (4.0 * central(flat_p, i, h / 2) - central(flat_p, i, h)) / 3.0
            denom = max(abs(fd), abs(flat_g[i]), 1e-6)
            worst = max(worst, abs(fd - flat_g[i]) / denom)
    return worst


def test_actor_gradients_match_finite_differences():
    net = init_xavier(NetworkSpec.actor(), seed=1, dtype=np.float64)
    x = np.random.default_rng(2).uniform(-1, 1, 80)
    assert fd_max_relative_error(net, x) < 1e-4


def test_critic_gradients_match_finite_differences():
    spec = NetworkSpec.critic()
    assert spec.n_layers + 1 == 7
    net = init_xavier(spec, seed=3, dtype=np.float64)
    x = np.random.default_rng(4).uniform(-1, 1, (3, 84))
    assert fd_max_relative_error(net, x, coords_per_param=1000) < 1e-4


def test_input_gradient_matches_finite_differences():
    net = init_xavier(NetworkSpec.critic(state_dim=6, action_dim=2, hidden=(16, 16)), seed=0, dtype=np.float64)
    x = np.random.default_rng(1).uniform(-1, 1, 8)
    net.forward(x)
    g_in = net.backward(np.ones(1)).input
    for i in range(8):
        e = np.zeros(8)
        e[i] = 1e-4
        fd = (net.forward(x + e, cache=False)[0] - net.forward(x - e, cache=False)[0]) / 2e-4
        assert g_in[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_zero_output_grad_gives_zero_gradients():
    net = init_xavier(NetworkSpec.actor(), seed=0)
    grads = backward(net, np.ones(80, np.float32), np.zeros(4, np.float32))
    assert all(not g.any() for g in grads.params())


def test_single_linear_layer_closed_forms():
    spec = NetworkSpec((3, 2), "identity", "identity")
    W = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
    b = np.array([0.1, -0.2])
    net = Network(spec, [W], [b])
    x = np.array([0.3, -0.4, 0.5])
    np.testing.assert_allclose(forward(net, x), W @ x + b)
    g = np.array([0.7, -1.1])
    grads = net.backward(g)
    np.testing.assert_allclose(grads.weights[0], np.outer(g, x))
    np.testing.assert_allclose(grads.biases[0], g)


def test_forward_matches_double_precision_reference():
    spec = NetworkSpec.actor()
    net = init_xavier(spec, seed=7)
    x = np.random.default_rng(8).uniform(-1, 1, 80).astype(np.float32)
    ref = mlp_forward64(net.weights, net.biases, x, _acts(spec))
    np.testing.assert_allclose(net.forward(x), ref, atol=1e-5)
    assert not net.forward(np.zeros(80, np.float32)).any()


def test_forward_rejects_wrong_width():
    net = init_xavier(NetworkSpec.actor(), seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros(79))


def test_xavier_bounds_zero_biases_and_determinism():
    spec = NetworkSpec.critic()
    a = init_xavier(spec, seed=5)
    b = init_xavier(spec, seed=5)
    for (w, bias), fan in zip(zip(a.weights, a.biases), zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        assert np.abs(w).max() <= np.sqrt(6.0 / sum(fan))
        assert not bias.any()
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert a.dtype == np.float32


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec((4,))
    with pytest.raises(ValueError):
        NetworkSpec((4, 2), "relu")
    with pytest.raises(ValueError):
        Network(NetworkSpec((3, 2)), [np.zeros((3, 2))], [np.zeros(2)])


def test_backward_before_forward_raises():
    net = init_xavier(NetworkSpec((2, 2)), seed=0)
    with pytest.raises(RuntimeError):
        net.backward(np.zeros(2))


def test_flat_roundtrip():
    net = init_xavier(NetworkSpec.actor(), seed=1)
    v = net.flat() * 2
    net.set_flat(v)
    np.testing.assert_array_equal(net.flat(), v)
    with pytest.raises(ValueError):
        net.set_flat(v[:-1])


def test_lion_zero_gradient_zero_momentum_is_noop():
    p = [np.array([0.5, -0.25])]
    state = LionState.for_params(p)
    lion_update(p, [np.zeros(2)], state, 0.1)
    np.testing.assert_array_equal(p[0], [0.5, -0.25])


def test_lion_scalar_moves_by_lr():
    p = [np.array([1.0])]
    lion_update(p, [np.array([3.0])], LionState.for_params(p), 0.01)
    assert p[0][0] == 1.0 - 0.01


@pytest.mark.parametrize("wd", [0.0, 0.1])
def test_lion_matches_reference_bit_exactly(wd):
    rng = np.random.default_rng(6)
    p = rng.standard_normal(50)
    g = rng.standard_normal(50)
    m = rng.standard_normal(50)
    ref_p, ref_m = lion_reference(p.tolist(), g.tolist(), m.tolist(), 0.003, wd=wd)
    params = [p.copy()]
    state = LionState([m.copy()], weight_decay=wd)
    lion_update(params, [g], state, 0.003)
    np.testing.assert_array_equal(params[0], ref_p)
    np.testing.assert_array_equal(state.momentum[0], ref_m)


def test_lion_shape_checks():
    with pytest.raises(ValueError):
        lion_update([np.zeros(2)], [np.zeros(3)], LionState([np.zeros(2)]), 0.1)
    with pytest.raises(ValueError):
        lion_update([np.zeros(2)], [], LionState([np.zeros(2)]), 0.1)


def test_snapshot_roundtrip_and_errors(tmp_path):
    net = init_xavier(NetworkSpec.actor(), seed=2)
    path = tmp_path / "actor.crlw"
    save_snapshot(net, path)
    back = load_snapshot(path, NetworkSpec.actor())
    np.testing.assert_array_equal(back.flat(), net.flat())
    assert load_snapshot(path).spec.layer_sizes == (80, 128, 128, 4)
    raw = path.read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short").write_bytes(raw[: len(raw) // 2])
    for name in ("bad_magic", "short"):
        with pytest.raises(SnapshotError):
            load_snapshot(tmp_path / name)
    with pytest.raises(SnapshotError):
        load_snapshot(path, NetworkSpec.critic())
