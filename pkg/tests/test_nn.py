import numpy as np
import pytest
from hypothesis import given, strategies as st

from oranslice.nn import (LOG_STD_MIN, MLP, Activation, Adam, Linear, MLPSpec, Param, PoisonedUpdateError,
                          ShapeError, clamp_log_std, gaussian_policy_backward, gaussian_policy_sample,
                          leaky_relu, leaky_relu_grad, load_params, params_digest, polyak_update,
                          save_params, softmax, squashed_log_prob)

from helpers import check_param_grads, numeric_grad, rel_err


# ---------------------------------------------------------------- forward / backward

def test_zero_network_outputs_zero():
    net = MLP(MLPSpec((4, 8, 3), "tanh", "identity"), rng=None)
    y, _ = net.forward(np.ones((5, 4)))
    np.testing.assert_array_equal(y, np.zeros((5, 3)))


def test_single_unit_tanh_closed_form():
    net = MLP(MLPSpec((1, 1), "tanh", "tanh"), rng=None)
    net.layers[0].weight.value[...] = 0.7
    x = np.array([[-2.0], [0.3], [1.5]])
    y, _ = net.forward(x)
    np.testing.assert_allclose(y, np.tanh(0.7 * x), rtol=0, atol=1e-15)


def test_linear_squared_loss_hand_derivative():
    lin = Linear(1, 1, rng=None, bias=False)
    w, x, y = 1.3, 0.4, 2.0
    lin.weight.value[...] = w
    out, cache = lin.forward(np.array([[x]]))
    lin.backward(cache, 2 * (out - y))
    np.testing.assert_allclose(lin.weight.grad, [[2 * (w * x - y) * x]], rtol=1e-15)


def test_constant_loss_gives_zero_grads(rng):
    net = MLP(MLPSpec((3, 5, 2), "leaky_relu", "identity"), rng)
    _, cache = net.forward(rng.normal(size=(4, 3)))
    dx = net.backward(cache, np.zeros((4, 2)))
    for p in net.parameters():
        np.testing.assert_array_equal(p.grad, 0.0)
    np.testing.assert_array_equal(dx, 0.0)


@pytest.mark.parametrize("hidden", ["tanh", "leaky_relu"])
def test_three_layer_input_gradient_matches_finite_differences(rng, hidden):
    net = MLP(MLPSpec((4, 16, 16, 3), hidden, "identity"), rng)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(6, 3))

    def loss():
        return float(np.sum(w * net.forward(x)[0]))

    _, cache = net.forward(x)
    dx = net.backward(cache, w)
    num = numeric_grad(loss, x, range(x.size), h=1e-5)
    assert rel_err(dx.ravel(), num) <= 1e-6


@pytest.mark.parametrize("out_act", ["identity", "tanh", "softmax"])
def test_parameter_gradients_match_finite_differences(rng, out_act):
    net = MLP(MLPSpec((5, 12, 7, 4), "tanh", out_act), rng)
    x = rng.normal(size=(8, 5))
    w = rng.normal(size=(8, 4))

    def loss():
        return float(np.sum(w * net.forward(x)[0]))

    def backward():
        _, cache = net.forward(x)
        net.backward(cache, w)

    assert check_param_grads(loss, backward, net.parameters(), rng) <= 1e-6


def test_gradients_accumulate_across_backward_calls(rng):
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(4, 3))
    dy = rng.normal(size=(4, 2))
    _, c = lin.forward(x)
    lin.backward(c, dy)
    once = lin.weight.grad.copy()
    lin.backward(c, dy)
    np.testing.assert_allclose(lin.weight.grad, 2 * once)


def test_shape_errors(rng):
    with pytest.raises(ShapeError):
        Linear(3, 2, rng).forward(np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        MLPSpec((3,))
    with pytest.raises(ValueError):
        Activation("relu6")


def test_leaky_relu_and_slope():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(leaky_relu(x), [-0.02, 0.0, 3.0])
    np.testing.assert_array_equal(leaky_relu_grad(x), [0.01, 0.01, 1.0])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_is_a_distribution(z):
    p = softmax(np.array(z))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------- optimizers

def test_adam_zero_gradient_leaves_params(rng):
    p = Param("p", rng.normal(size=3))
    before = p.value.copy()
    opt = Adam([p], lr=0.1)
    opt.step()
    np.testing.assert_array_equal(p.value, before)
    assert opt.t == 1


def test_adam_first_step_is_lr_sized():
    # bias-corrected first step: m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
    g = np.array([0.3, -4.0, 1e-2])
    p = Param("p", np.zeros(3))
    p.grad[...] = g
    Adam([p], lr=1e-3, eps=1e-8).step()
    np.testing.assert_allclose(p.value, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_identical_groups_update_identically(rng):
    a, b = Param("a", np.ones(4)), Param("b", np.ones(4))
    oa, ob = Adam([a], lr=0.01), Adam([b], lr=0.01)
    for _ in range(5):
        g = rng.normal(size=4)
        a.grad[...] = g
        b.grad[...] = g
        oa.step()
        ob.step()
    np.testing.assert_array_equal(a.value, b.value)


def test_adam_refuses_non_finite_gradient():
    p = Param("p", np.zeros(2))
    p.grad[...] = [1.0, np.nan]
    with pytest.raises(PoisonedUpdateError):
        Adam([p]).step()
    np.testing.assert_array_equal(p.value, 0.0)


def test_polyak_mix_one_copies():
    t, o = Param("t", np.zeros(3)), Param("o", np.arange(3.0))
    polyak_update([t], [o], 1.0)
    np.testing.assert_array_equal(t.value, o.value)


def test_polyak_small_mix():
    t, o = Param("t", np.zeros(1)), Param("o", np.ones(1))
    polyak_update([t], [o], 0.005)
    np.testing.assert_allclose(t.value, [0.005], rtol=1e-15)


def test_polyak_converges_geometrically():
    t, o = Param("t", np.zeros(1)), Param("o", np.ones(1))
    for _ in range(200):
        polyak_update([t], [o], 0.05)
    # scalar recurrence: 1 - (1 - mix)^n
    np.testing.assert_allclose(t.value, [1 - 0.95 ** 200], rtol=1e-12)


def test_polyak_rejects_bad_mix():
    with pytest.raises(ValueError):
        polyak_update([], [], 0.0)


# ---------------------------------------------------------------- squashed gaussian

def test_sample_at_clamp_floor_is_deterministic():
    mean = np.array([-0.4, 0.0, 1.2])
    s = gaussian_policy_sample(mean, np.full(3, LOG_STD_MIN), noise=np.zeros(3))
    np.testing.assert_allclose(s.action, (np.tanh(mean) + 1) / 2, rtol=0, atol=1e-15)


def test_clamp_mask():
    out, mask = clamp_log_std(np.array([-30.0, 0.0, 5.0]))
    np.testing.assert_array_equal(out, [-20.0, 0.0, 2.0])
    np.testing.assert_array_equal(mask, [0.0, 1.0, 0.0])


def test_unit_gaussian_symmetric_about_half():
    rng = np.random.default_rng(7)
    s = gaussian_policy_sample(np.zeros((200_000, 1)), np.zeros((200_000, 1)), rng)
    se = s.action.std() / np.sqrt(s.action.size)
    assert abs(s.action.mean() - 0.5) <= 3 * se


def test_log_prob_matches_histogram_density():
    rng = np.random.default_rng(3)
    mean, log_std = np.array([0.3]), np.array([-0.5])
    n = 1_000_000
    s = gaussian_policy_sample(np.broadcast_to(mean, (n, 1)), np.broadcast_to(log_std, (n, 1)), rng)
    edges = np.linspace(0.0, 1.0, 101)
    counts, _ = np.histogram(s.action[:, 0], bins=edges)
    p_hat = counts / n
    # bin mass of exp(log_prob) by a fine midpoint rule inside each bin
    sub = 200
    mids = edges[:-1, None] + (np.arange(sub) + 0.5)[None] / sub * np.diff(edges)[:, None]
    dens = np.exp(squashed_log_prob(mids.reshape(-1, 1), mean, log_std)).reshape(100, sub)
    p = dens.mean(axis=1) * np.diff(edges)
    assert abs(p.sum() - 1) < 1e-3
    keep = p_hat > 0
    kl = float(np.sum(p_hat[keep] * np.log(p_hat[keep] / p[keep])))
    assert kl <= 1e-3


def test_sample_log_prob_agrees_with_density_formula(rng):
    mean = rng.normal(size=(10, 3))
    log_std = rng.uniform(-1, 0.5, size=(10, 3))
    s = gaussian_policy_sample(mean, log_std, rng)
    np.testing.assert_allclose(s.log_prob, squashed_log_prob(s.action, mean, log_std), rtol=1e-9)


def test_policy_backward_matches_finite_differences(rng):
    mean = rng.normal(size=(4, 3))
    log_std = rng.uniform(-1, 0.5, size=(4, 3))
    noise = rng.standard_normal((4, 3))
    wa, wl = rng.normal(size=(4, 3)), rng.normal(size=4)

    def loss():
        s = gaussian_policy_sample(mean, log_std, noise=noise)
        return float(np.sum(wa * s.action) + np.sum(wl * s.log_prob))

    s = gaussian_policy_sample(mean, log_std, noise=noise)
    dm, dls = gaussian_policy_backward(s, wa, wl)
    assert rel_err(dm.ravel(), numeric_grad(loss, mean, range(12))) <= 1e-6
    assert rel_err(dls.ravel(), numeric_grad(loss, log_std, range(12))) <= 1e-6


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    net = MLP(MLPSpec((3, 4, 2)), rng, name="net")
    path = tmp_path / "net.npz"
    save_params(path, net.parameters())
    other = MLP(MLPSpec((3, 4, 2)), np.random.default_rng(99), name="net")
    assert params_digest(other.parameters()) != params_digest(net.parameters())
    load_params(path, other.parameters())
    assert params_digest(other.parameters()) == params_digest(net.parameters())


def test_checkpoint_shape_mismatch(tmp_path, rng):
    path = tmp_path / "a.npz"
    save_params(path, [Param("w", np.zeros((2, 2)))])
    with pytest.raises(ShapeError):
        load_params(path, [Param("w", np.zeros((3, 2)))])
    with pytest.raises(KeyError):
        load_params(path, [Param("missing", np.zeros(1))])
