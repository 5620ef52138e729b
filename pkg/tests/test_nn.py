import numpy as np
import pytest

from dynlf import nn


# ---------------------------------------------------------------------------
# independent oracle: central finite differences on a flat parameter vector
# ---------------------------------------------------------------------------


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at flat float64 vector x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_mlp(rng, dims, skip_every=0, out_activation="identity"):
    return nn.make_mlp(dims, rng, out_activation=out_activation,
                       skip_every=skip_every, dtype=np.float64)


def net_loss_fn(net, x):
    """Scalar loss (sum of outputs) as a function of the flat parameter vector."""
    arrays = net.param_arrays()
    shapes = [a.shape for a in arrays]
    sizes = [a.size for a in arrays]

    def f(theta):
        off = 0
        for a, shape, size in zip(arrays, shapes, sizes):
            a[...] = theta[off:off + size].reshape(shape)
            off += size
        net.mark_updated()
        return float(np.sum(nn.mlp_forward(net, x)))

    theta0 = np.concatenate([a.ravel() for a in arrays])
    return f, theta0


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_identity_layer_forward():
    layer = nn.DenseLayer(np.eye(2), np.zeros(2), "identity")
    net = nn.ResidualMlp([layer])
    out = nn.mlp_forward(net, np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, [1.0, 2.0])


def test_relu_layer_clamps_negative_preactivation():
    layer = nn.DenseLayer(np.array([[1.0, -1.0]]), np.array([-0.5]), "relu")
    net = nn.ResidualMlp([layer])
    out = nn.mlp_forward(net, np.array([1.0, 2.0]))
    # pre-activation 1 - 2 - 0.5 = -1.5
    np.testing.assert_allclose(out, [0.0])


def test_forward_dimension_mismatch():
    net = nn.ResidualMlp([nn.DenseLayer(np.eye(3), np.zeros(3), "relu")])
    with pytest.raises(nn.DimensionMismatch):
        nn.mlp_forward(net, np.zeros(4))


def test_skip_every_two_matches_hand_unrolled():
    rng = np.random.default_rng(0)
    w1 = rng.normal(size=(2, 2))
    w2 = rng.normal(size=(2, 2))
    b1 = rng.normal(size=2)
    b2 = rng.normal(size=2)
    layers = [nn.DenseLayer(w1, b1, "relu"), nn.DenseLayer(w2, b2, "identity")]
    net = nn.ResidualMlp(layers, skip_every=2)
    x = np.array([0.3, -0.8])
    # hand unroll: h1 = relu(w1 x + b1); out = (w2 h1 + b2) + x
    h1 = np.maximum(w1 @ x + b1, 0)
    expected = w2 @ h1 + b2 + x
    np.testing.assert_allclose(nn.mlp_forward(net, x), expected, rtol=1e-12)
    plain = nn.ResidualMlp(layers, skip_every=0)
    np.testing.assert_allclose(nn.mlp_forward(net, x),
                               nn.mlp_forward(plain, x) + x, rtol=1e-12)


def test_skip_disabled_equals_plain_mlp():
    rng = np.random.default_rng(1)
    net = random_mlp(rng, [3, 4, 4, 2], skip_every=0)
    x = rng.normal(size=3)
    h = np.maximum(net.layers[0].weights @ x + net.layers[0].bias, 0)
    h = np.maximum(net.layers[1].weights @ h + net.layers[1].bias, 0)
    out = net.layers[2].weights @ h + net.layers[2].bias
    np.testing.assert_allclose(nn.mlp_forward(net, x), out, rtol=1e-12)


def test_zero_residual_branch_is_identity_between_junctions():
    rng = np.random.default_rng(2)
    mk = lambda: nn.DenseLayer(he := nn.he_uniform(4, 4, rng, np.float64),
                               rng.normal(size=4), "relu")
    l1, l2 = mk(), mk()
    zero = lambda: nn.DenseLayer(np.zeros((4, 4)), np.zeros(4), "relu")
    # zeroing one whole skip block leaves the hidden state at the previous junction
    deep = nn.ResidualMlp([l1, l2, zero(), zero()], skip_every=2)
    shallow = nn.ResidualMlp([l1, l2], skip_every=2)
    x = rng.normal(size=4)
    np.testing.assert_allclose(nn.mlp_forward(deep, x),
                               nn.mlp_forward(shallow, x), atol=1e-15)


def test_forward_batch_matches_per_row():
    rng = np.random.default_rng(3)
    net = random_mlp(rng, [5, 8, 8, 3], skip_every=2)
    xs = rng.normal(size=(7, 5))
    batch = nn.mlp_forward(net, xs)
    rows = np.stack([nn.mlp_forward(net, x) for x in xs])
    np.testing.assert_allclose(batch, rows, rtol=1e-12, atol=1e-14)


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(4)
    net = random_mlp(rng, [6, 16, 16, 2], skip_every=2)
    x = rng.normal(size=(9, 6))
    a = nn.mlp_forward(net, x)
    b = nn.mlp_forward(net, x)
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_linear_layer_gradient_is_input():
    # loss = sum(W x): dL/dW[i][j] = x[j]
    x = np.array([0.5, -1.5, 2.0])
    net = nn.ResidualMlp([nn.DenseLayer(np.zeros((2, 3)), np.zeros(2), "identity")])
    _, tape = nn.mlp_forward_recorded(net, x)
    g = nn.mlp_backward(net, tape, np.ones(2))
    np.testing.assert_allclose(g[:6].reshape(2, 3), np.tile(x, (2, 1)))
    np.testing.assert_allclose(g[6:], np.ones(2))


def test_sigmoid_derivative_at_zero():
    net = nn.ResidualMlp([nn.DenseLayer(np.array([[1.0]]), np.array([0.0]), "sigmoid")])
    _, tape = nn.mlp_forward_recorded(net, np.array([0.0]))
    g = nn.mlp_backward(net, tape, np.array([1.0]))
    # dsigma/dz at z=0 is 0.25; dz/db = 1
    np.testing.assert_allclose(g[1], 0.25)


@pytest.mark.parametrize("activation", ["relu", "sigmoid", "identity"])
def test_single_layer_gradcheck(activation):
    rng = np.random.default_rng(5)
    net = nn.make_mlp([4, 3], rng, out_activation=activation, dtype=np.float64)
    # keep pre-activations away from the relu kink
    x = rng.normal(size=4) + 0.3
    f, theta0 = net_loss_fn(net, x)
    numeric = fd_gradient(f, theta0)
    f(theta0)
    _, tape = nn.mlp_forward_recorded(net, x)
    analytic = nn.mlp_backward(net, tape, np.ones(net.out_dim))
    assert max_rel_error(analytic, numeric) <= 1e-4


def test_residual_net_gradcheck_matches_finite_differences():
    rng = np.random.default_rng(6)
    net = random_mlp(rng, [5, 6, 6, 6, 2], skip_every=2)
    x = rng.normal(size=5)
    f, theta0 = net_loss_fn(net, x)
    numeric = fd_gradient(f, theta0)
    f(theta0)
    _, tape = nn.mlp_forward_recorded(net, x)
    analytic = nn.mlp_backward(net, tape, np.ones(net.out_dim))
    assert max_rel_error(analytic, numeric) <= 1e-4


def test_single_precision_gradients_close_to_double():
    # float32 analytic gradients vs the same network evaluated in float64
    rng = np.random.default_rng(55)
    net32 = nn.make_mlp([5, 8, 8, 2], rng, skip_every=2, dtype=np.float32)
    net64 = nn.ResidualMlp(
        [nn.DenseLayer(l.weights.astype(np.float64), l.bias.astype(np.float64),
                       l.activation) for l in net32.layers], skip_every=2)
    x = rng.normal(size=5)
    _, tape32 = nn.mlp_forward_recorded(net32, x.astype(np.float32))
    g32 = nn.mlp_backward(net32, tape32, np.ones(2, dtype=np.float32))
    _, tape64 = nn.mlp_forward_recorded(net64, x)
    g64 = nn.mlp_backward(net64, tape64, np.ones(2))
    rel = np.abs(g32.astype(np.float64) - g64) / np.maximum(np.abs(g64), 1e-4)
    assert rel.max() <= 1e-2


def test_backward_bitwise_deterministic():
    rng = np.random.default_rng(56)
    net = random_mlp(rng, [4, 6, 6, 3], skip_every=2)
    x = rng.normal(size=(5, 4))
    _, tape1 = nn.mlp_forward_recorded(net, x)
    g1 = nn.mlp_backward(net, tape1, np.ones((5, 3)))
    _, tape2 = nn.mlp_forward_recorded(net, x)
    g2 = nn.mlp_backward(net, tape2, np.ones((5, 3)))
    assert g1.tobytes() == g2.tobytes()


def test_stale_tape_rejected():
    rng = np.random.default_rng(7)
    net = random_mlp(rng, [3, 4, 2])
    _, tape = nn.mlp_forward_recorded(net, rng.normal(size=3))
    net.layers[0].weights[0, 0] += 0.1
    net.mark_updated()
    with pytest.raises(nn.StaleTape):
        nn.mlp_backward(net, tape, np.ones(2))


def test_unused_parameter_gradient_is_exactly_zero():
    # relu kills the whole hidden signal -> second layer weight grads are 0
    l1 = nn.DenseLayer(-np.eye(2), np.zeros(2), "relu")
    l2 = nn.DenseLayer(np.ones((1, 2)), np.zeros(1), "identity")
    net = nn.ResidualMlp([l1, l2])
    _, tape = nn.mlp_forward_recorded(net, np.array([1.0, 2.0]))
    g = nn.mlp_backward(net, tape, np.ones(1))
    np.testing.assert_array_equal(g[6:8], np.zeros(2))  # W2 sees zero input


# ---------------------------------------------------------------------------
# op-level gradcheck for the pieces the model graphs use
# ---------------------------------------------------------------------------


def _op_gradcheck(build, x0, seed_shape=None):
    """Check d(sum(op(x)))/dx against central differences."""
    x0 = np.asarray(x0, dtype=np.float64)

    def f(flat):
        return float(np.sum(nn.value_of(build(flat.reshape(x0.shape)))))

    numeric = fd_gradient(f, x0.ravel())
    leaf = nn.Var(x0)
    out = build(leaf)
    nn.backward(out, seed=np.ones_like(out.value))
    return max_rel_error(leaf.grad.ravel(), numeric)


@pytest.mark.parametrize("name,build,x0", [
    ("sigmoid", lambda x: nn.sigmoid(x), np.linspace(-2, 2, 12).reshape(3, 4)),
    ("softplus", lambda x: nn.softplus(x), np.linspace(-3, 3, 12).reshape(3, 4)),
    ("exp", lambda x: nn.exp(x), np.linspace(-1, 1, 6).reshape(2, 3)),
    ("sqrt", lambda x: nn.sqrt(x), np.linspace(0.5, 3, 6).reshape(2, 3)),
    ("sin", lambda x: nn.sin(x), np.linspace(-2, 2, 6).reshape(2, 3)),
    ("cos", lambda x: nn.cos(x), np.linspace(-2, 2, 6).reshape(2, 3)),
    ("normalize", lambda x: nn.normalize_rows(x), np.array([[1.0, 2.0, -0.5], [0.3, -1.2, 2.2]])),
    ("cumsum_ex", lambda x: nn.cumsum_exclusive(x, axis=1), np.linspace(-1, 1, 8).reshape(2, 4)),
    ("div", lambda x: nn.div(1.0, x), np.array([[1.5, 2.0], [0.7, -1.3]])),
    ("mul_bcast", lambda x: nn.mul(x, np.array([[2.0], [3.0]])), np.ones((2, 3))),
    ("reshape", lambda x: nn.mul(nn.reshape(x, (6,)), np.arange(6.0)), np.ones((2, 3))),
    ("sumax", lambda x: nn.mul(nn.sum_(x, axis=1, keepdims=True), np.array([[1.0], [2.0]])), np.ones((2, 3))),
])
def test_op_gradcheck(name, build, x0):
    assert _op_gradcheck(build, x0) <= 1e-6


def test_fourier_features_gradcheck_and_layout():
    x0 = np.array([[0.3, -1.2, 2.0], [0.0, 0.5, -0.7]])
    out = nn.fourier_features(x0, 3)
    # layout: [v, sin(pi v), cos(pi v), sin(2 pi v), cos(2 pi v), ...]
    np.testing.assert_allclose(out[:, :3], x0)
    np.testing.assert_allclose(out[:, 3:6], np.sin(np.pi * x0), atol=1e-12)
    np.testing.assert_allclose(out[:, 6:9], np.cos(np.pi * x0), atol=1e-12)
    np.testing.assert_allclose(out[:, 9:12], np.sin(2 * np.pi * x0), atol=1e-12)
    scale = np.random.default_rng(77).normal(size=out.shape)
    err = _op_gradcheck(lambda x: nn.mul(nn.fourier_features(x, 3), scale), x0)
    assert err <= 1e-6


def test_concat_gradcheck():
    a0 = np.array([[1.0, 2.0], [3.0, 4.0]])
    b0 = np.array([[5.0], [6.0]])
    scale = np.array([[1.0, -2.0, 0.5]])

    def f(flat):
        a = flat[:4].reshape(2, 2)
        b = flat[4:].reshape(2, 1)
        return float(np.sum(np.concatenate([a, b], axis=1) * scale))

    numeric = fd_gradient(f, np.concatenate([a0.ravel(), b0.ravel()]))
    va, vb = nn.Var(a0), nn.Var(b0)
    out = nn.mul(nn.concat([va, vb], axis=1), scale)
    nn.backward(out, seed=np.ones_like(out.value))
    analytic = np.concatenate([va.grad.ravel(), vb.grad.ravel()])
    assert max_rel_error(analytic, numeric) <= 1e-6


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_and_increments_step():
    p = np.array([1.0, -2.0, 3.0])
    st = nn.adam_init(3, lr=0.1, dtype=np.float64)
    before = p.copy()
    nn.adam_step(p, np.zeros(3), st)
    np.testing.assert_array_equal(p, before)
    assert st.step == 1


def test_adam_single_step_hand_computed():
    # p=0, g=1, lr=0.1: bias correction makes the first step almost exactly lr
    p = np.array([0.0])
    st = nn.adam_init(1, lr=0.1, dtype=np.float64)
    nn.adam_step(p, np.array([1.0]), st)
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p, [expected], rtol=1e-12)
    assert abs(p[0] + 0.1) < 1e-8


def test_adam_two_steps_match_closed_form_recursion():
    p = np.array([0.0])
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    st = nn.adam_init(1, lr=lr, beta1=b1, beta2=b2, eps=eps, dtype=np.float64)
    # closed form with constant g=1: m_t = 1-b1^t, v_t = 1-b2^t
    pref = 0.0
    for t in (1, 2):
        nn.adam_step(p, np.array([1.0]), st)
        m_t = 1 - b1 ** t
        v_t = 1 - b2 ** t
        np.testing.assert_allclose(st.m, [m_t], atol=1e-12)
        np.testing.assert_allclose(st.v, [v_t], atol=1e-12)
        mhat = m_t / (1 - b1 ** t)
        vhat = v_t / (1 - b2 ** t)
        pref -= lr * mhat / (np.sqrt(vhat) + eps)
    np.testing.assert_allclose(p, [pref], atol=1e-12)


def test_adam_lr_zero_is_bitwise_noop():
    rng = np.random.default_rng(8)
    p = rng.normal(size=32).astype(np.float32)
    before = p.tobytes()
    st = nn.adam_init(32, lr=0.0)
    nn.adam_step(p, rng.normal(size=32).astype(np.float32), st)
    assert p.tobytes() == before


def test_adam_length_mismatch():
    st = nn.adam_init(3)
    with pytest.raises(nn.LengthMismatch):
        nn.adam_step(np.zeros(3, dtype=np.float32), np.zeros(4, dtype=np.float32), st)


# ---------------------------------------------------------------------------
# mse
# ---------------------------------------------------------------------------


def test_mse_basic_cases():
    assert nn.mse(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert nn.mse(np.array([0.0, 0.0]), np.array([1.0, 1.0])) == 1.0
    np.testing.assert_allclose(
        nn.mse(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0])), 14.0 / 3.0)


def test_mse_symmetry_and_length_check():
    a = np.array([0.1, 0.9])
    b = np.array([0.4, 0.2])
    assert nn.mse(a, b) == nn.mse(b, a)
    with pytest.raises(nn.LengthMismatch):
        nn.mse(np.zeros(2), np.zeros(3))


# ---------------------------------------------------------------------------
# flat parameter store
# ---------------------------------------------------------------------------


def test_flat_params_views_alias_layers():
    rng = np.random.default_rng(9)
    net_a = random_mlp(rng, [3, 4, 2])
    net_b = random_mlp(rng, [2, 2])
    flat = nn.FlatParams([("a", net_a), ("b", net_b)], dtype=np.float64)
    assert flat.size == net_a.param_count() + net_b.param_count()
    flat.vector += 1.0
    # layer arrays observe in-place flat updates
    x = rng.normal(size=3)
    y1 = nn.mlp_forward(net_a, x)
    flat.vector -= 1.0
    y2 = nn.mlp_forward(net_a, x)
    assert not np.allclose(y1, y2)


def test_flat_params_gradients_respect_declaration_order():
    rng = np.random.default_rng(10)
    net = nn.make_mlp([2, 2], rng, dtype=np.float64)
    flat = nn.FlatParams([("net", net)], dtype=np.float64)
    leaves, collect = flat.leaves()
    params = flat.net_params(leaves)["net"]
    x = np.array([[1.0, 2.0]])
    out = net.forward(x, params=params)
    loss = nn.mean(out)
    nn.backward(loss)
    g = collect()
    # dc/dW = x/2 (mean over 2 outputs? out dim 2 -> mean over batch*2)
    np.testing.assert_allclose(g[:4].reshape(2, 2), np.tile(x / 2, (2, 1)))
