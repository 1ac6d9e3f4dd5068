import numpy as np
import pytest

from curbsense import _kernels
from curbsense.nn import (
    AdamState,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    NonFiniteError,
    ReLU,
    Sequential,
    ShapeError,
    WeightStoreError,
    adam_step,
    backprop,
    load_model,
    save_model,
)
from curbsense.nn import functional as F
from curbsense.nn.gradcheck import LAYER_KINDS, adjoint_gap, gradient_error, random_case
from curbsense.nn.store import dumps, loads


# -- conv1d / transposed_conv1d ---------------------------------------------


def test_conv1d_examples():
    out = F.conv1d(np.array([[1.0, 2, 3, 4]]), np.ones((1, 1, 2)), np.zeros(1))
    np.testing.assert_array_equal(out, [[3, 5, 7]])
    x = np.random.default_rng(0).normal(size=(2, 9))
    w = np.zeros((2, 2, 1))
    w[0, 0, 0] = w[1, 1, 0] = 1.0
    np.testing.assert_allclose(F.conv1d(x, w, np.zeros(2)), x)
    out = F.conv1d(np.array([[1.0, 2], [3, 4]]), np.ones((1, 2, 1)), np.zeros(1))
    np.testing.assert_array_equal(out, [[4, 6]])


def test_conv1d_same_keeps_length():
    x = np.random.default_rng(1).normal(size=(3, 17))
    w = np.random.default_rng(2).normal(size=(4, 3, 5))
    assert F.conv1d(x, w, np.zeros(4), "same").shape == (4, 17)


def test_conv1d_shape_errors():
    with pytest.raises(ValueError):
        F.conv1d(np.ones((2, 5)), np.ones((1, 3, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        F.conv1d(np.ones((1, 3)), np.ones((1, 1, 4)), np.zeros(1))
    with pytest.raises(ValueError):
        F.conv1d(np.ones((1, 5)), np.ones((2, 1, 2)), np.zeros(3))


def test_transposed_conv_examples():
    out = F.transposed_conv1d(np.array([[1.0]]), np.array([[[1.0, 2, 3]]]), np.zeros(1))
    np.testing.assert_array_equal(out, [[1, 2, 3]])
    x = np.random.default_rng(3).normal(size=(1, 6))
    np.testing.assert_allclose(F.transposed_conv1d(x, np.ones((1, 1, 1)), np.zeros(1)), x)


def _strided_conv_matrix(w: np.ndarray, length: int, stride: int) -> np.ndarray:
    # rows: (out channel, out position); cols: (in channel, in position)
    cout, cin, k = w.shape
    lout = (length - k) // stride + 1
    m = np.zeros((cout * lout, cin * length))
    for o in range(cout):
        for t in range(lout):
            for c in range(cin):
                for j in range(k):
                    m[o * lout + t, c * length + t * stride + j] = w[o, c, j]
    return m


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_transposed_conv_equals_matrix_transpose(stride):
    rng = np.random.default_rng(stride)
    cin, cout, k, lin = 2, 3, 3, 4
    w = rng.normal(size=(cin, cout, k))  # transposed-conv layout
    y = rng.normal(size=(cin, lin))
    length = (lin - 1) * stride + k
    m = _strided_conv_matrix(w, length, stride)  # conv with (C_out=cin, C_in=cout)
    expected = (m.T @ y.reshape(-1)).reshape(cout, length)
    got = F.transposed_conv1d(y, w, np.zeros(cout), stride)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_transposed_conv_errors():
    with pytest.raises(ValueError):
        F.transposed_conv1d(np.ones((1, 3)), np.ones((1, 1, 2)), np.zeros(1), stride=0)
    with pytest.raises(ValueError):
        F.transposed_conv1d(np.ones((2, 3)), np.ones((1, 1, 2)), np.zeros(1))


def test_adjointness_random_shapes():
    assert max(adjoint_gap(s) for s in range(100)) < 1e-10


# -- pooling / upsampling ---------------------------------------------------


def test_maxpool_examples():
    np.testing.assert_array_equal(F.maxpool1d(np.array([[1.0, 3, 2, 5]])), [[3, 5]])
    np.testing.assert_array_equal(F.maxpool1d(np.full((2, 6), 4.0)), np.full((2, 3), 4.0))
    np.testing.assert_array_equal(F.maxpool1d(np.array([[1.0, 2, 3]])), [[2]])


def test_maxpool_first_max_routes_gradient():
    x = np.array([[[2.0, 2.0, 1.0, 1.0]]])
    out, idx = F.maxpool1d_forward(x, 2)
    dx = F.maxpool1d_backward(np.ones_like(out), idx, 4)
    np.testing.assert_array_equal(dx, [[[1, 0, 1, 0]]])


def test_upsample_examples():
    np.testing.assert_array_equal(F.upsample1d_nearest(np.array([[1.0, 2]])), [[1, 1, 2, 2]])
    x = np.random.default_rng(0).normal(size=(2, 5))
    np.testing.assert_array_equal(F.upsample1d_nearest(x, 1), x)
    np.testing.assert_array_equal(F.maxpool1d(F.upsample1d_nearest(x, 2), 2), x)


# -- dense / relu / dropout -------------------------------------------------


def test_dense_examples():
    x = np.array([1.0, 2.0])
    np.testing.assert_array_equal(F.dense(x, np.eye(2), np.zeros(2)), x)
    np.testing.assert_array_equal(F.dense(x, np.zeros((3, 2)), np.array([1.0, 2, 3])), [1, 2, 3])
    np.testing.assert_array_equal(F.dense(x, np.array([[1.0, 2], [3, 4]]), np.zeros(2)), [5, 11])
    with pytest.raises(ValueError):
        F.dense(x, np.ones((2, 3)), np.zeros(2))


def test_relu_examples():
    np.testing.assert_array_equal(F.relu(np.array([-1.0, 0, 2])), [0, 0, 2])
    x = np.random.default_rng(0).normal(size=50)
    np.testing.assert_array_equal(F.relu(np.abs(x)), np.abs(x))
    np.testing.assert_array_equal(F.relu(F.relu(x)), F.relu(x))


def test_dropout_modes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100)
    np.testing.assert_array_equal(F.dropout(x, 0.0, "train", rng), x)
    np.testing.assert_array_equal(F.dropout(x, 0.5, "eval", rng), x)
    with pytest.raises(ValueError):
        F.dropout(x, 1.0, "train", rng)
    m = F.dropout(np.ones(100_000), 0.5, "train", np.random.default_rng(1)).mean()
    assert 0.98 <= m <= 1.02


# -- losses -----------------------------------------------------------------


def test_cross_entropy_examples():
    loss, _ = F.softmax_cross_entropy(np.zeros(4), 2, np.ones(4))
    assert loss == pytest.approx(np.log(4), abs=1e-12)
    logits = np.array([100.0, 0, 0, 0])
    assert F.softmax_cross_entropy(logits, 0, np.ones(4))[0] < 1e-6
    z = np.random.default_rng(0).normal(size=4)
    l1, g1 = F.softmax_cross_entropy(z, 1, np.ones(4))
    w = np.ones(4)
    w[1] = 2.0
    l2, g2 = F.softmax_cross_entropy(z, 1, w)
    assert l2 == 2 * l1
    np.testing.assert_array_equal(g2, 2 * g1)


def test_cross_entropy_errors():
    with pytest.raises(FloatingPointError):
        F.softmax_cross_entropy(np.array([np.nan, 0.0]), 0)
    with pytest.raises(ValueError):
        F.softmax_cross_entropy(np.zeros(1), 0)
    with pytest.raises(ValueError):
        F.softmax_cross_entropy(np.zeros(2), 0, np.array([1.0, 0.0]))


def test_softmax_properties():
    z = np.random.default_rng(0).normal(size=(50, 7)) * 10
    p = F.softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(F.softmax(z + 123.4), p, atol=1e-10)


def test_mse_examples():
    a = np.random.default_rng(0).normal(size=(3, 4))
    assert F.mse_loss(a, a)[0] == 0.0
    assert F.mse_loss(np.array([0.0]), np.array([2.0]))[0] == 4.0
    b = a + 0.3
    assert F.mse_loss(a + 3 * (b - a), a)[0] == pytest.approx(9 * F.mse_loss(b, a)[0])
    with pytest.raises(ValueError):
        F.mse_loss(np.zeros(2), np.zeros(3))


def test_kl_examples():
    assert F.kl_std_normal(np.zeros(3), np.zeros(3))[0] == 0.0
    loss, (dmu, _) = F.kl_std_normal(np.array([1.0]), np.array([0.0]))
    assert loss == pytest.approx(0.5)
    assert dmu[0] == pytest.approx(1.0)


def test_reparameterize_examples():
    mu = np.array([0.5, -1.0])
    np.testing.assert_array_equal(F.reparameterize(mu, np.zeros(2), eps=np.zeros(2))[0], mu)
    np.testing.assert_array_equal(F.reparameterize(mu, np.zeros(2), eps=np.ones(2))[0], mu + 1)
    z, _ = F.reparameterize(np.zeros(100_000), np.zeros(100_000), np.random.default_rng(0))
    assert 0.98 <= z.var() <= 1.02


# -- backprop ---------------------------------------------------------------


def test_single_dense_mse_closed_form():
    rng = np.random.default_rng(0)
    g = Sequential([Dense(3, 2)], (3,)).init(0)
    g.layers[0].params["b"] = rng.normal(size=2)
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 2))
    _, grads = backprop(g, x, lambda out: F.mse_loss(out, y))
    w, b = g.layers[0].params["w"], g.layers[0].params["b"]
    expected = 2 * (x @ w.T + b - y).T @ x / y.size
    np.testing.assert_allclose(grads["0:dense.w"], expected, atol=1e-12)


def test_zero_loss_gradient_gives_zero_gradients():
    graph, x, _ = random_case("conv1d", "mse", 3)
    _, grads = backprop(graph, x, lambda out: (0.0, np.zeros_like(out)))
    assert all(not np.any(v) for v in grads.values())


@pytest.mark.parametrize("kind", LAYER_KINDS)
@pytest.mark.parametrize("loss", ["cross_entropy", "mse"])
def test_gradients_match_finite_differences(kind, loss):
    for seed in range(5):
        graph, x, head = random_case(kind, loss, seed)
        assert gradient_error(graph, x, head, noise_seed=seed) < 1e-4


def test_nonfinite_error_names_layer():
    g = Sequential([Dense(2, 2), ReLU(), Dense(2, 2)], (2,), names=["a", "r", "b"]).init(0)
    g.layers[2].params["w"][0, 0] = np.inf
    with pytest.raises(NonFiniteError) as err:
        backprop(g, np.ones((1, 2)), lambda out: F.mse_loss(out, np.zeros_like(out)))
    assert err.value.layer == "b"


def test_shape_inconsistent_graph_rejected():
    with pytest.raises(ShapeError):
        Sequential([Conv1d(3, 4, 5), Flatten(), Dense(10, 2)], (3, 20))
    g = Sequential([Dense(4, 2)], (4,)).init(0)
    with pytest.raises(ShapeError):
        g.forward(np.ones((1, 5)))


def test_training_forward_reproducible():
    g = Sequential([Conv1d(3, 4, 3, "same"), Dropout(0.5), Flatten(), Dense(40, 2)], (3, 10)).init(0)
    x = np.random.default_rng(0).normal(size=(4, 3, 10))
    g.reseed(7)
    a = g.forward(x, train=True)
    g.reseed(7)
    b = g.forward(x, train=True)
    np.testing.assert_array_equal(a, b)


def test_channel_major_io_matches_functional():
    rng = np.random.default_rng(0)
    g = Sequential([Conv1d(3, 4, 5, "same"), MaxPool1d(2)], (3, 12)).init(0)
    g.layers[0].params["b"] = rng.normal(size=4)
    x = rng.normal(size=(2, 3, 12))
    conv, _ = F.conv1d_forward(x, g.layers[0].params["w"], g.layers[0].params["b"], "same")
    expected, _ = F.maxpool1d_forward(conv, 2)
    np.testing.assert_allclose(g.forward(x), expected, atol=1e-12)


# -- adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step():
    p = [np.zeros(3)]
    st = adam_step(p, [np.ones(3)], AdamState(lr=0.1))
    np.testing.assert_allclose(p[0], -0.1 / (1 + 1e-8), rtol=1e-12)
    assert st.step == 1


def test_adam_constant_gradient_step_tends_to_lr():
    p = [np.zeros(1)]
    st = AdamState(lr=0.01)
    for _ in range(99):
        adam_step(p, [np.ones(1)], st)
    before = p[0].copy()
    adam_step(p, [np.ones(1)], st)
    assert abs(before[0] - p[0][0]) == pytest.approx(0.01, rel=0.01)


def test_adam_rejects_bad_lr():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)


# -- weight store -----------------------------------------------------------


def _small_net():
    return Sequential([Conv1d(3, 4, 3, "same"), ReLU(), MaxPool1d(2), Flatten(), Dense(20, 2)], (3, 10)).init(1, np.float32)


def test_store_roundtrip(tmp_path):
    g = _small_net()
    prov = {"norm": {"mean": [1.0, 2.0, 3.0]}, "config": {"seed": 1}}
    path = save_model(g, tmp_path / "m.csws", prov)
    h, p2 = load_model(path, expect=_small_net())
    assert p2 == prov
    x = np.random.default_rng(0).normal(size=(3, 3, 10)).astype(np.float32)
    np.testing.assert_array_equal(g.forward(x), h.forward(x))


def test_store_rejects_damage():
    raw = dumps(_small_net())
    with pytest.raises(WeightStoreError):
        loads(raw[:-3])
    with pytest.raises(WeightStoreError):
        loads(b"XXXX" + raw[4:])
    with pytest.raises(WeightStoreError):
        loads(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    other = Sequential([Conv1d(3, 5, 3, "same"), ReLU(), MaxPool1d(2), Flatten(), Dense(25, 2)], (3, 10))
    with pytest.raises(ShapeError):
        loads(raw, expect=other)


# -- kernels ----------------------------------------------------------------


def test_kernel_paths_agree():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 11, 4))
    for pool, stride in [(2, 2), (3, 1), (2, 3)]:
        a, ia = _kernels.maxpool_forward_np(x, pool, stride)
        b, ib = _kernels.maxpool_forward_nb(x, pool, stride)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ia, ib)
        g = rng.normal(size=a.shape)
        np.testing.assert_allclose(_kernels.maxpool_backward_np(g, ia, 11), _kernels.maxpool_backward_nb(g, ib, 11))
    cols = rng.normal(size=(9, 4, 3))
    np.testing.assert_allclose(_kernels.overlap_add_np(cols, 13), _kernels.overlap_add_nb(cols, 13))
    sig = rng.normal(size=(50, 3))
    np.testing.assert_allclose(_kernels.centered_mean_np(sig, 5), _kernels.centered_mean_nb(sig, 5))
    np.testing.assert_allclose(_kernels.onepole_np(sig[:, 0], 0.3), _kernels.onepole_nb(sig[:, 0], 0.3))
