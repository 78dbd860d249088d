import numpy as np
import pytest

from nrprach.nn import kernels, layers
from nrprach.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from nrprach.nn.model import ModelConfig, ResidualClassifier
from nrprach.nn.optim import SGD, Adam, step_adam, step_sgd
from nrprach.nn.train import TrainConfig, TrainingDivergedError, accuracy, train
from oracles import finite_difference_grad, max_rel_error

# analytically-zero gradients (a conv bias feeding batch norm) only see rounding noise
FLOOR = 1e-6
TOL = 1e-4


def rel_err(a, b):
    return max_rel_error(a, b, FLOOR)


def check_layer(layer, x, seed=0, call=None):
    """Compare analytic parameter and input gradients with central differences."""
    rng = np.random.default_rng(seed)
    call = call or (lambda: layer.forward(x, train=True))
    r = rng.standard_normal(call().shape)

    def f():
        return float(np.sum(call() * r))

    call()
    dx = layer.backward(r)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for k, p in layer.params.items():
        num = finite_difference_grad(f, p)
        assert rel_err(analytic[k], num) < TOL, k
    num = finite_difference_grad(f, x)
    assert rel_err(dx, num) < TOL


def x64(*shape, seed=1):
    return np.random.default_rng(seed).standard_normal(shape)


def test_conv_gradients():
    layer = layers.Conv2D(3, 4, (3, 2), np.random.default_rng(0), np.float64)
    layer.params["b"][:] = np.random.default_rng(1).standard_normal(4)
    check_layer(layer, x64(2, 5, 2, 3))


@pytest.mark.parametrize("kernel", [(3, 2), (1, 1), (2, 3)])
def test_conv_preserves_spatial_shape(kernel):
    layer = layers.Conv2D(2, 5, kernel, dtype=np.float64)
    assert layer.forward(x64(3, 7, 2, 2)).shape == (3, 7, 2, 5)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(2)
    layer = layers.Conv2D(2, 3, (3, 2), rng, np.float64)
    x = x64(1, 4, 2, 2)
    y = layer.forward(x)
    w, b = layer.params["w"], layer.params["b"]
    xp = np.pad(x[0], ((1, 1), (0, 1), (0, 0)))
    for h in range(4):
        for col in range(2):
            for o in range(3):
                ref = b[o] + np.sum(xp[h:h + 3, col:col + 2, :] * w[:, :, :, o])
                assert y[0, h, col, o] == pytest.approx(ref, abs=1e-12)


def test_batchnorm_gradients():
    layer = layers.BatchNorm(3, dtype=np.float64)
    layer.params["gamma"][:] = [0.5, 1.5, -1.0]
    layer.params["beta"][:] = [0.1, -0.2, 0.3]
    check_layer(layer, x64(4, 3, 2, 3))


def test_fused_bn_act_gradients():
    layer = layers.BatchNormLeakyReLU(3, slope=0.1, dtype=np.float64)
    layer.params["gamma"][:] = [0.5, 1.5, 0.8]
    layer.params["beta"][:] = [0.1, -0.2, 0.3]
    check_layer(layer, x64(4, 3, 2, 3))


@pytest.mark.parametrize("kind", ["leaky", "relu", "flatten"])
def test_activation_gradients(kind):
    layer = {"leaky": layers.LeakyReLU(0.05), "relu": layers.ReLU(), "flatten": layers.Flatten()}[kind]
    check_layer(layer, x64(3, 4, 2, 2))


def test_dense_gradients():
    layer = layers.Dense(6, 4, np.random.default_rng(0), np.float64)
    layer.params["b"][:] = 0.3
    check_layer(layer, x64(5, 6))


def test_dropout_gradients_with_fixed_mask():
    layer = layers.Dropout(0.4)

    def call():
        layer.rng = np.random.default_rng(3)
        return layer.forward(x, train=True)

    x = x64(6, 10)
    check_layer(layer, x, call=call)


def test_add_gradients():
    add = layers.Add()
    a, b = x64(2, 3, seed=1), x64(2, 3, seed=2)
    r = x64(2, 3, seed=3)
    da, db = add.backward(r)
    for arr, d in ((a, da), (b, db)):
        num = finite_difference_grad(lambda: float(np.sum(add.forward(a, b) * r)), arr)
        assert rel_err(d, num) < TOL
    with pytest.raises(ValueError):
        add.forward(a, x64(3, 2))


def test_softmax_cross_entropy_gradient():
    out = layers.SoftmaxCrossEntropy()
    logits = x64(4, 3)
    target = np.array([0, 2, 1, 2])
    out.loss(logits, target)
    g = out.backward()
    num = finite_difference_grad(lambda: out.loss(logits, target), logits)
    assert rel_err(g, num) < TOL
    onehot = np.eye(3)[target]
    np.testing.assert_allclose(g * 4, layers.softmax(logits) - onehot, atol=1e-12)
    assert out.loss(logits, onehot) == pytest.approx(out.loss(logits, target))


def test_softmax_is_stable_and_shift_invariant():
    x = x64(5, 10) * 50
    p = layers.softmax(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(layers.softmax(x + 123.4), p, atol=1e-7)
    big = np.array([[1000.0, 0.0, -1000.0]])
    assert np.isfinite(layers.log_softmax(big)).all()


def tiny_model(seed=0, fused=True, dropout=0.4):
    return ResidualClassifier(ModelConfig(input_shape=(8, 2, 2), n_out=3, filters=2, hidden=6,
                                          dropout=dropout, fused=fused, seed=seed, dtype="float64"))


@pytest.mark.parametrize("fused", [True, False])
def test_full_graph_gradients(fused):
    model = tiny_model(fused=fused)
    rng = np.random.default_rng(5)
    # move BN and biases off their initial values so every path carries signal
    for k, p in model.parameters().items():
        if k.endswith(("/b", "/beta")):
            p[:] = 0.1 * rng.standard_normal(p.shape)
        if k.endswith("/gamma"):
            p[:] = 1 + 0.2 * rng.standard_normal(p.shape)
    x = rng.standard_normal((4, 8, 2, 2))
    y = np.array([0, 1, 2, 1])
    drop = model.head[1]

    def f():
        drop.rng = np.random.default_rng(9)
        return model.loss(x, y, train=True)

    f()
    model.backward()
    grads = {k: v.copy() for k, v in model.gradients().items()}
    assert set(grads) == set(model.parameters())
    worst = 0.0
    for k, p in model.parameters().items():
        # batch norm makes the loss scale-invariant in conv weights, so curvature grows as
        # the weights shrink; a 1e-4 step keeps the truncation error well under TOL
        worst = max(worst, rel_err(grads[k], finite_difference_grad(f, p, 1e-4)))
    assert worst < TOL


def test_residual_shape_law():
    model = ResidualClassifier(ModelConfig())
    x = np.random.default_rng(0).standard_normal((2, 139, 2, 2)).astype(np.float32)
    h = x
    for layer in model.stem:
        h = layer.forward(h)
    skip = h
    for layer in model.body:
        h = layer.forward(h)
    assert h.shape == skip.shape == (2, 139, 2, 2)


def test_model_layer_vocabulary():
    kinds = [s["kind"] for s in ResidualClassifier(ModelConfig(fused=False)).spec()]
    assert kinds == ["batch_norm", "leaky_relu",
                     "conv2d", "batch_norm", "leaky_relu"] + ["conv2d", "batch_norm", "leaky_relu"] * 2 + [
        "conv2d", "add_residual", "flatten", "dropout", "dense", "relu", "dense", "softmax"]


def test_output_is_probability_vector():
    model = ResidualClassifier(ModelConfig())
    x = np.random.default_rng(1).standard_normal((16, 139, 2, 2)).astype(np.float32) * 10
    for train_mode in (False, True):
        p = model.forward(x, train=train_mode)
        assert p.min() >= 0
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_eval_is_deterministic_and_batch_independent():
    model = ResidualClassifier(ModelConfig())
    x = np.random.default_rng(2).standard_normal((32, 139, 2, 2)).astype(np.float32)
    model.forward(x, train=True)  # move the running statistics away from their init
    a = model.forward(x)
    np.testing.assert_array_equal(a, model.forward(x))
    np.testing.assert_allclose(model.forward(x[5:6])[0], a[5], atol=1e-5)


def test_input_shape_checked():
    with pytest.raises(ValueError):
        ResidualClassifier(ModelConfig()).forward(np.zeros((1, 138, 2, 2), np.float32))


def test_dropout_kept_fraction_and_eval_identity():
    d = layers.Dropout(0.4, np.random.default_rng(0))
    x = np.ones(100_000)
    y = d.forward(x, train=True)
    kept = np.mean(y != 0)
    assert 0.59 <= kept <= 0.61
    np.testing.assert_allclose(y[y != 0], 1 / 0.6)
    assert d.forward(x) is x


def test_batchnorm_train_eval_consistency():
    rng = np.random.default_rng(0)
    layer = layers.BatchNorm(4)
    data = (3 + 2 * rng.standard_normal((2000, 5, 2, 4))).astype(np.float32)
    for _ in range(60):
        for i in range(0, 2000, 250):
            layer.forward(data[i:i + 250], train=True)
    train_out = layer.forward(data, train=True)
    eval_out = layer.forward(data)
    mad = np.mean(np.abs(eval_out - train_out)) / np.mean(np.abs(train_out))
    assert mad < 0.05
    assert np.all(layer.buffers["running_var"] > 0)


def test_fused_matches_unfused():
    a, b = tiny_model(fused=True, dropout=0.0), tiny_model(fused=False, dropout=0.0)
    pa, pb = a.parameters(), b.parameters()
    assert [v.shape for v in pa.values()] == [v.shape for v in pb.values()]
    for va, vb in zip(pa.values(), pb.values()):
        np.testing.assert_array_equal(va, vb)
    x = np.random.default_rng(3).standard_normal((6, 8, 2, 2))
    y = np.array([0, 1, 2, 0, 1, 2])
    la, ga = a.loss_and_grads(x, y)
    lb, gb = b.loss_and_grads(x, y)
    assert la == pytest.approx(lb, rel=1e-12)
    for ka, kb in zip(pa, pb):
        np.testing.assert_allclose(ga[ka], gb[kb], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.forward(x), b.forward(x), atol=1e-12)


@pytest.mark.skipif("cython" not in kernels.backends(), reason="compiled kernels not built")
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 2e-5)])
def test_backends_agree(dtype, tol):
    py, cy = kernels.backends()["python"], kernels.backends()["cython"]
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 13, 2, 5)).astype(dtype)
    g = rng.standard_normal(5).astype(dtype)
    b = rng.standard_normal(5).astype(dtype)
    np.testing.assert_array_equal(py.im2col(x, 3, 2), cy.im2col(x, 3, 2))
    cols = py.im2col(x, 3, 2)
    np.testing.assert_allclose(py.col2im(cols, x.shape, 3, 2), cy.col2im(cols, x.shape, 3, 2), atol=tol)
    fp, fc = py.bn_act_forward(x, g, b, 1e-3, 0.01), cy.bn_act_forward(x, g, b, 1e-3, 0.01)
    for u, v in zip(fp, fc):
        assert u.dtype == v.dtype == dtype
        np.testing.assert_allclose(u, v, atol=tol * 10)
    dy = rng.standard_normal(x.shape).astype(dtype)
    bp = py.bn_act_backward(dy, fp[0], fp[1], g, fp[3], 1e-3, 0.01)
    bc = cy.bn_act_backward(dy, fp[0], fp[1], g, fp[3], 1e-3, 0.01)
    for u, v in zip(bp, bc):
        np.testing.assert_allclose(u, v, atol=tol * 10)
    np.testing.assert_allclose(py.bn_act_apply(x, fp[2], fp[3], g, b, 1e-3, 0.01),
                               cy.bn_act_apply(x, fp[2], fp[3], g, b, 1e-3, 0.01), atol=tol * 10)
    np.testing.assert_allclose(py.leaky_relu(x, 0.01), cy.leaky_relu(x, 0.01), atol=tol)
    np.testing.assert_allclose(py.leaky_relu_backward(dy, x, 0.01), cy.leaky_relu_backward(dy, x, 0.01),
                               atol=tol)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 6, 2, 3))
    c = rng.standard_normal((2 * 6 * 2, 3 * 2 * 3))
    for mod in kernels.backends().values():
        lhs = np.sum(mod.im2col(x, 3, 2) * c)
        rhs = np.sum(x * mod.col2im(c, x.shape, 3, 2))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_sgd_step_is_exact():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.5, 0.25, -1.0])}
    step_sgd(p, g, 0.1)
    np.testing.assert_allclose(p["w"], [0.95, -2.025, 0.6], atol=1e-15)


@pytest.mark.parametrize("opt", [SGD(0.0), Adam(0.0)])
def test_zero_learning_rate_leaves_params(opt):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.parameters().items()}
    _, grads = model.loss_and_grads(np.ones((2, 8, 2, 2)), np.array([0, 1]))
    opt.step(model.parameters(), grads)
    for k, v in model.parameters().items():
        np.testing.assert_array_equal(v, before[k])


def test_adam_first_step_is_learning_rate():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    g = {"w": np.array([3.0, -0.02, 1e3])}
    p, state = step_adam(p, g, lr=1e-3)
    np.testing.assert_allclose(np.abs(p["w"] - 1.0), 1e-3, rtol=1e-3)
    assert state.t == 1


def test_adam_zero_grads_decay_moments():
    p = {"w": np.array([1.0, 2.0])}
    opt = Adam(1e-3)
    opt.step(p, {"w": np.array([1.0, -1.0])})
    after_first = p["w"].copy()
    m1 = opt.m["w"].copy()
    opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_allclose(opt.m["w"], 0.9 * m1)
    # the remaining momentum still moves the parameters; with zero moments nothing moves
    fresh = Adam(1e-3)
    q = {"w": after_first.copy()}
    fresh.step(q, {"w": np.zeros(2)})
    np.testing.assert_array_equal(q["w"], after_first)


def separable(n, seed, margin=1.0):
    # two classes on either side of a hyperplane, with a guaranteed gap of 2*margin
    rng = np.random.default_rng(seed)
    w = np.random.default_rng(100).standard_normal((8, 2, 2))
    w /= np.linalg.norm(w)
    y = rng.integers(2, size=n)
    x = rng.standard_normal((n, 8, 2, 2))
    along = np.einsum("nhwc,hwc->n", x, w)
    x += ((2 * y - 1) * (margin + np.abs(along)) - along)[:, None, None, None] * w
    return x.astype(np.float32), y


def test_training_on_separable_toy_data():
    xtr, ytr = separable(600, 1)
    xva, yva = separable(300, 2)
    model = ResidualClassifier(ModelConfig(input_shape=(8, 2, 2), n_out=2, filters=8, hidden=16))
    cfg = TrainConfig("adam", 1e-2, 32, max_epochs=50, patience=50, seed=0)
    _, hist, _ = train(model, xtr, ytr, xva, yva, cfg)
    assert hist[-1]["best_val_acc"] >= 0.99 or max(h["val_acc"] for h in hist[:-1]) >= 0.99
    assert accuracy(model, xva, yva) == pytest.approx(hist[-1]["best_val_acc"])
    assert hist[5]["train_loss"] < hist[0]["train_loss"]


def test_training_is_reproducible():
    xtr, ytr = separable(200, 1)
    xva, yva = separable(100, 2)
    runs = []
    for _ in range(2):
        model = ResidualClassifier(ModelConfig(input_shape=(8, 2, 2), n_out=2, filters=4, hidden=8))
        _, hist, _ = train(model, xtr, ytr, xva, yva, TrainConfig("sgd", 1e-2, 16, 4, 10, 3))
        runs.append((hist, model.state()))
    assert runs[0][0] == runs[1][0]
    for k, v in runs[0][1][0].items():
        np.testing.assert_array_equal(v, runs[1][1][0][k])


def test_divergence_is_reported():
    xtr, ytr = separable(64, 1)
    xtr[0, 0, 0, 0] = np.nan
    model = ResidualClassifier(ModelConfig(input_shape=(8, 2, 2), n_out=2, filters=2, hidden=4))
    with pytest.raises(TrainingDivergedError) as err:
        train(model, xtr, ytr, xtr, ytr, TrainConfig("sgd", 1e-2, 64, 2, 2, 0))
    assert err.value.epoch == 0 and err.value.batch == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        train(tiny_model(), np.zeros((0, 8, 2, 2)), np.zeros(0, int), np.zeros((1, 8, 2, 2)), np.zeros(1, int),
              TrainConfig())


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(seed=4)
    x = np.random.default_rng(0).standard_normal((8, 8, 2, 2))
    y = np.arange(8) % 3
    opt = Adam(1e-3)
    _, g = model.loss_and_grads(x, y)
    opt.step(model.parameters(), g)
    path = save_checkpoint(tmp_path / "m.prnn", model, {"lr": 1e-3}, opt.state())
    back, header, ostate = load_checkpoint(path)
    assert header["train"] == {"lr": 1e-3}
    for k, v in model.parameters().items():
        np.testing.assert_array_equal(back.parameters()[k], v)
    for k, v in model.buffers().items():
        np.testing.assert_array_equal(back.buffers()[k], v)
    np.testing.assert_array_equal(back.forward(x), model.forward(x))
    restored = Adam(1e-3)
    restored.load_state(ostate)
    assert restored.t == 1
    np.testing.assert_array_equal(restored.m[next(iter(opt.m))], next(iter(opt.m.values())))
    again = save_checkpoint(tmp_path / "n.prnn", back, {"lr": 1e-3}, restored.state())
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "bad.prnn"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    path = save_checkpoint(tmp_path / "m.prnn", tiny_model())
    data = path.read_bytes()
    (tmp_path / "cut.prnn").write_bytes(data[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.prnn")


def test_same_seed_same_init():
    a, b, c = tiny_model(1), tiny_model(1), tiny_model(2)
    for k, v in a.parameters().items():
        np.testing.assert_array_equal(v, b.parameters()[k])
    assert any(not np.array_equal(v, c.parameters()[k]) for k, v in a.parameters().items())
