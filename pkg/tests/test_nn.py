import numpy as np
import pytest

from spectramin.errors import ArchError, ValidationError
from spectramin.learners import (
    CnnArchitecture, Conv, Dense, Dropout, ExponentialMovingAverage, MaxPool, Parallel,
    TrainConfig, build_ensemble6, ema_update, liu_baseline, simple_cnn, train_cnn,
)
from spectramin.learners.cnn import fit_network, two_stream_network
from spectramin.learners.nn import Network, cross_entropy_loss, softmax, softmax_mae_loss


def numeric_grad(f, params, eps=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            hi = f()
            p[i] = old - eps
            lo = f()
            p[i] = old
            g[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def check_grads(net, inputs, loss_fn, targets, seed=0):
    rng = np.random.default_rng(seed)
    params = [rng.normal(0, 0.5, p.shape) for p in net.init_params(rng, np.float64)]

    def loss():
        logits, _ = net.forward(inputs, params, train=False)
        return loss_fn(logits, targets)[0]

    logits, cache = net.forward(inputs, params, train=False)
    _, dlogits = loss_fn(logits, targets)
    analytic = net.backward(dlogits, cache, params)
    numeric = numeric_grad(loss, params)
    for a, n in zip(analytic, numeric):
        assert a.shape == n.shape
        assert np.max(np.abs(a - n)) <= 1e-5 * max(1.0, np.max(np.abs(n)))


def toy_arch(length=24, classes=3, layers=None):
    layers = layers or (Conv(3, 5), MaxPool(2), Conv(4, 3, padding="same"), MaxPool(2),
                        Dense(6), Dense(classes, "softmax"))
    return CnnArchitecture(layers, length)


def test_gradcheck_single_stream():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 24))
    check_grads(Network.single(toy_arch()), [x], cross_entropy_loss, np.array([0, 1, 2, 1]))


def test_gradcheck_parallel_and_stride():
    layers = (Conv(2, 3, stride=2), Parallel(((Conv(2, 1), Conv(3, 3, padding="same")),
                                             (Conv(2, 5, padding="same"),))),
              MaxPool(2), Dense(3, "softmax"))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 21))
    check_grads(Network.single(toy_arch(21, 3, layers)), [x], cross_entropy_loss, np.array([2, 0, 1]))


def test_gradcheck_two_stream():
    a = toy_arch(24)
    b = CnnArchitecture((Conv(2, 9), MaxPool(2), Conv(2, 1), MaxPool(2), Dense(3, "softmax")), 30)
    net = two_stream_network(a, b)
    rng = np.random.default_rng(3)
    check_grads(net, [rng.normal(size=(3, 24)), rng.normal(size=(3, 30))],
                cross_entropy_loss, np.array([0, 2, 1]))


def test_gradcheck_regression_loss():
    arch = toy_arch(20, 4)
    rng = np.random.default_rng(4)
    targets = rng.dirichlet(np.ones(4), size=3)
    check_grads(Network.single(arch), [rng.normal(size=(3, 20))], softmax_mae_loss, targets)


def test_softmax_stable():
    p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
    assert np.allclose(p, [[0.5, 0.5, 0.0]])


def test_arch_errors():
    with pytest.raises(ArchError):
        toy_arch(4).check()  # conv kernel longer than input
    with pytest.raises(ArchError):
        CnnArchitecture((Conv(2, 3), Dense(3, "relu")), 10).check()
    with pytest.raises(ArchError):
        CnnArchitecture((Conv(2, 3), Dense(3), MaxPool(2), Dense(3, "softmax")), 10).check()
    with pytest.raises(ArchError):
        two_stream_network(toy_arch(24), toy_arch(40))


def test_arch_dict_roundtrip():
    arch = build_ensemble6(5, 300)[2]
    assert CnnArchitecture.from_dict(arch.to_dict()) == arch


def test_ensemble6_shapes():
    archs = build_ensemble6(7, 1715)
    assert len(archs) == 6
    assert len({a.name for a in archs}) == 6
    for a in archs:
        a.check()
        assert a.n_classes == 7
    assert sum(isinstance(l, Parallel) for l in archs[2].layers) >= 2
    assert archs[4].n_conv() == 6 and archs[5].n_conv() == 6
    assert archs[4].n_dense() == 2 and archs[5].n_dense() == 3


def test_named_architectures():
    assert liu_baseline(10).n_conv() == 3
    s = simple_cnn(10)
    assert s.n_conv() == 4 and s.n_dense() == 2


# ---------------------------------------------------------------- EMA

@pytest.mark.parametrize("d", [0.0, 0.9, 0.999])
def test_ema_closed_form(d):
    w0 = np.array([1.0, -2.0])
    seq = [np.array([float(t), 2.0 * t]) for t in range(1, 51)]
    ema = ExponentialMovingAverage([w0], d)
    for w in seq:
        ema.update([w])
    n = len(seq)
    expected = d ** n * w0 + sum((1 - d) * d ** (n - t) * seq[t - 1] for t in range(1, n + 1))
    assert np.allclose(ema.shadow[0], expected, rtol=1e-12, atol=1e-12)


def test_ema_update_function():
    assert ema_update(2.0, 4.0, 0.75) == 2.5


def test_ema_warmup_decay():
    ema = ExponentialMovingAverage([np.zeros(1)], 0.999, warmup=True)
    assert ema.effective_decay() == pytest.approx(0.1)
    for _ in range(9000):
        ema.update([np.zeros(1)])
    assert ema.effective_decay() == 0.999


# ---------------------------------------------------------------- training

def separable(n_per=12, length=40, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros((3 * n_per, length))
    y = np.repeat(np.arange(3), n_per)
    for i, c in enumerate(y):
        x[i, 8 + 10 * c: 12 + 10 * c] = 1.0
        x[i] += rng.normal(0, 0.05, length)
    return x, y


def test_loss_decreases():
    x, y = separable()
    arch = toy_arch(40, 3)
    fit = fit_network(Network.single(arch), [x], y, TrainConfig(epochs=30, learning_rate=5e-3, seed=1))
    assert fit.losses[-1] < fit.losses[0] * 0.5


def test_sgd_optimizer_runs():
    x, y = separable()
    fit = fit_network(Network.single(toy_arch(40, 3)), [x], y,
                      TrainConfig(epochs=20, optimizer="sgd", learning_rate=1e-2, seed=0))
    assert fit.losses[-1] < fit.losses[0]


def test_train_cnn_deterministic_and_ema():
    from conftest import make_dataset

    x, y = separable()
    ds = make_dataset(x, y)
    cfg = TrainConfig(epochs=25, learning_rate=5e-3, ema_decay=0.9, seed=3)
    a = train_cnn(ds, toy_arch(40, 3), cfg)
    b = train_cnn(ds, toy_arch(40, 3), cfg)
    assert np.array_equal(a.predict_proba(x), b.predict_proba(x))
    assert a.shadow is not None
    assert np.mean(a.predict_proba(x).argmax(1) == y) == 1.0
    assert not np.array_equal(a.predict_proba(x, use_ema=False), a.predict_proba(x, use_ema=True))


def test_dropout_layer_train_only():
    arch = CnnArchitecture((Conv(2, 3), Dense(8), Dropout(0.5), Dense(2, "softmax")), 10)
    net = Network.single(arch)
    rng = np.random.default_rng(0)
    params = net.init_params(rng, np.float64)
    x = rng.normal(size=(2, 10))
    a, _ = net.forward([x], params, train=False)
    b, _ = net.forward([x], params, train=False)
    assert np.array_equal(a, b)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValidationError):
        TrainConfig(ema_decay=1.0)
