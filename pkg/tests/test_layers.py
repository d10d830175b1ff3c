import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from minw.errors import ConfigError, DataError, DimensionError
from minw.estimator import EstimatorConfig
from minw.layers import (BatchNorm, HardTanh, Pool, QAct, QConv2d, QDense, hardtanh,
                         softmax_cross_entropy)
from minw.quantizers import build_codebook, quantize
from minw.tensor import conv2d, conv2d_backward

F64 = np.float64
CASES = range(20)


def _dense(w, **kw):
    layer = QDense("fc", *np.shape(w), dtype=F64, **kw)
    layer.params["weight"][...] = w
    return layer


# ---------------------------------------------------------------------------
# Examples
# ---------------------------------------------------------------------------

def test_qdense_train_mixes_and_infer_snaps():
    layer = _dense([[0.2]], bits_w=1, estimator=EstimatorConfig(alpha=0.5))
    x = np.ones((1, 1))
    assert layer.forward(x, "train")[0].item() == pytest.approx(0.6)
    assert layer.forward(x, "infer")[0].item() == 1.0


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_codebook_weights_are_phase_independent(bits, rng):
    cb = build_codebook(bits)
    w = rng.choice(cb.levels, size=(6, 4))
    layer = _dense(w, bits_w=bits, estimator=EstimatorConfig(alpha=0.3))
    x = rng.standard_normal((5, 6))
    np.testing.assert_array_equal(layer.forward(x, "train")[0], layer.forward(x, "infer")[0])

    conv = QConv2d("c", 2, 3, bits_w=bits, dtype=F64)
    conv.params["weight"][...] = rng.choice(cb.levels, size=(3, 2, 3, 3))
    xc = rng.standard_normal((2, 2, 5, 5))
    np.testing.assert_array_equal(conv.forward(xc, "train")[0], conv.forward(xc, "infer")[0])


def test_qconv_infer_equals_conv_of_quantized_kernel(rng):
    conv = QConv2d("c", 2, 3, k=3, stride=1, pad=1, bits_w=3, dtype=F64, rng=rng)
    x = rng.standard_normal((2, 2, 6, 6))
    kq = quantize(conv.params["weight"], build_codebook(3))
    np.testing.assert_array_equal(conv.forward(x, "infer")[0], conv2d(x, kq, 1, 1))


def test_qdense_shape_mismatch():
    with pytest.raises(DimensionError):
        _dense(np.zeros((3, 2))).forward(np.zeros((4, 5)), "infer")


def test_batchnorm_examples():
    bn = BatchNorm("bn", 1, dtype=F64)
    assert np.all(bn.forward(np.full((4, 1), 3.0), "train")[0] == 0.0)
    bn = BatchNorm("bn", 1, eps=1e-12, dtype=F64)
    np.testing.assert_allclose(bn.forward(np.array([[1.0], [3.0]]), "train")[0].ravel(),
                               [-1.0, 1.0], atol=1e-9)
    fresh = BatchNorm("bn", 3, dtype=F64)
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(fresh.forward(x, "infer")[0], x, rtol=1e-5)


def test_batchnorm_running_stats_ema():
    bn = BatchNorm("bn", 1, dtype=F64)
    bn.forward(np.array([[1.0], [3.0]]), "train")
    assert bn.running_mean[0] == pytest.approx(0.1 * 2.0)
    assert bn.running_var[0] == pytest.approx(0.9 + 0.1 * 1.0)


def test_batchnorm_single_sample_training_is_config_error():
    with pytest.raises(ConfigError):
        BatchNorm("bn", 2).forward(np.zeros((1, 2), np.float32), "train")


def test_hardtanh_examples():
    assert hardtanh(np.array([0.5, 1.7, -2.0])).tolist() == [0.5, 1.0, -1.0]
    x = np.linspace(-3, 3, 61)
    np.testing.assert_array_equal(hardtanh(hardtanh(x)), hardtanh(x))
    g, _ = HardTanh("ht").backward(np.ones(3), np.array([1.0, -1.0, 1.0001]))
    assert g.tolist() == [1.0, 1.0, 0.0]


def test_softmax_examples():
    loss, _ = softmax_cross_entropy(np.zeros((3, 10)), [0, 4, 9])
    assert loss == pytest.approx(np.log(10), abs=1e-12)
    logits = np.zeros((1, 3))
    logits[0, 1] = 1e4
    assert softmax_cross_entropy(logits, [1])[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DataError):
        softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_qact_stochastic_only_for_one_bit():
    with pytest.raises(ConfigError):
        QAct("a", 2, EstimatorConfig(mode="stochastic"))


# ---------------------------------------------------------------------------
# Gradients against central finite differences (float64)
# ---------------------------------------------------------------------------

def _rng(i):
    return np.random.default_rng(1000 + i)


@pytest.mark.parametrize("case", CASES)
def test_conv_gradients(case):
    r = _rng(case)
    stride, pad, k = int(r.integers(1, 3)), int(r.integers(0, 2)), int(r.integers(1, 4))
    size = k - 2 * pad + stride * int(r.integers(2, 5))
    x = r.standard_normal((2, 2, size, size))
    kernel = r.standard_normal((3, 2, k, k))
    weights = r.standard_normal(conv2d(x, kernel, stride, pad).shape)
    f = lambda: float((conv2d(x, kernel, stride, pad) * weights).sum())
    gx, gk = conv2d_backward(x, kernel, weights, stride, pad)
    assert rel_err(gx, numeric_grad(f, x)) <= 1e-6
    assert rel_err(gk, numeric_grad(f, kernel)) <= 1e-6


@pytest.mark.parametrize("case", CASES)
def test_dense_gradients(case):
    r = _rng(case)
    layer = QDense("fc", 5, 4, bits_w=int(r.integers(1, 4)), dtype=F64, rng=r)
    x = r.standard_normal((3, 5))
    weights = r.standard_normal((3, 4))
    y, cache = layer.forward(x, "train")
    _, _, w_hat = cache
    gx, grads = layer.backward(weights, cache)
    f = lambda: float(((x @ w_hat) * weights).sum())
    assert rel_err(gx, numeric_grad(f, x)) <= 1e-6
    # at alpha = 1/2 the gain is 1 and every |w| <= 1, so the gate passes dL/dW_hat through
    assert rel_err(grads["weight"], numeric_grad(f, w_hat)) <= 1e-6


@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("conv", [False, True])
def test_batchnorm_gradients(case, conv):
    r = _rng(case)
    shape = (4, 3, 3, 3) if conv else (5, 3)
    bn = BatchNorm("bn", 3, dtype=F64)
    bn.params["gamma"][...] = r.uniform(0.5, 1.5, 3)
    bn.params["beta"][...] = r.standard_normal(3)
    x = r.standard_normal(shape)
    weights = r.standard_normal(shape)

    def f():
        saved = bn.running_mean.copy(), bn.running_var.copy()
        out = float((bn.forward(x, "train")[0] * weights).sum())
        bn.running_mean[...], bn.running_var[...] = saved
        return out

    _, cache = bn.forward(x, "train")
    gx, grads = bn.backward(weights, cache)
    assert rel_err(gx, numeric_grad(f, x)) <= 1e-6
    assert rel_err(grads["gamma"], numeric_grad(f, bn.params["gamma"])) <= 1e-6
    assert rel_err(grads["beta"], numeric_grad(f, bn.params["beta"])) <= 1e-6


@pytest.mark.parametrize("case", CASES)
def test_hardtanh_interior_gradients(case):
    r = _rng(case)
    x = r.uniform(-0.95, 0.95, (4, 6))
    weights = r.standard_normal((4, 6))
    layer = HardTanh("ht")
    f = lambda: float((layer.forward(x, "train")[0] * weights).sum())
    gx, _ = layer.backward(weights, layer.forward(x, "train")[1])
    assert rel_err(gx, numeric_grad(f, x)) <= 1e-6


@pytest.mark.parametrize("case", CASES)
def test_softmax_ce_gradients(case):
    r = _rng(case)
    logits = 3 * r.standard_normal((4, 5))
    labels = r.integers(0, 5, 4)
    _, g = softmax_cross_entropy(logits, labels)
    f = lambda: softmax_cross_entropy(logits, labels)[0]
    assert rel_err(g, numeric_grad(f, logits)) <= 1e-6


@pytest.mark.parametrize("mode", ["max", "avg"])
@pytest.mark.parametrize("case", range(5))
def test_pool_gradients(case, mode):
    r = _rng(case)
    x = r.standard_normal((2, 2, 4, 4))
    weights = r.standard_normal((2, 2, 2, 2))
    layer = Pool("p", 2, mode=mode)
    f = lambda: float((layer.forward(x, "train")[0] * weights).sum())
    gx, _ = layer.backward(weights, layer.forward(x, "train")[1])
    assert rel_err(gx, numeric_grad(f, x)) <= 1e-6
