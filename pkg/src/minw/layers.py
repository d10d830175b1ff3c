"""Layers with explicit forward/backward passes.

``forward(x, phase, noise)`` returns ``(y, cache)`` and ``backward(g, cache,
estimator)`` returns ``(g_x, grads)``. Layers hold parameters but never
update them; the optimizer does that.
"""

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .estimator import EstimatorConfig, aqe_backward_gate, aqe_forward, ste_backward_gate
from .quantizers import build_codebook, quantize
from .tensor import DTYPE, conv2d, conv2d_backward, pool2d, pool2d_backward

PHASES = ("train", "infer")


def _check_phase(phase):
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")


def _deterministic(est):
    if est.mode == "deterministic":
        return est
    return EstimatorConfig(est.alpha, "deterministic", est.backward_gain, est.kind)


def estimator_gate(g, value, est):
    if est.kind == "ste":
        return ste_backward_gate(g, value)
    return aqe_backward_gate(g, value, est)


class Layer:
    kind = None
    params = {}

    def __init__(self, name):
        self.name = name

    def spec(self):
        return {"kind": self.kind, "name": self.name}

    def buffers(self):
        return {}


class _Quantized(Layer):
    """Shared weight handling for quantized conv/dense layers."""

    def __init__(self, name, bits_w, quantize_input, estimator, thresholds):
        super().__init__(name)
        self.bits_w = int(bits_w)
        self.cb_w = build_codebook(self.bits_w)
        self.quantize_input = bool(quantize_input)
        self.estimator = estimator
        self.thresholds = thresholds

    def quantized_weight(self):
        return quantize(self.params["weight"], self.cb_w, self.thresholds)

    def effective_weight(self, phase):
        _check_phase(phase)
        if phase == "infer" or self.estimator.kind == "ste":
            return self.quantized_weight()
        return aqe_forward(self.params["weight"], self.cb_w,
                           _deterministic(self.estimator), thresholds=self.thresholds)

    def weight_grad(self, g_w_hat, estimator):
        return estimator_gate(g_w_hat, self.params["weight"], estimator or self.estimator)


class QDense(_Quantized):
    kind = "qdense"

    def __init__(self, name, n_in, n_out, bits_w=1, quantize_input=True,
                 estimator=EstimatorConfig(), thresholds=None, rng=None, dtype=DTYPE):
        super().__init__(name, bits_w, quantize_input, estimator, thresholds)
        self.n_in, self.n_out = int(n_in), int(n_out)
        rng = rng or np.random.default_rng(0)
        self.params = {"weight": rng.uniform(-1, 1, (self.n_in, self.n_out)).astype(dtype)}

    def spec(self):
        return dict(super().spec(), n_in=self.n_in, n_out=self.n_out,
                    bits_w=self.bits_w, quantize_input=self.quantize_input)

    def forward(self, x, phase, noise=None):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.n_in:
            raise DimensionError(
                f"{self.name}: input shape {x.shape} does not match weight "
                f"{self.params['weight'].shape}"
            )
        w_hat = self.effective_weight(phase)
        return x2 @ w_hat, (x.shape, x2, w_hat)

    def backward(self, g, cache, estimator=None):
        x_shape, x2, w_hat = cache
        g_w_hat = x2.T @ g
        g_x = (g @ w_hat.T).reshape(x_shape)
        return g_x, {"weight": self.weight_grad(g_w_hat, estimator)}


class QConv2d(_Quantized):
    kind = "qconv"

    def __init__(self, name, c_in, c_out, k=3, stride=1, pad=1, bits_w=1,
                 quantize_input=True, estimator=EstimatorConfig(), thresholds=None,
                 rng=None, dtype=DTYPE):
        super().__init__(name, bits_w, quantize_input, estimator, thresholds)
        self.c_in, self.c_out, self.k = int(c_in), int(c_out), int(k)
        self.stride, self.pad = int(stride), int(pad)
        rng = rng or np.random.default_rng(0)
        shape = (self.c_out, self.c_in, self.k, self.k)
        self.params = {"weight": rng.uniform(-1, 1, shape).astype(dtype)}

    def spec(self):
        return dict(super().spec(), c_in=self.c_in, c_out=self.c_out, k=self.k,
                    stride=self.stride, pad=self.pad, bits_w=self.bits_w,
                    quantize_input=self.quantize_input)

    def forward(self, x, phase, noise=None):
        w_hat = self.effective_weight(phase)
        if phase == "infer":
            return conv2d(x, w_hat, self.stride, self.pad), None
        y, cols = conv2d(x, w_hat, self.stride, self.pad, return_cols=True)
        return y, (x, w_hat, cols)

    def backward(self, g, cache, estimator=None):
        x, w_hat, cols = cache
        g_x, g_w_hat = conv2d_backward(x, w_hat, g, self.stride, self.pad, cols)
        return g_x, {"weight": self.weight_grad(g_w_hat, estimator)}


class QAct(Layer):
    """Activation quantizer closing a construct; its input feeds the next layer."""

    kind = "qact"

    def __init__(self, name, bits_a=1, estimator=EstimatorConfig(), thresholds=None):
        super().__init__(name)
        self.bits_a = int(bits_a)
        self.cb = build_codebook(self.bits_a)
        self.estimator = estimator
        self.thresholds = thresholds
        self.params = {}
        if estimator.mode == "stochastic" and self.bits_a != 1:
            raise ConfigError("stochastic mode is only defined for 1-bit activations")

    def spec(self):
        return dict(super().spec(), bits_a=self.bits_a)

    def forward(self, x, phase, noise=None):
        _check_phase(phase)
        if phase == "infer" or self.estimator.kind == "ste":
            return quantize(x, self.cb, self.thresholds), x
        return aqe_forward(x, self.cb, self.estimator, noise, self.thresholds), x

    def backward(self, g, cache, estimator=None):
        return estimator_gate(g, cache, estimator or self.estimator), {}


def apply_affine(x, scale, shift):
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    return x * scale.reshape(shape) + shift.reshape(shape)


def bn_fold(gamma, beta, mean, var, eps):
    """Per-channel affine ``(scale, shift)`` equivalent to inference-mode BN."""
    scale = gamma / np.sqrt(var + gamma.dtype.type(eps))
    return scale, beta - mean * scale


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, channels, eps=1e-5, momentum=0.9, dtype=DTYPE):
        super().__init__(name)
        self.channels, self.eps, self.momentum = int(channels), float(eps), float(momentum)
        self.params = {"gamma": np.ones(self.channels, dtype),
                       "beta": np.zeros(self.channels, dtype)}
        self.running_mean = np.zeros(self.channels, dtype)
        self.running_var = np.ones(self.channels, dtype)

    def spec(self):
        return dict(super().spec(), channels=self.channels, eps=self.eps,
                    momentum=self.momentum)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _view(self, x):
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
        if x.shape[1] != self.channels:
            raise DimensionError(f"{self.name}: expected {self.channels} channels, got {x.shape}")
        return axes, shape

    def affine(self):
        return bn_fold(self.params["gamma"], self.params["beta"],
                       self.running_mean, self.running_var, self.eps)

    def forward(self, x, phase, noise=None):
        _check_phase(phase)
        axes, shape = self._view(x)
        if phase == "infer":
            return apply_affine(x, *self.affine()), None
        if x.shape[0] < 2:
            raise ConfigError(f"{self.name}: batch norm needs a batch of at least 2 in training")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1 / np.sqrt(var + x.dtype.type(self.eps))
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        m = self.momentum
        self.running_mean[...] = m * self.running_mean + (1 - m) * mean
        self.running_var[...] = m * self.running_var + (1 - m) * var
        y = x_hat * self.params["gamma"].reshape(shape) + self.params["beta"].reshape(shape)
        return y, (x_hat, inv_std, axes, shape)

    def backward(self, g, cache, estimator=None):
        x_hat, inv_std, axes, shape = cache
        count = g.size // self.channels
        g_gamma = (g * x_hat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        g_xhat = g * self.params["gamma"].reshape(shape)
        g_x = (inv_std.reshape(shape) / count) * (
            count * g_xhat
            - g_xhat.sum(axis=axes).reshape(shape)
            - x_hat * (g_xhat * x_hat).sum(axis=axes).reshape(shape)
        )
        return g_x, {"gamma": g_gamma, "beta": g_beta}


def hardtanh(x):
    return np.clip(x, -1, 1)


class HardTanh(Layer):
    kind = "hardtanh"
    params = {}

    def forward(self, x, phase, noise=None):
        return hardtanh(x), x

    def backward(self, g, cache, estimator=None):
        # inclusive at |x| = 1, same support as the STE gate
        return np.where(np.abs(cache) <= 1, g, g.dtype.type(0)), {}


class Pool(Layer):
    kind = "pool"
    params = {}

    def __init__(self, name, window=2, stride=None, mode="max"):
        super().__init__(name)
        self.window = int(window)
        self.stride = self.window if stride is None else int(stride)
        self.mode = mode

    def spec(self):
        return dict(super().spec(), window=self.window, stride=self.stride, mode=self.mode)

    def forward(self, x, phase, noise=None):
        y, idx = pool2d(x, self.window, self.stride, self.mode, return_indices=True)
        return y, (x.shape, idx)

    def backward(self, g, cache, estimator=None):
        x_shape, idx = cache
        return pool2d_backward(g, x_shape, self.window, self.stride, self.mode, idx), {}


class Flatten(Layer):
    kind = "flatten"
    params = {}

    def forward(self, x, phase, noise=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, cache, estimator=None):
        return g.reshape(cache), {}


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1
    return float(loss), grad / logits.dtype.type(b)


LAYER_TYPES = {cls.kind: cls for cls in (QDense, QConv2d, QAct, BatchNorm, HardTanh, Pool, Flatten)}
