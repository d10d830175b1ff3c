"""Asymptotic-quantized estimator (AQE) and the straight-through baseline.

Forward, the AQE blends the quantized value with the full-precision one::

    h_hat = alpha * h(a) + (1 - alpha) * a            (deterministic)
    h_hat = alpha * sign(a - z) + (1 - alpha) * a      (stochastic, z ~ U[-1, 1])

Backward, the upstream gradient passes where ``|a| <= 1`` with gain
``2 * alpha`` (or 1 with ``backward_gain="unit"``). At ``alpha = 0.5`` this is
exactly the STE gate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .quantizers import quantize, quantize_binary

KINDS = ("aqe", "ste")
MODES = ("deterministic", "stochastic")
GAINS = ("two_alpha", "unit")


@dataclass(frozen=True)
class EstimatorConfig:
    alpha: float = 0.5
    mode: str = "deterministic"
    backward_gain: str = "two_alpha"
    kind: str = "aqe"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"estimator: unknown kind {self.kind!r}, expected {KINDS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown value {self.mode!r}, expected {MODES}")
        if self.backward_gain not in GAINS:
            raise ConfigError(
                f"backward_gain: unknown value {self.backward_gain!r}, expected {GAINS}"
            )
        if not (0.0 < float(self.alpha) < 1.0):
            raise ConfigError(f"alpha must lie in the open interval (0, 1), got {self.alpha}")

    @property
    def gain(self):
        if self.kind == "ste" or self.backward_gain == "unit":
            return 1.0
        return 2.0 * self.alpha


class NoiseSource:
    """Seeded stream of i.i.d. U[-1, 1] samples."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def sample(self, shape, dtype=np.float64):
        return self._rng.uniform(-1.0, 1.0, size=shape).astype(dtype, copy=False)


def aqe_forward(a, cb, cfg, z=None, thresholds=None):
    if cfg.kind != "aqe":
        raise ConfigError("aqe_forward called with a non-AQE estimator config")
    a = np.asarray(a)
    alpha = a.dtype.type(cfg.alpha)
    if cfg.mode == "stochastic":
        if z is None:
            raise ConfigError("stochastic AQE needs a noise source")
        h = quantize_binary(a - z.sample(a.shape, a.dtype))
    else:
        h = quantize(a, cb, thresholds)
    return alpha * h + (1 - alpha) * a


def _check_shapes(g_h, a):
    if np.shape(g_h) != np.shape(a):
        raise DimensionError(
            f"gradient shape {np.shape(g_h)} does not match value shape {np.shape(a)}"
        )


def aqe_backward_gate(g_h, a, cfg):
    _check_shapes(g_h, a)
    g_h = np.asarray(g_h)
    gain = g_h.dtype.type(cfg.gain)
    return np.where(np.abs(a) <= 1, g_h * gain, g_h.dtype.type(0))


def ste_backward_gate(g_h, a):
    _check_shapes(g_h, a)
    g_h = np.asarray(g_h)
    return np.where(np.abs(a) <= 1, g_h, g_h.dtype.type(0))


def asymptotic_iterate(a0, alpha, n, branch=None):
    """Run ``a <- alpha * branch + (1 - alpha) * a`` for ``n`` steps.

    ``branch`` is the quantized target (+1 or -1) the iteration is pinned to;
    by default +1 for ``a0 >= 0`` and -1 otherwise. The residual to the
    target shrinks geometrically: ``|branch - a_n| = (1 - alpha)**n * |branch - a0|``.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if branch is None:
        branch = 1.0 if a0 >= 0 else -1.0
    a = float(a0)
    for _ in range(int(n)):
        a = alpha * branch + (1.0 - alpha) * a
    return a


def _derivative(f, x, step=1e-6):
    return (f(x + step) - f(x - step)) / (2.0 * step)


def mc_expected_gradient(a, alpha, loss, samples, z):
    """Monte Carlo estimate of d/da E_z[loss(h_hat(a, z))] for the stochastic neuron.

    Each sample is unbiased: the pathwise term ``(1 - alpha) * loss'(h_hat)``
    plus a likelihood-ratio term for the binary decision ``sign(a - z)``,
    baselined at the loss of the undecided output ``(1 - alpha) * a``.
    Returns ``(estimate, standard_error)``.
    """
    if samples < 1000:
        raise ConfigError(f"need at least 1000 samples, got {samples}")
    zs = z.sample(int(samples))
    h = np.where(a - zs > 0, 1.0, -1.0)
    h_hat = alpha * h + (1.0 - alpha) * a

    p_up = min(max((a + 1.0) / 2.0, 0.0), 1.0)
    dp = 0.5 if abs(a) < 1.0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(h > 0, dp / p_up, -dp / (1.0 - p_up))
    score = np.nan_to_num(score)

    vloss = np.vectorize(loss, otypes=[np.float64])
    baseline = loss((1.0 - alpha) * a)
    pathwise = (1.0 - alpha) * _derivative(vloss, h_hat)
    g = pathwise + (vloss(h_hat) - baseline) * score
    return float(g.mean()), float(g.std(ddof=1) / np.sqrt(g.size))
