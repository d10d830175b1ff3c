import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import expected_gradient, expected_loss_closed, expected_loss_grid
from minw.errors import ConfigError, DimensionError
from minw.estimator import (EstimatorConfig, NoiseSource, aqe_backward_gate, aqe_forward,
                            asymptotic_iterate, mc_expected_gradient, ste_backward_gate)
from minw.quantizers import build_codebook

CB1 = build_codebook(1)


def test_forward_direct_evaluation():
    out = aqe_forward(np.array([0.2]), CB1, EstimatorConfig(alpha=0.5))
    assert out[0] == pytest.approx(0.6)


def test_forward_limits():
    a = np.array([0.2])
    assert aqe_forward(a, CB1, EstimatorConfig(alpha=1 - 1e-12))[0] == pytest.approx(1.0)
    assert aqe_forward(a, CB1, EstimatorConfig(alpha=1e-12))[0] == pytest.approx(0.2)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_alpha_must_be_open_interval(alpha):
    with pytest.raises(ConfigError):
        EstimatorConfig(alpha=alpha)


def test_config_rejects_unknown_values():
    for kw in [{"mode": "random"}, {"backward_gain": "double"}, {"kind": "dorefa"}]:
        with pytest.raises(ConfigError):
            EstimatorConfig(**kw)


def test_stochastic_needs_noise():
    with pytest.raises(ConfigError):
        aqe_forward(np.zeros(3), CB1, EstimatorConfig(mode="stochastic"))


def test_stochastic_forward_reproducible():
    cfg = EstimatorConfig(mode="stochastic")
    a = np.linspace(-1, 1, 101)
    one = aqe_forward(a, CB1, cfg, NoiseSource(7))
    two = aqe_forward(a, CB1, cfg, NoiseSource(7))
    np.testing.assert_array_equal(one, two)
    assert set(np.round(one - 0.5 * a, 12)) <= {-0.5, 0.5}


@pytest.mark.parametrize("bits", [1, 2, 3])
@given(a=st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=1, max_size=16),
       alpha=st.floats(0.01, 0.99))
def test_forward_is_convex_combination(bits, a, alpha):
    cb = build_codebook(bits)
    a = np.array(a)
    from minw.quantizers import quantize
    h = quantize(a, cb)
    out = aqe_forward(a, cb, EstimatorConfig(alpha=alpha))
    lo, hi = np.minimum(a, h), np.maximum(a, h)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_backward_gate_examples():
    half = EstimatorConfig(alpha=0.5)
    assert aqe_backward_gate(np.array([0.7]), np.array([1.2]), half)[0] == 0.0
    assert aqe_backward_gate(np.array([0.7]), np.array([0.5]), half)[0] == 0.7
    assert aqe_backward_gate(np.array([1.0]), np.array([0.3]),
                             EstimatorConfig(alpha=0.75))[0] == 1.5
    assert aqe_backward_gate(np.array([1.0]), np.array([0.3]),
                             EstimatorConfig(alpha=0.75, backward_gain="unit"))[0] == 1.0


def test_ste_gate_examples():
    assert ste_backward_gate(np.array([0.7]), np.array([1.0]))[0] == 0.7
    assert ste_backward_gate(np.array([0.7]), np.array([-1.01]))[0] == 0.0


def test_gate_shape_mismatch():
    with pytest.raises(DimensionError):
        ste_backward_gate(np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        aqe_backward_gate(np.zeros(3), np.zeros((3, 1)), EstimatorConfig())


@given(seed=st.integers(0, 2**32 - 1))
def test_half_alpha_gate_equals_ste(seed):
    r = np.random.default_rng(seed)
    g = r.standard_normal(64).astype(np.float32)
    a = r.uniform(-2, 2, 64).astype(np.float32)
    np.testing.assert_array_equal(aqe_backward_gate(g, a, EstimatorConfig(alpha=0.5)),
                                  ste_backward_gate(g, a))


def test_iterate_examples():
    assert asymptotic_iterate(0.0, 0.5, 3) == 0.875
    for alpha in (0.1, 0.5, 0.9):
        assert asymptotic_iterate(1.0, alpha, 17) == 1.0
    assert asymptotic_iterate(0.0, 0.5, 200) == pytest.approx(1.0, abs=1e-15)
    assert asymptotic_iterate(-0.3, 0.5, 200) == pytest.approx(-1.0, abs=1e-15)


@given(a0=st.floats(-1, 1), alpha=st.floats(0.01, 0.99), n=st.integers(0, 60))
def test_iterate_closed_form(a0, alpha, n):
    target = 1.0 if a0 >= 0 else -1.0
    residual = abs(target - asymptotic_iterate(a0, alpha, n))
    assert residual == pytest.approx((1 - alpha) ** n * abs(target - a0), abs=1e-12)


def test_iterate_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        asymptotic_iterate(0.0, 1.0, 3)


def test_noise_source_seeded_and_centered():
    np.testing.assert_array_equal(NoiseSource(3).sample(100), NoiseSource(3).sample(100))
    z = NoiseSource(11).sample(10**6)
    assert z.min() >= -1 and z.max() <= 1
    assert abs(z.mean()) <= 3 * np.sqrt(1 / 3) / np.sqrt(z.size)


def test_closed_form_expectation_matches_grid():
    for a in (-0.7, 0.0, 0.3, 0.9):
        loss = lambda h: (h - 0.2) ** 2 + 0.5 * h
        assert expected_loss_closed(a, 0.5, loss) == pytest.approx(
            expected_loss_grid(a, 0.5, loss), abs=1e-5)


def test_mc_constant_loss_is_zero():
    est, se = mc_expected_gradient(0.3, 0.5, lambda h: 3.0, 10**4, NoiseSource(1))
    assert abs(est) <= 3 * se + 1e-9


def test_mc_linear_loss_at_zero_is_one():
    est, se = mc_expected_gradient(0.0, 0.5, lambda h: h, 10**5, NoiseSource(2))
    # zero-variance case: only finite-difference rounding remains
    assert abs(est - 1.0) <= 3 * se + 1e-9


def test_mc_quadratic_matches_grid_oracle():
    loss = lambda h: h * h
    est, se = mc_expected_gradient(0.3, 0.5, loss, 10**5, NoiseSource(3))
    assert abs(est - expected_gradient(0.3, 0.5, loss)) <= 3 * se


def test_mc_needs_enough_samples():
    with pytest.raises(ConfigError):
        mc_expected_gradient(0.0, 0.5, lambda h: h, 999, NoiseSource(0))
