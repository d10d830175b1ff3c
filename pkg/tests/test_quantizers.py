import numpy as np
import pytest
from hypothesis import given, strategies as st

from minw.errors import ConfigError
from minw.quantizers import (ThresholdSet, build_codebook, check_thresholds, default_thresholds,
                             nearest_level, quantize, quantize_binary, quantize_pow2,
                             quantize_ternary)

PAPER_LEVELS = {1: (-1.0, 1.0), 2: (-1.0, 0.0, 1.0),
                3: (-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0)}
values = st.floats(-2, 2, allow_nan=False, width=32)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_codebook_levels(bits):
    cb = build_codebook(bits)
    assert cb.levels == PAPER_LEVELS[bits]
    assert cb.q == (2 ** (bits - 1) - 1 if bits >= 2 else 0)


@pytest.mark.parametrize("bits", [0, 4, 8])
def test_unsupported_bits(bits):
    with pytest.raises(ConfigError):
        build_codebook(bits)


def test_binary_examples():
    assert quantize_binary(np.array([0.3, -0.2, 0.0])).tolist() == [1.0, -1.0, -1.0]


def test_ternary_examples():
    d = ThresholdSet((0.5,))
    assert quantize_ternary(np.array([0.4, -0.8, 0.5]), d).tolist() == [0.0, -1.0, 0.0]


def test_ternary_threshold_count():
    with pytest.raises(ConfigError):
        quantize_ternary(np.array([0.1]), ThresholdSet((0.2, 0.5)))
    with pytest.raises(ConfigError):
        ThresholdSet(())


def test_pow2_examples():
    cb = build_codebook(3)
    d = ThresholdSet((0.125, 0.375, 0.75))
    assert quantize_pow2(np.array([0.1, 0.3, -0.9]), d, cb).tolist() == [0.0, 0.25, -1.0]


def test_pow2_threshold_count():
    with pytest.raises(ConfigError):
        quantize_pow2(np.array([0.1]), ThresholdSet((0.5,)), build_codebook(3))


def test_nearest_level_examples():
    assert nearest_level(0.9, build_codebook(1)) == 1.0
    assert nearest_level(0.0, build_codebook(2)) == 0.0
    assert nearest_level(0.375, build_codebook(3)) == 0.5


def test_default_thresholds_are_midpoints():
    assert default_thresholds(2).deltas == (0.5,)
    assert default_thresholds(3).deltas == (0.125, 0.375, 0.75)
    assert default_thresholds(1) is None


def test_thresholds_must_increase_and_lie_in_unit_interval():
    for bad in [(0.5, 0.25), (0.0,), (1.5,)]:
        with pytest.raises(ConfigError):
            ThresholdSet(bad)


def test_threshold_swallowing_a_level_is_rejected():
    with pytest.raises(ConfigError):
        check_thresholds(build_codebook(2), ThresholdSet((1.0,)))
    with pytest.raises(ConfigError):
        check_thresholds(build_codebook(3), ThresholdSet((0.3, 0.4, 0.75)))


@pytest.mark.parametrize("bits", [1, 2, 3])
@given(x=st.lists(values, min_size=1, max_size=20))
def test_idempotent_and_in_codebook(bits, x):
    cb = build_codebook(bits)
    q = quantize(np.array(x, dtype=np.float32), cb)
    assert cb.contains(q).all()
    np.testing.assert_array_equal(quantize(q, cb), q)


@pytest.mark.parametrize("bits", [2, 3])
@given(x=st.lists(values, min_size=1, max_size=20))
def test_odd_symmetry(bits, x):
    cb = build_codebook(bits)
    a = np.array(x, dtype=np.float32)
    np.testing.assert_array_equal(quantize(-a, cb), -quantize(a, cb))


@pytest.mark.parametrize("bits", [2, 3])
@given(x=values)
def test_midpoint_thresholds_agree_with_nearest_level(bits, x):
    cb = build_codebook(bits)
    mids = set(default_thresholds(bits).deltas)
    if abs(x) in mids:
        return
    assert quantize(np.array([x]), cb)[0] == nearest_level(x, cb)
