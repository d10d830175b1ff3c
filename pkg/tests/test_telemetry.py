import numpy as np
import pytest
from hypothesis import given, strategies as st

from minw.quantizers import build_codebook
from minw.telemetry import (HIST_RANGE, emit_metrics, histogram, quantized_fraction,
                            read_histograms, window_means)

CB1 = build_codebook(1)


def test_histogram_of_constant_ones():
    rec = histogram(np.ones(50), bins=64)
    assert np.count_nonzero(rec.counts) == 1 and rec.counts.sum() == 50
    assert rec.edges[0] == HIST_RANGE[0] and rec.edges[-1] == HIST_RANGE[1]


def test_histogram_clamps_outliers_to_end_bins():
    rec = histogram(np.array([-9.0, 9.0]), bins=8)
    assert rec.counts[0] == 1 and rec.counts[-1] == 1


def test_histogram_symmetry(rng):
    x = rng.uniform(-1, 1, 500)
    rec = histogram(np.r_[x, -x], bins=20)
    np.testing.assert_array_equal(rec.counts, rec.counts[::-1])


def test_histogram_uniform_counts_within_binomial_bound(rng):
    n, bins = 200_000, 64
    lo, hi = HIST_RANGE
    rec = histogram(rng.uniform(lo, hi, n), bins=bins)
    p = 1 / bins
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(rec.counts - n * p) <= 4 * sigma)


def test_quantized_fraction_examples(rng):
    assert quantized_fraction(np.array([1.0, -1.0, 1.0]), CB1) == 1.0
    assert quantized_fraction(np.full(10, 0.5), CB1, 0.05) == 0.0
    u = rng.uniform(-1, 1, 10**6)
    # two half-intervals of width 0.05 out of a length-2 support
    assert quantized_fraction(u, CB1, 0.05) == pytest.approx(0.05, abs=0.002)


@given(eps=st.lists(st.floats(0.001, 1.0), min_size=2, max_size=5))
def test_quantized_fraction_monotone_in_eps(eps):
    x = np.linspace(-1, 1, 401)
    fr = [quantized_fraction(x, build_codebook(3), e) for e in sorted(eps)]
    assert fr == sorted(fr)


def test_emit_empty_is_header_only(tmp_path):
    path = tmp_path / "h.csv"
    emit_metrics([], path)
    assert path.read_text().splitlines() == ["epoch,layer,kind,bin_left,bin_right,count"]


def test_emit_one_record_four_bins_and_append(tmp_path):
    path = tmp_path / "h.csv"
    emit_metrics([histogram(np.zeros(3), 4, 0, "fc1")], path)
    assert len(path.read_text().splitlines()) == 5
    emit_metrics([histogram(np.zeros(3), 4, 1, "fc1")], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 9 and lines.count(lines[0]) == 1


def test_round_trip_parse(tmp_path, rng):
    path = tmp_path / "h.csv"
    recs = [histogram(rng.uniform(-1, 1, 300), 16, e, name, kind)
            for e in range(2) for name, kind in [("fc1", "weights"), ("act1", "activations")]]
    emit_metrics(recs, path)
    back = read_histograms(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert (a.epoch, a.layer, a.kind) == (b.epoch, b.layer, b.kind)
        np.testing.assert_array_equal(a.counts, b.counts)
        np.testing.assert_array_equal(a.edges, b.edges)


def test_emit_to_unwritable_path_names_it(tmp_path):
    target = tmp_path / "missing" / "h.csv"
    with pytest.raises(OSError, match="missing"):
        emit_metrics([], target)


def test_window_means():
    assert window_means(range(25), 10) == [4.5, 14.5]
