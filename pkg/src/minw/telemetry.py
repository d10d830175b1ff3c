"""Histograms and the quantized-fraction metric for tracking weight/activation drift."""

import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

HIST_RANGE = (-1.05, 1.05)
HIST_COLUMNS = ("epoch", "layer", "kind", "bin_left", "bin_right", "count")
DEFAULT_BINS = 64
DEFAULT_EPS = 0.05


@dataclass
class HistogramRecord:
    epoch: int
    layer: str
    kind: str
    edges: np.ndarray
    counts: np.ndarray = field(default=None)


def histogram(t, bins=DEFAULT_BINS, epoch=0, layer="", kind="weights"):
    if bins < 2:
        raise ConfigError(f"histogram needs at least 2 bins, got {bins}")
    lo, hi = HIST_RANGE
    values = np.clip(np.asarray(t, dtype=np.float64).ravel(), lo, hi)
    counts, edges = np.histogram(values, bins=bins, range=HIST_RANGE)
    return HistogramRecord(epoch, layer, kind, edges, counts.astype(np.int64))


def quantized_fraction(t, cb, eps=DEFAULT_EPS):
    """Share of elements within ``eps`` of some codebook level."""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    values = np.asarray(t, dtype=np.float64).ravel()
    if values.size == 0:
        return 0.0
    levels = np.asarray(cb.levels, dtype=np.float64)
    dist = np.abs(values[:, None] - levels[None, :]).min(axis=1)
    return float(np.count_nonzero(dist <= eps) / values.size)


_write_lock = threading.Lock()


def emit_metrics(records, path):
    """Append histogram rows to a CSV, writing the header only for a new file."""
    path = Path(path)
    try:
        with _write_lock:
            fresh = not path.exists() or path.stat().st_size == 0
            with open(path, "a", newline="") as fh:
                w = csv.writer(fh)
                if fresh:
                    w.writerow(HIST_COLUMNS)
                for r in records:
                    for left, right, count in zip(r.edges[:-1], r.edges[1:], r.counts):
                        w.writerow((r.epoch, r.layer, r.kind, repr(float(left)),
                                    repr(float(right)), int(count)))
    except OSError as exc:
        raise OSError(f"cannot write histogram file {path}: {exc}") from exc
    return path


def read_histograms(path):
    """Parse a histogram CSV back into records keyed by (epoch, layer, kind)."""
    grouped = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["epoch"]), row["layer"], row["kind"])
            grouped.setdefault(key, []).append(
                (float(row["bin_left"]), float(row["bin_right"]), int(row["count"])))
    out = []
    for (epoch, layer, kind), rows in grouped.items():
        edges = np.array([r[0] for r in rows] + [rows[-1][1]])
        out.append(HistogramRecord(epoch, layer, kind, edges,
                                   np.array([r[2] for r in rows], dtype=np.int64)))
    return out


def window_means(values, window=10):
    """Means over consecutive non-overlapping windows (a trailing partial window is dropped)."""
    values = list(values)
    return [float(np.mean(values[i:i + window]))
            for i in range(0, len(values) - window + 1, window)]
