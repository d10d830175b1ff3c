"""Minibatch training loop, evaluation and per-epoch metrics."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import batch_stream
from .errors import MinwError, NumericError
from .estimator import NoiseSource
from .layers import softmax_cross_entropy
from .model import backward_pass, forward_pass
from .optim import AdamState, adam_update
from .telemetry import DEFAULT_BINS, DEFAULT_EPS, emit_metrics, histogram, quantized_fraction

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy", "lr", "quantized_fraction")


@dataclass
class EpochStats:
    fit_loss: float
    fit_accuracy: float
    steps: int
    skipped: int


def train_step(model, x, y, cfg, state, epoch, noise=None):
    trace, logits = forward_pass(model, x, "train", noise)
    loss, g = softmax_cross_entropy(logits, y)
    grads = backward_pass(model, trace, g)
    adam_update(model, grads, state, cfg, epoch)
    return loss, int(np.count_nonzero(logits.argmax(axis=1) == y))


def train_epoch(model, data, cfg, state, epoch, rng, aug=None, noise=None):
    """One shuffled sweep over ``data``.

    A step whose gradients are not finite is skipped and logged; the epoch
    fails only if every step was skipped.
    """
    total_loss = correct = seen = steps = skipped = 0
    for i, (x, y) in enumerate(batch_stream(data, cfg.batch_size, "train", aug, rng)):
        try:
            loss, hits = train_step(model, x, y, cfg, state, epoch, noise)
        except NumericError as exc:
            skipped += 1
            log.warning("epoch %d batch %d: step skipped: %s", epoch, i, exc)
            continue
        except MinwError as exc:
            raise type(exc)(f"epoch {epoch} batch {i}: {exc}") from exc
        steps += 1
        total_loss += loss * len(y)
        correct += hits
        seen += len(y)
    if skipped and not steps:
        raise NumericError(f"epoch {epoch}: all {skipped} steps had non-finite gradients")
    return EpochStats(total_loss / max(seen, 1), correct / max(seen, 1), steps, skipped)


def evaluate(model, data, batch_size=1000):
    """Inference-phase accuracy and mean loss."""
    total_loss = correct = 0.0
    for x, y in batch_stream(data, batch_size, "infer"):
        _, logits = forward_pass(model, x, "infer")
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += np.count_nonzero(logits.argmax(axis=1) == y)
    n = max(len(data), 1)
    return correct / n, total_loss / n


def weight_quantized_fraction(model, eps=DEFAULT_EPS):
    """Quantized fraction over all quantized-layer weights pooled together."""
    layers = model.quantized_layers()
    hits = total = 0
    for l in layers:
        w = l.params["weight"]
        hits += quantized_fraction(w, l.cb_w, eps) * w.size
        total += w.size
    return hits / total


def layer_histograms(model, epoch, probe=None, bins=DEFAULT_BINS):
    records = [histogram(l.params["weight"], bins, epoch, l.name, "weights")
               for l in model.quantized_layers()]
    if probe is not None:
        trace, _ = forward_pass(model, probe, "infer")
        records += [histogram(a, bins, epoch, name, "activations")
                    for name, a in trace.activations.items()]
    return records


def _append_rows(path, rows):
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(METRIC_COLUMNS)
        w.writerows(rows)


def fit(model, train, cfg, test=None, aug=None, metrics_path=None, hist_path=None,
        hist_bins=DEFAULT_BINS, quant_eps=DEFAULT_EPS, state=None):
    """Train for ``cfg.epochs`` epochs and return one metrics dict per epoch.

    Reported loss/accuracy come from inference-phase evaluation (quantized
    weights and activations) after each epoch.
    """
    seq = np.random.SeedSequence([int(cfg.seed), 0x7EA1])
    shuffle_seed, noise_seed = seq.spawn(2)
    rng = np.random.default_rng(shuffle_seed)
    noise = None
    if model.estimator.mode == "stochastic":
        noise = NoiseSource(int(noise_seed.generate_state(1, np.uint64)[0]))
    state = state or AdamState()
    probe = train.images[:256]
    history = []
    for epoch in range(cfg.epochs):
        stats = train_epoch(model, train, cfg, state, epoch, rng, aug, noise)
        qf = weight_quantized_fraction(model, quant_eps)
        row = {"epoch": epoch, "lr": cfg.lr_at(epoch), "quantized_fraction": qf,
               "fit_loss": stats.fit_loss, "skipped": stats.skipped}
        row["train_accuracy"], row["train_loss"] = evaluate(model, train)
        splits = [("train", row["train_loss"], row["train_accuracy"])]
        if test is not None:
            row["test_accuracy"], row["test_loss"] = evaluate(model, test)
            splits.append(("test", row["test_loss"], row["test_accuracy"]))
        if metrics_path:
            _append_rows(metrics_path, [(epoch, s, repr(l), repr(a), repr(row["lr"]), repr(qf))
                                        for s, l, a in splits])
        if hist_path:
            emit_metrics(layer_histograms(model, epoch, probe, hist_bins), hist_path)
        log.info("epoch %d: fit_loss=%.4f train_acc=%.4f qf=%.4f", epoch,
                 stats.fit_loss, row["train_accuracy"], qf)
        history.append(row)
    return history
