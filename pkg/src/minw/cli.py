"""Command-line driver: ``minw train|eval|export|inspect``.

Exit codes: 0 ok, 2 configuration, 3 numeric, 4 I/O or file format.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULTS, config_from_dict, load_config
from .data import (Dataset, channel_stats, load_cifar10, load_idx_dataset, normalize,
                   synthesize_blobs)
from .errors import ConfigError, DataError, MinwError
from .layers import QAct
from .model import build_model
from .packed import export_model, is_packed_file, load_packed, packed_evaluate, save_packed
from .telemetry import emit_metrics, histogram, quantized_fraction
from .training import evaluate, fit

log = logging.getLogger("minw")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def _synthetic_splits(cfg):
    # one draw, shuffled once and split 80/20 so both splits share class centers
    per_class = cfg.synthetic_per_class + cfg.synthetic_per_class // 4
    d = synthesize_blobs(cfg.synthetic_classes, per_class, cfg.synthetic_dim,
                         cfg.synthetic_spread, cfg.seed)
    order = np.random.default_rng(cfg.seed).permutation(len(d))
    cut = cfg.synthetic_classes * cfg.synthetic_per_class
    train = Dataset(d.images[order[:cut]], d.labels[order[:cut]], d.class_count)
    test = Dataset(d.images[order[cut:]], d.labels[order[cut:]], d.class_count)
    return train, test


def load_splits(cfg, stats=None):
    """Normalized ``(train, test)`` datasets for ``cfg``.

    Normalization statistics come from the raw training split unless given.
    """
    if cfg.dataset == "synthetic":
        train, test = _synthetic_splits(cfg)
    elif cfg.dataset == "cifar10":
        if not cfg.data_dir:
            raise ConfigError("data_dir: required for dataset = \"cifar10\"")
        train, test = load_cifar10(cfg.data_dir)
    else:
        for key in ("train_images", "train_labels"):
            if not getattr(cfg, key):
                raise ConfigError(f"{key}: required for dataset = \"idx\"")
        train = load_idx_dataset(cfg.train_images, cfg.train_labels, cfg.num_classes)
        test = None
        if cfg.test_images and cfg.test_labels:
            test = load_idx_dataset(cfg.test_images, cfg.test_labels, cfg.num_classes)
    if cfg.train_subset:
        train = train.subset(cfg.train_subset)
    if stats is None:
        stats = channel_stats(train)
    train = normalize(train, *stats)
    if test is not None:
        test = normalize(test, *stats)
    return train, test


def _build(cfg, train):
    return build_model(cfg.preset, train.images.shape[1:], train.class_count,
                       cfg.bits_w, cfg.bits_a, cfg.estimator_config(), cfg.seed,
                       cfg.hidden, cfg.width_scale, cfg.ternary_delta, cfg.pow2_thresholds)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _fresh(path):
    path = Path(path)
    if path.exists():
        path.unlink()
    return path


def cmd_train(config_path, out_model=None, metrics_path=None, seed=None, hist_path=None):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out_model = out_model or cfg.model_out
    metrics_path = _fresh(metrics_path or cfg.metrics_out)
    hist_path = _fresh(hist_path or cfg.hist_out)
    train, test = load_splits(cfg)
    model = _build(cfg, train)
    history = fit(model, train, cfg.train_config(), test, cfg.augment_config(),
                  metrics_path, hist_path, cfg.hist_bins, cfg.quant_eps)
    extra = {"mean": list(train.mean), "std": list(train.std),
             "epochs_completed": len(history)}
    save_checkpoint(model, out_model, cfg.to_dict(), extra)
    if history:
        last = history[-1]
        print(f"epochs={len(history)} accuracy={last['train_accuracy']:.6f} "
              f"loss={last['train_loss']:.6f} quantized_fraction={last['quantized_fraction']:.6f}")
    else:
        print("epochs=0")
    print(f"wrote {out_model}")
    return EXIT_OK


def _header_config(header, config_path):
    if config_path:
        return load_config(config_path)
    return config_from_dict(header.get("config") or {})


def cmd_eval(model_path, engine="float", split="test", config_path=None):
    if engine not in ("float", "packed"):
        raise ConfigError(f"engine: unknown value {engine!r}, expected float or packed")
    if is_packed_file(model_path):
        pm = load_packed(model_path)
        header = pm.extra
        if engine == "float":
            raise ConfigError("engine: a packed model file can only run with engine packed")
    else:
        model, header = load_checkpoint(model_path)
        header = {"config": header.get("config"), **header.get("extra", {})}
        pm = export_model(model) if engine == "packed" else None
    cfg = _header_config(header, config_path)
    stats = (tuple(header["mean"]), tuple(header["std"])) if "mean" in header else None
    train, test = load_splits(cfg, stats)
    data = train if split == "train" else test
    if data is None:
        raise ConfigError(f"split: no {split} data configured")
    acc, loss = packed_evaluate(pm, data) if pm is not None else evaluate(model, data)
    print(f"accuracy={acc:.6f} loss={loss:.6f}")
    return EXIT_OK


def cmd_export(model_path, packed_path):
    model, header = load_checkpoint(model_path)
    extra = {"config": header.get("config"), **header.get("extra", {})}
    pm = export_model(model, extra)
    op, precision = pm.operation
    save_packed(pm, packed_path)
    print(f"operation={op} precision={precision}")
    for name, layer_op in pm.layer_operations():
        print(f"  {name}: {layer_op}")
    print(f"wrote {packed_path}")
    return EXIT_OK


def cmd_inspect(model_path, layer, hist_out, bins=None, eps=None):
    model, header = load_checkpoint(model_path)
    cfg = config_from_dict(header.get("config") or {})
    bins = bins or cfg.hist_bins
    eps = eps or cfg.quant_eps
    target = model.layer(layer)
    if isinstance(target, QAct) or "weight" not in target.params:
        valid = ", ".join(l.name for l in model.quantized_layers())
        raise ConfigError(f"layer {layer!r} has no quantized weights; valid names: {valid}")
    w = target.params["weight"]
    _fresh(hist_out)
    emit_metrics([histogram(w, bins, header.get("extra", {}).get("epochs_completed", 0),
                            layer, "weights")], hist_out)
    print(f"layer={layer} quantized_fraction={quantized_fraction(w, target.cb_w, eps):.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="minw", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help=f"checkpoint path (default: {DEFAULTS.model_out})")
    t.add_argument("--metrics", help=f"metrics CSV (default: {DEFAULTS.metrics_out})")
    t.add_argument("--hist", help=f"histogram CSV (default: {DEFAULTS.hist_out})")
    t.add_argument("--seed", type=int, help="overrides the config seed")

    e = sub.add_parser("eval", help="evaluate a checkpoint or packed model")
    e.add_argument("--model", required=True)
    e.add_argument("--engine", choices=("float", "packed"), default="float")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--config", help="data source override (default: the stored config)")

    x = sub.add_parser("export", help="write a bit-packed inference model")
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True)

    i = sub.add_parser("inspect", help="histogram and quantized fraction of one layer")
    i.add_argument("--model", required=True)
    i.add_argument("--layer", required=True)
    i.add_argument("--out", required=True, help="histogram CSV")
    return p


def _dispatch(args):
    if args.command == "train":
        return cmd_train(args.config, args.out, args.metrics, args.seed, args.hist)
    if args.command == "eval":
        return cmd_eval(args.model, args.engine, args.split, args.config)
    if args.command == "export":
        return cmd_export(args.model, args.out)
    return cmd_inspect(args.model, args.layer, args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        with threadpool_limits(limits=args.threads):
            return _dispatch(args)
    except MinwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
