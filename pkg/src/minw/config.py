"""Run configuration: a flat TOML key-value document.

Every key is optional; ``DEFAULTS`` lists them all with their defaults.
Unknown keys and ill-typed values are rejected with the key named.
"""

import json
from dataclasses import asdict, dataclass, fields, replace

import tomli

from .data import AugmentConfig
from .errors import ConfigError, DataError
from .estimator import EstimatorConfig
from .optim import TrainConfig
from .quantizers import ThresholdSet, build_codebook, check_thresholds


@dataclass(frozen=True)
class RunConfig:
    # estimator
    estimator: str = "aqe"
    alpha: float = 0.5
    mode: str = "deterministic"
    backward_gain: str = "two_alpha"
    # quantization
    bits_w: int = 1
    bits_a: int = 1
    ternary_delta: float = 0.5
    pow2_thresholds: tuple = (0.125, 0.375, 0.75)
    # model
    preset: str = "tiny"
    hidden: int = 64
    width_scale: float = 1.0
    # data
    dataset: str = "synthetic"
    data_dir: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_classes: int = 10
    train_subset: int = 0
    augment: bool = False
    augment_pad: int = 4
    augment_crop: int = 32
    augment_hflip: float = 0.5
    synthetic_classes: int = 4
    synthetic_per_class: int = 250
    synthetic_dim: int = 16
    synthetic_spread: float = 0.5
    # optimization
    learning_rate: float = 0.01
    decay_rate: float = 0.98
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # outputs
    model_out: str = "model.minw"
    metrics_out: str = "metrics.csv"
    hist_out: str = "histograms.csv"
    hist_bins: int = 64
    quant_eps: float = 0.05

    def estimator_config(self):
        return EstimatorConfig(self.alpha, self.mode, self.backward_gain, self.estimator)

    def train_config(self):
        return TrainConfig(self.learning_rate, self.decay_rate, self.batch_size, self.epochs,
                           self.seed, self.beta1, self.beta2, self.adam_eps)

    def augment_config(self):
        if not self.augment:
            return None
        return AugmentConfig(self.augment_pad, self.augment_crop, self.augment_hflip)

    def to_dict(self):
        d = asdict(self)
        d["pow2_thresholds"] = list(self.pow2_thresholds)
        return d


DEFAULTS = RunConfig()
_TYPES = {f.name: type(getattr(DEFAULTS, f.name)) for f in fields(RunConfig)}
DATASETS = ("synthetic", "cifar10", "idx")


def _coerce(key, value):
    want = _TYPES[key]
    if want is tuple:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is bool and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if want is int and isinstance(value, bool):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if not isinstance(value, want):
        raise ConfigError(f"{key}: expected {want.__name__}, got {value!r}")
    return value


def config_from_dict(values):
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    cfg = replace(DEFAULTS, **{k: _coerce(k, v) for k, v in values.items()})
    validate(cfg)
    return cfg


def dumps_config(cfg):
    """Render ``cfg`` as a config document that ``load_config`` reads back unchanged."""
    # JSON scalars, strings and arrays are valid TOML values
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.to_dict().items())


def load_config(path):
    try:
        with open(path, "rb") as fh:
            values = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not a valid key-value document: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: cannot read config: {exc}") from exc
    for key, value in values.items():
        if isinstance(value, dict):
            raise ConfigError(f"{key}: sections are not supported, use flat keys")
    return config_from_dict(values)


def validate(cfg):
    """Fail early, with the key named, on values that would fail mid-run."""
    cfg.estimator_config()
    cfg.train_config()
    for key in ("bits_w", "bits_a"):
        if getattr(cfg, key) not in (1, 2, 3):
            raise ConfigError(f"{key}: unsupported bit-width {getattr(cfg, key)}, expected 1, 2 or 3")
    for key, bits, deltas in (("ternary_delta", 2, (cfg.ternary_delta,)),
                              ("pow2_thresholds", 3, cfg.pow2_thresholds)):
        try:
            check_thresholds(build_codebook(bits), ThresholdSet(deltas))
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    if cfg.dataset not in DATASETS:
        raise ConfigError(f"dataset: unknown value {cfg.dataset!r}, expected one of {DATASETS}")
    if cfg.hidden < 1:
        raise ConfigError(f"hidden: must be >= 1, got {cfg.hidden}")
    if cfg.width_scale <= 0:
        raise ConfigError(f"width_scale: must be > 0, got {cfg.width_scale}")
    if cfg.train_subset < 0:
        raise ConfigError(f"train_subset: must be >= 0, got {cfg.train_subset}")
    if cfg.hist_bins < 1:
        raise ConfigError(f"hist_bins: must be >= 1, got {cfg.hist_bins}")
    if cfg.quant_eps <= 0:
        raise ConfigError(f"quant_eps: must be > 0, got {cfg.quant_eps}")
    if not 0.0 <= cfg.augment_hflip <= 1.0:
        raise ConfigError(f"augment_hflip: must lie in [0, 1], got {cfg.augment_hflip}")
    return cfg
