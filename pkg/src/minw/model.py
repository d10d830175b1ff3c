"""Model container, layer-graph presets, forward and backward passes."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, StateError
from .estimator import EstimatorConfig
from .layers import (
    LAYER_TYPES, BatchNorm, Flatten, HardTanh, Pool, QAct, QConv2d, QDense, _Quantized,
)
from .quantizers import ThresholdSet, build_codebook, check_thresholds
from .tensor import DTYPE

PRESETS = ("tiny", "A", "B", "C", "D")

# Conv widths (stages of two convs each) and fully-connected width per preset.
# A follows the BNN ConvNet; B halves the convs, C then halves the FC layers,
# D halves them again. Only width ratios are pinned down, so these are
# approximations of the reported parameter budgets.
_CONVNET_WIDTHS = {
    "A": ((128, 256, 512), 1024),
    "B": ((64, 128, 256), 1024),
    "C": ((64, 128, 256), 512),
    "D": ((64, 128, 256), 256),
}


class Model:
    def __init__(self, layers, bits_w, bits_a, estimator, thresholds,
                 input_shape, num_classes, preset="custom"):
        self.layers = list(layers)
        self.bits_w, self.bits_a = int(bits_w), int(bits_a)
        self.estimator = estimator
        self.thresholds = thresholds
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.preset = preset
        self.version = 0
        self._validate()

    def _validate(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names in {names}")
        raw = [l for l in self.quantized_layers() if not l.quantize_input]
        if len(raw) != 1 or raw[0] is not self.quantized_layers()[0]:
            raise ConfigError("exactly the first quantized layer must take unquantized input")
        prev = None
        for layer in self.layers:
            if isinstance(layer, _Quantized) and layer.quantize_input:
                if not isinstance(prev, QAct):
                    raise ConfigError(f"{layer.name}: quantized input must come from an activation quantizer")
            if not isinstance(layer, Flatten):
                prev = layer

    def quantized_layers(self):
        return [l for l in self.layers if isinstance(l, _Quantized)]

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        valid = ", ".join(l.name for l in self.layers)
        raise ConfigError(f"unknown layer {name!r}; valid names: {valid}")

    def named_parameters(self):
        for l in self.layers:
            for pname, value in l.params.items():
                yield f"{l.name}.{pname}", l, pname, value

    def state_arrays(self):
        """Parameters then buffers, in layer order; the checkpoint payload."""
        out = []
        for l in self.layers:
            for pname, value in l.params.items():
                out.append((f"{l.name}.{pname}", value))
            for bname, value in l.buffers().items():
                out.append((f"{l.name}.{bname}", value))
        return out

    def spec(self):
        return {
            "preset": self.preset,
            "bits_w": self.bits_w,
            "bits_a": self.bits_a,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "estimator": vars(self.estimator).copy(),
            "thresholds": {str(b): (None if t is None else list(t.deltas))
                           for b, t in self.thresholds.items()},
            "layers": [l.spec() for l in self.layers],
        }


def resolve_thresholds(bits_list, ternary_delta=None, pow2_thresholds=None):
    out = {}
    for bits in sorted(set(bits_list)):
        cb = build_codebook(bits)
        given = None
        if bits == 2 and ternary_delta is not None:
            given = ThresholdSet((ternary_delta,))
        elif bits == 3 and pow2_thresholds is not None:
            given = ThresholdSet(tuple(pow2_thresholds))
        out[bits] = check_thresholds(cb, given)
    return out


def from_spec(spec, dtype=DTYPE):
    """Rebuild a model (fresh parameters) from ``Model.spec()`` output."""
    est = EstimatorConfig(**spec["estimator"])
    thresholds = {int(b): (None if t is None else ThresholdSet(tuple(t)))
                  for b, t in spec["thresholds"].items()}
    layers = []
    for ls in spec["layers"]:
        args = dict(ls)
        kind = args.pop("kind")
        cls = LAYER_TYPES.get(kind)
        if cls is None:
            raise ConfigError(f"unknown layer kind {kind!r}")
        if cls in (QDense, QConv2d):
            args.update(estimator=est, thresholds=thresholds[args["bits_w"]], dtype=dtype)
        elif cls is QAct:
            args.update(estimator=est, thresholds=thresholds[args["bits_a"]])
        elif cls is BatchNorm:
            args.update(dtype=dtype)
        layers.append(cls(**args))
    return Model(layers, spec["bits_w"], spec["bits_a"], est, thresholds,
                 spec["input_shape"], spec["num_classes"], spec.get("preset", "custom"))


def build_model(preset, input_shape, num_classes, bits_w=1, bits_a=1,
                estimator=EstimatorConfig(), seed=0, hidden=64, width_scale=1.0,
                ternary_delta=None, pow2_thresholds=None, dtype=DTYPE):
    """Assemble a preset network.

    Every quantized layer except the last is followed by
    ``[pool]-BN-HardTanh-QAct``; the head is ``QDense-BN`` producing logits.
    """
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown value {preset!r}, expected one of {PRESETS}")
    thresholds = resolve_thresholds([bits_w, bits_a], ternary_delta, pow2_thresholds)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4D494E57]))
    tw, ta = thresholds[bits_w], thresholds[bits_a]
    common = dict(bits_w=bits_w, estimator=estimator, thresholds=tw, rng=rng, dtype=dtype)
    layers = []
    n = {"conv": 0, "fc": 0, "bn": 0}

    def closing(channels, pool=False):
        n["bn"] += 1
        i = n["bn"]
        if pool:
            layers.append(Pool(f"pool{i}", 2))
        layers.extend([BatchNorm(f"bn{i}", channels, dtype=dtype), HardTanh(f"ht{i}"),
                       QAct(f"act{i}", bits_a, estimator, ta)])

    def dense(n_in, n_out, first=False):
        n["fc"] += 1
        layers.append(QDense(f"fc{n['fc']}", n_in, n_out, quantize_input=not first, **common))

    if preset == "tiny":
        n_in = int(np.prod(input_shape))
        dense(n_in, hidden, first=True)
        closing(hidden)
    else:
        if len(input_shape) != 3:
            raise ConfigError(f"preset {preset} needs C×H×W input, got {input_shape}")
        c, h, w = input_shape
        if h % 8 or w % 8:
            raise ConfigError(f"preset {preset} needs H and W divisible by 8, got {h}×{w}")
        convs, fc = _CONVNET_WIDTHS[preset]
        convs = [max(1, int(round(v * width_scale))) for v in convs]
        fc = max(1, int(round(fc * width_scale)))
        c_prev = c
        for stage, width in enumerate(convs):
            for j in range(2):
                n["conv"] += 1
                first = stage == 0 and j == 0
                layers.append(QConv2d(f"conv{n['conv']}", c_prev, width, 3, 1, 1,
                                      quantize_input=not first, **common))
                closing(width, pool=j == 1)
                c_prev = width
        layers.append(Flatten("flatten"))
        dense(c_prev * (h // 8) * (w // 8), fc)
        closing(fc)
        dense(fc, fc)
        closing(fc)
        hidden = fc
    dense(hidden, num_classes)
    n["bn"] += 1
    layers.append(BatchNorm(f"bn{n['bn']}", num_classes, dtype=dtype))
    return Model(layers, bits_w, bits_a, estimator, thresholds, input_shape,
                 num_classes, preset)


@dataclass
class Trace:
    """What a forward pass leaves behind for the backward pass."""

    phase: str
    version: int
    caches: list = field(default_factory=list)
    activations: dict = field(default_factory=dict)


def forward_pass(model, batch, phase, noise=None):
    batch = np.asarray(batch)
    if batch.shape[1:] != model.input_shape and batch[0].size != int(np.prod(model.input_shape)):
        raise DimensionError(
            f"batch shape {batch.shape} does not match model input {model.input_shape}"
        )
    trace = Trace(phase, model.version)
    x = batch
    for layer in model.layers:
        if isinstance(layer, QAct):
            trace.activations[layer.name] = x
        x, cache = layer.forward(x, phase, noise)
        trace.caches.append(cache)
    return trace, x


def backward_pass(model, trace, g_logits, estimator=None):
    """Gradients for every parameter, keyed ``"layer.param"``.

    ``estimator`` overrides each layer's estimator for the gates, e.g. to
    replay a trace under the STE.
    """
    if trace.phase != "train":
        raise StateError("backward needs a trace from a train-phase forward pass")
    if trace.version != model.version:
        raise StateError(
            f"stale trace: recorded at model version {trace.version}, model is at {model.version}"
        )
    grads = {}
    g = g_logits
    for layer, cache in zip(reversed(model.layers), reversed(trace.caches)):
        g, layer_grads = layer.backward(g, cache, estimator)
        for pname, value in layer_grads.items():
            grads[f"{layer.name}.{pname}"] = value
    return grads
