"""Export trained models to bit planes and run them with integer kernels.

Packed file layout (integers little-endian)::

    b"MINP" | u32 version | u64 manifest length | JSON manifest | payload

The payload holds each layer's planes as uint64 words, then its float32
arrays (folded batch-norm scale/shift), in manifest order.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitops import BitPlaneTensor, inference_operation, pack_tensor, packed_matmul, unpack_tensor
from .errors import ConfigError, FormatError
from .layers import BatchNorm, Flatten, HardTanh, Pool, QAct, QConv2d, QDense, apply_affine, hardtanh
from .quantizers import ThresholdSet, build_codebook, quantize
from .tensor import DTYPE, conv2d, im2col, pool2d

MAGIC = b"MINP"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
PLANE_NAMES = ("sign", "mask", "shift_lo", "shift_hi")


@dataclass
class PackedLayer:
    kind: str
    name: str
    meta: dict = field(default_factory=dict)
    weight: BitPlaneTensor = None
    floats: dict = field(default_factory=dict)


@dataclass
class PackedModel:
    bits_w: int
    bits_a: int
    input_shape: tuple
    num_classes: int
    layers: list
    extra: dict = field(default_factory=dict)

    @property
    def operation(self):
        return inference_operation(self.bits_w, self.bits_a)

    def layer_operations(self):
        """``(layer name, operation label)`` for every weight layer."""
        out = []
        for pl in self.layers:
            if pl.kind in ("qconv", "qdense"):
                bits_in = pl.meta["bits_in"]
                if bits_in is None:
                    base = "SHIFT" if pl.weight.bits == 3 else "XNOR"
                    out.append((pl.name, f"{base} ADDER"))
                else:
                    out.append((pl.name, inference_operation(pl.weight.bits, bits_in)[0]))
        return out


def export_model(model, extra=None):
    """Fold batch norm, quantize and pack every weight layer.

    ``extra`` is free-form JSON-serializable metadata kept in the manifest.
    """
    layers = []
    bits_in = None
    thresholds = {}
    for layer in model.layers:
        if isinstance(layer, (QConv2d, QDense)):
            wq = layer.quantized_weight()
            if isinstance(layer, QConv2d):
                rows = wq.reshape(layer.c_out, -1)
                meta = {"c_in": layer.c_in, "c_out": layer.c_out, "k": layer.k,
                        "stride": layer.stride, "pad": layer.pad}
            else:
                rows = wq.T
                meta = {"n_in": layer.n_in, "n_out": layer.n_out}
            meta["bits_in"] = bits_in if layer.quantize_input else None
            layers.append(PackedLayer(layer.kind, layer.name, meta,
                                      pack_tensor(np.ascontiguousarray(rows), layer.cb_w)))
        elif isinstance(layer, BatchNorm):
            scale, shift = layer.affine()
            layers.append(PackedLayer("affine", layer.name,
                                      floats={"scale": scale.copy(), "shift": shift.copy()}))
        elif isinstance(layer, QAct):
            bits_in = layer.bits_a
            t = None if layer.thresholds is None else list(layer.thresholds.deltas)
            layers.append(PackedLayer("qact", layer.name, {"bits": layer.bits_a, "thresholds": t}))
        elif isinstance(layer, Pool):
            layers.append(PackedLayer("pool", layer.name, {"window": layer.window,
                                                           "stride": layer.stride,
                                                           "mode": layer.mode}))
        elif isinstance(layer, (HardTanh, Flatten)):
            layers.append(PackedLayer(layer.kind, layer.name))
        else:
            raise ConfigError(f"cannot export layer kind {layer.kind!r}")
    return PackedModel(model.bits_w, model.bits_a, tuple(model.input_shape),
                       model.num_classes, layers, dict(extra or {}))


def _pack_activations(x, bits, pad):
    # zero padding is not a 1-bit level, so padded 1-bit patches carry a mask plane
    if bits == 1 and pad:
        bits = 2
    return pack_tensor(x, build_codebook(bits))


def _weight_layer(pl, x):
    w = unpack_tensor(pl.weight, DTYPE)
    bits_in = pl.meta["bits_in"]
    if pl.kind == "qconv":
        m = pl.meta
        if bits_in is None:
            kernel = w.reshape(m["c_out"], m["c_in"], m["k"], m["k"])
            return conv2d(x, kernel, m["stride"], m["pad"])
        cols, (n, ho, wo) = im2col(x, m["k"], m["k"], m["stride"], m["pad"])
        acc = packed_matmul(_pack_activations(cols, bits_in, m["pad"]), pl.weight)
        out = acc.astype(DTYPE).reshape(n, ho, wo, m["c_out"]).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out)
    x2 = x.reshape(x.shape[0], -1)
    if bits_in is None:
        return x2 @ np.ascontiguousarray(w.T)
    return packed_matmul(_pack_activations(x2, bits_in, 0), pl.weight).astype(DTYPE)


def packed_infer(pm, batch):
    """Logits for ``batch``. Quantized layers run on the bit-plane kernels."""
    x = np.ascontiguousarray(batch, dtype=DTYPE)
    for pl in pm.layers:
        if pl.kind in ("qconv", "qdense"):
            x = _weight_layer(pl, x)
        elif pl.kind == "affine":
            x = apply_affine(x, pl.floats["scale"], pl.floats["shift"])
        elif pl.kind == "hardtanh":
            x = hardtanh(x)
        elif pl.kind == "pool":
            x = pool2d(x, pl.meta["window"], pl.meta["stride"], pl.meta["mode"])
        elif pl.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif pl.kind == "qact":
            t = pl.meta["thresholds"]
            x = quantize(x, build_codebook(pl.meta["bits"]),
                         None if t is None else ThresholdSet(tuple(t)))
        else:
            raise ConfigError(f"unknown packed layer kind {pl.kind!r}")
    return x


def packed_evaluate(pm, data, batch_size=1000):
    from .data import batch_stream
    from .layers import softmax_cross_entropy

    correct = total_loss = 0.0
    for x, y in batch_stream(data, batch_size, "infer"):
        logits = packed_infer(pm, x)
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += np.count_nonzero(logits.argmax(axis=1) == y)
    n = max(len(data), 1)
    return correct / n, total_loss / n


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def save_packed(pm, path):
    manifest_layers, chunks = [], []
    for pl in pm.layers:
        entry = {"kind": pl.kind, "name": pl.name, "meta": pl.meta, "planes": [], "floats": []}
        if pl.weight is not None:
            entry["weight"] = {"shape": list(pl.weight.shape), "bits": pl.weight.bits,
                               "valid_bits": pl.weight.n}
            for pname, words in pl.weight.planes().items():
                entry["planes"].append({"name": pname, "words": int(words.size)})
                chunks.append(np.asarray(words, dtype="<u8").tobytes())
        for fname, arr in pl.floats.items():
            entry["floats"].append({"name": fname, "count": int(arr.size)})
            chunks.append(np.asarray(arr, dtype="<f4").tobytes())
        manifest_layers.append(entry)
    manifest = {"bits_w": pm.bits_w, "bits_a": pm.bits_a,
                "input_shape": list(pm.input_shape), "num_classes": pm.num_classes,
                "layers": manifest_layers, "extra": pm.extra}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks))


def is_packed_file(path):
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


class _Reader:
    """Sequential little-endian reads over the payload with bounds checks."""

    def __init__(self, raw, offset, path):
        self.raw, self.offset, self.path = raw, offset, path

    def take(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.raw):
            raise FormatError(f"{self.path}: payload truncated at byte offset {len(self.raw)}")
        arr = np.frombuffer(self.raw, dtype=dtype, count=count, offset=self.offset).copy()
        self.offset += size
        return arr


def _read_layer(entry, reader):
    pl = PackedLayer(entry["kind"], entry["name"], entry["meta"])
    if "weight" in entry:
        shape = tuple(entry["weight"]["shape"])
        planes = {}
        for p in entry["planes"]:
            if p["name"] not in PLANE_NAMES:
                raise FormatError(f"{reader.path}: unknown plane {p['name']!r}")
            words = reader.take("<u8", p["words"]).astype(np.uint64)
            planes[p["name"]] = words.reshape(shape[:-1] + (-1,))
        pl.weight = BitPlaneTensor(shape, entry["weight"]["bits"], **planes)
    for f in entry["floats"]:
        pl.floats[f["name"]] = reader.take("<f4", f["count"]).astype(DTYPE)
    return pl


def load_packed(path):
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a packed model")
    magic, version, mlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported packed-model version {version}")
    end = _PREFIX.size + mlen
    try:
        manifest = json.loads(raw[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    reader = _Reader(raw, end, path)
    try:
        layers = [_read_layer(entry, reader) for entry in manifest["layers"]]
        pm = PackedModel(manifest["bits_w"], manifest["bits_a"], tuple(manifest["input_shape"]),
                         manifest["num_classes"], layers, manifest.get("extra", {}))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest: {exc}") from exc
    if reader.offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - reader.offset} trailing bytes after payload")
    return pm
