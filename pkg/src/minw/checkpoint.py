"""Checkpoint file format.

Layout (all integers little-endian)::

    b"MINW" | u32 version | u64 header length | JSON header | float32 payload

The header carries the model topology, estimator and threshold settings,
the run config and a manifest of payload arrays in declared order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import from_spec

MAGIC = b"MINW"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(model, path, config=None, extra=None):
    arrays = model.state_arrays()
    header = {
        "model": model.spec(),
        "config": config or {},
        "extra": extra or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.asarray(a, dtype="<f4").tobytes() for _, a in arrays)
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload)


def read_header(raw, path="<bytes>"):
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    end = _PREFIX.size + hlen
    if end > len(raw):
        raise FormatError(f"{path}: header runs past end of file at offset {len(raw)}")
    try:
        header = json.loads(raw[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    return header, end


def load_checkpoint(path):
    """Return ``(model, header)``."""
    raw = Path(path).read_bytes()
    header, offset = read_header(raw, path)
    try:
        model = from_spec(header["model"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model spec: {exc}") from exc
    targets = dict(model.state_arrays())
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        target = targets.get(name)
        if target is None or target.shape != shape:
            raise FormatError(f"{path}: array {name} {shape} does not fit the model")
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: payload truncated at byte offset {len(raw)} "
                              f"while reading {name}")
        target[...] = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)),
                                    offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return model, header
