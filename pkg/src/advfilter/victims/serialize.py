"""Model files: a JSON manifest next to a flat float32 little-endian blob.

``<stem>.json`` holds the architecture descriptor, K, C, T, the seed, the
ordered parameter table (name + shape) and the blob byte length;
``<stem>.bin`` holds the parameters concatenated in that order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from advfilter.eegdata.io import atomic_write_bytes
from advfilter.errors import FormatError
from advfilter.victims.cnn import CompactCnn
from advfilter.victims.spatial import SpatialFeatureModel

SCHEMA = "advfilter.model/1"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def encode_model(model) -> tuple[dict, bytes]:
    arrays = model.state()
    blob = b"".join(np.asarray(a, dtype="<f4").tobytes(order="C") for _, a in arrays)
    manifest = {
        "schema": SCHEMA,
        "architecture": model.descriptor(),
        "K": model.n_classes,
        "C": model.n_channels,
        "T": model.n_samples,
        "seed": model.seed,
        "parameters": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays],
        "blob_bytes": len(blob),
    }
    return manifest, blob


def decode_model(manifest: dict, blob: bytes, path=None):
    if manifest.get("schema") != SCHEMA:
        raise FormatError(f"unknown model schema {manifest.get('schema')!r}", 0, path)
    try:
        desc = manifest["architecture"]
        table = [(p["name"], tuple(int(d) for d in p["shape"])) for p in manifest["parameters"]]
        declared = int(manifest["blob_bytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model manifest: {exc}", 0, path) from None
    expected = 4 * sum(int(np.prod(s)) for _, s in table)
    if declared != expected:
        raise FormatError(f"manifest declares {declared} blob bytes but parameters need {expected}", 0, path)
    if len(blob) != declared:
        raise FormatError(f"blob has {len(blob)} bytes, manifest declares {declared}", min(len(blob), declared), path)
    arrays, off = {}, 0
    for name, shape in table:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise FormatError("non-finite parameter values", 0, path)
    family = desc.get("family")
    if family == "cnn":
        cls = CompactCnn
    elif family == "spatial":
        cls = SpatialFeatureModel
    else:
        raise FormatError(f"unknown model family {family!r}", 0, path)
    try:
        model = cls.from_state(desc, arrays)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"parameters do not match architecture: {exc}", 0, path) from None
    if [(n, tuple(s)) for n, s in model.state_shapes()] != table:
        raise FormatError("parameter table does not match the architecture", 0, path)
    return model


def save_model(model, path) -> tuple[Path, Path]:
    mpath, bpath = _paths(path)
    manifest, blob = encode_model(model)
    atomic_write_bytes(bpath, blob)
    atomic_write_bytes(mpath, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return mpath, bpath


def load_model(path):
    mpath, bpath = _paths(path)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc.msg}", exc.pos, mpath) from None
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object", 0, mpath)
    return decode_model(manifest, bpath.read_bytes(), bpath)
