"""ETRC binary trial files and CSV ingestion.

ETRC layout (little-endian)::

    magic "ETRC" | version u16 (=1) | C u16 | T u32 | fs f32 | K u16 | N u32
    N x { label u16 | subject u16 | C*T f32, channel-major }
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from advfilter.eegdata.types import EegDataset
from advfilter.errors import FormatError

MAGIC = b"ETRC"
VERSION = 1
_HEADER = struct.Struct("<4sHHIfHI")
_RECORD_HEAD = struct.Struct("<HH")
MANIFEST_COLUMNS = ("file", "label", "subject", "fs")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_etrc(ds: EegDataset) -> bytes:
    N, C, T = ds.X.shape
    if N == 0:
        raise FormatError("refusing to encode an empty dataset")
    if C > 0xFFFF or ds.n_classes > 0xFFFF or ds.subjects.max() > 0xFFFF or ds.subjects.min() < 0:
        raise FormatError("channel count, class count or subject id exceeds u16 range")
    parts = [_HEADER.pack(MAGIC, VERSION, C, T, ds.fs, ds.n_classes, N)]
    block = ds.X.astype("<f4")
    for i in range(N):
        parts.append(_RECORD_HEAD.pack(int(ds.y[i]), int(ds.subjects[i])))
        parts.append(block[i].tobytes(order="C"))
    return b"".join(parts)


def decode_etrc(buf: bytes, name: str = "dataset", path=None) -> EegDataset:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf), path)
    magic, version, C, T, fs, K, N = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4, path)
    if C == 0 or T == 0:
        raise FormatError(f"inconsistent shape C={C}, T={T}", 6, path)
    if not np.isfinite(fs) or fs <= 0:
        raise FormatError(f"invalid sampling rate {fs}", 12, path)
    if K == 0:
        raise FormatError("class count is zero", 16, path)
    if N == 0:
        raise FormatError("empty trial list", 18, path)
    rec = _RECORD_HEAD.size + 4 * C * T
    expected = _HEADER.size + N * rec
    if len(buf) < expected:
        done = (len(buf) - _HEADER.size) // rec
        raise FormatError(f"truncated in trial {done} of {N}", _HEADER.size + done * rec, path)
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after {N} trials", expected, path)
    X = np.empty((N, C, T), dtype=np.float32)
    y = np.empty(N, dtype=np.int64)
    s = np.empty(N, dtype=np.int64)
    for i in range(N):
        off = _HEADER.size + i * rec
        y[i], s[i] = _RECORD_HEAD.unpack_from(buf, off)
        if y[i] >= K:
            raise FormatError(f"label {y[i]} of trial {i} not below K={K}", off, path)
        X[i] = np.frombuffer(buf, dtype="<f4", count=C * T, offset=off + _RECORD_HEAD.size).reshape(C, T)
    if not np.all(np.isfinite(X)):
        raise FormatError("non-finite sample values", _HEADER.size, path)
    ds = EegDataset(X.astype(np.float64), y, s, K, float(fs), name)
    missing = [k for k, n in enumerate(ds.class_counts()) if n == 0]
    if missing:
        raise FormatError(f"classes {missing} have no trials", _HEADER.size, path)
    return ds


def save_dataset(ds: EegDataset, path) -> None:
    atomic_write_bytes(path, encode_etrc(ds))


def load_dataset(path, name: str | None = None) -> EegDataset:
    path = Path(path)
    return decode_etrc(path.read_bytes(), name or path.stem, path)


def _f32_str(v) -> str:
    return str(np.float32(v))


def export_csv(ds: EegDataset, directory) -> Path:
    """Write one CSV per trial plus ``manifest.csv``; values are float32-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    X = ds.X.astype(np.float32)
    rows = []
    for i in range(len(ds)):
        fname = f"trial_{i:05d}.csv"
        lines = [",".join(_f32_str(v) for v in row) for row in X[i]]
        (directory / fname).write_text("\n".join(lines) + "\n")
        rows.append((fname, int(ds.y[i]), int(ds.subjects[i]), _f32_str(ds.fs)))
    with open(directory / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    return directory / "manifest.csv"


def _read_trial_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError("non-numeric value", lineno, path) from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(f"row has {len(rows[-1])} values, expected {len(rows[0])}", lineno, path)
    if not rows:
        raise FormatError("empty trial file", 0, path)
    return np.array(rows, dtype=np.float64)


def import_csv(directory, manifest: str = "manifest.csv", n_classes: int | None = None,
               name: str | None = None) -> EegDataset:
    """Build a dataset from a directory of per-trial CSVs and a manifest.

    Offsets in errors are line numbers for CSV files.
    """
    directory = Path(directory)
    mpath = directory / manifest
    with open(mpath, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in MANIFEST_COLUMNS:
            if col not in header:
                raise FormatError(f"manifest is missing column {col!r}", 1, mpath)
        entries = list(reader)
    if not entries:
        raise FormatError("manifest lists no trials", 2, mpath)
    X, y, s, rates = [], [], [], set()
    for lineno, row in enumerate(entries, start=2):
        try:
            label, subject, fs = int(row["label"]), int(row["subject"]), float(row["fs"])
        except (TypeError, ValueError):
            raise FormatError("bad label/subject/fs value", lineno, mpath) from None
        data = _read_trial_csv(directory / row["file"])
        if X and data.shape != X[0].shape:
            raise FormatError(f"trial shape {data.shape} differs from {X[0].shape}", lineno, mpath)
        X.append(data)
        y.append(label)
        s.append(subject)
        rates.add(fs)
    if len(rates) != 1:
        raise FormatError(f"mixed sampling rates {sorted(rates)}", 2, mpath)
    K = n_classes if n_classes is not None else max(y) + 1
    if min(y) < 0 or max(y) >= K:
        raise FormatError(f"labels outside [0, {K})", 2, mpath)
    ds = EegDataset(np.stack(X), np.array(y), np.array(s), K, rates.pop(), name or directory.name)
    missing = [k for k, n in enumerate(ds.class_counts()) if n == 0]
    if missing:
        raise FormatError(f"classes {missing} have no trials", 2, mpath)
    return ds
