"""Attack metrics (BCA, ASR, RMSE distortion) and report containers."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from advfilter.errors import DimensionError, FormatError, UndefinedClassError

CSV_COLUMNS = ("scenario", "dataset", "model", "condition", "repeat", "bca", "asr", "rmse", "alpha", "seed", "subject")


def _as_labels(a, name):
    a = np.asarray(a).reshape(-1)
    if a.size and not np.issubdtype(a.dtype, np.integer):
        if not np.all(a == np.round(a)):
            raise DimensionError(f"{name} must be integer class indices")
        a = a.astype(np.int64)
    return a


def per_class_accuracy(predictions, labels, K: int) -> np.ndarray:
    p, y = _as_labels(predictions, "predictions"), _as_labels(labels, "labels")
    if p.shape != y.shape:
        raise DimensionError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    acc = np.empty(K)
    for k in range(K):
        mask = y == k
        if not mask.any():
            raise UndefinedClassError(f"class {k} has no samples; per-class accuracy is undefined")
        acc[k] = np.mean(p[mask] == k)
    return acc


def bca(predictions, labels, K: int) -> float:
    """Balanced classification accuracy: mean of the K within-class accuracies."""
    return float(np.mean(per_class_accuracy(predictions, labels, K)))


def asr(keyed_predictions, labels, target: int, K: int) -> float:
    """Attack success rate: mean over non-target classes of the rate predicted as ``target``."""
    p, y = _as_labels(keyed_predictions, "predictions"), _as_labels(labels, "labels")
    if p.shape != y.shape:
        raise DimensionError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    rates = []
    for k in range(K):
        if k == target:
            continue
        mask = y == k
        if not mask.any():
            raise UndefinedClassError(f"non-target class {k} has no samples; ASR is undefined")
        rates.append(np.mean(p[mask] == target))
    if not rates:
        raise UndefinedClassError("ASR needs at least one non-target class")
    return float(np.mean(rates))


def rmse_distortion(before, after) -> tuple[float, np.ndarray]:
    """Global and per-channel RMS of (after - before) for paired (N, C, T) sets."""
    a = np.asarray(before, dtype=np.float64)
    b = np.asarray(after, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"paired sets differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    d2 = (b - a) ** 2
    per_channel = np.sqrt(d2.mean(axis=(0, 2)))
    return float(np.sqrt(d2.mean())), per_channel


def transferability_matrix(models: Sequence, filters: Sequence[np.ndarray], X: np.ndarray, y: np.ndarray,
                           K: int, predict_fn=None) -> np.ndarray:
    """Entry (g, v): BCA of ``models[v]`` on ``X`` filtered by ``filters[g]``."""
    if predict_fn is None:
        from advfilter.victims.training import predict as predict_fn
    shapes = {(m.n_channels, m.n_samples, m.n_classes) for m in models}
    if len(shapes) != 1:
        raise DimensionError(f"models disagree on (C, T, K): {sorted(shapes)}")
    out = np.empty((len(filters), len(models)))
    for g, W in enumerate(filters):
        Xf = np.asarray(W) @ X
        for v, m in enumerate(models):
            out[g, v] = bca(predict_fn(m, Xf), y, K)
    return out


# -- reports ---------------------------------------------------------------

@dataclass
class ReportRow:
    scenario: str
    dataset: str
    model: str
    condition: str
    repeat: int
    bca: float | None = None
    asr: float | None = None
    rmse: float | None = None
    alpha: float | None = None
    seed: int = 0
    subject: int | None = None
    per_channel_rmse: list[float] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("bca", "asr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class AttackReport:
    scenario: str
    config_hash: str = ""
    seeds: list[int] = field(default_factory=list)
    rows: list[ReportRow] = field(default_factory=list)
    alpha_traces: dict[str, list[dict]] = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **kw) -> ReportRow:
        row = ReportRow(scenario=kw.pop("scenario", self.scenario), **kw)
        self.rows.append(row)
        return row

    def extend(self, other: "AttackReport") -> None:
        self.rows.extend(other.rows)
        self.alpha_traces.update(other.alpha_traces)
        self.errors.extend(other.errors)
        self.seeds.extend(s for s in other.seeds if s not in self.seeds)

    def sort(self) -> None:
        def key(r):
            return (r.scenario, r.dataset, r.model, r.condition, r.repeat, -1 if r.subject is None else r.subject)

        self.rows.sort(key=key)

    def summary(self) -> list[dict]:
        """Mean/std per (dataset, model, condition) over repeats (repeat-level rows averaged first)."""
        groups: dict[tuple, dict[int, list[ReportRow]]] = {}
        for r in self.rows:
            groups.setdefault((r.scenario, r.dataset, r.model, r.condition), {}).setdefault(r.repeat, []).append(r)
        out = []
        for key, by_rep in groups.items():
            entry = dict(zip(("scenario", "dataset", "model", "condition"), key), repeats=len(by_rep))
            for metric in ("bca", "asr", "rmse"):
                vals = []
                for rows in by_rep.values():
                    xs = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
                    if xs:
                        vals.append(float(np.mean(xs)))
                if vals:
                    entry[f"{metric}_mean"] = float(np.mean(vals))
                    entry[f"{metric}_std"] = float(np.std(vals))
            out.append(entry)
        return out

    # serialization
    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "rows": [asdict(r) for r in self.rows],
            "alpha_traces": self.alpha_traces,
            "errors": self.errors,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        try:
            rows = [ReportRow(**r) for r in d["rows"]]
            return cls(d["scenario"], d.get("config_hash", ""), list(d.get("seeds", [])), rows,
                       d.get("alpha_traces", {}), d.get("errors", []), d.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed report: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_csv_cell(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _parse_cell(col: str, s: str):
    if s == "":
        return None
    if col in ("repeat", "seed", "subject"):
        return int(s)
    if col in ("bca", "asr", "rmse", "alpha"):
        return float(s)
    return s


def rows_from_csv(text: str, path=None) -> list[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty report CSV", 0, path) from None
    for col in CSV_COLUMNS:
        if col not in header:
            raise FormatError(f"report CSV is missing column {col!r}", 1, path)
    pos = {c: header.index(c) for c in CSV_COLUMNS}
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(rec)}", lineno, path)
        try:
            rows.append(ReportRow(**{c: _parse_cell(c, rec[pos[c]]) for c in CSV_COLUMNS}))
        except ValueError as exc:
            raise FormatError(f"bad value: {exc}", lineno, path) from None
    return rows


def save_report(report: AttackReport, out_dir, stem: str) -> tuple[Path, Path]:
    from advfilter.eegdata.io import atomic_write_bytes

    out_dir = Path(out_dir)
    jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
    atomic_write_bytes(jpath, report.to_json().encode())
    atomic_write_bytes(cpath, report.to_csv().encode())
    return jpath, cpath


def load_report(path) -> AttackReport:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"report is not valid JSON: {exc.msg}", exc.pos, path) from None
    if not isinstance(d, dict):
        raise FormatError("report must be a JSON object", 0, path)
    return AttackReport.from_dict(d)


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
