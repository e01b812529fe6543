"""Adversarial spatial filters: universal evasion filters and backdoor keys.

A spatial filter is a C x C matrix W applied to every time sample of a
trial, x -> W x. Evasion searches W that pushes a fixed classifier to
chance while keeping W x close to x; the backdoor attack uses a random W
as the trigger when poisoning a training set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from advfilter import gradcore as gc
from advfilter.eegdata.io import atomic_write_bytes
from advfilter.eegdata.types import EegDataset, EegTrial
from advfilter.errors import ConfigError, DimensionError, FormatError
from advfilter.metrics import AttackReport, asr, bca
from advfilter.victims.training import ModelSpec, TrainConfig, fit_model, frozen, predict

PROVENANCES = ("adversarial", "backdoor-key", "noisy-baseline", "identity")


@dataclass
class SpatialFilter:
    W: np.ndarray
    provenance: str = "identity"
    seed: int | None = None
    alpha: float | None = None
    accepted: bool | None = None

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionError(f"spatial filter must be square, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise DimensionError("spatial filter has non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "identity" and not np.array_equal(W, np.eye(W.shape[0])):
            raise ConfigError("identity provenance requires W == I")
        self.W = W

    @classmethod
    def identity(cls, C: int) -> "SpatialFilter":
        return cls(np.eye(C), "identity")

    @property
    def n_channels(self) -> int:
        return self.W.shape[0]


def _matrix(f) -> np.ndarray:
    return f.W if isinstance(f, SpatialFilter) else np.asarray(f, dtype=np.float64)


def apply(f, x):
    """Filter a trial, a dataset, a (C, T) matrix or a (N, C, T) stack."""
    W = _matrix(f)
    if isinstance(x, EegTrial):
        return x.replace(data=apply(W, x.data))
    if isinstance(x, EegDataset):
        return x.with_data(apply(W, x.X))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2] != W.shape[1]:
        raise DimensionError(f"filter {W.shape} cannot be applied to data of shape {x.shape}")
    return W @ x


def gaussian_std(value: float, as_variance: bool) -> float:
    return math.sqrt(value) if as_variance else value


# -- evasion ---------------------------------------------------------------

@dataclass(frozen=True)
class EvasionConfig:
    steps: int = 10  # binary-search iterations
    epochs: int = 50  # optimization epochs per iteration
    alpha0: float = 100.0
    alpha_max: float = 1e5
    lr: float = 1e-2
    batch_size: int = 32
    init_std: float = 0.01
    init_is_variance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.epochs < 1 or self.alpha0 <= 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError(f"invalid evasion config {self}")


def evasion_objective(W: gc.Tensor, X: np.ndarray, y: np.ndarray, model, alpha: float,
                      prepared: np.ndarray | None = None) -> gc.Tensor:
    """Batch mean of -CE(model(W x), y) + alpha * MSE(W x, x)."""
    W = gc.as_tensor(W)
    X = np.asarray(X, dtype=np.float64)
    filtered = gc.matmul(W, X)
    if prepared is None:
        logits = model.logits(filtered)
    else:
        logits = model.filtered_logits(W, prepared)
    ce = gc.softmax_cross_entropy(logits, y)
    loss = gc.scale(ce, -1.0)
    if alpha:
        loss = gc.add(loss, gc.scale(gc.mse(filtered, X), alpha))
    return loss


def optimize_filter(model, X: np.ndarray, y: np.ndarray, alpha: float, cfg: EvasionConfig,
                    rng: np.random.Generator, prepared: np.ndarray | None = None) -> np.ndarray:
    """One inner run: W = I + noise, then ``cfg.epochs`` passes of Adam on the objective."""
    C = X.shape[1]
    std = gaussian_std(cfg.init_std, cfg.init_is_variance)
    W = gc.Tensor(np.eye(C) + rng.normal(scale=std, size=(C, C)), requires_grad=True)
    opt = gc.Adam([W], lr=cfg.lr)
    with frozen(model):
        if prepared is None:
            prepared = model.prepare_filtered(X)
        for _ in range(cfg.epochs):
            order = rng.permutation(len(y))
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i : i + cfg.batch_size]
                loss = evasion_objective(W, X[idx], y[idx], model, alpha, prepared[idx])
                gc.backward(loss)
                opt.step()
    return W.data.copy()


@dataclass
class EvasionResult:
    filter: SpatialFilter
    accepted: bool
    validation_bca: float
    trace: list[dict] = field(default_factory=list)


def generate_evasion_filter(train: EegDataset, validation: EegDataset, model,
                            cfg: EvasionConfig = EvasionConfig()) -> EvasionResult:
    """Binary search over the trade-off alpha for a universal adversarial filter.

    Each iteration restarts from I + noise and optimizes on ``train``; the
    filter is accepted when validation BCA drops to chance (<= 1/K). The
    accepted filter with the largest alpha is returned. If none is accepted
    the last filter comes back with ``accepted=False``.
    """
    K = model.n_classes
    chance = 1.0 / K
    # with the model frozen the temporal features never change
    with frozen(model):
        prepared = model.prepare_filtered(train.X)
    alpha, hi, lo = cfg.alpha0, cfg.alpha_max, 0.0
    best: tuple[float, np.ndarray, float] | None = None
    last: tuple[float, np.ndarray, float] | None = None
    trace = []
    for s in range(cfg.steps):
        rng = np.random.default_rng([cfg.seed, s])
        W = optimize_filter(model, train.X, train.y, alpha, cfg, rng, prepared)
        vb = bca(predict(model, W @ validation.X), validation.y, K)
        ok = vb <= chance + 1e-12
        if ok:
            if best is None or alpha >= best[0]:
                best = (alpha, W, vb)
            lo = max(lo, alpha)
        else:
            hi = min(hi, alpha)
        trace.append({"step": s, "alpha": alpha, "lower": lo, "upper": hi, "val_bca": vb, "accepted": bool(ok)})
        last = (alpha, W, vb)
        alpha = (hi + lo) / 2.0
    chosen, accepted = (best, True) if best is not None else (last, False)
    f = SpatialFilter(chosen[1], "adversarial", cfg.seed, chosen[0], accepted)
    return EvasionResult(f, accepted, chosen[2], trace)


def fixed_alpha_filter(train: EegDataset, model, alpha: float, cfg: EvasionConfig = EvasionConfig()) -> SpatialFilter:
    """A single inner optimization at a fixed alpha (no search)."""
    W = optimize_filter(model, train.X, train.y, alpha, cfg, np.random.default_rng([cfg.seed, 0]))
    return SpatialFilter(W, "adversarial", cfg.seed, alpha, None)


def make_noisy_baseline(C: int, seed: int, std: float = 0.01, as_variance: bool = False) -> SpatialFilter:
    """W = I + iid Gaussian noise."""
    if C < 1:
        raise ConfigError("C must be >= 1")
    rng = np.random.default_rng([seed, 13])
    W = np.eye(C) + rng.normal(scale=gaussian_std(std, as_variance), size=(C, C))
    return SpatialFilter(W, "noisy-baseline", seed)


# -- backdoor --------------------------------------------------------------

@dataclass(frozen=True)
class BackdoorConfig:
    target_class: int = 0
    ratio: float = 0.05
    noise_std: float = 0.05
    noise_is_variance: bool = True  # 0.05 read as a variance (std ~0.224)
    zeroed_channels: int | None = None  # default ceil(C / 2)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"poisoning ratio must be in (0, 1), got {self.ratio}")
        if self.target_class < 0 or self.noise_std < 0:
            raise ConfigError(f"invalid backdoor config {self}")


def make_backdoor_key(C: int, cfg: BackdoorConfig = BackdoorConfig()) -> SpatialFilter:
    """I + Gaussian noise whose rows for a random ceil(C/2) channels are zeroed."""
    if C < 2:
        raise ConfigError("backdoor key needs C >= 2")
    n_zero = math.ceil(C / 2) if cfg.zeroed_channels is None else cfg.zeroed_channels
    if not 0 <= n_zero <= C:
        raise ConfigError(f"cannot zero {n_zero} of {C} channels")
    rng = np.random.default_rng([cfg.seed, 17])
    noise = rng.normal(scale=gaussian_std(cfg.noise_std, cfg.noise_is_variance), size=(C, C))
    noise[rng.choice(C, size=n_zero, replace=False)] = 0.0
    return SpatialFilter(np.eye(C) + noise, "backdoor-key", cfg.seed)


def poison_count(n: int, ratio: float) -> int:
    return int(math.floor(ratio * n + 0.5))


def poison(ds: EegDataset, key, cfg: BackdoorConfig) -> tuple[EegDataset, np.ndarray]:
    """Replace round(ratio * N) random trials by (key x, target), without replacement."""
    if cfg.target_class >= ds.n_classes:
        raise ConfigError(f"target class {cfg.target_class} not below K={ds.n_classes}")
    n_p = poison_count(len(ds), cfg.ratio)
    if n_p < 1:
        raise ConfigError(f"ratio {cfg.ratio} of {len(ds)} trials rounds to zero poisoned trials")
    rng = np.random.default_rng([cfg.seed, 19])
    idx = np.sort(rng.choice(len(ds), size=n_p, replace=False))
    X = np.array(ds.X)
    y = np.array(ds.y)
    X[idx] = apply(key, ds.X[idx])
    y[idx] = cfg.target_class
    return EegDataset(X, y, ds.subjects, ds.n_classes, ds.fs, ds.name, ds.applied), idx


def keyed_asr(model, key, test: EegDataset, target: int) -> float:
    mask = test.y != target
    preds = predict(model, apply(key, test.X[mask]))
    return asr(preds, test.y[mask], target, test.n_classes)


def run_backdoor_attack(train: EegDataset, test: EegDataset, spec: ModelSpec, key, cfg: BackdoorConfig,
                        train_cfg: TrainConfig = TrainConfig(), clean_model=None,
                        report: AttackReport | None = None, repeat: int = 0) -> AttackReport:
    """Train clean and poisoned models; record clean-test BCA and keyed ASR for both.

    Pass ``clean_model`` to reuse an already trained unpoisoned model.
    """
    if report is None:
        report = AttackReport("backdoor", seeds=[cfg.seed])
    if clean_model is None:
        clean_model, _ = fit_model(spec, train, train_cfg)
    poisoned_train, idx = poison(train, key, cfg)
    bad_model, _ = fit_model(spec, poisoned_train, train_cfg)
    K = test.n_classes
    for cond, m in (("baseline", clean_model), ("backdoor", bad_model)):
        report.add(dataset=test.name, model=spec.label, condition=cond, repeat=repeat,
                   bca=bca(predict(m, test.X), test.y, K), asr=keyed_asr(m, key, test, cfg.target_class),
                   seed=cfg.seed, extra={"n_poisoned": int(len(idx))} if cond == "backdoor" else {})
    return report


# -- filter files ----------------------------------------------------------

FILTER_SCHEMA = "advfilter.filter/1"


def save_filter(f: SpatialFilter, path) -> tuple[Path, Path]:
    """``<stem>.json`` manifest plus ``<stem>.bin`` float32 little-endian C x C blob."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    mpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    manifest = {"schema": FILTER_SCHEMA, "C": f.n_channels, "provenance": f.provenance,
                "seed": f.seed, "alpha": f.alpha, "accepted": f.accepted}
    atomic_write_bytes(bpath, f.W.astype("<f4").tobytes(order="C"))
    atomic_write_bytes(mpath, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return mpath, bpath


def load_filter(path) -> SpatialFilter:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    mpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    try:
        m = json.loads(mpath.read_text())
        C = int(m["C"])
        prov = m["provenance"]
    except json.JSONDecodeError as exc:
        raise FormatError(f"filter manifest is not valid JSON: {exc.msg}", exc.pos, mpath) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed filter manifest: {exc}", 0, mpath) from None
    if m.get("schema") != FILTER_SCHEMA:
        raise FormatError(f"unknown filter schema {m.get('schema')!r}", 0, mpath)
    blob = bpath.read_bytes()
    if C < 1 or len(blob) != 4 * C * C:
        raise FormatError(f"blob has {len(blob)} bytes, expected {4 * C * C} for C={C}", min(len(blob), 4 * C * C), bpath)
    W = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(C, C)
    try:
        return SpatialFilter(W, prov, m.get("seed"), m.get("alpha"), m.get("accepted"))
    except (ConfigError, DimensionError) as exc:
        raise FormatError(f"invalid filter: {exc}", 0, bpath) from None
