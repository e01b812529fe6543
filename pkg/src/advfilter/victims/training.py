from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field

import numpy as np

from advfilter import gradcore as gc
from advfilter.eegdata.types import EegDataset
from advfilter.errors import ConfigError, DimensionError, NumericalError, TrainingError
from advfilter.victims.cnn import CnnArch, CompactCnn
from advfilter.victims.spatial import SpatialFeatureModel


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.weight_decay < 0 or self.patience < 0:
            raise ConfigError(f"invalid training config {self}")


@dataclass(frozen=True)
class ModelSpec:
    """What to build: ``cnn`` (with an architecture) or ``csp`` / ``xdawn``."""

    kind: str = "cnn"
    arch: CnnArch = field(default_factory=CnnArch)
    n_filters: int = 4
    target_class: int = 1
    head_lr: float = 1e-2

    def __post_init__(self):
        if self.kind not in ("cnn", "csp", "xdawn"):
            raise ConfigError(f"unknown model kind {self.kind!r}")

    @property
    def label(self) -> str:
        return f"cnn-{self.arch.preset}" if self.kind == "cnn" else f"{self.kind}+lr"


def build_model(spec: ModelSpec, ds: EegDataset, seed: int):
    """Construct a model at initialization; spatial models fit their projection here."""
    if spec.kind == "cnn":
        return CompactCnn(ds.n_channels, ds.n_samples, ds.n_classes, spec.arch, seed=seed)
    n_filters = spec.n_filters
    if spec.kind == "csp" and ds.n_classes > 2:
        n_filters = max(n_filters // ds.n_classes, 1) * ds.n_classes
    return SpatialFeatureModel.from_data(spec.kind, ds.X, ds.y, ds.n_classes, n_filters, seed=seed,
                                         target_class=spec.target_class)


def fit_model(spec: ModelSpec, ds: EegDataset, cfg: TrainConfig, validation: EegDataset | None = None):
    model = build_model(spec, ds, cfg.seed)
    if spec.kind != "cnn":
        cfg = TrainConfig(cfg.epochs, cfg.batch_size, spec.head_lr, cfg.weight_decay, cfg.seed, cfg.patience)
    trace = train(model, ds, cfg, validation)
    return model, trace


def _quantize(model) -> None:
    for p in model.parameters():
        p.data = p.data.astype(np.float32).astype(np.float64)


def _dataset_loss(model, X, y, batch=256) -> float:
    total = 0.0
    for i in range(0, len(y), batch):
        total += gc.softmax_cross_entropy(model.logits(X[i : i + batch]), y[i : i + batch]).item() * len(y[i : i + batch])
    return total / len(y)


@contextlib.contextmanager
def frozen(model):
    """Temporarily stop gradient tracking for the model's parameters."""
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def train(model, ds: EegDataset, cfg: TrainConfig = TrainConfig(), validation: EegDataset | None = None) -> list[float]:
    """Minimize cross-entropy with Adam, in place.

    Returns the loss trace: entry 0 is the training loss at initialization,
    then one mean mini-batch loss per epoch. With a validation set and
    ``patience > 0`` training stops once the validation loss has not improved
    for ``patience`` epochs and the best parameters are restored. Parameters
    are rounded to float32 at the end so serialization is exact.
    """
    if ds.n_classes != model.n_classes:
        raise DimensionError(f"dataset has K={ds.n_classes}, model expects K={model.n_classes}")
    rng = np.random.default_rng([cfg.seed, 7])
    X, y = ds.X, ds.y
    params = model.parameters()
    opt = gc.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    try:
        trace = [_dataset_loss(model, X, y)]
    except NumericalError as exc:
        raise TrainingError(str(exc), 0) from None
    best, best_state, stale = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        losses = []
        try:
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i : i + cfg.batch_size]
                loss = gc.softmax_cross_entropy(model.logits(X[idx]), y[idx])
                gc.backward(loss)
                opt.step()
                losses.append(loss.item() * len(idx))
        except NumericalError as exc:
            raise TrainingError(f"training diverged: {exc}", epoch) from None
        trace.append(float(np.sum(losses) / len(y)))
        if not np.isfinite(trace[-1]):
            raise TrainingError("non-finite training loss", epoch)
        if validation is not None and cfg.patience > 0:
            vloss = _dataset_loss(model, validation.X, validation.y)
            if vloss < best - 1e-12:
                best, stale = vloss, 0
                best_state = [p.data.copy() for p in params]
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.data = v
    gc.zero_grad(params)
    _quantize(model)
    return trace


def predict_proba(model, X: np.ndarray, batch: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    with frozen(model):
        out = [gc.softmax(model.logits(X[i : i + batch]).data) for i in range(0, X.shape[0], batch)]
    return np.concatenate(out, axis=0)


def predict(model, X: np.ndarray) -> np.ndarray:
    """Argmax class; ties go to the lower index (numpy argmax semantics)."""
    return np.argmax(predict_proba(model, X), axis=1)


def parameter_hash(model) -> str:
    h = hashlib.sha256()
    for name, arr in model.state():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()
