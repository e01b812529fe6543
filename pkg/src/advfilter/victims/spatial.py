"""CSP / xDAWN spatial feature extractors with a multinomial logistic head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from advfilter import gradcore as gc
from advfilter.errors import ConfigError, DimensionError, NumericalError
from advfilter.victims.linalg import generalized_eigh

RIDGE = 1e-6
VAR_FLOOR = 1e-12  # keeps log-variance finite on flat projections


def trial_covariances(X: np.ndarray, normalize: bool = True) -> np.ndarray:
    Xc = X - X.mean(axis=-1, keepdims=True)
    covs = Xc @ np.swapaxes(Xc, -1, -2) / X.shape[-1]
    if normalize:
        tr = np.trace(covs, axis1=-2, axis2=-1)
        covs = covs / np.where(tr > 0, tr, 1.0)[:, None, None]
    return covs


@dataclass
class CspFit:
    projection: np.ndarray  # F x C
    eigenvalues: np.ndarray  # one per projection row
    class_covariances: list[tuple[np.ndarray, np.ndarray]]  # (target, rest) pair per eigenproblem


def fit_csp(X: np.ndarray, y: np.ndarray, n_filters: int, n_classes: int = 2, ridge: float = RIDGE) -> CspFit:
    """Common spatial patterns.

    Binary: the n_filters/2 smallest and largest generalized eigenvectors of
    (S1, S1 + S2). More classes: one-vs-rest, n_filters/K filters per class.
    Covariances are trace-normalized per trial, averaged per class and
    ridge-regularized.
    """
    C = X.shape[1]
    if n_filters < 1 or n_filters > C:
        raise ConfigError(f"n_filters must be in [1, {C}], got {n_filters}")
    covs = trial_covariances(X)
    means = []
    for k in range(n_classes):
        if not np.any(y == k):
            raise ConfigError(f"class {k} has no trials")
        means.append(covs[y == k].mean(axis=0) + ridge * np.eye(C))
    if n_classes == 2:
        if n_filters % 2:
            raise ConfigError(f"binary CSP needs an even filter count, got {n_filters}")
        problems = [(means[0], means[1], n_filters // 2, n_filters // 2)]
    else:
        if n_filters % n_classes:
            raise ConfigError(f"{n_filters} filters cannot be split over {n_classes} classes")
        per = n_filters // n_classes
        problems = []
        for k in range(n_classes):
            rest = np.mean([means[j] for j in range(n_classes) if j != k], axis=0)
            problems.append((means[k], rest, (per + 1) // 2, per // 2))
    rows, vals, pairs = [], [], []
    for target, rest, n_top, n_bottom in problems:
        w, V = generalized_eigh(target, target + rest)
        pick = list(range(len(w) - 1, len(w) - 1 - n_top, -1)) + list(range(n_bottom))
        rows.extend(V[:, i] for i in pick)
        vals.extend(w[i] for i in pick)
        pairs.append((target, rest))
    return CspFit(np.array(rows), np.array(vals), pairs)


@dataclass
class XdawnFit:
    projection: np.ndarray  # F x C
    eigenvalues: np.ndarray
    signal_covariance: np.ndarray
    noise_covariance: np.ndarray


def fit_xdawn(X: np.ndarray, y: np.ndarray, n_filters: int, target_class: int | None = 1,
              ridge: float = RIDGE) -> XdawnFit:
    """xDAWN: maximize evoked-response power over total-signal power.

    With ``target_class=None`` one set of ``n_filters`` is fitted per class
    and the sets are stacked.
    """
    C = X.shape[1]
    if n_filters < 1 or n_filters > C:
        raise ConfigError(f"n_filters must be in [1, {C}], got {n_filters}")
    classes = sorted(int(k) for k in np.unique(y)) if target_class is None else [target_class]
    noise = trial_covariances(X, normalize=False).mean(axis=0)
    noise = noise + ridge * max(np.trace(noise) / C, 1e-12) * np.eye(C)
    rows, vals, sig = [], [], None
    for k in classes:
        if not np.any(y == k):
            raise ConfigError(f"target class {k} has no trials")
        evoked = X[y == k].mean(axis=0)
        evoked = evoked - evoked.mean(axis=-1, keepdims=True)
        sig = evoked @ evoked.T / X.shape[-1]
        try:
            w, V = generalized_eigh(sig, noise)
        except NumericalError as exc:
            raise NumericalError(f"xDAWN noise covariance is degenerate: {exc}") from None
        order = np.argsort(w)[::-1][:n_filters]
        rows.extend(V[:, i] for i in order)
        vals.extend(w[i] for i in order)
    return XdawnFit(np.array(rows), np.array(vals), sig, noise)


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class SpatialFeatureModel:
    """Spatial projection -> feature map -> standardization -> linear logits.

    kind ``csp`` uses log-variance of each projected channel; ``xdawn`` uses
    the flattened projected trial.
    """

    def __init__(self, kind: str, projection, n_samples: int, n_classes: int,
                 feat_mean=None, feat_scale=None, weight=None, bias=None, seed: int = 0):
        if kind not in ("csp", "xdawn"):
            raise ConfigError(f"unknown spatial model kind {kind!r}")
        self.kind = kind
        self.projection = _f32(projection)
        self.n_channels = self.projection.shape[1]
        self.n_samples = int(n_samples)
        self.n_classes = int(n_classes)
        self.seed = seed
        D = self.feature_dim
        self.feat_mean = _f32(np.zeros(D) if feat_mean is None else feat_mean)
        self.feat_scale = _f32(np.ones(D) if feat_scale is None else feat_scale)
        if weight is None:
            rng = np.random.default_rng(seed)
            weight = rng.normal(scale=0.01, size=(self.n_classes, D))
        self.weight = gc.Tensor(_f32(weight), requires_grad=True)
        self.bias = gc.Tensor(_f32(np.zeros(self.n_classes) if bias is None else bias), requires_grad=True)

    @property
    def feature_dim(self) -> int:
        F = self.projection.shape[0]
        return F if self.kind == "csp" else F * self.n_samples

    def parameters(self) -> list[gc.Tensor]:
        return [self.weight, self.bias]

    def _check(self, shape):
        if len(shape) != 3 or shape[1:] != (self.n_channels, self.n_samples):
            raise DimensionError(
                f"model expects (B, {self.n_channels}, {self.n_samples}) input, got {tuple(shape)}"
            )

    def _feature_graph(self, x: gc.Tensor) -> gc.Tensor:
        Z = gc.matmul(self.projection, x)
        if self.kind == "csp":
            centered = gc.sub(Z, gc.mean(Z, axis=-1, keepdims=True))
            return gc.log(gc.add(gc.mean(gc.square(centered), axis=-1), VAR_FLOOR))
        return gc.flatten(Z)

    def features(self, X: np.ndarray) -> np.ndarray:
        """Raw (unstandardized) feature map of a (B, C, T) batch."""
        X = np.asarray(X, dtype=np.float64)
        self._check(X.shape)
        return self._feature_graph(gc.Tensor(X)).data

    def logits(self, x) -> gc.Tensor:
        x = gc.as_tensor(x)
        self._check(x.shape)
        f = self._feature_graph(x)
        z = gc.mul(gc.sub(f, self.feat_mean), 1.0 / self.feat_scale)
        return gc.add(gc.matmul(z, gc.transpose(self.weight)), self.bias)

    # attack hooks: the projection is linear, so no precomputation helps here
    def prepare_filtered(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64)

    def filtered_logits(self, W: gc.Tensor, prepared: np.ndarray) -> gc.Tensor:
        return self.logits(gc.matmul(W, prepared))

    def descriptor(self) -> dict:
        return {
            "family": "spatial",
            "kind": self.kind,
            "n_filters": int(self.projection.shape[0]),
            "n_channels": self.n_channels,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "seed": self.seed,
        }

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("projection", self.projection),
            ("feat_mean", self.feat_mean),
            ("feat_scale", self.feat_scale),
            ("weight", self.weight.data),
            ("bias", self.bias.data),
        ]

    def state_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, v.shape) for k, v in self.state()]

    @classmethod
    def from_state(cls, desc: dict, arrays: dict[str, np.ndarray]) -> "SpatialFeatureModel":
        return cls(desc["kind"], arrays["projection"], desc["n_samples"], desc["n_classes"],
                   arrays["feat_mean"], arrays["feat_scale"], arrays["weight"], arrays["bias"],
                   seed=desc.get("seed", 0))

    @classmethod
    def from_data(cls, kind: str, X: np.ndarray, y: np.ndarray, n_classes: int, n_filters: int,
                  seed: int = 0, target_class: int | None = 1) -> "SpatialFeatureModel":
        """Fit the projection and feature standardization; the head stays at its seeded init."""
        if kind == "csp":
            proj = fit_csp(X, y, n_filters, n_classes).projection
        else:
            proj = fit_xdawn(X, y, n_filters, target_class if n_classes == 2 else None).projection
        model = cls(kind, proj, X.shape[-1], n_classes, seed=seed)
        f = model.features(X)
        sd = f.std(axis=0)
        model.feat_mean = _f32(f.mean(axis=0))
        model.feat_scale = _f32(np.where(sd > 1e-8, sd, 1.0))
        return model
