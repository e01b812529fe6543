from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from advfilter.errors import DataError, DimensionError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EegTrial:
    """One C x T epoch.

    ``applied`` lists the preprocessing steps already run on ``data`` so a
    pipeline can skip them on a second pass.
    """

    data: np.ndarray
    label: int
    subject: int = 0
    fs: float = 128.0
    applied: tuple[str, ...] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or 0 in data.shape:
            raise DimensionError(f"trial data must be a non-empty C x T matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("trial data contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "subject", int(self.subject))
        object.__setattr__(self, "fs", float(self.fs))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def replace(self, **changes) -> "EegTrial":
        fields = dict(data=self.data, label=self.label, subject=self.subject, fs=self.fs, applied=self.applied)
        fields.update(changes)
        return EegTrial(**fields)


@dataclass(frozen=True, eq=False)
class EegDataset:
    """Ordered, immutable collection of trials sharing C, T and fs.

    The trials are held as stacked arrays: ``X`` is (N, C, T), ``y`` and
    ``subjects`` are (N,).
    """

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray
    n_classes: int
    fs: float = 128.0
    name: str = "dataset"
    applied: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        s = np.asarray(self.subjects, dtype=np.int64).reshape(-1)
        if X.ndim != 3 or X.shape[0] == 0:
            raise DimensionError(f"dataset needs a non-empty (N, C, T) array, got shape {X.shape}")
        if y.shape[0] != X.shape[0] or s.shape[0] != X.shape[0]:
            raise DimensionError(f"{X.shape[0]} trials but {y.shape[0]} labels and {s.shape[0]} subject ids")
        if not np.all(np.isfinite(X)):
            raise DataError("dataset contains non-finite values")
        K = int(self.n_classes)
        if K < 1 or y.min() < 0 or y.max() >= K:
            raise DataError(f"labels must lie in [0, {K})")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "subjects", _frozen(s))
        object.__setattr__(self, "n_classes", K)
        object.__setattr__(self, "fs", float(self.fs))

    @classmethod
    def from_trials(cls, trials: Sequence[EegTrial], n_classes: int | None = None, name: str = "dataset") -> "EegDataset":
        if not trials:
            raise DataError("a dataset needs at least one trial")
        shapes = {t.data.shape for t in trials}
        rates = {t.fs for t in trials}
        if len(shapes) != 1 or len(rates) != 1:
            raise DimensionError(f"trials disagree on shape {sorted(shapes)} or rate {sorted(rates)}")
        labels = np.array([t.label for t in trials])
        K = int(labels.max()) + 1 if n_classes is None else n_classes
        return cls(
            X=np.stack([t.data for t in trials]),
            y=labels,
            subjects=np.array([t.subject for t in trials]),
            n_classes=K,
            fs=trials[0].fs,
            name=name,
            applied=trials[0].applied,
        )

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> EegTrial:
        return EegTrial(self.X[i], int(self.y[i]), int(self.subjects[i]), self.fs, self.applied)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def trials(self) -> list[EegTrial]:
        return list(self)

    @property
    def n_channels(self) -> int:
        return self.X.shape[1]

    @property
    def n_samples(self) -> int:
        return self.X.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subject_ids(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.subjects))

    def subset(self, indices: Iterable[int], name: str | None = None) -> "EegDataset":
        idx = np.asarray(list(indices), dtype=np.int64)
        return EegDataset(self.X[idx], self.y[idx], self.subjects[idx], self.n_classes, self.fs,
                          name or self.name, self.applied)

    def with_data(self, X: np.ndarray, y: np.ndarray | None = None) -> "EegDataset":
        return EegDataset(X, self.y if y is None else y, self.subjects, self.n_classes, self.fs,
                          self.name, self.applied)

    def check_all_classes(self) -> None:
        missing = [k for k, n in enumerate(self.class_counts()) if n == 0]
        if missing:
            raise DataError(f"dataset {self.name!r} has no trials for classes {missing}")
