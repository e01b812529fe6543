"""Train/test partitioning for the within- and cross-subject protocols."""
from __future__ import annotations

import numpy as np

from advfilter.eegdata import EegDataset
from advfilter.errors import ConfigError, DataError, StratificationError


def _stratified(y: np.ndarray, n_classes: int, fraction: float, rng: np.random.Generator):
    """Per class, put round(fraction * n_k) shuffled trials in the first part."""
    first, second = [], []
    for k in range(n_classes):
        idx = np.flatnonzero(y == k)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise StratificationError(f"class {k} has {len(idx)} trial(s); need at least 2 to split")
        idx = rng.permutation(idx)
        n = min(max(int(round(fraction * len(idx))), 1), len(idx) - 1)
        first.append(idx[:n])
        second.append(idx[n:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def split_within(ds: EegDataset, subject: int, train_fraction: float = 0.8, seed: int = 0):
    """Stratified random train/test split of one subject's trials."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    members = np.flatnonzero(ds.subjects == subject)
    if len(members) == 0:
        raise DataError(f"subject {subject} not in dataset (have {ds.subject_ids()})")
    rng = np.random.default_rng([seed, subject, 101])
    a, b = _stratified(ds.y[members], ds.n_classes, train_fraction, rng)
    return ds.subset(members[a]), ds.subset(members[b])


def split_cross(ds: EegDataset, held_out: int):
    """Leave-one-subject-out: the held-out subject is the test set."""
    ids = ds.subject_ids()
    if len(ids) < 2:
        raise DataError("cross-subject evaluation needs at least 2 subjects")
    if held_out not in ids:
        raise DataError(f"subject {held_out} not in dataset (have {ids})")
    mask = ds.subjects == held_out
    return ds.subset(np.flatnonzero(~mask)), ds.subset(np.flatnonzero(mask))


def carve_validation(train: EegDataset, fraction: float = 0.25, seed: int = 0):
    """Stratified hold-out of ``fraction`` of the training set; returns (rest, validation)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"validation fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng([seed, 211])
    val, rest = _stratified(train.y, train.n_classes, fraction, rng)
    return train.subset(rest), train.subset(val)
