"""Experiment runners: one report per command, built from independent units.

A unit is one (repeat, subject) pair. For the within-subject scenario the
subject's own trials are split; for the cross-subject scenario the subject is
the held-out fold. Units share nothing, so they can run in a process pool;
results are merged in unit order so the report does not depend on the pool.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from advfilter.attacks import (
    fixed_alpha_filter,
    generate_evasion_filter,
    keyed_asr,
    make_backdoor_key,
    make_noisy_baseline,
    poison,
    poison_count,
)
from advfilter.eegdata import EegDataset, load_dataset, synthesize
from advfilter.errors import AdvFilterError, ConfigError
from advfilter.expcli.config import ExperimentConfig
from advfilter.expcli.splits import carve_validation, split_cross, split_within
from advfilter.metrics import AttackReport, bca, config_hash, rmse_distortion, save_report, transferability_matrix
from advfilter.victims import fit_model, predict, save_model

KINDS = ("train", "evasion", "backdoor", "sweep-alpha", "sweep-poison", "transfer")


def load_experiment_data(cfg: ExperimentConfig) -> EegDataset:
    return load_dataset(cfg.dataset) if cfg.dataset else synthesize(cfg.synthetic)


def units(cfg: ExperimentConfig, ds: EegDataset) -> list[tuple[int, int]]:
    ids = ds.subject_ids()
    if cfg.subjects == "all":
        return [(r, s) for r in range(cfg.repeats) for s in ids]
    if cfg.subjects == "rotate":
        return [(r, ids[r % len(ids)]) for r in range(cfg.repeats)]
    chosen = [int(s) for s in cfg.subjects.split(",")]
    return [(r, s) for r in range(cfg.repeats) for s in chosen]


class _Unit:
    """Shared per-unit state: splits, seeds and the report being filled."""

    def __init__(self, kind: str, cfg: ExperimentConfig, ds: EegDataset, repeat: int, subject: int):
        self.cfg, self.repeat, self.subject = cfg, repeat, subject
        self.seed = cfg.repeat_seed(repeat)
        if cfg.scenario == "within":
            self.train, self.test = split_within(ds, subject, cfg.train_fraction, self.seed)
        else:
            self.train, self.test = split_cross(ds, subject)
        self.K = ds.n_classes
        self.train_cfg = replace(cfg.train, seed=self.seed)
        self.evasion_cfg = replace(cfg.evasion, seed=self.seed)
        self.backdoor_cfg = replace(cfg.backdoor, seed=self.seed)
        self.report = AttackReport(kind, seeds=[self.seed])
        self.dataset = ds.name

    def fit(self, token: str, data: EegDataset | None = None):
        model, _ = fit_model(self.cfg.model_spec(token), self.train if data is None else data, self.train_cfg)
        return model

    def score(self, model, X=None) -> float:
        return bca(predict(model, self.test.X if X is None else X), self.test.y, self.K)

    def add(self, token: str, condition: str, **kw):
        return self.report.add(dataset=self.dataset, model=self.cfg.model_spec(token).label, condition=condition,
                               repeat=self.repeat, seed=self.seed, subject=self.subject, **kw)

    def distortion(self, W):
        total, per = rmse_distortion(self.test.X, np.asarray(W) @ self.test.X)
        return {"rmse": total, "per_channel_rmse": [float(v) for v in per]}

    def trace_key(self, token: str) -> str:
        return f"{self.cfg.model_spec(token).label}/r{self.repeat}/s{self.subject}"


def _train(u: _Unit, out_dir: Path | None):
    for token in u.cfg.models:
        model = u.fit(token)
        u.add(token, "clean", bca=u.score(model))
        if out_dir is not None:
            save_model(model, out_dir / "models" / f"{u.cfg.model_spec(token).label}_r{u.repeat}_s{u.subject}")


def _evasion(u: _Unit, out_dir):
    fit_part, val = carve_validation(u.train, u.cfg.validation_fraction, u.seed)
    C = u.train.n_channels
    for token in u.cfg.models:
        model = u.fit(token)
        u.add(token, "clean", bca=u.score(model))
        noisy = make_noisy_baseline(C, u.seed)
        u.add(token, "noisy", bca=u.score(model, noisy.W @ u.test.X), **u.distortion(noisy.W))
        res = generate_evasion_filter(fit_part, val, model, u.evasion_cfg)
        W = res.filter.W
        u.add(token, "adversarial", bca=u.score(model, W @ u.test.X), alpha=res.filter.alpha,
              extra={"accepted": res.accepted, "validation_bca": res.validation_bca}, **u.distortion(W))
        u.report.alpha_traces[u.trace_key(token)] = res.trace
        if u.cfg.reference_alpha0:
            zero = fixed_alpha_filter(fit_part, model, 0.0, u.evasion_cfg)
            u.add(token, "alpha0", bca=u.score(model, zero.W @ u.test.X), alpha=0.0, **u.distortion(zero.W))


def _backdoor(u: _Unit, out_dir):
    bcfg = u.backdoor_cfg
    key = make_backdoor_key(u.train.n_channels, bcfg)
    for token in u.cfg.models:
        clean = u.fit(token)
        u.add(token, "baseline", bca=u.score(clean), asr=keyed_asr(clean, key, u.test, bcfg.target_class))
        poisoned, idx = poison(u.train, key, bcfg)
        bad = u.fit(token, poisoned)
        u.add(token, "backdoor", bca=u.score(bad), asr=keyed_asr(bad, key, u.test, bcfg.target_class),
              extra={"ratio": bcfg.ratio, "n_poisoned": int(len(idx))})


def _sweep_poison(u: _Unit, out_dir):
    key = make_backdoor_key(u.train.n_channels, u.backdoor_cfg)
    target = u.backdoor_cfg.target_class
    for token in u.cfg.models:
        clean = u.fit(token)
        u.add(token, "baseline", bca=u.score(clean), asr=keyed_asr(clean, key, u.test, target))
        for ratio in u.cfg.ratio_grid:
            bcfg = replace(u.backdoor_cfg, ratio=ratio)
            poisoned, idx = poison(u.train, key, bcfg)
            bad = u.fit(token, poisoned)
            u.add(token, f"p={ratio:g}", bca=u.score(bad), asr=keyed_asr(bad, key, u.test, target),
                  extra={"ratio": ratio, "n_poisoned": poison_count(len(u.train), ratio)})


def _sweep_alpha(u: _Unit, out_dir):
    for token in u.cfg.models:
        model = u.fit(token)
        u.add(token, "clean", bca=u.score(model))
        for alpha in u.cfg.alpha_grid:
            f = fixed_alpha_filter(u.train, model, alpha, u.evasion_cfg)
            u.add(token, f"alpha={alpha:g}", bca=u.score(model, f.W @ u.test.X), alpha=alpha, **u.distortion(f.W))


def _transfer(u: _Unit, out_dir):
    fit_part, val = carve_validation(u.train, u.cfg.validation_fraction, u.seed)
    tokens = u.cfg.models
    models = [u.fit(t) for t in tokens]
    filters = []
    for token, model in zip(tokens, models):
        u.add(token, "clean", bca=u.score(model))
        res = generate_evasion_filter(fit_part, val, model, u.evasion_cfg)
        u.report.alpha_traces[u.trace_key(token)] = res.trace
        filters.append(res)
    M = transferability_matrix(models, [r.filter.W for r in filters], u.test.X, u.test.y, u.K)
    for g, (src, res) in enumerate(zip(tokens, filters)):
        for v, token in enumerate(tokens):
            u.add(token, f"filter:{u.cfg.model_spec(src).label}", bca=float(M[g, v]), alpha=res.filter.alpha,
                  extra={"accepted": res.accepted}, **u.distortion(res.filter.W))


_RUNNERS = {"train": _train, "evasion": _evasion, "backdoor": _backdoor, "sweep-alpha": _sweep_alpha,
            "sweep-poison": _sweep_poison, "transfer": _transfer}


def run_unit(kind: str, cfg: ExperimentConfig, ds: EegDataset, repeat: int, subject: int,
             out_dir: Path | None = None) -> AttackReport:
    """Run one unit; a failure is recorded in the returned report instead of raised."""
    try:
        u = _Unit(kind, cfg, ds, repeat, subject)
        _RUNNERS[kind](u, out_dir)
        return u.report
    except (AdvFilterError, ArithmeticError, ValueError) as exc:
        rep = AttackReport(kind, seeds=[cfg.repeat_seed(repeat)])
        family = "numerical" if isinstance(exc, ArithmeticError) else "config" if isinstance(exc, ConfigError) else "data"
        rep.errors.append({"repeat": repeat, "subject": subject, "error": type(exc).__name__,
                           "family": family, "message": str(exc)})
        return rep


def _star(args):
    return run_unit(*args)


def provenance_hash(cfg: ExperimentConfig) -> str:
    flat = cfg.to_flat()
    for k in ("out", "workers"):
        flat.pop(k, None)
    return config_hash(flat)


def run_experiment(kind: str, cfg: ExperimentConfig, ds: EegDataset | None = None,
                   out_dir=None, write: bool = True) -> AttackReport:
    """Run every unit of ``kind`` and (optionally) write ``<out>/<kind>.json`` and ``.csv``."""
    if kind not in _RUNNERS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    ds = load_experiment_data(cfg) if ds is None else ds
    out = Path(cfg.out if out_dir is None else out_dir)
    jobs = [(kind, cfg, ds, r, s, out if write else None) for r, s in units(cfg, ds)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            parts = list(pool.map(_star, jobs))
    else:
        parts = [_star(j) for j in jobs]
    report = AttackReport(kind, config_hash=provenance_hash(cfg))
    for part in parts:
        report.extend(part)
    report.meta = {"config": cfg.to_flat(), "dataset": ds.name, "units": len(jobs),
                   "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    if write:
        save_report(report, out, kind)
    return report
