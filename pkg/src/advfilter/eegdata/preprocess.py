"""Preprocessing: band-pass, decimation, epoching and z-scoring.

All filters are linear-phase FIR designs applied with reflection padding so
the output keeps the input length and stays linear in the input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve, firwin

from advfilter.eegdata.types import EegDataset, EegTrial
from advfilter.errors import BoundsError, ConfigError, NyquistError, UnsupportedRateError


def bandpass_taps(fs: float, lo: float, hi: float, numtaps: int | None = None) -> np.ndarray:
    """Hamming windowed-sinc band-pass; default length ceil(4 fs / lo) forced odd."""
    if not 0 < lo < hi:
        raise ConfigError(f"band edges must satisfy 0 < lo < hi, got [{lo}, {hi}]")
    if hi >= fs / 2:
        raise NyquistError(f"upper edge {hi} Hz is not below Nyquist ({fs / 2} Hz)")
    if numtaps is None:
        numtaps = math.ceil(4 * fs / lo)
    if numtaps % 2 == 0:
        numtaps += 1
    return firwin(numtaps, [lo, hi], pass_zero=False, window="hamming", fs=fs)


def lowpass_taps(fs: float, cutoff: float, numtaps: int) -> np.ndarray:
    if numtaps % 2 == 0:
        numtaps += 1
    return firwin(numtaps, cutoff, window="hamming", fs=fs)


def fir_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase-delay FIR along the last axis with reflect padding (length kept)."""
    x = np.asarray(x, dtype=np.float64)
    half = len(taps) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad, mode="reflect") if x.shape[-1] > 1 else np.pad(x, pad, mode="edge")
    kernel = taps.reshape((1,) * (x.ndim - 1) + (-1,))
    return fftconvolve(xp, kernel, mode="valid", axes=-1)


def bandpass_array(x: np.ndarray, fs: float, lo: float, hi: float, numtaps: int | None = None) -> np.ndarray:
    return fir_filter(x, bandpass_taps(fs, lo, hi, numtaps))


def _decimation_factor(fs: float, target_fs: float) -> int:
    if target_fs <= 0 or target_fs > fs:
        raise UnsupportedRateError(f"cannot resample {fs} Hz to {target_fs} Hz")
    ratio = fs / target_fs
    factor = int(round(ratio))
    if abs(ratio - factor) > 1e-9:
        raise UnsupportedRateError(f"{fs} Hz is not an integer multiple of {target_fs} Hz")
    return factor


def downsample_array(x: np.ndarray, fs: float, target_fs: float) -> np.ndarray:
    """Anti-alias low-pass at 0.45 * target_fs, then keep every factor-th sample."""
    factor = _decimation_factor(fs, target_fs)
    if factor == 1:
        return np.array(x, dtype=np.float64)
    taps = lowpass_taps(fs, 0.45 * target_fs, 32 * factor + 1)
    return fir_filter(x, taps)[..., ::factor]


def zscore_array(x: np.ndarray, axis=-1) -> np.ndarray:
    """Standardize with the population std; constant slices map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    sd = np.sqrt(np.mean(centered * centered, axis=axis, keepdims=True))
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    return np.where(flat, 0.0, centered / np.where(flat, 1.0, sd))


def bandpass(trial: EegTrial, lo: float, hi: float, numtaps: int | None = None) -> EegTrial:
    out = bandpass_array(trial.data, trial.fs, lo, hi, numtaps)
    return trial.replace(data=out, applied=trial.applied + (f"bandpass:{lo:g}-{hi:g}",))


def downsample(trial: EegTrial, target_fs: float) -> EegTrial:
    out = downsample_array(trial.data, trial.fs, target_fs)
    return trial.replace(data=out, fs=float(target_fs), applied=trial.applied + (f"downsample:{target_fs:g}",))


def zscore(trial: EegTrial) -> EegTrial:
    step = "zscore"
    applied = trial.applied if step in trial.applied else trial.applied + (step,)
    return trial.replace(data=zscore_array(trial.data, axis=-1), applied=applied)


@dataclass(frozen=True)
class Recording:
    """Continuous multichannel signal (C x L) sampled at ``fs``."""

    data: np.ndarray
    fs: float
    subject: int = 0
    applied: tuple[str, ...] = ()


def epoch(recording: Recording, onset: float, window: tuple[float, float], label: int = 0) -> EegTrial:
    """Cut ``round((b - a) * fs)`` samples starting at ``onset + a`` seconds."""
    a, b = window
    if not a < b:
        raise BoundsError(f"epoch window must satisfy a < b, got [{a}, {b}]")
    fs = recording.fs
    start = int(round((onset + a) * fs))
    n = int(round((b - a) * fs))
    length = recording.data.shape[-1]
    if start < 0 or start + n > length:
        raise BoundsError(f"window [{onset + a:.3f}, {onset + b:.3f}] s exceeds recording of {length / fs:.3f} s")
    return EegTrial(recording.data[:, start : start + n], label, recording.subject, fs, recording.applied + ("epoch",))


@dataclass(frozen=True)
class PreprocessConfig:
    band: tuple[float, float] = (1.0, 40.0)
    target_fs: float = 128.0
    window: tuple[float, float] = (0.0, 1.3)
    numtaps: int | None = None
    zscore: bool = True

    @property
    def band_step(self) -> str:
        return f"bandpass:{self.band[0]:g}-{self.band[1]:g}"

    @property
    def rate_step(self) -> str:
        return f"downsample:{self.target_fs:g}"


def _continuous_stage(data, fs, applied, cfg: PreprocessConfig):
    if cfg.band_step not in applied:
        data = bandpass_array(data, fs, cfg.band[0], cfg.band[1], cfg.numtaps)
        applied = applied + (cfg.band_step,)
    if cfg.rate_step not in applied:
        data = downsample_array(data, fs, cfg.target_fs)
        fs = float(cfg.target_fs)
        applied = applied + (cfg.rate_step,)
    return data, fs, applied


def preprocess_recording(
    recording: Recording,
    onsets: Sequence[float],
    labels: Sequence[int],
    cfg: PreprocessConfig = PreprocessConfig(),
) -> list[EegTrial]:
    """Band-pass -> downsample -> epoch -> z-score, in that fixed order."""
    data, fs, applied = _continuous_stage(recording.data, recording.fs, recording.applied, cfg)
    rec = Recording(data, fs, recording.subject, applied)
    trials = [epoch(rec, t, cfg.window, lab) for t, lab in zip(onsets, labels)]
    return [zscore(t) for t in trials] if cfg.zscore else trials


def preprocess_trial(trial: EegTrial, cfg: PreprocessConfig = PreprocessConfig()) -> EegTrial:
    """Same pipeline for an already-cut trial; steps recorded in ``applied`` are skipped.

    z-scoring always runs (it is idempotent), so running this twice equals
    running it once followed by ``zscore``.
    """
    data, fs, applied = _continuous_stage(trial.data, trial.fs, trial.applied, cfg)
    out = trial.replace(data=data, fs=fs, applied=applied)
    return zscore(out) if cfg.zscore else out


def zscore_dataset(ds: EegDataset, scope: str = "channel-trial") -> EegDataset:
    """z-score a whole dataset.

    scope: ``channel-trial`` (each channel of each trial), ``trial`` (all of a
    trial pooled) or ``subject`` (each channel pooled over a subject's trials).
    """
    X = ds.X
    if scope == "channel-trial":
        out = zscore_array(X, axis=-1)
    elif scope == "trial":
        out = zscore_array(X, axis=(1, 2))
    elif scope == "subject":
        out = np.empty_like(X)
        for s in np.unique(ds.subjects):
            m = ds.subjects == s
            block = np.moveaxis(X[m], 1, 0).reshape(X.shape[1], -1)
            z = zscore_array(block, axis=-1).reshape(X.shape[1], int(m.sum()), X.shape[2])
            out[m] = np.moveaxis(z, 0, 1)
    else:
        raise ConfigError(f"unknown z-score scope {scope!r}")
    return EegDataset(out, ds.y, ds.subjects, ds.n_classes, ds.fs, ds.name, ds.applied + (f"zscore:{scope}",))
