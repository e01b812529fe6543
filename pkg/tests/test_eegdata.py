import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advfilter.eegdata import (
    ClassTemplate,
    EegDataset,
    EegTrial,
    PreprocessConfig,
    Recording,
    SyntheticSpec,
    bandpass,
    downsample,
    epoch,
    export_csv,
    import_csv,
    load_dataset,
    preprocess_recording,
    preprocess_trial,
    save_dataset,
    synthesize,
    zscore,
    zscore_array,
    zscore_dataset,
)
from advfilter.eegdata.io import decode_etrc, encode_etrc
from advfilter.errors import (
    BoundsError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NyquistError,
    UnsupportedRateError,
)
from advfilter.metrics import bca
from advfilter.victims import ModelSpec, TrainConfig, fit_model, predict


def tone(freq, fs, n, amp=1.0, phase=0.3):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def amplitude_at(x, freq, fs):
    """Single-sided FFT amplitude; callers pick lengths with an exact bin at ``freq``."""
    spec = np.abs(np.fft.rfft(x)) * 2 / len(x)
    k = freq * len(x) / fs
    assert abs(k - round(k)) < 1e-9
    return spec[int(round(k))]


# -- band-pass -------------------------------------------------------------

def test_bandpass_kills_dc():
    x = np.full((1, 1024), 3.0)
    out = bandpass(EegTrial(x, 0, fs=128), 1, 40).data
    assert np.mean(out**2) < 1e-3 * np.mean(x**2)


def test_bandpass_passes_10hz():
    fs, n, trim = 128, 2048, 256  # 12 s kept -> exact 10 Hz bin
    out = bandpass(EegTrial(tone(10, fs, n)[None], 0, fs=fs), 1, 40).data[0]
    amp = amplitude_at(out[trim:-trim], 10, fs)
    assert abs(amp - 1.0) < 0.05


def test_bandpass_stops_60hz_at_256():
    fs, n, trim = 256, 4096, 512
    out = bandpass(EegTrial(tone(60, fs, n)[None], 0, fs=fs), 1, 40).data[0]
    amp = amplitude_at(out[trim:-trim], 60, fs)
    assert 20 * np.log10(amp / 1.0) <= -20


def test_bandpass_keeps_length_and_records_step():
    trial = EegTrial(np.random.default_rng(0).normal(size=(3, 300)), 1, fs=128)
    out = bandpass(trial, 1, 40)
    assert out.data.shape == (3, 300)
    assert out.applied == ("bandpass:1-40",)


@pytest.mark.parametrize("hi", [64.0, 80.0])
def test_bandpass_nyquist_error(hi):
    with pytest.raises(NyquistError):
        bandpass(EegTrial(np.zeros((1, 256)), 0, fs=128), 1, hi)


def test_bandpass_bad_edges():
    with pytest.raises(ConfigError):
        bandpass(EegTrial(np.zeros((1, 256)), 0, fs=128), 10, 5)


# -- downsample ------------------------------------------------------------

def test_downsample_count():
    out = downsample(EegTrial(np.random.default_rng(1).normal(size=(2, 512)), 0, fs=256), 128)
    assert out.data.shape == (2, 256)
    assert out.fs == 128.0


def test_downsample_constant():
    out = downsample(EegTrial(np.full((2, 512), 4.25), 0, fs=256), 128)
    np.testing.assert_allclose(out.data, 4.25, atol=1e-9)


def test_downsample_keeps_5hz():
    out = downsample(EegTrial(tone(5, 256, 2560)[None], 0, fs=256), 128).data[0]
    trimmed = out[128:-128]  # 8 s at 128 Hz
    assert abs(amplitude_at(trimmed, 5, 128) - 1.0) < 0.05


@pytest.mark.parametrize("target", [100.0, 300.0, 0.0])
def test_downsample_unsupported(target):
    with pytest.raises(UnsupportedRateError):
        downsample(EegTrial(np.zeros((1, 512)), 0, fs=256), target)


# -- z-score ---------------------------------------------------------------

def test_zscore_hand_example():
    out = zscore(EegTrial(np.array([[1.0, 2.0, 3.0]]), 0)).data
    np.testing.assert_allclose(out, [[-1.2247448714, 0.0, 1.2247448714]], atol=1e-9)


def test_zscore_constant_channel():
    out = zscore(EegTrial(np.array([[5.0, 5.0, 5.0], [1.0, 2.0, 4.0]]), 0)).data
    assert np.array_equal(out[0], [0.0, 0.0, 0.0])


def test_zscore_idempotent():
    x = zscore_array(np.random.default_rng(2).normal(3, 7, size=(4, 100)))
    np.testing.assert_allclose(zscore_array(x), x, atol=1e-9)


def test_zscore_invariants_on_synthetic():
    ds = synthesize(SyntheticSpec(trials_per_class=5, n_subjects=1))
    assert np.abs(ds.X.mean(axis=-1)).max() < 1e-9
    assert np.abs(ds.X.std(axis=-1) - 1).max() < 1e-6


def test_zscore_dataset_scopes():
    rng = np.random.default_rng(3)
    ds = EegDataset(rng.normal(2, 5, size=(6, 3, 20)), [0, 1] * 3, [0, 0, 0, 1, 1, 1], 2)
    per = zscore_dataset(ds, "channel-trial").X
    assert np.abs(per.std(axis=-1) - 1).max() < 1e-9
    tr = zscore_dataset(ds, "trial").X
    assert np.abs(tr.std(axis=(1, 2)) - 1).max() < 1e-9
    sub = zscore_dataset(ds, "subject").X
    for s in (0, 1):
        block = sub[ds.subjects == s]
        assert np.abs(block.mean(axis=(0, 2))).max() < 1e-9
        assert np.abs(block.std(axis=(0, 2)) - 1).max() < 1e-9
    with pytest.raises(ConfigError):
        zscore_dataset(ds, "global")


# -- epoching --------------------------------------------------------------

@pytest.mark.parametrize("window,expected", [((0.0, 1.3), 166), ((0.5, 2.5), 256), ((0.0, 1.0), 128)])
def test_epoch_lengths(window, expected):
    rec = Recording(np.zeros((2, 128 * 5)), 128.0)
    assert epoch(rec, 1.0, window).data.shape == (2, expected)


def test_epoch_copies_samples():
    rec = Recording(np.arange(20.0).reshape(1, 20), 10.0, subject=4)
    tr = epoch(rec, 0.5, (0.0, 1.0), label=1)
    assert tr.data.tolist() == [list(range(5, 15))]
    assert (tr.label, tr.subject, tr.fs) == (1, 4, 10.0)


@pytest.mark.parametrize("onset,window", [(4.5, (0.0, 1.0)), (0.0, (-0.5, 1.0)), (1.0, (1.0, 1.0))])
def test_epoch_bounds(onset, window):
    with pytest.raises(BoundsError):
        epoch(Recording(np.zeros((1, 640)), 128.0), onset, window)


# -- pipeline --------------------------------------------------------------

def _raw_recording(seed=0, fs=256.0, seconds=6):
    rng = np.random.default_rng(seed)
    return Recording(rng.normal(size=(3, int(fs * seconds))), fs)


def test_pipeline_twice_equals_once_plus_zscore():
    trials = preprocess_recording(_raw_recording(), [0.5, 2.0, 4.0], [0, 1, 0])
    assert trials[0].data.shape == (3, 166)
    for t in trials:
        again = preprocess_trial(t)
        assert np.abs(again.data - zscore(t).data).max() < 1e-6
        assert again.applied == t.applied


def test_preprocess_trial_runs_missing_steps():
    raw = EegTrial(np.random.default_rng(5).normal(size=(2, 512)), 0, fs=256)
    out = preprocess_trial(raw, PreprocessConfig())
    assert out.fs == 128.0 and out.data.shape == (2, 256)
    assert out.applied == ("bandpass:1-40", "downsample:128", "zscore")


def test_pipeline_linear_without_zscore():
    cfg = PreprocessConfig(zscore=False)
    x, y = _raw_recording(1), _raw_recording(2)
    a, b = 1.7, -0.4
    mix = Recording(a * x.data + b * y.data, x.fs)
    onsets, labels = [0.5, 3.0], [0, 1]
    px = preprocess_recording(x, onsets, labels, cfg)
    py = preprocess_recording(y, onsets, labels, cfg)
    pm = preprocess_recording(mix, onsets, labels, cfg)
    for u, v, w in zip(px, py, pm):
        assert np.abs(w.data - (a * u.data + b * v.data)).max() < 1e-9


# -- containers ------------------------------------------------------------

def test_trial_rejects_bad_data():
    with pytest.raises(DimensionError):
        EegTrial(np.zeros(5), 0)
    with pytest.raises(DataError):
        EegTrial(np.array([[0.0, np.nan]]), 0)


def test_dataset_is_immutable_and_consistent():
    ds = synthesize(SyntheticSpec(trials_per_class=3, n_subjects=2))
    with pytest.raises(ValueError):
        ds.X[0, 0, 0] = 1.0
    assert len(ds) == 12 and ds.n_channels == 8 and ds.n_samples == 128
    assert ds.class_counts().tolist() == [6, 6]
    with pytest.raises(DataError):
        EegDataset(np.zeros((2, 1, 3)), [0, 2], [0, 0], 2)
    with pytest.raises(DimensionError):
        EegDataset.from_trials([EegTrial(np.zeros((1, 3)), 0), EegTrial(np.zeros((2, 3)), 1)])


# -- synthetic -------------------------------------------------------------

def test_synthesize_deterministic():
    a = synthesize(SyntheticSpec(seed=5, trials_per_class=4))
    b = synthesize(SyntheticSpec(seed=5, trials_per_class=4))
    c = synthesize(SyntheticSpec(seed=6, trials_per_class=4))
    assert a.X.tobytes() == b.X.tobytes() and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.X, c.X)


def test_synthetic_templates_must_differ():
    tpl = ClassTemplate((10.0,), (0.0,), ((1.0,), (0.5,)))
    with pytest.raises(ConfigError):
        SyntheticSpec(n_channels=2, n_sources=1, templates=(tpl, tpl))
    other = ClassTemplate((10.0,), (0.0,), ((0.5,), (1.0,)))
    ds = synthesize(SyntheticSpec(n_channels=2, n_sources=1, trials_per_class=2, n_subjects=1,
                                  templates=(tpl, other)))
    assert ds.X.shape == (4, 2, 128)


def test_noise_free_synthetic_is_csp_separable():
    ds = synthesize(SyntheticSpec(noise_std=0.0, n_subjects=1, subject_jitter=0.0))
    model, _ = fit_model(ModelSpec("csp"), ds, TrainConfig(seed=0))
    assert bca(predict(model, ds.X), ds.y, 2) == 1.0


def test_overwhelming_noise_gives_chance():
    ds = synthesize(SyntheticSpec(noise_std=1e3, n_subjects=1, trials_per_class=500, seed=3))
    order = np.random.default_rng(0).permutation(len(ds))
    train, test = ds.subset(order[:500]), ds.subset(order[500:])
    model, _ = fit_model(ModelSpec("csp"), train, TrainConfig(seed=0, epochs=30))
    assert abs(bca(predict(model, test.X), test.y, 2) - 0.5) <= 0.05


# -- ETRC ------------------------------------------------------------------

def small_dataset(seed=0, n=6, C=3, T=10, K=2):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % K
    return EegDataset(rng.normal(size=(n, C, T)), y, np.arange(n) // 2, K, fs=128.0, name="small")


def test_etrc_round_trip(tmp_path):
    ds = small_dataset()
    save_dataset(ds, tmp_path / "d.etrc")
    back = load_dataset(tmp_path / "d.etrc")
    assert np.array_equal(back.X, ds.X.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.subjects, ds.subjects)
    assert (back.n_classes, back.fs) == (2, 128.0)
    assert encode_etrc(back) == encode_etrc(ds)


def test_etrc_header_layout():
    raw = encode_etrc(small_dataset(n=4, C=2, T=3))
    assert raw[:4] == b"ETRC"
    assert struct.unpack_from("<HHIfHI", raw, 4) == (1, 2, 3, 128.0, 2, 4)
    assert len(raw) == 22 + 4 * (4 + 4 * 2 * 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_etrc_round_trip_property(C, T, K, seed):
    rng = np.random.default_rng(seed)
    n = K * 2
    ds = EegDataset(rng.normal(scale=100, size=(n, C, T)), np.arange(n) % K, rng.integers(0, 9, n), K, fs=250.0)
    back = decode_etrc(encode_etrc(ds))
    assert back.X.tobytes() == ds.X.astype(np.float32).astype(np.float64).tobytes()


def _patch(raw: bytes, offset: int, fmt: str, value) -> bytes:
    buf = bytearray(raw)
    struct.pack_into(fmt, buf, offset, value)
    return bytes(buf)


def etrc_corruptions():
    raw = encode_etrc(small_dataset(n=4, C=2, T=3))
    rec = 4 + 4 * 6
    return {
        "bad-magic": (b"ETRX" + raw[4:], 0),
        "version": (_patch(raw, 4, "<H", 7), 4),
        "zero-channels": (_patch(raw, 6, "<H", 0), 6),
        "nan-rate": (_patch(raw, 12, "<f", float("nan")), 12),
        "zero-classes": (_patch(raw, 16, "<H", 0), 16),
        "no-trials": (_patch(raw, 18, "<I", 0), 18),
        "short-header": (raw[:10], 10),
        "truncated-record": (raw[: 22 + rec + 5], 22 + rec),
        "trailing": (raw + b"\0\0", len(raw)),
        "label-out-of-range": (_patch(raw, 22 + rec, "<H", 5), 22 + rec),
        "nan-sample": (_patch(raw, 22 + 4, "<f", float("inf")), 22),
    }


@pytest.mark.parametrize("case", sorted(etrc_corruptions()))
def test_etrc_corruptions(case, tmp_path):
    blob, offset = etrc_corruptions()[case]
    path = tmp_path / f"{case}.etrc"
    path.write_bytes(blob)
    with pytest.raises(FormatError) as info:
        load_dataset(path)
    assert info.value.offset == offset
    assert str(path) in str(info.value)


def test_etrc_missing_class_rejected():
    ds = EegDataset(np.zeros((2, 1, 2)), [0, 0], [0, 0], 2)
    with pytest.raises(FormatError):
        decode_etrc(encode_etrc(ds))


# -- CSV -------------------------------------------------------------------

def test_csv_single_trial(tmp_path):
    (tmp_path / "t0.csv").write_text("1,2,3,4\n5,6,7,8.5\n")
    (tmp_path / "manifest.csv").write_text("file,label,subject,fs\nt0.csv,0,3,128\n")
    ds = import_csv(tmp_path)
    assert (ds.n_channels, ds.n_samples, len(ds)) == (2, 4, 1)
    assert ds.X[0].tolist() == [[1, 2, 3, 4], [5, 6, 7, 8.5]]
    assert ds.subjects.tolist() == [3]


def test_csv_missing_column_named(tmp_path):
    (tmp_path / "t0.csv").write_text("1,2\n")
    (tmp_path / "manifest.csv").write_text("file,label,fs\nt0.csv,0,128\n")
    with pytest.raises(FormatError, match="subject"):
        import_csv(tmp_path)


def test_csv_bad_value_reports_line(tmp_path):
    (tmp_path / "t0.csv").write_text("1,2\n3,x\n")
    (tmp_path / "manifest.csv").write_text("file,label,subject,fs\nt0.csv,0,0,128\n")
    with pytest.raises(FormatError) as info:
        import_csv(tmp_path)
    assert info.value.offset == 2


def test_synth_csv_ingest_is_bit_identical(tmp_path):
    ds = synthesize(SyntheticSpec(trials_per_class=3, n_subjects=2))
    export_csv(ds, tmp_path / "csv")
    back = import_csv(tmp_path / "csv", n_classes=2)
    assert encode_etrc(back) == encode_etrc(ds)
