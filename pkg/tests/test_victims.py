import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg

from fd import assert_grad_close, numeric_grad

from advfilter import gradcore as gc
from advfilter.eegdata import EegDataset, SyntheticSpec, synthesize
from advfilter.errors import DimensionError, FormatError, TrainingError
from advfilter.metrics import bca
from advfilter.victims import (
    PRESETS,
    CnnArch,
    CompactCnn,
    ModelSpec,
    SpatialFeatureModel,
    TrainConfig,
    build_model,
    fit_csp,
    fit_model,
    fit_xdawn,
    generalized_eigh,
    jacobi_eigh,
    load_model,
    parameter_hash,
    predict,
    predict_proba,
    save_model,
    train,
)


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * 0.1 * np.eye(n)


# -- eigensolvers ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_jacobi_matches_dense_solver(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(7, 7))
    A = A + A.T
    w, V = jacobi_eigh(A)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(7), atol=1e-10)
    np.testing.assert_allclose(A @ V, V * w, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_generalized_eigh_residual(seed):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, 6), random_spd(rng, 6)
    w, V = generalized_eigh(A, A + B)
    np.testing.assert_allclose(w, scipy.linalg.eigh(A, A + B, eigvals_only=True), atol=1e-10)
    for i in range(6):
        v = V[:, i]
        assert np.linalg.norm(A @ v - w[i] * (A + B) @ v) < 1e-6


# -- CSP -------------------------------------------------------------------

def axis_data(rng, n=40, T=200):
    X = np.zeros((n, 2, T))
    y = np.arange(n) % 2
    for i in range(n):
        X[i, y[i]] = rng.normal(size=T)
    return X, y


def test_csp_filters_align_with_axes():
    X, y = axis_data(np.random.default_rng(0))
    P = fit_csp(X, y, 2).projection
    cos = np.abs(P / np.linalg.norm(P, axis=1, keepdims=True))
    # top filter favours class 0 (channel 0), bottom filter channel 1
    assert cos[0, 0] > 0.99 and cos[1, 1] > 0.99


def test_csp_identical_classes_give_half():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(20, 4, 64))
    X = np.concatenate([base, base])
    y = np.repeat([0, 1], 20)
    fit = fit_csp(X, y, 4)
    np.testing.assert_allclose(fit.eigenvalues, 0.5, atol=1e-9)


@pytest.mark.parametrize("K", [2, 4])
def test_csp_rows_solve_generalized_problem(K):
    ds = synthesize(SyntheticSpec(n_classes=K, trials_per_class=20, n_subjects=1, seed=K))
    fit = fit_csp(ds.X, ds.y, 4, K)
    assert fit.projection.shape == (4, 8)
    per_problem = 4 // len(fit.class_covariances) if K > 2 else 4
    for r, (w, lam) in enumerate(zip(fit.projection, fit.eigenvalues)):
        S1, S2 = fit.class_covariances[r // per_problem if K > 2 else 0]
        assert np.linalg.norm(S1 @ w - lam * (S1 + S2) @ w) < 1e-6


def test_csp_features_shift_under_scaling():
    ds = synthesize(SyntheticSpec(trials_per_class=10, n_subjects=1))
    model = SpatialFeatureModel.from_data("csp", ds.X, ds.y, 2, 4)
    for c in (0.5, 3.0):
        np.testing.assert_allclose(model.features(c * ds.X), model.features(ds.X) + 2 * np.log(c), atol=1e-9)


# -- xDAWN -----------------------------------------------------------------

def erp_data(rng, n=60, C=6, T=100, target=1):
    t = np.arange(T) / 100
    template = np.exp(-((t - 0.4) ** 2) / 0.005)
    a = rng.normal(size=C)
    common = rng.normal(size=C) * 3.0  # strong spatially correlated background
    X = np.empty((n, C, T))
    y = np.arange(n) % 2
    for i in range(n):
        X[i] = np.outer(common, rng.normal(size=T)) + 0.05 * rng.normal(size=(C, T))
        if y[i] == target:
            X[i] += np.outer(a, template)
    return X, y


def snr(w, X):
    evoked = X.mean(axis=0)
    z_ev = w @ evoked
    resid = np.einsum("c,nct->nt", w, X - evoked)
    return z_ev.var() / resid.var()


def test_xdawn_beats_channels_and_random_directions():
    rng = np.random.default_rng(0)
    X, y = erp_data(rng)
    w = fit_xdawn(X, y, 1, target_class=1).projection[0]
    Xt = X[y == 1]
    best_channel = max(snr(np.eye(6)[c], Xt) for c in range(6))
    dirs = rng.normal(size=(2000, 6))
    best_random = max(snr(d / np.linalg.norm(d), Xt) for d in dirs)
    assert snr(w, Xt) >= 10 * best_channel
    assert snr(w, Xt) >= best_random


def test_xdawn_full_rank_and_target_asymmetry():
    X, y = erp_data(np.random.default_rng(1))
    P = fit_xdawn(X, y, 6, target_class=1).projection
    assert P.shape == (6, 6) and np.linalg.matrix_rank(P) == 6
    P0 = fit_xdawn(X, y, 2, target_class=0).projection
    P1 = fit_xdawn(X, y, 2, target_class=1).projection
    assert not np.allclose(np.abs(P0), np.abs(P1), atol=1e-3)


# -- training --------------------------------------------------------------

def separable(n_per=30, seed=0):
    X, y = axis_data(np.random.default_rng(seed), n=2 * n_per)
    return EegDataset(X, y, np.zeros(len(y)), 2)


def test_lr_head_fits_separable_features():
    ds = separable()
    model, trace = fit_model(ModelSpec("csp", n_filters=2), ds, TrainConfig(epochs=50))
    assert bca(predict(model, ds.X), ds.y, 2) >= 0.99
    assert trace[-1] < trace[0]


def test_shuffled_labels_give_chance():
    ds = synthesize(SyntheticSpec(n_subjects=1, trials_per_class=200, seed=2))
    y = np.random.default_rng(0).permutation(ds.y)
    shuffled = EegDataset(ds.X, y, ds.subjects, 2)
    idx = np.random.default_rng(1).permutation(len(ds))
    train_set, test = shuffled.subset(idx[:300]), shuffled.subset(idx[300:])
    model, _ = fit_model(ModelSpec("csp"), train_set, TrainConfig(epochs=50))
    assert abs(bca(predict(model, test.X), test.y, 2) - 0.5) <= 0.07


def test_zero_epochs_keeps_initialization():
    ds = synthesize(SyntheticSpec(trials_per_class=4, n_subjects=1))
    spec = ModelSpec("cnn")
    init = build_model(spec, ds, seed=3)
    trained, trace = fit_model(spec, ds, TrainConfig(epochs=0, seed=3))
    assert parameter_hash(init) == parameter_hash(trained)
    assert len(trace) == 1


def test_training_is_deterministic():
    ds = synthesize(SyntheticSpec(trials_per_class=8, n_subjects=1))
    a, ta = fit_model(ModelSpec("cnn"), ds, TrainConfig(epochs=2, seed=1))
    b, tb = fit_model(ModelSpec("cnn"), ds, TrainConfig(epochs=2, seed=1))
    assert parameter_hash(a) == parameter_hash(b) and ta == tb


def test_divergence_reports_epoch():
    ds = separable()
    with pytest.raises(TrainingError) as info:
        fit_model(ModelSpec("csp", n_filters=2, head_lr=1e300), ds, TrainConfig(epochs=5))
    assert info.value.epoch >= 1


def test_early_stopping_uses_validation():
    ds = synthesize(SyntheticSpec(trials_per_class=20, n_subjects=1))
    val = synthesize(SyntheticSpec(trials_per_class=10, n_subjects=1, seed=9))
    _, trace = fit_model(ModelSpec("csp"), ds, TrainConfig(epochs=500, patience=3), validation=val)
    assert len(trace) < 501


def test_memorizes_tiny_training_set():
    ds = synthesize(SyntheticSpec(trials_per_class=4, n_subjects=1))
    model, _ = fit_model(ModelSpec("cnn"), ds, TrainConfig(epochs=60, lr=1e-2))
    assert np.array_equal(predict(model, ds.X), ds.y)


# -- prediction ------------------------------------------------------------

def test_tie_goes_to_lower_class():
    model = SpatialFeatureModel("csp", np.eye(2), 10, 2, weight=np.zeros((2, 2)))
    X = np.random.default_rng(0).normal(size=(5, 2, 10))
    np.testing.assert_allclose(predict_proba(model, X), 0.5)
    assert predict(model, X).tolist() == [0] * 5


@pytest.mark.parametrize("preset", PRESETS)
def test_cnn_forward_shapes_and_normalization(preset):
    model = CompactCnn(8, 128, 4, CnnArch(preset), seed=0)
    X = np.random.default_rng(0).normal(size=(5, 8, 128))
    logits = model.logits(X).data
    assert logits.shape == (5, 4)
    p = predict_proba(model, X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert model.parameter_count() == sum(v.size for _, v in model.state())
    with pytest.raises(DimensionError):
        model.logits(np.zeros((2, 7, 128)))


def test_cnn_batch_order_independent():
    model = CompactCnn(8, 128, 2, seed=1)
    X = np.random.default_rng(2).normal(size=(6, 8, 128))
    perm = np.array([3, 0, 5, 1, 4, 2])
    full = predict_proba(model, X)
    np.testing.assert_allclose(predict_proba(model, X[perm]), full[perm], atol=1e-12)
    single = np.concatenate([predict_proba(model, X[i : i + 1]) for i in range(6)])
    np.testing.assert_allclose(single, full, atol=1e-12)


def test_depthwise_spatial_layer_has_one_group_per_map():
    model = CompactCnn(8, 128, 2, CnnArch("standard", temporal_filters=4, depth_multiplier=3))
    assert model.params["spatial"].shape == (12, 1, 8, 1)


@pytest.mark.parametrize("preset", PRESETS)
def test_cnn_loss_gradient_matches_finite_differences(preset):
    arch = CnnArch(preset, temporal_kernel=4, temporal_filters=2, depth_multiplier=2,
                   separable_kernel=4, separable_filters=3, pool1=2, pool2=2)
    model = CompactCnn(3, 16, 2, arch, seed=4)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(3, 3, 16))
    y = np.array([0, 1, 1])
    loss = gc.softmax_cross_entropy(model.logits(X), y)
    grads = gc.backward(loss)
    for name, p in model.params.items():
        def f(v, p=p):
            old = p.data
            p.data = v
            out = gc.softmax_cross_entropy(model.logits(X), y).item()
            p.data = old
            return out

        assert_grad_close(grads[p], numeric_grad(f, p.data.copy()), rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("kind", ["cnn", "csp", "xdawn"])
def test_filtered_logits_match_direct_path(kind):
    ds = synthesize(SyntheticSpec(trials_per_class=5, n_subjects=1))
    model = build_model(ModelSpec(kind), ds, seed=0)
    W = np.eye(8) + np.random.default_rng(1).normal(scale=0.1, size=(8, 8))
    direct = model.logits(W @ ds.X).data
    fast = model.filtered_logits(gc.Tensor(W), model.prepare_filtered(ds.X)).data
    np.testing.assert_allclose(fast, direct, atol=1e-10)


# -- serialization ---------------------------------------------------------

@pytest.mark.parametrize("spec", [ModelSpec("cnn", CnnArch(p)) for p in PRESETS] + [ModelSpec("csp"), ModelSpec("xdawn")],
                         ids=lambda s: s.label)
def test_model_round_trip_bit_exact(spec, tmp_path):
    ds = synthesize(SyntheticSpec(trials_per_class=6, n_subjects=1))
    model, _ = fit_model(spec, ds, TrainConfig(epochs=1))
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    X = np.random.default_rng(0).normal(size=(100, 8, 128))
    assert predict_proba(back, X).tobytes() == predict_proba(model, X).tobytes()
    assert parameter_hash(back) == parameter_hash(model)


def test_truncated_blob_is_rejected(tmp_path):
    model = CompactCnn(8, 128, 2)
    mpath, bpath = save_model(model, tmp_path / "m")
    bpath.write_bytes(bpath.read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_manifest_mismatch_is_rejected(tmp_path):
    model = CompactCnn(8, 128, 2)
    mpath, _ = save_model(model, tmp_path / "m")
    manifest = json.loads(mpath.read_text())
    manifest["parameters"][0]["shape"][0] += 1
    manifest["blob_bytes"] += 4 * int(np.prod(manifest["parameters"][0]["shape"][1:]))
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_model(mpath)


def test_model_from_another_process(tmp_path):
    script = f"""
import json
from advfilter.eegdata import SyntheticSpec, synthesize
from advfilter.metrics import bca
from advfilter.victims import ModelSpec, TrainConfig, fit_model, predict, save_model
ds = synthesize(SyntheticSpec(trials_per_class=10, n_subjects=1))
m, _ = fit_model(ModelSpec("csp"), ds, TrainConfig(epochs=5))
save_model(m, {str(tmp_path / 'ext')!r})
print(json.dumps(bca(predict(m, ds.X), ds.y, 2)))
"""
    out = subprocess.run([sys.executable, "-c", script], check=True, capture_output=True, text=True)
    ds = synthesize(SyntheticSpec(trials_per_class=10, n_subjects=1))
    model = load_model(tmp_path / "ext")
    assert bca(predict(model, ds.X), ds.y, 2) == json.loads(out.stdout)
