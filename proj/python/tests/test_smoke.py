import math

import numpy as np
import pytest

import envtrack as et


def test_gcmi_matches_gaussian_closed_form():
    rng = np.random.default_rng(0)
    r = 0.6
    x = rng.standard_normal(20000)
    y = r * x + math.sqrt(1 - r * r) * rng.standard_normal(20000)
    mi = et.gcmi(x.reshape(-1, 1), y.reshape(-1, 1))
    assert mi == pytest.approx(-0.5 * math.log2(1 - r * r), abs=0.02)


def test_gcmi_ignores_monotone_transforms():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3000, 2))
    y = (x[:, :1] + rng.standard_normal((3000, 1)))
    a = et.gcmi(x, y)
    b = et.gcmi(np.exp(x), y ** 3)
    assert a == pytest.approx(b, abs=1e-12)


def test_tmif_peaks_at_the_delay():
    rng = np.random.default_rng(2)
    env = rng.standard_normal(6000)
    eeg = np.roll(env, 10).reshape(-1, 1) + 0.5 * rng.standard_normal((6000, 1))
    out = et.tmif(eeg, env, multivariate=False)
    lags = np.asarray(out["lags_ms"])
    best = lags[np.argmax(out["values"][0])]
    assert best == pytest.approx(10 * 1000 / 128)


def test_welch_t_agrees_with_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(3)
    a, b = rng.normal(0, 1, 12), rng.normal(0.5, 2, 9)
    t, _ = et.welch_t(a, b)
    assert t == pytest.approx(stats.ttest_ind(a, b, equal_var=False).statistic, rel=1e-10)


def test_cluster_test_finds_a_planted_difference():
    rng = np.random.default_rng(4)
    base = np.zeros(91)
    base[40:55] = 1.0
    a = [base + 0.3 * rng.standard_normal(91) for _ in range(10)]
    b = [0.3 * rng.standard_normal(91) for _ in range(10)]
    res = et.temporal_cluster_test(a, b, n_perm=500, seed=7)
    assert res["clusters"], "expected at least one cluster"
    top = res["clusters"][0]
    assert top["sign"] == 1 and top["p"] < 0.01


def test_svm_and_roc():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(5)
    x = np.vstack([rng.normal(-1, 1, (30, 3)), rng.normal(1, 1, (30, 3))])
    y = [-1] * 30 + [1] * 30
    model = et.svm_fit(x, y, C=1.0)
    scores = model.decision_function(x)
    assert np.mean(np.sign(scores) == np.asarray(y)) > 0.8
    _, _, _, auc = et.roc_auc(scores, y)
    assert auc == pytest.approx(metrics.roc_auc_score(y, scores), abs=1e-12)


def test_knee_and_fisher_z():
    xs = np.arange(1, 26, 2, dtype=float)
    ys = 1 - np.exp(-xs / 4)
    knee = et.knee_point(xs, ys)
    assert knee is not None and 5 <= knee <= 11
    z, p = et.fisher_z_compare(0.8, 30, 0.3, 30)
    assert z == pytest.approx(2.899, abs=1e-3)
    assert 0 < p < 0.01


def test_synth_subject_and_errors():
    s = et.synth_subject("control", seed=3, duration_min=0.5, n_channels=4, snr_db=0.0)
    assert s["eeg"].shape == (int(0.5 * 60 * 128), 4)
    assert set(s["envelopes"]) == {"broad", "delta", "theta", "alpha", "beta", "gamma"}
    with pytest.raises(et.InvalidInput):
        et.synth_subject("nobody")
    with pytest.raises(ValueError):
        et.band_filter(np.zeros((100, 1)), 128.0, "kappa")
