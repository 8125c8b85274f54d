import numpy as np
import pytest

from conftest import random_model
from encdec_ad.detection import select_threshold_unsupervised
from encdec_ad.errors import ShapeError
from encdec_ad.lstm import reconstruct
from encdec_ad.numerics import factor_spd
from encdec_ad.scoring import (
    GaussianErrorModel,
    anomaly_score,
    error_vectors,
    fit_error_model,
    load_error_model,
    read_scores_csv,
    save_error_model,
    score_windows,
    write_scores_csv,
)
from encdec_ad.training import TrainConfig, train


def _gm(mean, cov):
    cov = np.asarray(cov, dtype=float)
    return GaussianErrorModel(np.asarray(mean, float), cov, factor_spd(cov, 0.0), 100)


def test_error_vector_examples(rng):
    x = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(error_vectors(x, x), np.zeros((4, 2)))
    np.testing.assert_array_equal(error_vectors([[1.0, -2.0]], [[0.5, -1.0]]), [[0.5, 1.0]])
    y = rng.normal(size=(4, 2))
    e = error_vectors(x, y)
    for i in range(4):
        for j in range(2):
            assert e[i, j] == abs(x[i, j] - y[i, j])
    with pytest.raises(ShapeError):
        error_vectors(x, y[:3])


def test_error_vectors_accept_reconstruction(rng):
    model = random_model(2, 3, 5, seed=0)
    x = rng.normal(size=(5, 2))
    r = reconstruct(model, x)
    np.testing.assert_array_equal(error_vectors(x, r), np.abs(x - r.values))


def test_fit_examples():
    gm = fit_error_model(np.array([[1.0], [3.0]]))
    assert gm.mean[0] == 2.0 and gm.cov[0, 0] == 1.0


def test_fit_identical_errors_uses_ridge():
    gm = fit_error_model(np.tile([0.25, 0.5], (10, 1)))
    np.testing.assert_array_equal(gm.mean, [0.25, 0.5])
    np.testing.assert_array_equal(gm.cov, np.zeros((2, 2)))
    assert gm.factor.regularization > 0
    assert anomaly_score(gm, gm.mean) == 0.0


def test_fit_matches_closed_form(rng):
    e = np.abs(rng.normal(size=(200, 2)))
    gm = fit_error_model(e)
    mu = [sum(e[:, j]) / 200 for j in range(2)]
    cov = [[sum((e[k, a] - mu[a]) * (e[k, b] - mu[b]) for k in range(200)) / 200 for b in range(2)] for a in range(2)]
    np.testing.assert_allclose(gm.mean, mu, atol=1e-10)
    np.testing.assert_allclose(gm.cov, cov, atol=1e-10)


def test_fit_requires_enough_vectors():
    with pytest.raises(ValueError):
        fit_error_model(np.ones((2, 2)))


def test_score_examples():
    gm = _gm([0.3, 0.1], [[2.0, 0.3], [0.3, 1.0]])
    assert anomaly_score(gm, [0.3, 0.1]) == 0.0
    gm = _gm([0.0, 0.0, 0.0], np.eye(3))
    assert anomaly_score(gm, [1.0, 2.0, 2.0]) == pytest.approx(9.0, rel=1e-14)
    gm = _gm([0.0, 0.0], np.diag([2.0, 0.5]))
    assert anomaly_score(gm, [2.0, 1.0]) == pytest.approx(4.0, rel=1e-14)


def test_score_permutation_invariance(rng):
    a = rng.normal(size=(4, 4))
    cov = a @ a.T + np.eye(4)
    mu = rng.normal(size=4)
    e = rng.normal(size=(20, 4))
    perm = np.array([2, 0, 3, 1])
    s1 = anomaly_score(_gm(mu, cov), e)
    s2 = anomaly_score(_gm(mu[perm], cov[np.ix_(perm, perm)]), e[:, perm])
    np.testing.assert_allclose(s1, s2, rtol=1e-10)


def test_isotropic_scaling_preserves_ordering(rng):
    mu = rng.normal(size=3)
    e = rng.normal(size=(50, 3))
    s1 = anomaly_score(_gm(mu, 0.5 * np.eye(3)), e)
    np.testing.assert_allclose(s1, ((e - mu) ** 2).sum(axis=1) / 0.5, rtol=1e-12)
    s2 = anomaly_score(_gm(mu, 4.0 * np.eye(3)), e)
    np.testing.assert_allclose(s2, s1 / 8.0, rtol=1e-12)
    np.testing.assert_array_equal(np.argsort(s1), np.argsort(s2))


@pytest.mark.parametrize("m", [1, 2, 4])
def test_chi_square_mean(m):
    rng = np.random.default_rng(m)
    a = rng.normal(size=(m, m))
    cov = a @ a.T + 0.1 * np.eye(m)
    mu = rng.normal(size=m)
    samples = rng.multivariate_normal(mu, cov, size=100_000)
    assert abs(anomaly_score(_gm(mu, cov), samples).mean() - m) < 0.1 * m


def _trained(L=12, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(L)
    X = np.sin(2 * np.pi * t / 12 + rng.uniform(0, 2 * np.pi, 24)[:, None])[..., None] + 0.05 * rng.normal(size=(24, L, 1))
    model, _ = train(X[:12], X[12:18], (1, 8, L), TrainConfig(learning_rate=1e-2, max_epochs=120, patience=30, batch_size=4))
    return model, X


def test_score_windows_properties():
    model, X = _trained()
    gm = fit_error_model(np.abs(X[12:18] - np.stack([reconstruct(model, x).values for x in X[12:18]])).reshape(-1, 1))
    ws = X[18:]
    a = score_windows(model, gm, ws)
    b = score_windows(model, gm, ws)
    np.testing.assert_array_equal(a.scores, b.scores)
    perm = np.array([3, 1, 5, 0, 2, 4])
    np.testing.assert_array_equal(score_windows(model, gm, ws[perm]).scores, a.scores[perm])
    assert a.scores.shape == (6, 12) and np.all(a.scores >= 0)
    # spiked windows score above the validation-set rule, their clean copies mostly below
    tau = select_threshold_unsupervised(score_windows(model, gm, X[12:18]).scores).tau
    spiked = ws.copy()
    spiked[:, 4:7] = 3.0
    assert score_windows(model, gm, spiked).scores.max(axis=1).min() > tau
    assert np.median(a.scores) < tau


def test_score_windows_uses_autoregressive_decoding():
    model, X = _trained()
    gm = fit_error_model(np.abs(np.random.default_rng(0).normal(size=(50, 1))))
    ar = score_windows(model, gm, X[:3]).scores
    expect = anomaly_score(gm, np.abs(X[:3] - np.stack([reconstruct(model, x, "autoregressive").values for x in X[:3]])))
    np.testing.assert_allclose(ar, expect, rtol=1e-12)
    tf = score_windows(model, gm, X[:3], mode="teacher_forced").scores
    assert not np.array_equal(ar, tf)


def test_error_model_roundtrip(tmp_path, rng):
    gm = fit_error_model(np.abs(rng.normal(size=(40, 3))))
    save_error_model(tmp_path / "gm.json", gm)
    back = load_error_model(tmp_path / "gm.json")
    e = np.abs(rng.normal(size=(10, 3)))
    np.testing.assert_array_equal(anomaly_score(gm, e), anomaly_score(back, e))
    assert back.factor.regularization == gm.factor.regularization


def test_scores_csv_roundtrip(tmp_path):
    model, X = _trained()
    gm = fit_error_model(np.abs(np.random.default_rng(1).normal(size=(50, 1))))
    s = score_windows(model, gm, X[:4])
    write_scores_csv(tmp_path / "s.csv", s)
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "series_id,window_index,position,global_time_index,score"
    back = read_scores_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.scores, s.scores)
