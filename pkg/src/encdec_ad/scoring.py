"""Reconstruction-error Gaussian and Mahalanobis anomaly scores.

Error vectors are ``|x - x'|`` per point. A single normal distribution is fit
by maximum likelihood to the pooled error vectors of the early-stopping set;
a point's anomaly score is the squared Mahalanobis distance of its error
vector under that fit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .lstm import EncDecModel, reconstruct_batch
from .numerics import SpdFactorization, factor_spd, mle_covariance, solve_spd

FORMAT_VERSION = 1
BASE_REGULARIZATION = 1e-9


def error_vectors(window, reconstruction) -> np.ndarray:
    """Absolute reconstruction error per point, shape ``(L, m)``.

    ``reconstruction`` may be a :class:`~encdec_ad.lstm.Reconstruction` or an
    array aligned to the window's time order. Stacks of windows work too.
    """
    x = np.asarray(getattr(window, "values", window), dtype=np.float64)
    r = np.asarray(getattr(reconstruction, "values", reconstruction), dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeError(f"window shape {x.shape} != reconstruction shape {r.shape}")
    return np.abs(x - r)


@dataclass(frozen=True)
class GaussianErrorModel:
    mean: np.ndarray
    cov: np.ndarray
    factor: SpdFactorization
    n_samples: int

    @property
    def m(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "gaussian_error_model",
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "regularization": self.factor.regularization,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianErrorModel:
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "gaussian_error_model":
            raise ValueError("unsupported error-model document")
        cov = np.asarray(d["cov"], dtype=np.float64)
        # refactor at the stored ridge so scores match the original fit exactly
        f = factor_spd(cov, d["regularization"])
        return cls(np.asarray(d["mean"], dtype=np.float64), cov, f, int(d["n_samples"]))


def fit_error_model(errors) -> GaussianErrorModel:
    """MLE normal fit to error vectors of shape ``(N, m)`` (extra leading axes are pooled)."""
    e = np.asarray(errors, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    e = e.reshape(-1, e.shape[-1])
    n, m = e.shape
    if n < m + 1:
        raise ValueError(f"need at least m+1={m + 1} error vectors, got {n}")
    mu, cov = mle_covariance(e)
    mean_diag = float(np.mean(np.diag(cov)))
    scale = mean_diag if mean_diag > 0 else 1.0
    f = factor_spd(cov, BASE_REGULARIZATION * scale)
    return GaussianErrorModel(mu, cov, f, n)


def anomaly_score(gm: GaussianErrorModel, e) -> np.ndarray | float:
    """Squared Mahalanobis distance ``(e - mu)^T Sigma^-1 (e - mu)``.

    Accepts one vector of length ``m`` (returns a float) or any array whose last
    axis has length ``m`` (returns scores over the leading axes).
    """
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != gm.m:
        raise ShapeError(f"error vectors have dimension {e.shape[-1]}, model has {gm.m}")
    d = (e - gm.mean).reshape(-1, gm.m)
    u = solve_spd(gm.factor, d.T).T
    a = np.maximum(np.einsum("nm,nm->n", d, u), 0.0)
    if e.ndim == 1:
        return float(a[0])
    return a.reshape(e.shape[:-1])


@dataclass(frozen=True)
class ScoreSeries:
    """Per-point scores, shape ``(n_windows, L)``, with window provenance."""

    scores: np.ndarray
    window_ids: np.ndarray
    series_ids: tuple
    starts: np.ndarray

    def rows(self):
        for w in range(self.scores.shape[0]):
            for pos in range(self.scores.shape[1]):
                yield (
                    self.series_ids[w],
                    int(self.window_ids[w]),
                    pos,
                    int(self.starts[w]) + pos,
                    float(self.scores[w, pos]),
                )


def window_errors(model: EncDecModel, ws, mode: str = "autoregressive") -> np.ndarray:
    """Error vectors for every window, shape ``(n, L, m)``.

    Windows are reconstructed one at a time so each result depends only on its
    own window (batched matrix products can round differently per batch).
    """
    X = np.asarray(getattr(ws, "values", ws), dtype=np.float64)
    out = np.zeros((X.shape[0], model.L, model.m))
    for i in range(X.shape[0]):
        out[i] = error_vectors(X[i], reconstruct_batch(model, X[i : i + 1], mode=mode)[0])
    return out


def score_windows(model: EncDecModel, gm: GaussianErrorModel, ws, mode: str = "autoregressive") -> ScoreSeries:
    """Reconstruct every window (autoregressively by default) and score each point."""
    X = np.asarray(getattr(ws, "values", ws), dtype=np.float64)
    n = X.shape[0]
    errs = window_errors(model, X, mode=mode)
    scores = np.zeros((n, model.L))
    for i in range(n):
        scores[i] = anomaly_score(gm, errs[i])
    ids = np.asarray(getattr(ws, "ids", np.arange(n)))
    series = tuple(getattr(ws, "series_ids", ("",) * n))
    starts = np.asarray(getattr(ws, "starts", np.zeros(n, dtype=int)))
    return ScoreSeries(scores, ids, series, starts)


def write_scores_csv(path, series: ScoreSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "window_index", "position", "global_time_index", "score"])
        for sid, wid, pos, gt, sc in series.rows():
            w.writerow([sid, wid, pos, gt, repr(sc)])


def read_scores_csv(path) -> ScoreSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    by_window: dict[int, list] = {}
    meta: dict[int, tuple] = {}
    for r in rows:
        wid = int(r["window_index"])
        by_window.setdefault(wid, []).append((int(r["position"]), float(r["score"])))
        pos = int(r["position"])
        meta.setdefault(wid, (r["series_id"], int(r["global_time_index"]) - pos))
    ids = list(by_window)
    scores = np.array([[s for _, s in sorted(by_window[i])] for i in ids]) if ids else np.zeros((0, 0))
    return ScoreSeries(
        scores,
        np.asarray(ids),
        tuple(meta[i][0] for i in ids),
        np.asarray([meta[i][1] for i in ids]),
    )


def save_error_model(path, gm: GaussianErrorModel, extra: dict | None = None) -> None:
    doc = gm.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_error_model(path) -> GaussianErrorModel:
    with open(path, encoding="utf-8") as fh:
        return GaussianErrorModel.from_dict(json.load(fh))
