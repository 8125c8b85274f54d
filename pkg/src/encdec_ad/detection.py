"""Thresholds, point classification and detection metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateValidationError, ShapeError

FORMAT_VERSION = 1


def f_beta(precision, recall, beta: float):
    """``(1 + b^2) P R / (b^2 P + R)``, defined as 0 where ``P = R = 0``.

    Works elementwise on arrays.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    b2 = beta * beta
    den = b2 * p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(den > 0, (1 + b2) * p * r / np.where(den > 0, den, 1.0), 0.0)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class Threshold:
    tau: float
    method: str
    beta: float | None = None
    n_candidates: int | None = None
    best_f_beta: float | None = None
    mu_a: float | None = None
    sigma_a: float | None = None

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "threshold", **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> Threshold:
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "threshold":
            raise ValueError("unsupported threshold document")
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _flat(scores) -> np.ndarray:
    return np.asarray(getattr(scores, "scores", scores), dtype=np.float64).ravel()


def candidate_thresholds(scores) -> np.ndarray:
    s = _flat(scores)
    u = np.unique(s)
    return np.append(u, u[-1] + 1.0)


def select_threshold_supervised(scores, labels, beta: float) -> Threshold:
    """Pick the tau maximising point-level F_beta of ``score > tau``.

    Candidates are the distinct observed scores plus one sentinel above the
    maximum (nothing flagged). F_beta is piecewise constant between candidates,
    so this search is exact. Ties go to the largest tau.
    """
    s = _flat(scores)
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DegenerateValidationError("degenerate validation set: need both anomalous and normal points")

    cands = candidate_thresholds(s)
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = pos.size - np.searchsorted(pos, cands, side="right")
    fp = neg.size - np.searchsorted(neg, cands, side="right")
    flagged = tp + fp
    precision = np.where(flagged > 0, tp / np.maximum(flagged, 1), 0.0)
    recall = tp / n_pos
    f = f_beta(precision, recall, beta)
    best = f.max()
    idx = int(np.flatnonzero(f == best)[-1])
    return Threshold(
        tau=float(cands[idx]),
        method="supervised",
        beta=float(beta),
        n_candidates=int(cands.size),
        best_f_beta=float(best),
    )


def select_threshold_unsupervised(scores) -> Threshold:
    """tau = mean + population standard deviation of (normal) scores."""
    s = _flat(scores)
    if s.size < 2:
        raise ValueError("need at least 2 scores")
    mu = float(s.mean())
    sigma = float(s.std())
    return Threshold(tau=mu + sigma, method="unsupervised", mu_a=mu, sigma_a=sigma)


def classify(scores, tau: float) -> np.ndarray:
    """``True`` (anomalous) where the score is strictly above ``tau``."""
    return np.asarray(getattr(scores, "scores", scores), dtype=np.float64) > tau


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f_beta: float
    beta: float
    tpr: float
    fpr: float
    plr: float  # inf when FPR = 0 < TPR, nan when TPR = FPR = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plr"] = _plr_out(self.plr)
        return {"format_version": FORMAT_VERSION, "kind": "metrics", **d}

    @classmethod
    def from_dict(cls, d: dict) -> Metrics:
        vals = {k: d[k] for k in cls.__dataclass_fields__}
        vals["plr"] = {"inf": math.inf, "undef": math.nan}.get(vals["plr"], vals["plr"])
        return cls(**vals)


def _plr_out(v: float):
    if math.isnan(v):
        return "undef"
    if math.isinf(v):
        return "inf"
    return v


def evaluate(pred, truth, beta: float = 0.1) -> Metrics:
    """Point-level confusion counts and rates; "anomalous" is the positive class."""
    p = np.asarray(pred, dtype=bool).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"prediction length {p.size} != truth length {t.size}")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    tn = int(np.sum(~p & ~t))
    fn = int(np.sum(~p & t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    tpr = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    if fpr > 0:
        plr = tpr / fpr
    elif tpr > 0:
        plr = math.inf
    else:
        plr = math.nan
    return Metrics(
        tp=tp, fp=fp, tn=tn, fn=fn,
        precision=precision,
        recall=tpr,
        f_beta=f_beta(precision, tpr, beta),
        beta=float(beta),
        tpr=tpr,
        fpr=fpr,
        plr=plr,
    )


def ranking_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties count half)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    r = rankdata(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


TABLE_COLUMNS = ("Dataset", "L", "c", "beta", "P", "R", "F_beta", "TPR/FPR")


def table_row(name: str, L: int, c: int, m: Metrics) -> dict:
    plr = _plr_out(m.plr)
    return {
        "Dataset": name,
        "L": L,
        "c": c,
        "beta": m.beta,
        "P": round(m.precision, 2),
        "R": round(m.recall, 3),
        "F_beta": round(m.f_beta, 2),
        "TPR/FPR": plr if isinstance(plr, str) else round(plr, 1),
    }


def format_table(rows: list[dict]) -> str:
    cells = [list(TABLE_COLUMNS)] + [[str(r[k]) for k in TABLE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_COLUMNS))]
    lines = [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def save_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
