"""End-to-end stages: prepare, train, fit error model, threshold, score, evaluate.

Each stage has an in-memory function and a ``*_stage`` wrapper that reads
its inputs from, and writes its outputs to, an experiment directory. Every
JSON artifact carries ``format_version`` and the ``config_hash`` of the run
that wrote it; downstream stages refuse artifacts from another config.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from .config import ExperimentConfig
from .detection import (
    Metrics,
    Threshold,
    classify,
    evaluate,
    format_table,
    ranking_auc,
    save_json,
    select_threshold_supervised,
    select_threshold_unsupervised,
    table_row,
)
from .errors import ArtifactMismatchError, DegenerateValidationError, EncDecError
from .lstm import EncDecModel, reconstruct_batch, window_losses
from .plotting import window_figure
from .scoring import (
    GaussianErrorModel,
    ScoreSeries,
    fit_error_model,
    read_scores_csv,
    score_windows,
    window_errors,
    write_scores_csv,
)
from .synthetic import sine_series
from .training import TrainReport, load_checkpoint, train

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = 1


# ------------------------------------------------------------ artifact I/O


def _stamp(doc: dict, cfg: ExperimentConfig) -> dict:
    return {**doc, "format_version": doc.get("format_version", ARTIFACT_VERSION), "config_hash": cfg.config_hash()}


def _read_artifact(path, cfg: ExperimentConfig, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != ARTIFACT_VERSION:
        raise ArtifactMismatchError(f"{path}: format_version {doc.get('format_version')!r}, expected {ARTIFACT_VERSION}")
    if doc.get("config_hash") != cfg.config_hash():
        raise ArtifactMismatchError(f"{path} was produced by config {doc.get('config_hash')}, current config is {cfg.config_hash()}")
    if kind is not None and doc.get("kind") != kind:
        raise ArtifactMismatchError(f"{path}: expected a {kind} artifact, found {doc.get('kind')!r}")
    return doc


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_json(path, doc)


def write_config(cfg: ExperimentConfig, out) -> None:
    _write_json(Path(out) / "config.json", _stamp({"kind": "config", **cfg.to_dict()}, cfg))


# ----------------------------------------------------------------- prepare


def load_frames(cfg: ExperimentConfig) -> list[D.TimeSeriesFrame]:
    if cfg.synthetic:
        kw = {"L": cfg.L * cfg.downsample, "seed": cfg.seed, **cfg.synthetic}
        return [sine_series(**kw)]
    label_path = cfg.resolve(cfg.labels) if cfg.labels else None
    if label_path is not None and not label_path.exists():
        raise FileNotFoundError(f"label file {label_path} not found")
    frames = []
    for s in cfg.series:
        p = cfg.resolve(s)
        if not p.exists():
            raise FileNotFoundError(f"series file {p} not found (set {cfg.__class__.__name__}.data_dir or $ENCDEC_AD_DATA_DIR)")
        frames.append(D.load_csv(p, columns=cfg.columns, label_path=label_path))
    return frames


def _required_sets(cfg: ExperimentConfig) -> tuple:
    if cfg.threshold_mode == "supervised":
        return ("sN", "vN1", "vN2", "vA")
    return ("sN", "vN1")


def prepare(cfg: ExperimentConfig, frames=None) -> tuple[D.DatasetSplit, dict]:
    """Windows, split and (sN-fit) normalization / PCA. Returns the split and its manifest."""
    frames = load_frames(cfg) if frames is None else frames
    dims = frames[0].m
    windows = []
    next_id = 0
    for fr in frames:
        if fr.m != dims:
            raise ValueError(f"series {fr.series_id} has {fr.m} channels, expected {dims}")
        ds = D.downsample(fr, cfg.downsample, cfg.downsample_method)
        ws = D.make_windows(ds, cfg.L, cfg.step, first_id=next_id)
        next_id += len(ws)
        windows.append(ws)
    allw = D.WindowSet.concat(windows)
    normal = allw.subset(np.flatnonzero(~allw.labels))
    anomalous = allw.subset(np.flatnonzero(allw.labels))
    sp = D.split(normal, anomalous, cfg.split_ratios, cfg.anomalous_split_ratios, seed=cfg.seed, require=_required_sets(cfg))

    extra: dict = {}
    if cfg.normalize:
        stats = D.fit_normalization(sp.sN)
        sp.sets = {k: D.apply_normalization(v, stats) for k, v in sp.sets.items()}
        extra["normalization"] = stats.to_dict()
    if cfg.pca and dims > 1:
        pc = D.fit_pca(sp.sN)
        sp.sets = {k: D.reduce_to_first_pc(v, pc) for k, v in sp.sets.items()}
        extra["pca"] = {
            "direction": pc.direction.tolist(),
            "mean": pc.mean.tolist(),
            "explained_variance_ratio": pc.explained_variance_ratio,
        }
        logger.info("first principal component explains %.3f of the variance", pc.explained_variance_ratio)

    man = D.DatasetManifest(
        name=cfg.name,
        predictable=cfg.predictable,
        dimensions=dims,
        periodicity=cfg.periodicity,
        n_sequences=len(frames),
        n_normal=len(normal),
        n_anomalous=len(anomalous),
    )
    manifest = {
        **man.to_dict(),
        "L": cfg.L,
        "m_model": sp.sN.m,
        "set_sizes": {k: len(v) for k, v in sp.sets.items()},
        **extra,
        "config_hash": cfg.config_hash(),
    }
    return sp, manifest


def prepare_stage(cfg: ExperimentConfig, out) -> tuple[D.DatasetSplit, dict]:
    sp, manifest = prepare(cfg)
    write_config(cfg, out)
    D.write_prepared(Path(out) / "prepared", sp, manifest)
    return sp, manifest


def read_prepared_stage(cfg: ExperimentConfig, out) -> tuple[D.DatasetSplit, dict]:
    sp, manifest = D.read_prepared(Path(out) / "prepared")
    if manifest.get("config_hash") != cfg.config_hash():
        raise ArtifactMismatchError(
            f"prepared dataset was produced by config {manifest.get('config_hash')}, current config is {cfg.config_hash()}"
        )
    return sp, manifest


# ------------------------------------------------------------------- train


def train_models(cfg: ExperimentConfig, sp: D.DatasetSplit, checkpoint_dir=None, resume=None) -> dict[int, tuple[EncDecModel, TrainReport]]:
    tc = cfg.train_config()
    out = {}
    for c in cfg.c:
        ckpt = None
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            ckpt = Path(checkpoint_dir) / f"c{c}.ckpt.json"
        res = None
        if resume is not None:
            r = Path(resume)
            if r.is_dir():
                res = r / f"c{c}.ckpt.json" if (r / f"c{c}.ckpt.json").exists() else None
            else:
                doc = load_checkpoint(r)
                res = doc if doc["model"]["c"] == c else None
        logger.info("training c=%d on %d windows", c, len(sp.sN))
        model, report = train(sp.sN, sp.vN1, (sp.sN.m, c, cfg.L), tc, checkpoint_path=ckpt, resume=res)
        out[c] = (model, report)
    return out


def _model_path(out, c) -> Path:
    return Path(out) / "models" / f"model_c{c}.json"


def train_stage(cfg: ExperimentConfig, out, resume=None):
    sp, _ = read_prepared_stage(cfg, out)
    models = train_models(cfg, sp, checkpoint_dir=Path(out) / "checkpoints", resume=resume)
    for c, (model, report) in models.items():
        _write_json(_model_path(out, c), _stamp(model.to_dict(), cfg))
        _write_json(Path(out) / "models" / f"train_report_c{c}.json", _stamp({"kind": "train_report", "c": c, **report.to_dict()}, cfg))
    return models


def load_models(cfg: ExperimentConfig, out) -> dict[int, EncDecModel]:
    return {c: EncDecModel.from_dict(_read_artifact(_model_path(out, c), cfg, "encdec_model")) for c in cfg.c}


# ------------------------------------------------------------- error model


def fit_error_models(cfg: ExperimentConfig, models: dict, sp: D.DatasetSplit) -> dict[int, GaussianErrorModel]:
    """Gaussian fit to the pooled vN1 error vectors, one per trained model."""
    gms = {}
    for c, model in models.items():
        errs = window_errors(model, sp.vN1, mode=cfg.decode_mode)
        gms[c] = fit_error_model(errs.reshape(-1, model.m))
    return gms


def _gm_path(out, c) -> Path:
    return Path(out) / "error_models" / f"error_model_c{c}.json"


def fit_error_model_stage(cfg: ExperimentConfig, out):
    sp, _ = read_prepared_stage(cfg, out)
    models = load_models(cfg, out)
    gms = fit_error_models(cfg, models, sp)
    for c, gm in gms.items():
        _write_json(_gm_path(out, c), _stamp(gm.to_dict(), cfg))
    return gms


def load_error_models(cfg: ExperimentConfig, out) -> dict[int, GaussianErrorModel]:
    return {c: GaussianErrorModel.from_dict(_read_artifact(_gm_path(out, c), cfg, "gaussian_error_model")) for c in cfg.c}


# --------------------------------------------------------------- threshold


@dataclass
class Selection:
    c: int
    threshold: Threshold
    candidates: list  # per-c summaries

    def to_dict(self) -> dict:
        return {"kind": "selection", "c": self.c, "threshold": self.threshold.to_dict(), "candidates": self.candidates}

    @classmethod
    def from_dict(cls, d: dict) -> Selection:
        return cls(d["c"], Threshold.from_dict(d["threshold"]), d["candidates"])


def select(cfg: ExperimentConfig, models: dict, gms: dict, sp: D.DatasetSplit) -> Selection:
    """Choose c and tau.

    Supervised: per model, the F_beta-optimal tau on vN2 and vA points; the model
    with the highest F_beta wins. Unsupervised: the model with the lowest mean
    vN1 reconstruction loss wins and tau = mean + std of its vN1 scores.
    """
    candidates = []
    best = None
    if cfg.threshold_mode == "supervised":
        val = D.WindowSet.concat([sp.vN2, sp.vA])
        if len(sp.vA) == 0 or len(sp.vN2) == 0:
            raise DegenerateValidationError("supervised thresholding needs non-empty vN2 and vA")
        for c in cfg.c:
            s = score_windows(models[c], gms[c], val, mode=cfg.decode_mode)
            thr = select_threshold_supervised(s.scores, val.truth(), cfg.beta)
            candidates.append({"c": c, "tau": thr.tau, "f_beta": thr.best_f_beta})
            if best is None or thr.best_f_beta > best[1].best_f_beta:
                best = (c, thr)
    else:
        for c in cfg.c:
            loss = float(window_losses(models[c], sp.vN1.values).mean())
            candidates.append({"c": c, "vN1_loss": loss})
            if best is None or loss < best[1]:
                best = (c, loss)
        c = best[0]
        s = score_windows(models[c], gms[c], sp.vN1, mode=cfg.decode_mode)
        best = (c, select_threshold_unsupervised(s.scores))
    return Selection(best[0], best[1], candidates)


def threshold_stage(cfg: ExperimentConfig, out) -> Selection:
    sp, _ = read_prepared_stage(cfg, out)
    sel = select(cfg, load_models(cfg, out), load_error_models(cfg, out), sp)
    _write_json(Path(out) / "threshold.json", _stamp(sel.to_dict(), cfg))
    return sel


def load_selection(cfg: ExperimentConfig, out) -> Selection:
    return Selection.from_dict(_read_artifact(Path(out) / "threshold.json", cfg, "selection"))


# ------------------------------------------------------------ score/evaluate


def test_set(sp: D.DatasetSplit) -> D.WindowSet:
    return D.WindowSet.concat([sp.tN, sp.tA])


def score_stage(cfg: ExperimentConfig, out) -> ScoreSeries:
    sp, _ = read_prepared_stage(cfg, out)
    sel = load_selection(cfg, out)
    model = EncDecModel.from_dict(_read_artifact(_model_path(out, sel.c), cfg, "encdec_model"))
    gm = GaussianErrorModel.from_dict(_read_artifact(_gm_path(out, sel.c), cfg, "gaussian_error_model"))
    scores = score_windows(model, gm, test_set(sp), mode=cfg.decode_mode)
    write_scores_csv(Path(out) / "scores.csv", scores)
    _write_json(Path(out) / "scores.json", _stamp({"kind": "scores", "c": sel.c, "csv": "scores.csv", "n_windows": int(scores.scores.shape[0])}, cfg))
    return scores


@dataclass
class Evaluation:
    metrics: Metrics
    window_auc: float | None
    c: int
    threshold: Threshold
    row: dict

    def to_dict(self) -> dict:
        return {
            "kind": "evaluation",
            "metrics": self.metrics.to_dict(),
            "window_mean_score_auc": self.window_auc,
            "c": self.c,
            "threshold": self.threshold.to_dict(),
            "table_row": self.row,
        }


def evaluate_scores(cfg: ExperimentConfig, scores: ScoreSeries, truth_windows: np.ndarray, sel: Selection) -> Evaluation:
    """Point-level metrics where every point of an anomalous window counts as anomalous."""
    truth_windows = np.asarray(truth_windows, dtype=bool)
    truth = np.repeat(truth_windows[:, None], scores.scores.shape[1], axis=1)
    pred = classify(scores.scores, sel.threshold.tau)
    m = evaluate(pred, truth, cfg.beta)
    auc = None
    if truth_windows.any() and not truth_windows.all():
        auc = ranking_auc(scores.scores.mean(axis=1), truth_windows)
    return Evaluation(m, auc, sel.c, sel.threshold, table_row(cfg.name, cfg.L, sel.c, m))


def evaluate_stage(cfg: ExperimentConfig, out) -> Evaluation:
    sp, manifest = read_prepared_stage(cfg, out)
    sel = load_selection(cfg, out)
    _read_artifact(Path(out) / "scores.json", cfg, "scores")
    scores = read_scores_csv(Path(out) / "scores.csv")
    labels = {int(i): bool(l) for i, l in zip(test_set(sp).ids, test_set(sp).labels)}
    truth = np.asarray([labels[int(i)] for i in scores.window_ids], dtype=bool)
    ev = evaluate_scores(cfg, scores, truth, sel)
    doc = ev.to_dict()
    if "pca" in manifest:
        doc["explained_variance_ratio"] = manifest["pca"]["explained_variance_ratio"]
    _write_json(Path(out) / "metrics.json", _stamp(doc, cfg))
    with open(Path(out) / "metrics.txt", "w", encoding="utf-8") as fh:
        fh.write(format_table([ev.row]))
    return ev


# ---------------------------------------------------------------------- run


def plot_stage(cfg: ExperimentConfig, out) -> list[Path]:
    sp, _ = read_prepared_stage(cfg, out)
    sel = load_selection(cfg, out)
    model = EncDecModel.from_dict(_read_artifact(_model_path(out, sel.c), cfg, "encdec_model"))
    gm = GaussianErrorModel.from_dict(_read_artifact(_gm_path(out, sel.c), cfg, "gaussian_error_model"))
    paths = []
    for tag, ws in (("N", sp.tN), ("A", sp.tA)):
        chosen = ws.subset(np.arange(min(cfg.n_plots, len(ws))))
        if not len(chosen):
            continue
        recon = reconstruct_batch(model, chosen.values, mode=cfg.decode_mode)
        scores = score_windows(model, gm, chosen, mode=cfg.decode_mode).scores
        for i in range(len(chosen)):
            p = Path(out) / "plots" / f"{tag}_window{int(chosen.ids[i])}.svg"
            window_figure(
                p,
                chosen.values[i],
                recon[i],
                scores[i],
                point_labels=chosen.point_labels[i],
                title=f"{cfg.name} {'anomalous' if tag == 'A' else 'normal'} window {int(chosen.ids[i])}",
            )
            paths.append(p)
    return paths


STAGES = ("prepare", "train", "fit-error-model", "threshold", "score", "evaluate", "plots")


def run_experiment(cfg: ExperimentConfig, out, resume=None) -> Evaluation:
    """Every stage in order; the returned evaluation is also written to ``metrics.json``."""
    cfg.validate()
    out = Path(out)
    steps = (
        ("prepare", lambda: prepare_stage(cfg, out)),
        ("train", lambda: train_stage(cfg, out, resume=resume)),
        ("fit-error-model", lambda: fit_error_model_stage(cfg, out)),
        ("threshold", lambda: threshold_stage(cfg, out)),
        ("score", lambda: score_stage(cfg, out)),
        ("evaluate", lambda: evaluate_stage(cfg, out)),
        ("plots", lambda: plot_stage(cfg, out)),
    )
    result = None
    for name, fn in steps:
        try:
            r = fn()
        except (EncDecError, OSError, ValueError) as exc:
            exc.stage = name
            raise
        if name == "evaluate":
            result = r
    return result
