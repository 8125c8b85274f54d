"""Mini-batch Adam training with early stopping on a held-out normal set."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DivergenceError
from .lstm import EncDecModel, loss_and_gradients, window_losses
from .numerics import make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: a.ravel().tolist() for k, a in self.m.items()},
            "v": {k: a.ravel().tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, like: dict[str, np.ndarray]) -> AdamState:
        return cls(
            {k: np.asarray(d["m"][k]).reshape(like[k].shape) for k in like},
            {k: np.asarray(d["v"][k]).reshape(like[k].shape) for k in like},
            int(d["t"]),
        )


@dataclass
class TrainReport:
    epochs_run: int = 0
    steps: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def adam_update(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam step. Returns new ``(params, state)``; inputs are not mutated."""
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * (g * g)
        with np.errstate(invalid="ignore", over="ignore"):
            step = -cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if not np.all(np.isfinite(step)):
            raise DivergenceError("non-finite Adam update", block=k)
        new_p[k] = p + step
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None):
    if max_norm is None:
        return grads
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def _values(ws) -> np.ndarray:
    return np.asarray(getattr(ws, "values", ws), dtype=np.float64)


def _save_checkpoint(path, model, best, adam, report, rng, wait, cfg):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "train_checkpoint",
        "config": asdict(cfg),
        "model": model.to_dict(),
        "best_model": best.to_dict(),
        "adam": adam.to_dict(),
        "report": report.to_dict(),
        "rng_state": rng.bit_generator.state,
        "wait": wait,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION or doc.get("kind") != "train_checkpoint":
        raise ValueError(f"{path} is not a supported training checkpoint")
    return doc


def train(
    sN,
    vN1,
    arch: tuple[int, int, int],
    cfg: TrainConfig = TrainConfig(),
    checkpoint_path=None,
    resume=None,
) -> tuple[EncDecModel, TrainReport]:
    """Train an encoder-decoder on ``sN`` and return the snapshot with the lowest
    mean teacher-forced loss on ``vN1``.

    ``arch`` is ``(m, c, L)``. When ``checkpoint_path`` is given the full
    training state is written there after every epoch; ``resume`` restarts from
    such a file and continues bit-identically.
    """
    m, c, L = arch
    X = _values(sN)
    V = _values(vN1)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("sN must be a non-empty (n, L, m) window stack")
    if V.ndim != 3 or V.shape[0] == 0:
        raise ValueError("vN1 must be a non-empty (n, L, m) window stack")
    if X.shape[1:] != (L, m) or V.shape[1:] != (L, m):
        raise ValueError(f"window shapes {X.shape[1:]}, {V.shape[1:]} do not match arch (L={L}, m={m})")

    n = X.shape[0]
    if resume is not None:
        doc = resume if isinstance(resume, dict) else load_checkpoint(resume)
        model = EncDecModel.from_dict(doc["model"])
        best = EncDecModel.from_dict(doc["best_model"])
        if (model.m, model.c, model.L) != (m, c, L):
            raise ValueError("checkpoint architecture does not match arch")
        adam = AdamState.from_dict(doc["adam"], model.parameters())
        report = TrainReport(**doc["report"])
        rng = make_rng([cfg.seed, 1])
        rng.bit_generator.state = doc["rng_state"]
        wait = int(doc["wait"])
        if report.stop_reason == "max_epochs" and report.epochs_run < cfg.max_epochs:
            report.stop_reason = ""
    else:
        model = EncDecModel.initialize(m, c, L, cfg.seed)
        best = model
        adam = AdamState.fresh(model.parameters())
        report = TrainReport()
        rng = make_rng([cfg.seed, 1])
        wait = 0

    params = model.parameters()
    while not report.stop_reason and report.epochs_run < cfg.max_epochs:
        epoch = report.epochs_run + 1
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, grads = loss_and_gradients(model, X[idx])
                grads = clip_by_global_norm(grads, cfg.clip_norm)
                params, adam = adam_update(params, grads, adam, cfg)
            except DivergenceError as exc:
                raise DivergenceError(exc.detail, block=exc.block, epoch=epoch, batch=bi) from exc
            model = model.with_parameters(params)
            total += loss
            report.steps += 1

        val = float(window_losses(model, V).mean())
        if not np.isfinite(val):
            raise DivergenceError("non-finite validation loss", epoch=epoch)
        report.epochs_run = epoch
        report.train_loss.append(total / n)
        report.val_loss.append(val)
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best = model
            wait = 0
        else:
            wait += 1
        logger.debug("epoch %d train %.6g val %.6g", epoch, total / n, val)

        if wait >= cfg.patience:
            report.stop_reason = "patience"
        elif report.epochs_run >= cfg.max_epochs:
            report.stop_reason = "max_epochs"
        if checkpoint_path is not None:
            _save_checkpoint(checkpoint_path, model, best, adam, report, rng, wait, cfg)
        if report.stop_reason:
            break

    meta = {
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
        "best_val_loss": report.best_val_loss,
        "stop_reason": report.stop_reason,
        "train_config": asdict(cfg),
    }
    return replace(best, metadata=meta), report
