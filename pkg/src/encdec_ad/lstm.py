"""LSTM encoder-decoder reconstruction model.

The encoder folds an ``L x m`` window into its final ``(h, cell)`` state. The
decoder starts from that state and emits the window back in reverse order:
the first emission is the last point, produced by the linear output layer
before any decoder step. Training feeds the true points to the decoder
(teacher forcing); inference feeds back the decoder's own emissions.

Cell equations (gate order in every stacked array: input, forget, output,
candidate)::

    i, f, o = sigmoid(W x + U h + b)
    g       = tanh(W x + U h + b)
    cell'   = f * cell + i * g
    h'      = o * tanh(cell')

Forward and backward passes are vectorised over a batch axis; windows are
arrays of shape ``(B, L, m)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, NonFiniteError, ShapeError
from .numerics import make_rng

FORMAT_VERSION = 1
N_GATES = 4
INIT_STDDEV = 0.1
FORGET_BIAS = 1.0

PARAM_NAMES = (
    "enc_W", "enc_U", "enc_b",
    "dec_W", "dec_U", "dec_b",
    "out_w", "out_b",
)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LstmParams:
    W: np.ndarray  # (4, c, m) input weights
    U: np.ndarray  # (4, c, c) recurrent weights
    b: np.ndarray  # (4, c) gate biases

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def inputs(self) -> int:
        return self.W.shape[2]

    @classmethod
    def zeros(cls, c: int, m: int) -> LstmParams:
        return cls(np.zeros((N_GATES, c, m)), np.zeros((N_GATES, c, c)), np.zeros((N_GATES, c)))


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, c: int, batch: int | None = None) -> LstmState:
        shape = (c,) if batch is None else (batch, c)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class EncDecModel:
    m: int
    c: int
    L: int
    encoder: LstmParams
    decoder: LstmParams
    w: np.ndarray  # (c, m) output layer weight
    b: np.ndarray  # (m,) output layer bias
    seed: int | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.encoder.W.shape != (N_GATES, self.c, self.m):
            raise ShapeError(f"encoder W shape {self.encoder.W.shape} != {(N_GATES, self.c, self.m)}")
        if self.decoder.W.shape != (N_GATES, self.c, self.m):
            raise ShapeError(f"decoder W shape {self.decoder.W.shape} != {(N_GATES, self.c, self.m)}")
        for p in (self.encoder, self.decoder):
            if p.U.shape != (N_GATES, self.c, self.c) or p.b.shape != (N_GATES, self.c):
                raise ShapeError("recurrent weight or bias shape inconsistent with c")
        if self.w.shape != (self.c, self.m) or self.b.shape != (self.m,):
            raise ShapeError(f"output layer shapes {self.w.shape}, {self.b.shape} inconsistent with (c, m)")

    @classmethod
    def initialize(cls, m: int, c: int, L: int, seed: int) -> EncDecModel:
        """Gaussian(0, 0.1) weights, forget-gate bias 1, other biases 0."""
        if min(m, c, L) < 1:
            raise ValueError(f"m, c, L must be >= 1, got {(m, c, L)}")
        rng = make_rng(seed)

        def lstm():
            W = rng.normal(0.0, INIT_STDDEV, size=(N_GATES, c, m))
            U = rng.normal(0.0, INIT_STDDEV, size=(N_GATES, c, c))
            b = np.zeros((N_GATES, c))
            b[1] = FORGET_BIAS
            return LstmParams(W, U, b)

        enc = lstm()
        dec = lstm()
        w = rng.normal(0.0, INIT_STDDEV, size=(c, m))
        return cls(m, c, L, enc, dec, w, np.zeros(m), seed=seed)

    @classmethod
    def zeros(cls, m: int, c: int, L: int) -> EncDecModel:
        return cls(m, c, L, LstmParams.zeros(c, m), LstmParams.zeros(c, m), np.zeros((c, m)), np.zeros(m))

    def parameters(self) -> dict[str, np.ndarray]:
        e, d = self.encoder, self.decoder
        return {
            "enc_W": e.W, "enc_U": e.U, "enc_b": e.b,
            "dec_W": d.W, "dec_U": d.U, "dec_b": d.b,
            "out_w": self.w, "out_b": self.b,
        }

    def with_parameters(self, p: dict[str, np.ndarray]) -> EncDecModel:
        return replace(
            self,
            encoder=LstmParams(p["enc_W"], p["enc_U"], p["enc_b"]),
            decoder=LstmParams(p["dec_W"], p["dec_U"], p["dec_b"]),
            w=p["out_w"],
            b=p["out_b"],
        )

    def n_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    # serialization

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "encdec_model",
            "m": self.m,
            "c": self.c,
            "L": self.L,
            "init_seed": self.seed,
            "parameters": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.parameters().items()
            },
            "training": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EncDecModel:
        if d.get("format_version") != FORMAT_VERSION or d.get("kind", "encdec_model") != "encdec_model":
            raise ValueError(f"unsupported model document version {d.get('format_version')!r}")
        p = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
            for k, v in d["parameters"].items()
        }
        model = cls.zeros(d["m"], d["c"], d["L"]).with_parameters(p)
        return replace(model, seed=d.get("init_seed"), metadata=d.get("training", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> EncDecModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Reconstruction:
    """``values[i]`` is the reconstruction of point ``i`` in original order;
    ``trace`` holds the decoder emissions in the order they were produced."""

    values: np.ndarray
    trace: np.ndarray


# ---------------------------------------------------------------- forward


def _step(p: LstmParams, x, h, cell):
    """One batched cell step; returns ``(h', cell', cache)``."""
    pre = np.einsum("bm,gcm->bgc", x, p.W) + np.einsum("bk,gck->bgc", h, p.U) + p.b
    act = sigmoid(pre[:, :3])
    i, f, o = act[:, 0], act[:, 1], act[:, 2]
    g = np.tanh(pre[:, 3])
    cell_new = f * cell + i * g
    tc = np.tanh(cell_new)
    h_new = o * tc
    return h_new, cell_new, (x, h, cell, i, f, o, g, tc)


def lstm_step(p: LstmParams, x, s: LstmState) -> LstmState:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.inputs,) or s.h.shape != (p.hidden,) or s.cell.shape != (p.hidden,):
        raise ShapeError(f"lstm_step shapes: x {x.shape}, h {s.h.shape}, cell {s.cell.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s.h)) and np.all(np.isfinite(s.cell))):
        raise NonFiniteError("lstm_step received non-finite input")
    h, cell, _ = _step(p, x[None], s.h[None], s.cell[None])
    return LstmState(h[0], cell[0])


def _as_batch(model: EncDecModel, windows) -> np.ndarray:
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (model.L, model.m):
        raise ShapeError(f"windows of shape {X.shape} do not match model (L={model.L}, m={model.m})")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("window contains non-finite values")
    return X


def _encode(model, X, keep=False):
    B = X.shape[0]
    h = np.zeros((B, model.c))
    cell = np.zeros((B, model.c))
    caches = []
    for t in range(model.L):
        h, cell, cache = _step(model.encoder, X[:, t], h, cell)
        if keep:
            caches.append(cache)
    return h, cell, caches


def _decode(model, h, cell, X=None, keep=False):
    """Emit ``L`` points in reverse order. ``X`` given means teacher forcing."""
    L = model.L
    B = h.shape[0]
    trace = np.empty((B, L, model.m))
    hs = [h]
    caches = []
    y = h @ model.w + model.b
    trace[:, 0] = y
    for k in range(1, L):
        inp = X[:, L - k] if X is not None else y
        h, cell, cache = _step(model.decoder, inp, h, cell)
        y = h @ model.w + model.b
        trace[:, k] = y
        if keep:
            hs.append(h)
            caches.append(cache)
    return trace, hs, caches


def encode(model: EncDecModel, window) -> LstmState:
    X = _as_batch(model, window)
    if X.shape[0] != 1:
        raise ShapeError("encode takes a single window")
    h, cell, _ = _encode(model, X)
    return LstmState(h[0], cell[0])


def _check_state(model, s: LstmState):
    if s.h.shape != (model.c,) or s.cell.shape != (model.c,):
        raise ShapeError(f"encoder state shapes {s.h.shape}, {s.cell.shape} do not match c={model.c}")


def decode_teacher_forced(model: EncDecModel, window, enc_final: LstmState) -> Reconstruction:
    X = _as_batch(model, window)
    _check_state(model, enc_final)
    trace, _, _ = _decode(model, enc_final.h[None], enc_final.cell[None], X=X)
    return Reconstruction(values=trace[0, ::-1].copy(), trace=trace[0])


def decode_autoregressive(model: EncDecModel, enc_final: LstmState, L: int | None = None) -> Reconstruction:
    _check_state(model, enc_final)
    if L is not None and L != model.L:
        raise ShapeError(f"model was built for L={model.L}, asked for {L}")
    trace, _, _ = _decode(model, enc_final.h[None], enc_final.cell[None])
    return Reconstruction(values=trace[0, ::-1].copy(), trace=trace[0])


def reconstruct(model: EncDecModel, window, mode: str = "autoregressive") -> Reconstruction:
    s = encode(model, window)
    if mode == "teacher_forced":
        return decode_teacher_forced(model, window, s)
    if mode == "autoregressive":
        return decode_autoregressive(model, s)
    raise ValueError(f"unknown decode mode {mode!r}")


def reconstruct_batch(model: EncDecModel, windows, mode: str = "autoregressive") -> np.ndarray:
    """Reconstructions in original time order, shape ``(B, L, m)``."""
    X = _as_batch(model, windows)
    h, cell, _ = _encode(model, X)
    if mode == "teacher_forced":
        trace, _, _ = _decode(model, h, cell, X=X)
    elif mode == "autoregressive":
        trace, _, _ = _decode(model, h, cell)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return trace[:, ::-1]


def window_losses(model: EncDecModel, windows) -> np.ndarray:
    """Teacher-forced sum of squared reconstruction errors, one per window."""
    X = _as_batch(model, windows)
    R = reconstruct_batch(model, X, mode="teacher_forced")
    return ((X - R) ** 2).sum(axis=(1, 2))


def window_loss(model: EncDecModel, window) -> float:
    return float(window_losses(model, window)[0])


# --------------------------------------------------------------- backward


def _step_backward(p: LstmParams, cache, dh, dcell, grads: dict, prefix: str):
    x, h_prev, cell_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dcell + dh * o * (1.0 - tc * tc)
    dpre = np.stack(
        [
            dc * g * i * (1.0 - i),
            dc * cell_prev * f * (1.0 - f),
            do * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=1,
    )
    grads[prefix + "W"] += np.einsum("bgc,bm->gcm", dpre, x)
    grads[prefix + "U"] += np.einsum("bgc,bk->gck", dpre, h_prev)
    grads[prefix + "b"] += dpre.sum(axis=0)
    dh_prev = np.einsum("bgc,gck->bk", dpre, p.U)
    return dh_prev, dc * f


def loss_and_gradients(model: EncDecModel, windows) -> tuple[float, dict[str, np.ndarray]]:
    """Summed teacher-forced loss over a batch and its exact gradient (BPTT).

    The gradient flows from every decoder emission back through the decoder,
    into the encoder's final ``(h, cell)`` and on through the encoder.
    """
    X = _as_batch(model, windows)
    L = model.L
    h, cell, enc_caches = _encode(model, X, keep=True)
    trace, hs, dec_caches = _decode(model, h, cell, X=X, keep=True)
    target = X[:, ::-1]
    diff = trace - target
    loss = float((diff * diff).sum())

    grads = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    dy = 2.0 * diff
    dh = np.zeros_like(h)
    dcell = np.zeros_like(cell)
    for k in range(L - 1, -1, -1):
        grads["out_w"] += hs[k].T @ dy[:, k]
        grads["out_b"] += dy[:, k].sum(axis=0)
        dh = dh + dy[:, k] @ model.w.T
        if k > 0:
            dh, dcell = _step_backward(model.decoder, dec_caches[k - 1], dh, dcell, grads, "dec_")
    for t in range(L - 1, -1, -1):
        dh, dcell = _step_backward(model.encoder, enc_caches[t], dh, dcell, grads, "enc_")

    for name, gval in grads.items():
        if not np.all(np.isfinite(gval)):
            raise DivergenceError("non-finite gradient", block=name)
    return loss, grads


def gradients(model: EncDecModel, batch) -> dict[str, np.ndarray]:
    """Exact gradient of the summed teacher-forced loss over ``batch``."""
    return loss_and_gradients(model, batch)[1]
