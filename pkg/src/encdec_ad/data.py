"""Loading, downsampling, windowing, normalization, PCA reduction and splits.

Anomalous intervals are half-open ``[start, end)`` in the index space of the
series they belong to. A window is anomalous as soon as one of its points is.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError
from .numerics import PrincipalComponent, leading_pc, make_rng

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SET_NAMES = ("sN", "vN1", "vN2", "tN", "vA", "tA")
DEFAULT_NORMAL_RATIOS = (0.5, 0.2, 0.15, 0.15)
DEFAULT_ANOMALOUS_RATIOS = (0.5, 0.5)


@dataclass
class TimeSeriesFrame:
    series_id: str
    values: np.ndarray  # (T, m)
    labels: np.ndarray | None = None  # (T,) bool
    intervals: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise ShapeError(f"frame values must be (T, m), got {self.values.shape}")
        T = self.values.shape[0]
        for s, e in self.intervals:
            if not (0 <= s <= e <= T):
                raise DataFormatError(f"interval [{s}, {e}) outside series of length {T}")
        if self.labels is None and self.intervals:
            self.labels = labels_from_intervals(T, self.intervals)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (T,):
                raise ShapeError(f"label length {self.labels.shape} != series length {T}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def point_labels(self) -> np.ndarray:
        return self.labels if self.labels is not None else np.zeros(self.T, dtype=bool)


def labels_from_intervals(T: int, intervals) -> np.ndarray:
    lab = np.zeros(T, dtype=bool)
    for s, e in intervals:
        lab[s:e] = True
    return lab


# ------------------------------------------------------------------ ingestion


def _split_line(line: str) -> list[str]:
    line = line.strip()
    if "," in line or ";" in line:
        return [c.strip() for c in re.split(r"[,;]", line)]
    return line.split()


def load_csv(path, series_id=None, columns=None, label_path=None) -> TimeSeriesFrame:
    """Read a numeric table with one row per timestep.

    Comma, semicolon or whitespace delimiters are accepted and a non-numeric
    first row is treated as a header. ``columns`` selects channel indices.
    ``label_path`` names an interval file (see :func:`load_intervals`).
    """
    path = Path(path)
    sid = series_id or path.stem
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            cells = _split_line(raw)
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if not rows and width is None:
                    width = len(cells)  # header
                    continue
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell in {raw.strip()!r}") from None
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
            if not all(np.isfinite(vals)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    if columns is not None:
        cols = list(columns)
        if max(cols) >= values.shape[1]:
            raise DataFormatError(f"{path}: column {max(cols)} requested, file has {values.shape[1]}")
        values = values[:, cols]
    intervals = []
    if label_path is not None:
        table = load_intervals(label_path)
        intervals = table.get(sid, []) + table.get(None, [])
    return TimeSeriesFrame(sid, values, intervals=sorted(intervals))


def load_intervals(path) -> dict:
    """Parse ``series_id,start,end`` (or ``start,end``) rows, parentheses allowed.

    Returns a mapping from series id to interval list; two-column rows are
    stored under ``None`` and apply to every series.
    """
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip().strip("()[]")
            if not line or line.startswith("#"):
                continue
            cells = [c.strip().strip("()[]") for c in re.split(r"[,;\s]+", line) if c.strip()]
            try:
                if len(cells) == 2:
                    key, s, e = None, int(cells[0]), int(cells[1])
                elif len(cells) == 3:
                    key, s, e = cells[0], int(cells[1]), int(cells[2])
                else:
                    raise ValueError
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataFormatError(f"{path}:{lineno}: cannot parse interval {raw.strip()!r}") from None
            if e < s:
                raise DataFormatError(f"{path}:{lineno}: interval end before start")
            out.setdefault(key, []).append((s, e))
    return out


def write_csv(frame: TimeSeriesFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(frame.m)])
        for row in frame.values:
            w.writerow([repr(float(v)) for v in row])


def write_intervals(path, intervals: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "start", "end"])
        for sid, ivs in intervals.items():
            for s, e in ivs:
                w.writerow([sid, s, e])


# -------------------------------------------------------------- preparation


def downsample(frame: TimeSeriesFrame, k: int, method: str = "mean") -> TimeSeriesFrame:
    """Reduce by ``k``: block means (default) or every k-th point (``"decimate"``).

    A trailing partial block is dropped. A block is anomalous if any member is.
    """
    if k < 1:
        raise ValueError(f"downsample factor must be >= 1, got {k}")
    nb = frame.T // k
    block = frame.values[: nb * k].reshape(nb, k, frame.m)
    if method == "mean":
        vals = block.mean(axis=1)
    elif method == "decimate":
        vals = block[:, 0].copy()
    else:
        raise ValueError(f"unknown downsample method {method!r}")
    labels = None
    if frame.labels is not None:
        labels = frame.labels[: nb * k].reshape(nb, k).any(axis=1)
    intervals = [(s // k, min(nb, -(-e // k))) for s, e in frame.intervals if s // k < nb]
    return TimeSeriesFrame(frame.series_id, vals, labels=labels, intervals=intervals)


@dataclass
class Window:
    values: np.ndarray  # (L, m)
    anomalous: bool
    series_id: str
    start: int
    point_labels: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSet:
    values: np.ndarray  # (n, L, m)
    labels: np.ndarray  # (n,) window labels, True = anomalous
    series_ids: tuple
    starts: np.ndarray
    point_labels: np.ndarray  # (n, L) raw per-point annotation
    ids: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i) -> Window:
        return Window(self.values[i], bool(self.labels[i]), self.series_ids[i], int(self.starts[i]), self.point_labels[i])

    @property
    def L(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    def subset(self, idx) -> WindowSet:
        idx = np.asarray(idx, dtype=int)
        return WindowSet(
            self.values[idx],
            self.labels[idx],
            tuple(self.series_ids[i] for i in idx),
            self.starts[idx],
            self.point_labels[idx],
            self.ids[idx],
        )

    def with_values(self, values) -> WindowSet:
        return WindowSet(np.asarray(values, dtype=np.float64), self.labels, self.series_ids, self.starts, self.point_labels, self.ids)

    def truth(self) -> np.ndarray:
        """Window label broadcast over every point, shape ``(n, L)``."""
        return np.repeat(self.labels[:, None], self.L, axis=1)

    @classmethod
    def empty(cls, L: int, m: int) -> WindowSet:
        return cls(np.zeros((0, L, m)), np.zeros(0, bool), (), np.zeros(0, int), np.zeros((0, L), bool), np.zeros(0, int))

    @classmethod
    def concat(cls, sets) -> WindowSet:
        sets = list(sets)
        return cls(
            np.concatenate([s.values for s in sets]),
            np.concatenate([s.labels for s in sets]),
            tuple(x for s in sets for x in s.series_ids),
            np.concatenate([s.starts for s in sets]),
            np.concatenate([s.point_labels for s in sets]),
            np.concatenate([s.ids for s in sets]),
        )


def make_windows(frame: TimeSeriesFrame, L: int, step: int, first_id: int = 0) -> WindowSet:
    if L < 1 or step < 1:
        raise ValueError("L and step must be >= 1")
    if L > frame.T:
        raise ValueError(f"window length {L} exceeds series length {frame.T}")
    starts = np.arange(0, frame.T - L + 1, step)
    idx = starts[:, None] + np.arange(L)
    pl = frame.point_labels()[idx]
    n = starts.size
    return WindowSet(
        frame.values[idx],
        pl.any(axis=1),
        (frame.series_id,) * n,
        starts,
        pl,
        np.arange(first_id, first_id + n),
    )


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per channel; such channels are centered but not scaled

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d) -> NormalizationStats:
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["constant"], bool))


def _points(x) -> np.ndarray:
    v = np.asarray(getattr(x, "values", x), dtype=np.float64)
    return v.reshape(-1, v.shape[-1])


def fit_normalization(sN) -> NormalizationStats:
    pts = _points(sN)
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    constant = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    if constant.any():
        logger.warning("channels %s are constant on the fit set; they are centered but not scaled", np.flatnonzero(constant).tolist())
    return NormalizationStats(mean, np.where(constant, 1.0, std), constant)


def apply_normalization(x, stats: NormalizationStats):
    """z-score values of a frame, window set, or bare array (last axis = channels)."""
    v = np.asarray(getattr(x, "values", x), dtype=np.float64)
    out = (v - stats.mean) / stats.std
    return _rewrap(x, out)


def invert_normalization(x, stats: NormalizationStats):
    v = np.asarray(getattr(x, "values", x), dtype=np.float64)
    return _rewrap(x, v * stats.std + stats.mean)


def _rewrap(x, values):
    if isinstance(x, WindowSet):
        return x.with_values(values)
    if isinstance(x, TimeSeriesFrame):
        return TimeSeriesFrame(x.series_id, values, labels=x.labels, intervals=list(x.intervals))
    return values


def fit_pca(sN) -> PrincipalComponent:
    """Leading principal component of all points pooled from ``sN``."""
    return leading_pc(_points(sN))


def reduce_to_first_pc(x, pc: PrincipalComponent):
    """Project every point onto ``pc`` (after removing the fit mean); m becomes 1."""
    v = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if v.shape[-1] != pc.direction.shape[0]:
        raise ShapeError(f"data has {v.shape[-1]} channels, component has {pc.direction.shape[0]}")
    return _rewrap(x, ((v - pc.mean) @ pc.direction)[..., None])


# -------------------------------------------------------------------- splits


@dataclass
class DatasetSplit:
    sets: dict  # name -> WindowSet
    normal_ratios: tuple
    anomalous_ratios: tuple
    seed: int

    def __getattr__(self, name):
        sets = self.__dict__.get("sets", {})
        if name in sets:
            return sets[name]
        raise AttributeError(name)

    def membership(self) -> dict:
        return {k: self.sets[k].ids.tolist() for k in SET_NAMES}


def _partition(n: int, ratios) -> list[np.ndarray]:
    bounds = np.rint(np.cumsum(ratios) / np.sum(ratios) * n).astype(int)
    bounds[-1] = n
    edges = np.concatenate([[0], bounds])
    return [np.arange(edges[i], edges[i + 1]) for i in range(len(ratios))]


def split(normal: WindowSet, anomalous: WindowSet, ratios=DEFAULT_NORMAL_RATIOS, anomalous_ratios=DEFAULT_ANOMALOUS_RATIOS, seed: int = 0, require=()) -> DatasetSplit:
    """Seeded shuffle, then contiguous partition into sN/vN1/vN2/tN and vA/tA.

    ``require`` lists set names that must come out non-empty (the caller's
    workflow decides which; supervised thresholding needs vN2 and vA).
    """
    ratios = tuple(float(r) for r in ratios)
    anomalous_ratios = tuple(float(r) for r in anomalous_ratios)
    if len(ratios) != 4 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"normal split ratios must be 4 non-negative values summing to 1, got {ratios}")
    if len(anomalous_ratios) != 2 or any(r < 0 for r in anomalous_ratios) or abs(sum(anomalous_ratios) - 1.0) > 1e-9:
        raise ValueError(f"anomalous split ratios must be 2 non-negative values summing to 1, got {anomalous_ratios}")
    if normal.labels.any():
        raise ValueError("normal window set contains anomalous windows")
    if len(anomalous) and not anomalous.labels.all():
        raise ValueError("anomalous window set contains normal windows")
    rng = make_rng([seed, 2])
    perm_n = rng.permutation(len(normal))
    perm_a = rng.permutation(len(anomalous))
    sets = {}
    for name, part in zip(SET_NAMES[:4], _partition(len(normal), ratios)):
        sets[name] = normal.subset(perm_n[part])
    for name, part in zip(SET_NAMES[4:], _partition(len(anomalous), anomalous_ratios)):
        sets[name] = anomalous.subset(perm_a[part]) if len(anomalous) else WindowSet.empty(normal.L, normal.m)
    for name in require:
        if len(sets[name]) == 0:
            raise ValueError(
                f"split produced an empty {name} set ({len(normal)} normal, {len(anomalous)} anomalous windows); "
                "adjust the split ratios or provide more data"
            )
    return DatasetSplit(sets, ratios, anomalous_ratios, seed)


@dataclass
class DatasetManifest:
    name: str
    predictable: bool | None
    dimensions: int
    periodicity: str | None
    n_sequences: int
    n_normal: int
    n_anomalous: int

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------ prepared directory


def write_prepared(directory, split_: DatasetSplit, manifest: dict) -> None:
    """Write ``windows.csv``, ``split.json`` and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    allw = WindowSet.concat([split_.sets[k] for k in SET_NAMES])
    order = np.argsort(allw.ids, kind="stable")
    m = allw.m
    with open(d / "windows.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "series_id", "start", "label", "position", "point_label"] + [f"x{j}" for j in range(m)])
        for i in order:
            for pos in range(allw.L):
                w.writerow(
                    [int(allw.ids[i]), allw.series_ids[i], int(allw.starts[i]), int(allw.labels[i]), pos, int(allw.point_labels[i, pos])]
                    + [repr(float(v)) for v in allw.values[i, pos]]
                )
    with open(d / "split.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format_version": FORMAT_VERSION,
                "kind": "split",
                "sets": split_.membership(),
                "normal_ratios": list(split_.normal_ratios),
                "anomalous_ratios": list(split_.anomalous_ratios),
                "seed": split_.seed,
                "config_hash": manifest.get("config_hash"),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"format_version": FORMAT_VERSION, "kind": "manifest", **manifest}, fh, indent=2)
        fh.write("\n")


def read_prepared(directory) -> tuple[DatasetSplit, dict]:
    d = Path(directory)
    for name in ("windows.csv", "split.json", "manifest.json"):
        if not os.path.exists(d / name):
            raise FileNotFoundError(f"prepared dataset is missing {d / name}")
    with open(d / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(d / "split.json", encoding="utf-8") as fh:
        sp = json.load(fh)
    for doc, name in ((manifest, "manifest"), (sp, "split")):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{name}.json has unsupported format_version {doc.get('format_version')!r}")
    rows: dict[int, dict] = {}
    with open(d / "windows.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m = len(header) - 6
        for r in reader:
            wid = int(r[0])
            ent = rows.setdefault(wid, {"sid": r[1], "start": int(r[2]), "label": bool(int(r[3])), "pl": [], "x": []})
            ent["pl"].append(bool(int(r[5])))
            ent["x"].append([float(v) for v in r[6:]])
    L = len(next(iter(rows.values()))["x"]) if rows else 0

    def build(ids):
        if not ids:
            return WindowSet.empty(L, m)
        return WindowSet(
            np.asarray([rows[i]["x"] for i in ids], dtype=np.float64),
            np.asarray([rows[i]["label"] for i in ids], dtype=bool),
            tuple(rows[i]["sid"] for i in ids),
            np.asarray([rows[i]["start"] for i in ids], dtype=int),
            np.asarray([rows[i]["pl"] for i in ids], dtype=bool),
            np.asarray(ids, dtype=int),
        )

    sets = {k: build(sp["sets"][k]) for k in SET_NAMES}
    return DatasetSplit(sets, tuple(sp["normal_ratios"]), tuple(sp["anomalous_ratios"]), sp["seed"]), manifest
