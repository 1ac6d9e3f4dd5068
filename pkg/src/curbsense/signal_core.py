"""Preprocessing of raw triaxial acceleration streams into model-ready windows.

A recording is filtered with a short centered mean filter, z-normalized per
axis over the whole recording (population statistics) and cut into
fixed-length overlapping windows.  Every window carries the position of its
center sample and the majority surface label of its samples.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from curbsense import _kernels

log = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 50.0
CLASSIFIER_WINDOW = 450
VAE_WINDOW = 400
DEFAULT_OVERLAP = 0.9
DEFAULT_FILTER_LENGTH = 5

RECORD_FIELDS = ("user", "lap", "t", "ax", "ay", "az", "lat", "lon", "surface")


class SurfaceLabel(IntEnum):
    Slope = 0
    Curb = 1
    TI = 2
    Oths = 3


N_SURFACE = len(SurfaceLabel)


class DegenerateRecordingError(ValueError):
    """A recording has an axis without variance and cannot be normalized."""


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class RunRecording:
    """One user-lap stream sampled at 50 Hz.

    ``acc`` columns are the sensor x, y and z axes.  ``surface`` holds
    :class:`SurfaceLabel` codes per sample.
    """

    user: str
    lap: int
    t: np.ndarray
    acc: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    surface: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if self.acc.shape != (n, 3):
            raise ValueError(f"acc must have shape ({n}, 3), got {self.acc.shape}")
        for name in ("lat", "lon", "surface"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from t")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def name(self) -> str:
        return f"{self.user}_{self.lap}"


@dataclass
class Window:
    samples: np.ndarray  # (3, W)
    center_position: tuple[float, float]
    surface: SurfaceLabel
    grid_id: int | None
    user: str
    lap: int


@dataclass
class WindowSet:
    """Columnar store of windows; row ``i`` of every array describes window ``i``."""

    X: np.ndarray  # (N, 3, W)
    surface: np.ndarray  # (N,) int8
    user: np.ndarray  # (N,) str
    lap: np.ndarray  # (N,) int
    rec: np.ndarray  # (N,) recording key, windows of one recording are contiguous
    start: np.ndarray  # (N,) first sample index in the recording
    lat: np.ndarray
    lon: np.ndarray
    grid_id: np.ndarray = None  # (N,) int64, -1 = unassigned
    window: int = 0
    stride: int = 0
    too_short: bool = False

    def __post_init__(self):
        if self.grid_id is None:
            self.grid_id = np.full(len(self.surface), -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.surface)

    def window_at(self, i: int) -> Window:
        gid = int(self.grid_id[i])
        return Window(
            samples=self.X[i],
            center_position=(float(self.lat[i]), float(self.lon[i])),
            surface=SurfaceLabel(int(self.surface[i])),
            grid_id=None if gid < 0 else gid,
            user=str(self.user[i]),
            lap=int(self.lap[i]),
        )

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            surface=self.surface[idx],
            user=self.user[idx],
            lap=self.lap[idx],
            rec=self.rec[idx],
            start=self.start[idx],
            lat=self.lat[idx],
            lon=self.lon[idx],
            grid_id=self.grid_id[idx],
        )

    def with_grid(self, grid_id: np.ndarray) -> "WindowSet":
        return replace(self, grid_id=np.asarray(grid_id, dtype=np.int64))

    def astype(self, dtype) -> "WindowSet":
        return replace(self, X=self.X.astype(dtype, copy=False))

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        cat = lambda name: np.concatenate([getattr(s, name) for s in sets])  # noqa: E731
        return cls(
            X=cat("X"),
            surface=cat("surface"),
            user=cat("user"),
            lap=cat("lap"),
            rec=cat("rec"),
            start=cat("start"),
            lat=cat("lat"),
            lon=cat("lon"),
            grid_id=cat("grid_id"),
            window=sets[0].window,
            stride=sets[0].stride,
            too_short=any(s.too_short for s in sets),
        )

    def save(self, path: str | os.PathLike) -> None:
        np.savez(
            path,
            X=self.X,
            surface=self.surface,
            user=self.user,
            lap=self.lap,
            rec=self.rec,
            start=self.start,
            lat=self.lat,
            lon=self.lon,
            grid_id=self.grid_id,
            meta=np.array([self.window, self.stride, int(self.too_short)]),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            meta = z["meta"]
            return cls(
                X=z["X"],
                surface=z["surface"],
                user=z["user"],
                lap=z["lap"],
                rec=z["rec"],
                start=z["start"],
                lat=z["lat"],
                lon=z["lon"],
                grid_id=z["grid_id"],
                window=int(meta[0]),
                stride=int(meta[1]),
                too_short=bool(meta[2]),
            )


# ---------------------------------------------------------------------------
# filtering and normalization
# ---------------------------------------------------------------------------


def mean_filter(signal, length: int = DEFAULT_FILTER_LENGTH) -> np.ndarray:
    """Centered moving mean along the first axis.

    Samples near either end are averaged over the truncated window that fits
    inside the signal, so the output has the input's length.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    if length < 1 or length % 2 == 0:
        raise ValueError(f"filter length must be odd and >= 1, got {length}")
    if x.shape[0] < length:
        raise ValueError(f"signal of length {x.shape[0]} is shorter than the filter ({length})")
    return _kernels.centered_mean(x, length)


def filter_recording(rec: RunRecording, length: int = DEFAULT_FILTER_LENGTH) -> RunRecording:
    return replace(rec, acc=mean_filter(rec.acc, length))


def zscore_normalize(rec: RunRecording) -> tuple[RunRecording, NormStats]:
    if len(rec) == 0:
        raise ValueError("empty recording")
    mean = rec.acc.mean(axis=0)
    std = rec.acc.std(axis=0)
    if np.any(std <= 1e-9):
        axes = [a for a, s in zip("xyz", std) if s <= 1e-9]
        raise DegenerateRecordingError(f"recording {rec.name}: zero variance on axis {','.join(axes)}")
    return replace(rec, acc=(rec.acc - mean) / std), NormStats(mean, std)


def denormalize(rec: RunRecording, stats: NormStats) -> RunRecording:
    return replace(rec, acc=rec.acc * stats.std + stats.mean)


def preprocess_recording(rec: RunRecording, filter_length: int = DEFAULT_FILTER_LENGTH):
    """Mean filter then per-recording z-score; returns ``(recording, NormStats)``."""
    return zscore_normalize(filter_recording(rec, filter_length))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def window_stride(window: int, overlap_fraction: float) -> int:
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    stride = int(round(window * (1.0 - overlap_fraction)))
    if stride < 1:
        raise ValueError("window stride rounds to zero")
    return stride


def window_starts(n: int, window: int, stride: int) -> np.ndarray:
    if n < window:
        return np.zeros(0, dtype=np.int64)
    return np.arange((n - window) // stride + 1, dtype=np.int64) * stride


def window_center_position(start: int, window: int, rec: RunRecording) -> tuple[float, float]:
    if start < 0 or start + window > len(rec):
        raise IndexError("window exceeds recording")
    c = start + window // 2
    return float(rec.lat[c]), float(rec.lon[c])


def _tie_break_rank(class_counts) -> np.ndarray:
    """Priority per class: the globally rarest class gets the highest value."""
    counts = np.asarray(class_counts, dtype=np.int64)
    order = sorted(range(N_SURFACE), key=lambda c: (counts[c], c))
    prio = np.empty(N_SURFACE, dtype=np.int64)
    for rank, c in enumerate(order):
        prio[c] = N_SURFACE - 1 - rank
    return prio


def window_majority_label(labels, class_counts=None) -> SurfaceLabel:
    """Majority surface label; ties go to the class that is rarest in ``class_counts``."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=N_SURFACE)
    if class_counts is None:
        class_counts = counts
    prio = _tie_break_rank(class_counts)
    score = counts * N_SURFACE + prio
    return SurfaceLabel(int(np.argmax(score)))


def _majority_labels(surface: np.ndarray, starts: np.ndarray, window: int, class_counts) -> np.ndarray:
    onehot = np.zeros((len(surface) + 1, N_SURFACE), dtype=np.int64)
    onehot[np.arange(1, len(surface) + 1), surface] = 1
    cs = np.cumsum(onehot, axis=0)
    counts = cs[starts + window] - cs[starts]
    score = counts * N_SURFACE + _tie_break_rank(class_counts)[None, :]
    return np.argmax(score, axis=1).astype(np.int8)


def segment_windows(
    rec: RunRecording,
    window: int = CLASSIFIER_WINDOW,
    overlap_fraction: float = DEFAULT_OVERLAP,
    class_counts=None,
    rec_key: int = 0,
) -> WindowSet:
    """Cut ``rec`` into windows starting at 0, stride, 2*stride, ...

    Trailing samples that cannot fill a window are dropped.  A recording
    shorter than one window yields an empty set with ``too_short`` raised.
    """
    stride = window_stride(window, overlap_fraction)
    n = len(rec)
    starts = window_starts(n, window, stride)
    too_short = n < window
    if too_short:
        log.warning("recording %s has %d samples, shorter than window %d", rec.name, n, window)
    if class_counts is None:
        class_counts = np.bincount(rec.surface, minlength=N_SURFACE)
    if len(starts):
        view = np.lib.stride_tricks.sliding_window_view(rec.acc, window, axis=0)  # (n-w+1, 3, w)
        X = np.ascontiguousarray(view[starts])
        surface = _majority_labels(np.asarray(rec.surface, dtype=np.int64), starts, window, class_counts)
    else:
        X = np.zeros((0, 3, window), dtype=rec.acc.dtype)
        surface = np.zeros(0, dtype=np.int8)
    centers = starts + window // 2
    m = len(starts)
    return WindowSet(
        X=X,
        surface=surface,
        user=np.full(m, rec.user, dtype="<U32"),
        lap=np.full(m, rec.lap, dtype=np.int64),
        rec=np.full(m, rec_key, dtype=np.int64),
        start=starts,
        lat=rec.lat[centers].astype(np.float64),
        lon=rec.lon[centers].astype(np.float64),
        window=window,
        stride=stride,
        too_short=too_short,
    )


def build_window_set(
    recordings: list[RunRecording],
    window: int = CLASSIFIER_WINDOW,
    overlap_fraction: float = DEFAULT_OVERLAP,
    filter_length: int = DEFAULT_FILTER_LENGTH,
    dtype=np.float32,
) -> tuple[WindowSet, dict[str, NormStats]]:
    """Preprocess every recording independently and window them into one set.

    Majority-vote ties use class frequencies over all given recordings.
    """
    counts = np.zeros(N_SURFACE, dtype=np.int64)
    for r in recordings:
        counts += np.bincount(r.surface, minlength=N_SURFACE)
    sets, stats = [], {}
    for key, r in enumerate(recordings):
        pre, st = preprocess_recording(r, filter_length)
        stats[r.name] = st
        ws = segment_windows(pre, window, overlap_fraction, class_counts=counts, rec_key=key)
        sets.append(ws.astype(dtype))
    return WindowSet.concat(sets), stats


# ---------------------------------------------------------------------------
# on-disk recordings: one CSV record per sample, file <user>_<lap>.csv
# ---------------------------------------------------------------------------


def recording_path(directory: str | os.PathLike, user: str, lap: int) -> Path:
    return Path(directory) / f"{user}_{lap}.csv"


def save_recording(rec: RunRecording, directory: str | os.PathLike) -> Path:
    path = recording_path(directory, rec.user, rec.lap)
    names = [SurfaceLabel(i).name for i in range(N_SURFACE)]
    lines = [",".join(RECORD_FIELDS)]
    prefix = f"{rec.user},{rec.lap},"
    cols = zip(rec.t.tolist(), *rec.acc.T.tolist(), rec.lat.tolist(), rec.lon.tolist(), rec.surface.tolist())
    for t, ax, ay, az, la, lo, s in cols:
        lines.append(f"{prefix}{t!r},{ax!r},{ay!r},{az!r},{la!r},{lo!r},{names[s]}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_recording(path: str | os.PathLike) -> RunRecording:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no records")
    users = {r[0] for r in rows}
    laps = {r[1] for r in rows}
    if len(users) != 1 or len(laps) != 1:
        raise ValueError(f"{path}: a recording file must hold exactly one user and lap")
    num = np.array([[float(v) for v in r[2:8]] for r in rows])
    surface = np.array([SurfaceLabel[r[8]].value for r in rows], dtype=np.int8)
    return RunRecording(
        user=rows[0][0],
        lap=int(rows[0][1]),
        t=num[:, 0],
        acc=np.ascontiguousarray(num[:, 1:4]),
        lat=num[:, 4],
        lon=num[:, 5],
        surface=surface,
    )


def load_recordings(directory: str | os.PathLike) -> list[RunRecording]:
    files = sorted(Path(directory).glob("*_*.csv"))
    recs = [load_recording(f) for f in files]
    recs.sort(key=lambda r: (r.user, r.lap))
    return recs
