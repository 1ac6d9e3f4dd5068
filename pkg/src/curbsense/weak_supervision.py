"""5 m geo-grid cell IDs as weak position labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from curbsense.signal_core import WindowSet

METERS_PER_DEG = 111_320.0
MAX_RANGE_M = 10_000.0
CELL_M = 5.0
FALLBACK_M = 10.0


class ProjectionRangeError(ValueError):
    pass


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular map around a reference point."""

    ref_lat: float
    ref_lon: float

    def __post_init__(self):
        if not abs(self.ref_lat) < 85.0:
            raise ValueError(f"reference latitude {self.ref_lat} outside (-85, 85)")

    @property
    def m_per_deg_north(self) -> float:
        return METERS_PER_DEG

    @property
    def m_per_deg_east(self) -> float:
        return METERS_PER_DEG * math.cos(math.radians(self.ref_lat))

    @classmethod
    def centered_on(cls, lat, lon) -> "LocalProjection":
        return cls(float(np.mean(lat)), float(np.mean(lon)))

    def project(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """(x east, y north) in meters; positions beyond 10 km are rejected."""
        x = (np.asarray(lon, dtype=np.float64) - self.ref_lon) * self.m_per_deg_east
        y = (np.asarray(lat, dtype=np.float64) - self.ref_lat) * self.m_per_deg_north
        if np.any(np.hypot(x, y) > MAX_RANGE_M):
            raise ProjectionRangeError("position more than 10 km from the projection reference")
        return x, y

    def unproject(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        lat = self.ref_lat + np.asarray(y, dtype=np.float64) / self.m_per_deg_north
        lon = self.ref_lon + np.asarray(x, dtype=np.float64) / self.m_per_deg_east
        return lat, lon


def project_local_meters(proj: LocalProjection, lat, lon):
    return proj.project(lat, lon)


@dataclass
class GridIndex:
    projection: LocalProjection
    rows: np.ndarray  # (count,) cell row = floor(y / cell)
    cols: np.ndarray  # (count,) cell col = floor(x / cell); ID = position in these arrays
    cell: float = CELL_M

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self._lookup = {(int(r), int(c)): i for i, (r, c) in enumerate(zip(self.rows, self.cols))}
        centers = np.column_stack([(self.cols + 0.5) * self.cell, (self.rows + 0.5) * self.cell])
        self._tree = cKDTree(centers) if len(centers) else None

    @property
    def count(self) -> int:
        return len(self.rows)

    def cells_of(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.projection.project(lat, lon)
        return np.floor(y / self.cell).astype(np.int64), np.floor(x / self.cell).astype(np.int64)

    def ids_of(self, lat, lon, fallback_m: float = FALLBACK_M) -> np.ndarray:
        """Cell ID per position; -1 where no target cell lies within ``fallback_m``.

        Off-mesh positions take the nearest target cell, measured from the
        position to the closest point of that cell.
        """
        rows, cols = self.cells_of(lat, lon)
        ids = np.array([self._lookup.get((int(r), int(c)), -1) for r, c in zip(rows, cols)], dtype=np.int64)
        miss = np.flatnonzero(ids < 0)
        if len(miss) and self._tree is not None:
            x, y = self.projection.project(np.asarray(lat)[miss], np.asarray(lon)[miss])
            reach = fallback_m + self.cell / math.sqrt(2.0)
            cand = self._tree.query_ball_point(np.column_stack([x, y]), reach)
            for j, (px, py, near) in enumerate(zip(x, y, cand)):
                best, best_d = -1, fallback_m
                for i in sorted(near):
                    x0, y0 = self.cols[i] * self.cell, self.rows[i] * self.cell
                    dx = max(x0 - px, 0.0, px - (x0 + self.cell))
                    dy = max(y0 - py, 0.0, py - (y0 + self.cell))
                    d = math.hypot(dx, dy)
                    if d <= best_d and (best < 0 or d < best_d):
                        best, best_d = i, d
                ids[miss[j]] = best
        return ids

    # plain-text table: header lines with projection, then "row col id"
    def to_text(self) -> str:
        lines = [
            "# curbsense grid index v1",
            f"ref_lat {self.projection.ref_lat!r}",
            f"ref_lon {self.projection.ref_lon!r}",
            f"cell {self.cell!r}",
            "row col id",
        ]
        lines += [f"{r} {c} {i}" for i, (r, c) in enumerate(zip(self.rows, self.cols))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridIndex":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        head = dict(ln.split(None, 1) for ln in lines[:3])
        body = np.array([[int(v) for v in ln.split()] for ln in lines[4:]], dtype=np.int64).reshape(-1, 3)
        order = np.argsort(body[:, 2])
        if not np.array_equal(body[order, 2], np.arange(len(body))):
            raise ValueError("grid IDs must be 0..count-1 without gaps")
        proj = LocalProjection(float(head["ref_lat"]), float(head["ref_lon"]))
        return cls(proj, body[order, 0], body[order, 1], float(head["cell"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def load(cls, path) -> "GridIndex":
        return cls.from_text(Path(path).read_text())


def build_grid_index(lat, lon, projection: LocalProjection | None = None, cell: float = CELL_M) -> GridIndex:
    """Target cells covering the given positions, numbered in order of first visit.

    Pass positions in traversal order (recording after recording, sample by
    sample) so IDs follow the route.
    """
    lat = np.asarray(lat, dtype=np.float64).ravel()
    lon = np.asarray(lon, dtype=np.float64).ravel()
    if lat.size == 0:
        raise ValueError("no positions to build a grid from")
    proj = projection or LocalProjection.centered_on(lat, lon)
    x, y = proj.project(lat, lon)
    rows = np.floor(y / cell).astype(np.int64)
    cols = np.floor(x / cell).astype(np.int64)
    pairs = np.column_stack([rows, cols])
    _, first = np.unique(pairs, axis=0, return_index=True)
    first = np.sort(first)
    return GridIndex(proj, rows[first], cols[first], cell)


def grid_from_recordings(recordings, projection: LocalProjection | None = None, cell: float = CELL_M) -> GridIndex:
    lat = np.concatenate([r.lat for r in recordings])
    lon = np.concatenate([r.lon for r in recordings])
    return build_grid_index(lat, lon, projection, cell)


@dataclass
class GridLabeling:
    windows: WindowSet
    kept: np.ndarray  # indices into the input set
    dropped: int


def assign_grid_labels(windows: WindowSet, grid: GridIndex, fallback_m: float = FALLBACK_M) -> GridLabeling:
    """Label each window by the cell of its center; drop windows with no cell within ``fallback_m``."""
    ids = grid.ids_of(windows.lat, windows.lon, fallback_m) if len(windows) else np.zeros(0, dtype=np.int64)
    kept = np.flatnonzero(ids >= 0)
    out = windows.subset(kept).with_grid(ids[kept])
    return GridLabeling(out, kept, int(len(windows) - len(kept)))
