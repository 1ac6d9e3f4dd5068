"""Barrier and cluster maps: per-user normalization, 5 m route bins, GeoJSON and SVG."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from curbsense.config import DEFAULT_PALETTE
from curbsense.roadsim import RouteGeometry

BIN_M = 5.0
MAX_DISTANCE_M = 25.0


@dataclass(frozen=True)
class AccessibilityBin:
    index: int
    lat: float  # bin midpoint on the route
    lon: float
    value: float  # max normalized error in the bin; nan when empty
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0

    @property
    def color(self) -> str:
        return hex_color(color_scale(self.value))


@dataclass(frozen=True)
class ClusterPoint:
    lat: float
    lon: float
    cluster: int
    user: str
    lap: int


@dataclass
class BinAggregate:
    bins: list[AccessibilityBin]
    dropped: int  # positions farther than the distance limit from the route

    @property
    def occupied(self) -> list[AccessibilityBin]:
        return [b for b in self.bins if not b.empty]

    def values(self) -> np.ndarray:
        return np.array([b.value for b in self.bins])


def minmax_normalize_per_user(errors, users) -> np.ndarray:
    """(e - min) / (max - min) within each user; a constant user maps to zeros."""
    e = np.asarray(errors, dtype=np.float64)
    users = np.asarray(users)
    out = np.zeros_like(e)
    for u in np.unique(users):
        m = users == u
        lo, hi = e[m].min(), e[m].max()
        if hi > lo:
            out[m] = (e[m] - lo) / (hi - lo)
    return out


def bin_max_aggregate(values, lat, lon, geometry: RouteGeometry, bin_m: float = BIN_M,
                      max_distance_m: float = MAX_DISTANCE_M) -> BinAggregate:
    """Maximum value per ``bin_m`` stretch of route arc length.

    Each position is assigned to the bin of its nearest arc length.  Bins tile
    the whole route; bins without data are kept with ``count == 0``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    n_bins = max(1, int(math.ceil(geometry.length / bin_m - 1e-9)))
    best = np.full(n_bins, -np.inf)
    count = np.zeros(n_bins, dtype=np.int64)
    dropped = 0
    if values.size:
        arc, dist = geometry.project(np.asarray(lat).ravel(), np.asarray(lon).ravel())
        keep = dist <= max_distance_m
        dropped = int((~keep).sum())
        idx = np.minimum((arc[keep] / bin_m).astype(np.int64), n_bins - 1)
        np.maximum.at(best, idx, values[keep])
        np.add.at(count, idx, 1)
    mids = np.minimum((np.arange(n_bins) + 0.5) * bin_m, geometry.length)
    mlat, mlon = geometry.latlon_at(mids)
    bins = [
        AccessibilityBin(i, float(mlat[i]), float(mlon[i]), float(best[i]) if count[i] else float("nan"), int(count[i]))
        for i in range(n_bins)
    ]
    return BinAggregate(bins, dropped)


def color_scale(ratio: float) -> tuple[int, int, int]:
    """Blue (0) to red (1) linear blend with round-half-up channels."""
    r = float(ratio)
    r = 0.0 if not math.isfinite(r) else min(max(r, 0.0), 1.0)
    return int(math.floor(255 * r + 0.5)), 0, int(math.floor(255 * (1 - r) + 0.5))


def hex_color(rgb) -> str:
    return "#{:02X}{:02X}{:02X}".format(*rgb)


def _is_bins(items) -> bool:
    return bool(items) and isinstance(items[0], AccessibilityBin)


def _features(items, palette) -> list[dict]:
    if _is_bins(items):
        items = sorted((b for b in items if not b.empty), key=lambda b: b.index)
        return [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [b.lon, b.lat]},
                "properties": {"bin": b.index, "value": b.value, "count": b.count, "color": b.color},
            }
            for b in items
        ]
    order = sorted(range(len(items)), key=lambda i: (items[i].user, items[i].lap, i))
    return [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [items[i].lon, items[i].lat]},
            "properties": {
                "cluster": items[i].cluster,
                "color": palette[items[i].cluster % len(palette)],
                "user": items[i].user,
                "lap": items[i].lap,
            },
        }
        for i in order
    ]


def geojson_text(items, palette=DEFAULT_PALETTE) -> str:
    doc = {"type": "FeatureCollection", "features": _features(list(items), palette)}
    return json.dumps(doc, indent=1) + "\n"


def emit_geojson(items, path, palette=DEFAULT_PALETTE) -> Path:
    """Write bins (empty ones omitted) or cluster points as a point FeatureCollection."""
    path = Path(path)
    path.write_text(geojson_text(items, palette))
    return path


def validate_point_geojson(doc) -> list[str]:
    """Problems found when checking ``doc`` against the point-feature schema; empty when valid."""
    errs = []
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        return ["top level must be a FeatureCollection object"]
    feats = doc.get("features")
    if not isinstance(feats, list):
        return ["features must be an array"]
    for i, f in enumerate(feats):
        if not isinstance(f, dict) or f.get("type") != "Feature":
            errs.append(f"feature {i}: type must be Feature")
            continue
        g = f.get("geometry")
        if not isinstance(g, dict) or g.get("type") != "Point":
            errs.append(f"feature {i}: geometry must be a Point")
            continue
        c = g.get("coordinates")
        if not (isinstance(c, list) and len(c) == 2 and all(isinstance(v, (int, float)) and math.isfinite(v) for v in c)):
            errs.append(f"feature {i}: coordinates must be two finite numbers")
            continue
        if not (-180 <= c[0] <= 180 and -90 <= c[1] <= 90):
            errs.append(f"feature {i}: coordinates out of range")
        props = f.get("properties")
        if not isinstance(props, dict):
            errs.append(f"feature {i}: properties must be an object")
            continue
        color = props.get("color")
        if not (isinstance(color, str) and len(color) == 7 and color[0] == "#"
                and all(ch in "0123456789ABCDEF" for ch in color[1:])):
            errs.append(f"feature {i}: color must be #RRGGBB")
        if ("value" in props) == ("cluster" in props):
            errs.append(f"feature {i}: exactly one of value or cluster required")
    return errs


def svg_text(items, geometry: RouteGeometry, palette=DEFAULT_PALETTE, size: float = 800.0) -> str:
    """Route polyline in local meters with one colored circle per plot point and a legend."""
    items = list(items)
    bins = _is_bins(items)
    if bins:
        items = sorted((b for b in items if not b.empty), key=lambda b: b.index)
    route = geometry.vertices
    pts = geometry.latlon_to_local([it.lat for it in items], [it.lon for it in items]).reshape(-1, 2)
    allp = np.vstack([route, pts]) if len(pts) else route
    lo, hi = allp.min(0), allp.max(0)
    span = max(float((hi - lo).max()), 1.0)
    pad = 20.0
    scale = (size - 2 * pad) / span
    legend_h = 40.0
    width = size
    height = (hi[1] - lo[1]) * scale + 2 * pad + legend_h

    def xy(p):
        return pad + (p[0] - lo[0]) * scale, pad + (hi[1] - p[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.1f} {height:.1f}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#FFFFFF"/>',
        '<polyline fill="none" stroke="#999999" stroke-width="2" points="'
        + " ".join("{:.2f},{:.2f}".format(*xy(p)) for p in route) + '"/>',
    ]
    for it, p in zip(items, pts):
        color = it.color if bins else palette[it.cluster % len(palette)]
        out.append('<circle cx="{:.2f}" cy="{:.2f}" r="3" fill="{}"/>'.format(*xy(p), color))
    y0 = height - legend_h + 10
    if bins:
        steps = 10
        for j in range(steps + 1):
            out.append(f'<rect x="{pad + j * 20:.1f}" y="{y0:.1f}" width="20" height="12" '
                       f'fill="{hex_color(color_scale(j / steps))}"/>')
        out.append(f'<text x="{pad:.1f}" y="{y0 + 26:.1f}" font-size="10">0</text>')
        out.append(f'<text x="{pad + steps * 20 + 10:.1f}" y="{y0 + 26:.1f}" font-size="10">1</text>')
    else:
        for j, color in enumerate(palette):
            out.append(f'<rect x="{pad + j * 20:.1f}" y="{y0:.1f}" width="16" height="12" fill="{color}"/>')
            out.append(f'<text x="{pad + j * 20 + 4:.1f}" y="{y0 + 26:.1f}" font-size="9">{j}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_overview(items, geometry: RouteGeometry, path, palette=DEFAULT_PALETTE) -> Path:
    path = Path(path)
    path.write_text(svg_text(items, geometry, palette))
    return path


def cluster_points(lat, lon, clusters, users, laps) -> list[ClusterPoint]:
    return [ClusterPoint(float(a), float(b), int(c), str(u), int(l)) for a, b, c, u, l in zip(lat, lon, clusters, users, laps)]
