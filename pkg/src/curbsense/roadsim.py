"""Deterministic wheelchair-run simulator.

Produces geo-referenced 50 Hz triaxial acceleration streams over a route made
of surface segments.  The physics is intentionally small: gravity projected
on slopes, half-sine jolts with a decaying rattle at curbs, a spatial
sinusoid on tactile paving and band-limited noise whose amplitude depends on
the pavement.

Body frame used by :func:`surface_signal` is (forward, lateral, vertical).
Recordings store the sensor axes: x = forward, y = lateral, z = vertical,
after rotating by the user's mount tilt about the lateral axis.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from curbsense import _kernels
from curbsense.signal_core import SAMPLE_RATE_HZ, RunRecording, SurfaceLabel

GRAVITY = 9.80665
METERS_PER_DEG_LAT = 111_320.0
CURB_IMPULSE_S = 0.2
CURB_RATTLE = (5.0, 1.2, 6.0)  # post-impact frame rattle: peak m/s^2, decay s, bandwidth Hz
AXIS_WEIGHTS = np.array([0.6, 0.4, 1.0])  # roughness share on forward, lateral, vertical


class SegmentKind(str, Enum):
    GRAV = "GRAV"
    TILE = "TILE"
    BLK1 = "BLK1"
    BLK2 = "BLK2"
    CONC1 = "CONC1"
    CONC2 = "CONC2"
    CURB = "CURB"
    ASC_SLP = "ASC_SLP"
    DESC_SLP = "DESC_SLP"
    GENT_ASC_SLP = "GENT_ASC_SLP"
    GENT_DESC_SLP = "GENT_DESC_SLP"
    TACTILE = "TACTILE"


KIND_ORDER = list(SegmentKind)
KIND_INDEX = {k: i for i, k in enumerate(KIND_ORDER)}
SLOPE_KINDS = {SegmentKind.ASC_SLP, SegmentKind.DESC_SLP, SegmentKind.GENT_ASC_SLP, SegmentKind.GENT_DESC_SLP}
STEEP_KINDS = {SegmentKind.ASC_SLP, SegmentKind.DESC_SLP}
# a slope climbed in the opposite direction becomes its counterpart
REVERSED_KIND = {
    SegmentKind.ASC_SLP: SegmentKind.DESC_SLP,
    SegmentKind.DESC_SLP: SegmentKind.ASC_SLP,
    SegmentKind.GENT_ASC_SLP: SegmentKind.GENT_DESC_SLP,
    SegmentKind.GENT_DESC_SLP: SegmentKind.GENT_ASC_SLP,
}

# default roughness (m/s^2) and noise bandwidth (Hz) per pavement
PAVEMENT_DEFAULTS = {
    SegmentKind.GRAV: (0.90, 9.0),
    SegmentKind.BLK1: (0.55, 5.0),
    SegmentKind.BLK2: (0.50, 7.0),
    SegmentKind.TILE: (0.35, 3.5),
    SegmentKind.CONC1: (0.18, 2.5),
    SegmentKind.CONC2: (0.20, 5.5),
}


def segment_roughness(kind: SegmentKind, params: dict) -> tuple[float, float]:
    """(amplitude m/s^2, cutoff Hz) of the background roughness; non-pavements default to CONC1."""
    amp, fc = PAVEMENT_DEFAULTS.get(SegmentKind(kind), PAVEMENT_DEFAULTS[SegmentKind.CONC1])
    return float(params.get("roughness", amp)), float(params.get("cutoff_hz", fc))


def surface_label_of(kind: SegmentKind) -> SurfaceLabel:
    if kind in SLOPE_KINDS:
        return SurfaceLabel.Slope
    if kind is SegmentKind.CURB:
        return SurfaceLabel.Curb
    if kind is SegmentKind.TACTILE:
        return SurfaceLabel.TI
    return SurfaceLabel.Oths


# ---------------------------------------------------------------------------
# route description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentSpec:
    kind: SegmentKind
    length_m: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", SegmentKind(self.kind))
        if not self.length_m > 0:
            raise ValueError(f"{self.kind.value}: length must be positive")
        if self.kind in SLOPE_KINDS:
            angle = self.params.get("angle_deg")
            if angle is None:
                raise ValueError(f"{self.kind.value}: slope segment needs angle_deg")
            lo, hi = (3.0, 5.0) if self.kind in STEEP_KINDS else (1.0, 2.0)
            if not lo <= angle <= hi:
                raise ValueError(f"{self.kind.value}: angle {angle} outside [{lo}, {hi}] degrees")

    def roughness(self) -> tuple[float, float]:
        return segment_roughness(self.kind, self.params)


@dataclass(frozen=True)
class RouteSpec:
    """Surface segments laid along a polyline given as (heading_deg, length_m) legs.

    Headings are compass bearings (0 = north, 90 = east).
    """

    segments: tuple[SegmentSpec, ...]
    origin_lat: float
    origin_lon: float
    legs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "legs", tuple((float(h), float(l)) for h, l in self.legs))
        if not self.segments or not self.legs:
            raise ValueError("route needs segments and legs")
        if not -90 <= self.origin_lat <= 90 or not -180 <= self.origin_lon <= 180:
            raise ValueError("origin outside WGS84 range")
        seg_total = sum(s.length_m for s in self.segments)
        leg_total = sum(l for _, l in self.legs)
        if seg_total <= 0:
            raise ValueError("zero-length route")
        if abs(seg_total - leg_total) > 1e-6:
            raise ValueError(f"segments cover {seg_total} m but the polyline is {leg_total} m")

    @property
    def length(self) -> float:
        return float(sum(s.length_m for s in self.segments))

    def to_dict(self) -> dict:
        return {
            "origin": {"lat": self.origin_lat, "lon": self.origin_lon},
            "legs": [{"heading_deg": h, "length_m": l} for h, l in self.legs],
            "segments": [{"kind": s.kind.value, "length_m": s.length_m, "params": dict(s.params)} for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteSpec":
        return cls(
            segments=tuple(SegmentSpec(SegmentKind(s["kind"]), float(s["length_m"]), dict(s.get("params", {}))) for s in d["segments"]),
            origin_lat=float(d["origin"]["lat"]),
            origin_lon=float(d["origin"]["lon"]),
            legs=tuple((float(l["heading_deg"]), float(l["length_m"])) for l in d["legs"]),
        )


def load_route(path: str | os.PathLike | None = None) -> RouteSpec:
    if path is None:
        text = resources.files("curbsense.data").joinpath("default_route.json").read_text()
    else:
        text = Path(path).read_text()
    return RouteSpec.from_dict(json.loads(text))


def save_route(route: RouteSpec, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(route.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    speed: float
    vibration_gain: float
    sensor_tilt: float  # degrees
    noise_floor: float
    wheelchair_type: str = "manual"

    def __post_init__(self):
        if not 0.6 <= self.speed <= 1.6:
            raise ValueError(f"{self.user_id}: speed {self.speed} outside [0.6, 1.6] m/s")
        if self.vibration_gain <= 0:
            raise ValueError(f"{self.user_id}: vibration_gain must be positive")
        if not 0 <= self.sensor_tilt <= 10:
            raise ValueError(f"{self.user_id}: tilt must lie in [0, 10] degrees")
        if self.noise_floor < 0:
            raise ValueError(f"{self.user_id}: negative noise floor")
        if self.wheelchair_type not in ("manual", "electric"):
            raise ValueError(f"{self.user_id}: unknown wheelchair type {self.wheelchair_type!r}")


def load_profiles(path: str | os.PathLike | None = None) -> list[UserProfile]:
    if path is None:
        text = resources.files("curbsense.data").joinpath("default_users.json").read_text()
    else:
        text = Path(path).read_text()
    return [UserProfile(**d) for d in json.loads(text)["users"]]


def save_profiles(profiles: list[UserProfile], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps({"users": [asdict(p) for p in profiles]}, indent=2) + "\n")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


class RouteGeometry:
    """Arc-length parameterized polyline with an equirectangular lat/lon mapping."""

    def __init__(self, route: RouteSpec):
        self.route = route
        pts = [(0.0, 0.0)]
        for heading, length in route.legs:
            h = math.radians(heading)
            e, n = pts[-1]
            pts.append((e + length * math.sin(h), n + length * math.cos(h)))
        self.vertices = np.array(pts)  # (east, north) meters from the origin
        self.cum = np.concatenate([[0.0], np.cumsum([l for _, l in route.legs])])
        self.length = float(self.cum[-1])
        self.lat0 = route.origin_lat
        self.lon0 = route.origin_lon
        self._east_scale = METERS_PER_DEG_LAT * math.cos(math.radians(self.lat0))
        self.seg_bounds = np.concatenate([[0.0], np.cumsum([s.length_m for s in route.segments])])

    def local_at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.cum) - 2)
        frac = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i])
        p0, p1 = self.vertices[i], self.vertices[i + 1]
        return p0 + (p1 - p0) * frac[..., None]

    def local_to_latlon(self, local: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        local = np.asarray(local, dtype=np.float64)
        lat = self.lat0 + local[..., 1] / METERS_PER_DEG_LAT
        lon = self.lon0 + local[..., 0] / self._east_scale
        return lat, lon

    def latlon_to_local(self, lat, lon) -> np.ndarray:
        n = (np.asarray(lat, dtype=np.float64) - self.lat0) * METERS_PER_DEG_LAT
        e = (np.asarray(lon, dtype=np.float64) - self.lon0) * self._east_scale
        return np.stack([e, n], axis=-1)

    def latlon_at(self, s) -> tuple[np.ndarray, np.ndarray]:
        return self.local_to_latlon(self.local_at(s))

    def table(self, step: float = 1.0) -> np.ndarray:
        """Rows of (s, lat, lon) every ``step`` meters, endpoint included."""
        s = np.append(np.arange(0.0, self.length, step), self.length)
        lat, lon = self.latlon_at(s)
        return np.stack([s, lat, lon], axis=1)

    def project(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Nearest arc length and distance (m) to the route for each position."""
        p = self.latlon_to_local(lat, lon).reshape(-1, 2)
        a = self.vertices[:-1]
        d = self.vertices[1:] - a
        seglen2 = (d**2).sum(1)
        rel = p[:, None, :] - a[None, :, :]
        u = np.clip((rel * d[None]).sum(-1) / seglen2[None], 0.0, 1.0)
        foot = a[None] + u[..., None] * d[None]
        dist = np.sqrt(((p[:, None, :] - foot) ** 2).sum(-1))
        j = dist.argmin(axis=1)
        rows = np.arange(len(p))
        arc = self.cum[j] + u[rows, j] * np.sqrt(seglen2[j])
        shape = np.shape(lat)
        return arc.reshape(shape), dist[rows, j].reshape(shape)

    def segment_index(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return np.clip(np.searchsorted(self.seg_bounds, s, side="right") - 1, 0, len(self.route.segments) - 1)

    def kind_codes(self, s, reverse: bool = False) -> np.ndarray:
        """Segment kind code at arc length ``s`` as experienced in the travel direction."""
        codes = np.array([KIND_INDEX[seg.kind] for seg in self.route.segments])
        out = codes[self.segment_index(s)]
        if reverse:
            swap = np.arange(len(KIND_ORDER))
            for k, r in REVERSED_KIND.items():
                swap[KIND_INDEX[k]] = KIND_INDEX[r]
            out = swap[out]
        return out

    def curb_centers(self) -> np.ndarray:
        """Arc length of the impulse point of every CURB segment."""
        return np.array(
            [(self.seg_bounds[i] + self.seg_bounds[i + 1]) / 2 for i, s in enumerate(self.route.segments) if s.kind is SegmentKind.CURB]
        )


def build_route_geometry(spec: RouteSpec) -> RouteGeometry:
    if spec.length <= 0:
        raise ValueError("zero-length route")
    return RouteGeometry(spec)


# ---------------------------------------------------------------------------
# signal model
# ---------------------------------------------------------------------------

_ROUGH_WARMUP = 100


def _alpha(cutoff_hz: float) -> float:
    return 1.0 - math.exp(-2.0 * math.pi * cutoff_hz / SAMPLE_RATE_HZ)


def _cascade_gain(alpha: float) -> float:
    """Output std of the two-stage one-pole cascade driven by unit white noise."""
    imp = np.zeros(4096)
    imp[0] = 1.0
    h = _kernels.onepole(_kernels.onepole(imp, alpha), alpha)
    return float(np.sqrt(np.sum(h * h)))


def _roughness(n: int, amplitude: float, cutoff_hz: float, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise of standard deviation ``amplitude`` on each body axis, shape (n, 3)."""
    white = rng.standard_normal((3, n + _ROUGH_WARMUP))
    if amplitude == 0.0:
        return np.zeros((n, 3))
    a = _alpha(cutoff_hz)
    g = _cascade_gain(a)
    out = np.empty((n, 3))
    for ax in range(3):
        y = _kernels.onepole(_kernels.onepole(white[ax], a), a)
        out[:, ax] = y[_ROUGH_WARMUP:] / g
    return out * amplitude * AXIS_WEIGHTS


def surface_signal(
    kind: SegmentKind,
    params: dict,
    profile: UserProfile,
    t: np.ndarray,
    speed: float,
    direction: int = 1,
    rng: np.random.Generator | None = None,
    segment_length: float | None = None,
) -> np.ndarray:
    """Body-frame acceleration (forward, lateral, vertical) in m/s^2 at times ``t``.

    ``t`` is measured from entering the segment.  ``direction`` is +1 when the
    segment is traversed in route order and -1 otherwise; it flips the sign of
    slope gravity.  Without ``rng`` the stochastic terms (roughness and the
    post-impact curb rattle) are omitted.
    """
    kind = SegmentKind(kind)
    t = np.asarray(t, dtype=np.float64)
    n = t.shape[0]
    out = np.zeros((n, 3))
    theta = 0.0
    if kind in SLOPE_KINDS:
        sign = 1.0 if kind in (SegmentKind.ASC_SLP, SegmentKind.GENT_ASC_SLP) else -1.0
        theta = math.radians(params["angle_deg"]) * sign * direction
    out[:, 0] = GRAVITY * math.sin(theta)
    out[:, 2] = GRAVITY * math.cos(theta)

    gain = profile.vibration_gain
    if kind is SegmentKind.CURB:
        amp = float(params.get("amplitude", 12.0))
        length = segment_length if segment_length is not None else 0.3
        tc = (length / 2.0) / speed
        tau = t - (tc - CURB_IMPULSE_S / 2)
        pulse = np.where((tau >= 0) & (tau <= CURB_IMPULSE_S), np.sin(np.pi * np.clip(tau, 0, CURB_IMPULSE_S) / CURB_IMPULSE_S), 0.0)
        out[:, 2] += gain * amp * pulse
        out[:, 0] -= gain * 0.5 * amp * pulse
    elif kind is SegmentKind.TACTILE:
        amp = float(params.get("amplitude", 1.0))
        spacing = float(params.get("spacing_m", 0.3))
        phase = 2.0 * np.pi * speed * t / spacing
        out[:, 2] += gain * amp * np.sin(phase)
        out[:, 0] += gain * 0.3 * amp * np.sin(phase)

    if rng is not None:
        rough_amp, fc = segment_roughness(kind, params)
        out += gain * _roughness(n, rough_amp, fc, rng)
        if kind is SegmentKind.CURB:
            out += gain * _curb_rattle(tau, params, rng)
    return out


def _curb_rattle(tau: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    """Decaying band-limited vibration excited by the curb impact; fresh per traversal."""
    peak = float(params.get("rattle", CURB_RATTLE[0])) * rng.uniform(0.7, 1.3)
    decay = float(params.get("rattle_decay_s", CURB_RATTLE[1]))
    fc = float(params.get("rattle_cutoff_hz", CURB_RATTLE[2]))
    env = np.where(tau >= 0, np.exp(-np.maximum(tau, 0.0) / decay), 0.0)
    return _roughness(tau.shape[0], peak, fc, rng) * env[:, None]


def _rotate_tilt(body: np.ndarray, tilt_deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(tilt_deg)), math.sin(math.radians(tilt_deg))
    f, lat, v = body[:, 0], body[:, 1], body[:, 2]
    return np.stack([c * f - s * v, lat, s * f + c * v], axis=1)


def run_seed(master_seed: int, user_index: int, lap: int) -> int:
    """Per-(user, lap) seed hashed from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(user_index), int(lap)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def synthesize_run(route: RouteSpec, profile: UserProfile, lap: int, seed: int, geometry: RouteGeometry | None = None) -> RunRecording:
    """One lap of ``route``; lap 2 is driven in reverse, laps 1 and 3 in route order."""
    if lap not in (1, 2, 3):
        raise ValueError(f"lap must be 1, 2 or 3, got {lap}")
    geo = geometry or build_route_geometry(route)
    rng = np.random.default_rng(seed)
    fs = SAMPLE_RATE_HZ
    speed = profile.speed
    n = int(math.floor(geo.length / speed * fs + 1e-9)) + 1
    t = np.arange(n) / fs
    dist = np.minimum(speed * t, geo.length)
    reverse = lap == 2
    arc = geo.length - dist if reverse else dist
    direction = -1 if reverse else 1

    # segment under the wheel, resolved in travel order so boundaries are consistent
    bounds = geo.seg_bounds
    nseg = len(route.segments)
    if reverse:
        rev_bounds = geo.length - bounds[::-1]
        rev_idx = np.clip(np.searchsorted(rev_bounds, dist, side="right") - 1, 0, nseg - 1)
        seg_idx = nseg - 1 - rev_idx
    else:
        seg_idx = np.clip(np.searchsorted(bounds, dist, side="right") - 1, 0, nseg - 1)

    body = np.zeros((n, 3))
    order = range(nseg - 1, -1, -1) if reverse else range(nseg)
    for i in order:
        sel = np.flatnonzero(seg_idx == i)
        if len(sel) == 0:
            continue
        seg = route.segments[i]
        into = (bounds[i + 1] - arc[sel]) if reverse else (arc[sel] - bounds[i])
        body[sel] = surface_signal(seg.kind, seg.params, profile, into / speed, speed, direction, rng, seg.length_m)

    if profile.wheelchair_type == "manual":
        # push rhythm: roughly one stroke per meter travelled
        body[:, 0] += 0.35 * np.sin(2.0 * np.pi * speed * t)

    acc = _rotate_tilt(body, profile.sensor_tilt)
    acc = acc + profile.noise_floor * rng.standard_normal((n, 3))
    lat, lon = geo.latlon_at(arc)
    labels = np.array([surface_label_of(s.kind).value for s in route.segments], dtype=np.int8)[seg_idx]
    return RunRecording(user=profile.user_id, lap=lap, t=t, acc=acc, lat=lat, lon=lon, surface=labels)


def default_experiment(
    seed: int,
    route: RouteSpec | None = None,
    profiles: list[UserProfile] | None = None,
    laps: tuple[int, ...] = (1, 2, 3),
) -> list[RunRecording]:
    """All users times all laps over the route, each run with its own hashed seed."""
    route = route or load_route()
    profiles = profiles if profiles is not None else load_profiles()
    geo = build_route_geometry(route)
    out = []
    for ui, prof in enumerate(profiles):
        for lap in laps:
            out.append(synthesize_run(route, prof, lap, run_seed(seed, ui, lap), geometry=geo))
    return out
