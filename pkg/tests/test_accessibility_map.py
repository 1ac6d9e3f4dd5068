import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from curbsense.accessibility_map import (
    AccessibilityBin,
    bin_max_aggregate,
    cluster_points,
    color_scale,
    emit_geojson,
    emit_svg_overview,
    geojson_text,
    hex_color,
    minmax_normalize_per_user,
    validate_point_geojson,
)
from curbsense.config import DEFAULT_PALETTE

SVG = "{http://www.w3.org/2000/svg}"


def test_minmax_examples():
    np.testing.assert_allclose(minmax_normalize_per_user([2, 4, 6], ["a"] * 3), [0, 0.5, 1])
    np.testing.assert_array_equal(minmax_normalize_per_user([5, 5, 5], ["a"] * 3), [0, 0, 0])
    e = np.random.default_rng(0).gamma(2.0, size=40)
    users = np.repeat(["a", "b"], 20)
    scaled = np.where(users == "a", 3.0 * e + 7.0, 0.2 * e - 1.0)
    np.testing.assert_allclose(minmax_normalize_per_user(scaled, users), minmax_normalize_per_user(e, users), atol=1e-12)


def test_bin_max_aggregate(geometry):
    s = np.array([2.0, 12.0, 13.0, 703.0])
    lat, lon = geometry.latlon_at(s)
    agg = bin_max_aggregate([0.4, 0.3, 0.9, 0.1], lat, lon, geometry)
    assert len(agg.bins) == 280
    assert agg.bins[0].value == 0.4 and agg.bins[0].count == 1
    assert agg.bins[2].value == 0.9 and agg.bins[2].count == 2
    assert agg.bins[140].value == 0.1
    assert agg.bins[1].empty and np.isnan(agg.bins[1].value)
    assert len(agg.occupied) == 3 and agg.dropped == 0
    far = bin_max_aggregate([1.0], [lat[0] + 0.01], [lon[0]], geometry)
    assert far.dropped == 1 and not far.occupied


def test_color_scale_examples():
    assert color_scale(1.0) == (255, 0, 0)
    assert color_scale(0.0) == (0, 0, 255)
    assert color_scale(0.5) == (128, 0, 128)
    assert hex_color(color_scale(1.0)) == "#FF0000"
    assert hex_color(color_scale(0.0)) == "#0000FF"
    assert color_scale(1.7) == (255, 0, 0) and color_scale(float("nan")) == (0, 0, 255)


def test_geojson_examples(tmp_path):
    empty = json.loads(geojson_text([]))
    assert empty == {"type": "FeatureCollection", "features": []}
    assert validate_point_geojson(empty) == []
    one = AccessibilityBin(0, 35.0, 139.0, 1.0, 3)
    doc = json.loads(emit_geojson([one], tmp_path / "a.geojson").read_text())
    assert len(doc["features"]) == 1
    f = doc["features"][0]
    assert f["properties"]["color"] == "#FF0000"
    assert f["geometry"] == {"type": "Point", "coordinates": [139.0, 35.0]}
    assert validate_point_geojson(doc) == []
    again = emit_geojson([one], tmp_path / "b.geojson")
    assert again.read_bytes() == (tmp_path / "a.geojson").read_bytes()


def test_geojson_omits_empty_bins_and_orders_points():
    bins = [AccessibilityBin(1, 35.1, 139.1, 0.2, 1), AccessibilityBin(0, 35.0, 139.0, float("nan"), 0)]
    assert len(json.loads(geojson_text(bins))["features"]) == 1
    pts = cluster_points([1.0, 2.0], [3.0, 4.0], [17, 2], ["U2", "U1"], [1, 1])
    doc = json.loads(geojson_text(pts))
    assert [f["properties"]["user"] for f in doc["features"]] == ["U1", "U2"]
    assert doc["features"][1]["properties"]["color"] == DEFAULT_PALETTE[1]
    assert validate_point_geojson(doc) == []


def test_validator_finds_problems():
    assert validate_point_geojson([]) != []
    bad = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "geometry": {"type": "LineString", "coordinates": []}, "properties": {}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [200.0, 0.0]}, "properties": {"value": 1, "color": "#FF0000"}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [0.0, 0.0]}, "properties": {"value": 1, "color": "red"}},
    ]}
    errs = validate_point_geojson(bad)
    assert len(errs) == 3 and "Point" in errs[0] and "range" in errs[1] and "color" in errs[2]


@pytest.mark.parametrize("kind", ["bins", "clusters"])
def test_svg_overview(tmp_path, geometry, kind):
    s = np.linspace(0.0, geometry.length, 57)
    lat, lon = geometry.latlon_at(s)
    if kind == "bins":
        items = bin_max_aggregate(np.linspace(0, 1, 57), lat, lon, geometry).occupied
    else:
        items = cluster_points(lat, lon, np.arange(57) % 16, ["U1"] * 57, [1] * 57)
    a = emit_svg_overview(items, geometry, tmp_path / "a.svg")
    b = emit_svg_overview(items, geometry, tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()
    root = ET.parse(a).getroot()
    _, _, w, h = (float(v) for v in root.get("viewBox").split())
    circles = root.findall(f"{SVG}circle")
    assert len(circles) == len(items)
    for c in circles:
        assert 0 <= float(c.get("cx")) <= w and 0 <= float(c.get("cy")) <= h
