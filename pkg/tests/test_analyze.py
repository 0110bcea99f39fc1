import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pavescan.analyze import (
    DefectMeasurement,
    TransverseProfile,
    WorldFrame,
    defect_mre,
    detect_defects,
    dumps_report,
    extract_profile,
    linear_fit_r2,
    profile_csv,
    profile_svg,
    rut_depth_straightedge,
    straightedge_gaps,
)
from pavescan.dataio import PavementField, SynthSpec
from pavescan.dataio.synthetic import pothole
from pavescan.errors import (
    DegenerateVariance,
    InvariantError,
    NoMatchedPairs,
    ProfileTooSparse,
    StationOutOfRange,
    TooFewPairs,
)
from pavescan.stitch import ElevationMosaic

import oracles


def grid_mosaic(e, gsd=2.0, axis="y"):
    e = np.asarray(e, dtype=float)
    return ElevationMosaic(e, (~np.isnan(e)).astype(int), gsd, (0, 0), axis)


def field_mosaic(defects, rows, cols, gsd=2.0):
    """Sample the analytic synthetic field at pixel positions (col*gsd, row*gsd)."""
    field = PavementField(SynthSpec(defects=tuple(defects)))
    yy, xx = np.mgrid[0:rows, 0:cols] * gsd
    return grid_mosaic(field.height(xx, yy), gsd)


def profile(x, y, station=0.0):
    return TransverseProfile(station, np.asarray(x, float), np.asarray(y, float))


profiles = st.integers(10, 60).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.floats(-30, 30, allow_nan=False, allow_subnormal=False), min_size=n, max_size=n),
))


class TestProfile:
    def test_flat(self):
        p = extract_profile(grid_mosaic(np.zeros((100, 50))), 0.1)
        assert np.all(np.abs(p.elevations) < 0.5) and len(p) == 50

    def test_station_to_row(self):
        e = np.tile(np.arange(600.0)[:, None], (1, 40))
        p = extract_profile(grid_mosaic(e, 2.0), 1.0)
        assert np.all(p.elevations == 500.0)
        np.testing.assert_allclose(np.diff(p.offsets), 0.002)
        assert p.offsets[0] == 0.0

    def test_out_of_range(self):
        m = grid_mosaic(np.zeros((100, 50)))
        with pytest.raises(StationOutOfRange):
            extract_profile(m, 0.2)
        with pytest.raises(StationOutOfRange):
            extract_profile(m, -0.01)

    def test_travel_axis_x_uses_columns(self):
        e = np.tile(np.arange(80.0)[None, :], (30, 1))
        p = extract_profile(grid_mosaic(e, 1.0, "x"), 0.05)
        assert np.all(p.elevations == 50.0) and len(p) == 30

    def test_short_gap_is_bridged(self):
        e = np.zeros((5, 40))
        e[2, 10:20] = np.nan
        e[2, 9], e[2, 20] = 0.0, 11.0
        p = extract_profile(grid_mosaic(e, 1.0), 0.002)
        assert not p.split and len(p) == 40
        np.testing.assert_allclose(p.elevations[9:21], np.arange(12.0))

    def test_long_gap_splits(self):
        e = np.zeros((5, 60))
        e[2, 15:26] = np.nan
        p = extract_profile(grid_mosaic(e, 1.0), 0.002)
        assert p.split and len(p) == 34 and p.offsets[0] == pytest.approx(0.026)

    def test_too_sparse(self):
        e = np.full((5, 60), np.nan)
        e[2, :5] = 0
        with pytest.raises(ProfileTooSparse):
            extract_profile(grid_mosaic(e, 1.0), 0.002)


class TestRutDepth:
    X = np.arange(41) * 0.01

    def test_flat(self):
        assert rut_depth_straightedge(profile(self.X, np.zeros(41))).depth == 0

    def test_ramp(self):
        assert rut_depth_straightedge(profile(self.X, 3 * self.X)).depth == 0

    def test_v_groove(self):
        y = np.zeros(41)
        y[10:31] = -12.0 + np.abs(np.arange(-10, 11)) * 1.2
        r = rut_depth_straightedge(profile(self.X, y))
        assert r.depth == 12.0 and r.offset_at_max == pytest.approx(0.2)
        assert oracles.straightedge_bruteforce(self.X, y) == (12.0, r.offset_at_max)

    def test_tie_takes_lowest_offset(self):
        y = np.zeros(41)
        y[10] = y[30] = -4.0
        assert rut_depth_straightedge(profile(self.X, y)).offset_at_max == pytest.approx(0.1)

    @settings(max_examples=200, deadline=None)
    @given(profiles)
    def test_hull_matches_bruteforce(self, data):
        n, y = data
        x = np.arange(n) * 0.002
        y = np.asarray(y)
        r = rut_depth_straightedge(profile(x, y))
        depth, at = oracles.straightedge_bruteforce(x, y)
        assert r.depth == pytest.approx(depth, abs=1e-9)
        if depth > 1e-9:
            assert abs(r.offset_at_max - at) < 1e-12 or \
                abs(straightedge_gaps(x, y)[np.searchsorted(x, at)] - depth) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(profiles, st.floats(-100, 100), st.floats(0.1, 10))
    def test_translation_and_scale(self, data, c, s):
        n, y = data
        x = np.arange(n) * 0.002
        y = np.asarray(y)
        d = rut_depth_straightedge(profile(x, y)).depth
        assert rut_depth_straightedge(profile(x, y + c)).depth == pytest.approx(d, abs=1e-9)
        assert rut_depth_straightedge(profile(x, s * y)).depth == pytest.approx(s * d, abs=1e-8)

    def test_sliding_sees_local_rut_only(self):
        x = np.arange(0, 3.65, 0.01)
        y = -0.004 * (x - 1.8) ** 2 * 1000  # crowned lane, 13 mm drop to the edges
        y = y - 6.0 * np.exp(-0.5 * ((x - 1.0) / 0.1) ** 2)
        full = rut_depth_straightedge(profile(x, y))
        slide = rut_depth_straightedge(profile(x, y), "sliding")
        assert slide.straightedge_span == "sliding"
        assert slide.depth <= full.depth + 1e-9
        assert abs(slide.offset_at_max - 1.0) < 0.05

    def test_sliding_equals_full_on_short_profile(self):
        y = np.zeros(41)
        y[15:26] = -5.0
        p = profile(self.X, y)
        assert rut_depth_straightedge(p, "sliding").depth == rut_depth_straightedge(p).depth


class TestDefects:
    def test_flat_empty(self):
        assert detect_defects(grid_mosaic(np.zeros((200, 200)))) == []

    def test_single_pothole(self):
        m = field_mosaic([pothole(0.5, 0.5, 50.0, 300.0, 400.0)], 500, 500)
        d = detect_defects(m, 5.0)
        assert len(d) == 1 and d[0].kind == "pothole"
        assert abs(d[0].depth - 50.0) <= 1.0
        assert d[0].width == pytest.approx(300.0, rel=0.05)
        assert d[0].length == pytest.approx(400.0, rel=0.05)
        assert d[0].centroid == pytest.approx((0.5, 0.5), abs=0.003)

    def test_two_potholes_larger_first(self):
        m = field_mosaic([pothole(0.4, 0.5, 40.0, 200.0, 200.0), pothole(1.4, 0.5, 40.0, 300.0, 400.0)], 900, 500)
        d = detect_defects(m)
        assert len(d) == 2 and d[0].area > d[1].area
        assert d[0].centroid[0] == pytest.approx(1.4, abs=0.01)

    def test_long_narrow_is_rut(self):
        e = np.zeros((400, 100))
        e[20:380, 40:60] = -8.0
        assert detect_defects(grid_mosaic(e))[0].kind == "rut"

    def test_threshold_monotone(self, rng):
        e = -np.abs(rng.normal(scale=8, size=(120, 120)))
        m = grid_mosaic(e, 10.0)
        areas = [sum(d.area for d in detect_defects(m, t, 100.0)) for t in (1, 2, 4, 8, 16)]
        assert all(b <= a for a, b in zip(areas, areas[1:]))

    def test_labeling_matches_bfs(self, rng):
        e = np.where(rng.random((60, 70)) < 0.45, -10.0, 0.0)
        d = detect_defects(grid_mosaic(e, 1.0), 5.0, 1.0)
        comps = oracles.components_bfs(e < -5.0)
        assert sorted(c.area for c in d) == sorted(float(len(c)) for c in comps)

    def test_validation(self):
        with pytest.raises(InvariantError):
            detect_defects(grid_mosaic(np.zeros((5, 5))), 0.0)


def measured(depth, width, length, station=1.0, offset=1.0):
    return DefectMeasurement("pothole", depth, width, length, (station, offset), width * length)


class TestMre:
    def test_exact(self):
        s = defect_mre([measured(50, 300, 400)], [pothole(1.0, 1.0, 50, 300, 400)])
        assert (s.mre_depth, s.mre_width, s.mre_length) == (0.0, 0.0, 0.0)

    def test_depth_example(self):
        s = defect_mre([measured(103.93, 300, 400)], [pothole(1.0, 1.0, 100.0, 300, 400)])
        assert s.mre_depth == pytest.approx(3.93, abs=1e-9)

    def test_empty(self):
        with pytest.raises(NoMatchedPairs):
            defect_mre([], [pothole(1.0, 1.0)])

    def test_gate_and_false_positive(self):
        s = defect_mre([measured(50, 300, 400), measured(20, 100, 100, 3.0, 1.0)],
                       [pothole(1.0, 1.0), pothole(5.0, 1.0)])
        assert s.pairs == [(0, 0)] and s.misses == [1] and s.false_positives == [1]

    def test_order_symmetric(self):
        ms = [measured(48, 310, 390, 1.0), measured(52, 290, 420, 2.0)]
        ts = [pothole(1.0, 1.0), pothole(2.0, 1.0)]
        a = defect_mre(ms, ts)
        b = defect_mre(ms[::-1], ts[::-1])
        assert a[:3] == pytest.approx(b[:3], abs=1e-12)


class TestFit:
    def test_perfect(self):
        s = linear_fit_r2([(v, v) for v in (1.0, 2.0, 5.0, 9.0)])
        assert (s.r2, s.slope, s.intercept) == (1.0, 1.0, 0.0)

    def test_constant_truth(self):
        with pytest.raises(DegenerateVariance):
            linear_fit_r2([(1.0, 3.0), (2.0, 3.0), (4.0, 3.0)])

    def test_too_few(self):
        with pytest.raises(TooFewPairs):
            linear_fit_r2([(1.0, 1.0), (2.0, 2.0)])

    def test_matches_normal_equations(self, rng):
        tru = rng.uniform(600, 1200, 50)
        est = 0.98 * tru + 7 + rng.normal(scale=5, size=50)
        s = linear_fit_r2(np.c_[est, tru])
        r2, b, a = oracles.ols_normal_equations(list(est), list(tru))
        assert abs(s.r2 - r2) < 1e-9 and abs(s.slope - b) < 1e-9 and abs(s.intercept - a) < 1e-9 * 1000

    def test_estimated_on_truth_orientation(self):
        pairs = [(2.0, 1.0), (4.0, 2.0), (7.0, 3.0)]  # (estimated, truth)
        s = linear_fit_r2(pairs)
        assert s.slope == pytest.approx(2.5)


class TestWorldFrame:
    def test_reference_principal_point_is_camera_position(self):
        m = ElevationMosaic(np.zeros((10, 10)), np.ones((10, 10)), 2.0, (300.0, 220.0))
        w = WorldFrame((1825.0, 1000.0), (320.0, 240.0))
        st_, off = w.to_world(m, 20 * 0.002, 20 * 0.002)
        assert (st_, off) == pytest.approx((1.0, 1.825))
        assert w.from_world(m, st_, off) == pytest.approx((0.04, 0.04))


class TestOutputs:
    def test_csv(self):
        p = profile(np.arange(10) * 0.002, np.linspace(-1, 1, 10))
        lines = profile_csv(p).splitlines()
        assert lines[0] == "offset_m,elevation_mm" and len(lines) == 11
        assert lines[1] == "0.000000,-1.000000"

    def test_svg(self):
        p = profile(np.arange(20) * 0.01, np.sin(np.arange(20)))
        svg = profile_svg(p, rut_depth_straightedge(p))
        assert 'viewBox="0 0 800 300"' in svg and svg.count("<polyline") == 2

    def test_report_sorted_and_strict(self):
        text = dumps_report({"b": 1, "a": [measured(1, 2, 3).to_dict()]})
        assert list(json.loads(text)) == ["a", "b"]
        with pytest.raises(ValueError):
            dumps_report({"x": float("nan")})
