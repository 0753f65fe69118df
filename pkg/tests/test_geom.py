import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

import oracles
from crossguard.geom import (
    EPS,
    GeometryError,
    Guideway,
    InfeasibleCenterline,
    Movement,
    Polyline,
    Pose,
    blind_zone,
    build_centerline,
    conflict_zones,
    footprint,
    shadow_region,
    thicken,
    visible_fraction,
)

# Grid-oracle area of the L-shaped polyline (0,0)-(0,50)-(40,50) thickened to 12 ft,
# sampled at 0.1 ft.
L_SHAPE_ORACLE_AREA = 1185.3


def straight_gw(gid, a, b, width=12.0, mode="vehicle", approach="S"):
    return Guideway(gid, Movement(approach, "through", mode), Polyline([a, b]), width)


# ---------------------------------------------------------------- centerlines

def test_collinear_entry_and_exit_give_a_straight_segment():
    line = build_centerline(Pose(0, 0, 0, 1), Pose(0, 100, 0, 1), 1 / 25)
    assert line.length == pytest.approx(100.0)
    assert np.allclose(line.points[:, 0], 0.0)
    assert np.all(np.diff(line.points[:, 1]) <= 1.0 + 1e-9)


def test_right_turn_with_30ft_offset_respects_the_curvature_cap():
    line = build_centerline(Pose(0, 0, 0, 1), Pose(30, 30, 1, 0), 1 / 20)
    k = line.curvatures()
    assert k.max() <= 0.05 * (1 + 1e-3)
    assert np.allclose(line.points[0], (0, 0)) and np.allclose(line.points[-1], (30, 30))
    assert np.allclose(line.heading_at(0.0), (0, 1), atol=0.02)
    assert np.allclose(line.heading_at(line.length), (1, 0), atol=0.02)
    assert np.all(np.diff(line.arclength) <= 1.0 + 1e-9)


def test_turn_needing_5ft_radius_is_infeasible_under_a_20ft_cap():
    with pytest.raises(InfeasibleCenterline):
        build_centerline(Pose(0, 0, 0, 1), Pose(5, 5, 1, 0), 1 / 20)


def test_centerline_rejects_nonpositive_cap():
    with pytest.raises(GeometryError):
        build_centerline(Pose(0, 0, 0, 1), Pose(0, 10, 0, 1), 0.0)


def test_polyline_rejects_repeated_points():
    with pytest.raises(GeometryError):
        Polyline([(0, 0), (0, 0), (1, 1)])


@settings(max_examples=30)
@given(dx=st.floats(10, 80), dy=st.floats(10, 80))
def test_generated_turns_respect_the_cap_or_are_rejected(dx, dy):
    try:
        line = build_centerline(Pose(0, 0, 0, 1), Pose(dx, dy, 1, 0), 1 / 25)
    except InfeasibleCenterline:
        # a quarter turn needs radius >= 25 ft within the shorter offset
        assert min(dx, dy) < 32.0
        return
    assert line.curvatures().max() <= (1 / 25) * (1 + 1e-3)


# ---------------------------------------------------------------- thicken

def test_thickened_straight_segment_is_a_12_by_100_rectangle():
    poly = thicken(Polyline([(0, 0), (0, 100)]), 12)
    # round caps add two half discs of radius 6
    assert poly.area == pytest.approx(1200 + math.pi * 36, rel=0.01)
    assert poly.exterior.is_ccw


def test_l_shape_area_matches_the_grid_oracle():
    poly = thicken(Polyline([(0, 0), (0, 50), (40, 50)]), 12)
    assert poly.area == pytest.approx(L_SHAPE_ORACLE_AREA, rel=0.02)


def test_zero_width_is_rejected():
    with pytest.raises(GeometryError):
        thicken(Polyline([(0, 0), (0, 10)]), 0)


@given(pts=st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=2, max_size=5,
                    unique=True),
       width=st.floats(2, 14))
def test_offset_containment(pts, width):
    pts = np.array(pts)
    if np.any(np.hypot(*np.diff(pts, axis=0).T) < 0.5):
        return
    line = Polyline(pts)
    poly = thicken(line, width)
    fat = poly.buffer(1e-6)
    assert all(fat.contains(Point(p)) for p in line.points)
    ring = np.asarray(poly.exterior.coords)
    d = oracles.dist_to_polyline(ring, line.points)
    assert d.max() <= width / 2 + EPS


# ---------------------------------------------------------------- conflict zones

def test_perpendicular_12ft_guideways_make_one_144_sqft_zone():
    a = straight_gw("a", (0, -50), (0, 50))
    b = straight_gw("b", (-50, 0), (50, 0), approach="W")
    zs = conflict_zones(a, b)
    assert len(zs) == 1
    assert zs[0].polygon.area == pytest.approx(144, abs=2)
    assert zs[0].interval_a == pytest.approx((44, 56), abs=0.01)
    assert zs[0].interval_b == pytest.approx((44, 56), abs=0.01)


def test_parallel_guideways_do_not_conflict():
    a = straight_gw("a", (0, 0), (0, 100))
    b = straight_gw("b", (20, 0), (20, 100))
    assert conflict_zones(a, b) == []


def test_a_guideway_does_not_conflict_with_itself():
    a = straight_gw("a", (0, 0), (0, 100))
    with pytest.raises(GeometryError):
        conflict_zones(a, a)


def test_two_crossings_give_two_zones():
    a = Guideway("a", Movement("S", "through", "vehicle"),
                 Polyline([(0, 0), (0, 40), (40, 40), (40, 0)]), 6)
    b = straight_gw("b", (-20, 20), (60, 20), width=6, approach="W")
    assert len(conflict_zones(a, b)) == 2


def test_conflict_zones_are_symmetric(fourleg):
    for z in fourleg.zones[:40]:
        back = conflict_zones(z.guideway_b, z.guideway_a)
        match = [r for r in back if r.polygon.symmetric_difference(z.polygon).area < 1e-6]
        assert len(match) == 1
        assert match[0].interval_on(z.guideway_a) == pytest.approx(z.interval_a)
        assert match[0].interval_on(z.guideway_b) == pytest.approx(z.interval_b)


def test_zone_lies_in_both_guideways(fourleg):
    for z in fourleg.zones:
        assert not z.polygon.is_empty
        slack = z.guideway_a.polygon.intersection(z.guideway_b.polygon).buffer(1e-6)
        assert slack.contains(z.polygon)


def test_zone_intervals_bracket_the_centerline_crossing(fourleg):
    for z in fourleg.zones:
        for gw in (z.guideway_a, z.guideway_b):
            lo, hi = z.interval_on(gw)
            inside = z.polygon.intersection(gw.centerline.line)
            if inside.is_empty:
                continue
            ss = [gw.centerline.project(c) for g in getattr(inside, "geoms", [inside])
                  for c in g.coords]
            assert lo - 1e-6 <= min(ss) and max(ss) <= hi + 1e-6


def test_right_turn_from_south_has_the_seven_listed_conflicts(fourleg, right_ego):
    from crossguard.fixtures import RIGHT_FROM_SOUTH_THREATS
    zones = fourleg.zones_of(right_ego)
    assert len(zones) == 7
    assert sorted(z.other(right_ego).id for z in zones) == sorted(RIGHT_FROM_SOUTH_THREATS)
    labels = [(lab, z.other(right_ego).id) for lab, z in fourleg.labelled_zones(right_ego)]
    assert labels == [(f"CZ{i}", t) for i, t in enumerate(RIGHT_FROM_SOUTH_THREATS, 1)]


# ---------------------------------------------------------------- blind zones

def _zone_on_long_threat(upstream=400.0):
    ego = straight_gw("ego", (0, -30), (0, 30))
    threat = straight_gw("thr", (-upstream, 0), (40, 0), approach="W")
    return conflict_zones(ego, threat)[0], threat


def test_blind_zone_is_150ft_for_50fps_over_3s():
    z, threat = _zone_on_long_threat()
    bz = blind_zone(z, threat, 50.0, 3.0)
    assert bz.length == pytest.approx(150.0)
    assert bz.interval[1] == pytest.approx(z.interval_on(threat)[0])
    assert bz.polygon.area == pytest.approx(150 * 12 + math.pi * 36, rel=0.01)


def test_zero_tau_gives_an_empty_blind_zone_at_the_zone_boundary():
    z, threat = _zone_on_long_threat()
    bz = blind_zone(z, threat, 50.0, 0.0)
    assert bz.length == 0.0
    assert bz.interval[0] == pytest.approx(z.interval_on(threat)[0])
    assert bz.polygon.is_empty


def test_blind_zone_is_clipped_at_the_guideway_start():
    # zone entry sits 80 ft from the start of the threat guideway
    z, threat = _zone_on_long_threat(upstream=86.0)
    assert z.interval_on(threat)[0] == pytest.approx(80.0, abs=0.01)
    bz = blind_zone(z, threat, 50.0, 3.0)
    assert bz.length == pytest.approx(80.0, abs=0.01)
    assert bz.interval[0] == 0.0


def test_blind_zone_rejects_bad_parameters():
    z, threat = _zone_on_long_threat()
    with pytest.raises(GeometryError):
        blind_zone(z, threat, 0.0, 1.0)
    with pytest.raises(GeometryError):
        blind_zone(z, threat, 10.0, -1.0)


# ---------------------------------------------------------------- shadows and visibility

def test_no_obstacles_means_no_shadow():
    sh = shadow_region((0, 0), [], 100)
    assert sh.occluded == () and sh.geometry.is_empty


def test_viewpoint_inside_an_obstacle_is_an_error():
    with pytest.raises(GeometryError):
        shadow_region((0, 0), [footprint((0, 0), (0, 1), 15, 6)], 100)


def test_car_between_viewpoint_and_target_square_hides_all_of_it():
    obstacle = footprint((0, 20), (1, 0), 15, 6)
    target = Polygon([(-3, 40), (3, 40), (3, 46), (-3, 46)])
    # ray-casting oracle on a 1-ft grid: every sample is blocked
    pts = oracles.grid(target.bounds, 1.0)
    assert not oracles.visible_mask((0, 0), [np.asarray(obstacle.exterior.coords)], pts).any()
    sh = shadow_region((0, 0), [obstacle], 100)
    assert sh.geometry.buffer(1e-6).contains(target)
    assert visible_fraction((0, 0), [obstacle], target) == 0.0


def test_visible_fraction_without_obstacles_is_one():
    target = Polygon([(10, 10), (20, 10), (20, 20), (10, 20)])
    assert visible_fraction((0, 0), [], target) == 1.0


def test_wall_on_the_target_midline_hides_half():
    # thin wall from the viewpoint's line x=0 to the right hides the x>0 half
    wall = Polygon([(0, 10), (30, 10), (30, 10.2), (0, 10.2)])
    target = Polygon([(-5, 30), (5, 30), (5, 40), (-5, 40)])
    f = visible_fraction((0, 0), [wall], target)
    assert f == pytest.approx(0.5, abs=0.02)


def test_shadow_points_lie_behind_an_obstacle():
    vp = np.array([0.0, 0.0])
    obs = [footprint((10, 25), (1, 0), 15, 6), footprint((-20, 30), (0, 1), 15, 6)]
    sh = shadow_region(vp, obs, 120)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-120, 120, size=(3000, 2))
    pts = pts[np.hypot(*pts.T) <= 119]
    rings = [np.asarray(o.exterior.coords) for o in obs]
    seen = oracles.visible_mask(vp, rings, pts)
    inside = np.array([sh.geometry.contains(Point(p)) for p in pts])
    boundary = np.array([sh.geometry.boundary.distance(Point(p)) < 0.05 for p in pts])
    assert np.all((inside != seen) | boundary)


def test_occluded_view_hides_u2_u3_u4_only(fourleg):
    from crossguard.fixtures import occluded_view
    vp, obstacles, users = occluded_view()
    sh = shadow_region(vp, obstacles, 600)
    hidden = {u for u, (gid, s) in users.items()
              if sh.contains(fourleg.guideway(gid).centerline.point_at(s))}
    assert hidden == {"U2", "U3", "U4"}


# ---------------------------------------------------------------- rigid motion

def test_footprint_is_counter_clockwise_and_sized():
    fp = footprint((3, 4), (1, 1), 15, 6)
    assert fp.exterior.is_ccw
    assert fp.area == pytest.approx(90.0)
