"""Geometry core: centerlines, guideway polygons, conflict zones, blind zones, shadows.

All lengths are in feet, speeds in ft/s. Polygons are shapely polygons oriented
counterclockwise. Every value here is immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from shapely import affinity
from shapely.geometry import LineString, MultiPoint, MultiPolygon, Point, Polygon
from shapely.geometry.polygon import orient
from shapely.ops import substring, unary_union

EPS = 0.1
QUAD_SEGS = 8  # 16 segments per semicircle cap
MIN_ZONE_AREA = 1.0
SIGHT_THRESHOLD = 0.995

APPROACHES = ("N", "E", "S", "W")
TURNS = ("left", "through", "right")
MODES = ("vehicle", "bicycle", "pedestrian")


class GeometryError(ValueError):
    pass


class InfeasibleCenterline(GeometryError):
    pass


@dataclass(frozen=True)
class Pose:
    """A point with a unit heading."""

    x: float
    y: float
    hx: float
    hy: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.hx, self.hy)):
            raise GeometryError("pose must be finite")
        n = math.hypot(self.hx, self.hy)
        if n == 0:
            raise GeometryError("zero heading")
        object.__setattr__(self, "hx", self.hx / n)
        object.__setattr__(self, "hy", self.hy / n)

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading(self) -> np.ndarray:
        return np.array([self.hx, self.hy])


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered vertices with cumulative arc length."""

    points: np.ndarray
    arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise GeometryError("polyline needs at least two 2-D points")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polyline coordinates must be finite")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg <= 1e-9):
            raise GeometryError("consecutive polyline points must be distinct")
        pts.setflags(write=False)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        s.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "arclength", s)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def line(self) -> LineString:
        return LineString(self.points)

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        return np.array([np.interp(s, self.arclength, self.points[:, 0]),
                         np.interp(s, self.arclength, self.points[:, 1])])

    def heading_at(self, s: float) -> np.ndarray:
        i = int(np.searchsorted(self.arclength, min(max(s, 0.0), self.length), side="right")) - 1
        i = min(max(i, 0), len(self.points) - 2)
        d = self.points[i + 1] - self.points[i]
        return d / np.hypot(*d)

    def project(self, pt) -> float:
        return float(self.line.project(Point(pt)))

    def sub(self, s0: float, s1: float) -> "Polyline":
        part = substring(self.line, max(s0, 0.0), min(s1, self.length))
        return Polyline(_dedupe(np.asarray(part.coords)))

    def curvatures(self) -> np.ndarray:
        return discrete_curvature(self.points)

    def transformed(self, fn) -> "Polyline":
        return Polyline(fn(self.points))


def _dedupe(pts: np.ndarray) -> np.ndarray:
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
    return pts[keep]


def concat(parts: Iterable[Polyline]) -> Polyline:
    """Join polylines end to start, dropping duplicated junction points."""
    pts = np.vstack([p.points for p in parts])
    return Polyline(_dedupe(pts))


def discrete_curvature(points: np.ndarray) -> np.ndarray:
    """Menger curvature at each interior vertex."""
    a, b, c = points[:-2], points[1:-1], points[2:]
    ab = np.hypot(*(b - a).T)
    bc = np.hypot(*(c - b).T)
    ca = np.hypot(*(a - c).T)
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    return 2.0 * np.abs(cross) / (ab * bc * ca)


def _bezier(p0, p1, p2, p3, t):
    t = t[:, None]
    u = 1 - t
    return u**3 * p0 + 3 * u**2 * t * p1 + 3 * u * t**2 * p2 + t**3 * p3


def _bezier_max_curvature(p0, p1, p2, p3, t) -> float:
    tt = t[:, None]
    u = 1 - tt
    d1 = 3 * (u**2 * (p1 - p0) + 2 * u * tt * (p2 - p1) + tt**2 * (p3 - p2))
    d2 = 6 * (u * (p2 - 2 * p1 + p0) + tt * (p3 - 2 * p2 + p1))
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if np.any(speed < 1e-9):
        return math.inf
    k = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return float(k.max())


def build_centerline(entry: Pose, exit: Pose, max_curvature: float,
                     spacing: float = 1.0) -> Polyline:
    """Cubic Bezier from the entry pose to the exit pose, sampled at <= `spacing` ft.

    Handle lengths are chosen to minimise the peak curvature; if even the best
    curve exceeds `max_curvature` the pair is rejected.
    """
    if max_curvature <= 0:
        raise GeometryError("max_curvature must be positive")
    p0, p3 = entry.point, exit.point
    h0, h3 = entry.heading, exit.heading
    chord = p3 - p0
    d = float(np.hypot(*chord))
    if d < 1e-9:
        raise InfeasibleCenterline("entry and exit coincide")
    cross0 = h0[0] * chord[1] - h0[1] * chord[0]
    if abs(cross0) < 1e-9 * d and np.dot(h0, h3) > 1 - 1e-12 and np.dot(h0, chord) > 0:
        n = max(1, math.ceil(d / spacing))
        return Polyline(p0 + np.linspace(0, 1, n + 1)[:, None] * chord)

    t = np.linspace(0.0, 1.0, 401)

    def peak(x):
        a, b = x
        if a <= 0.01 or b <= 0.01:
            return math.inf
        return _bezier_max_curvature(p0, p0 + a * d * h0, p3 - b * d * h3, p3, t)

    grid = np.linspace(0.05, 1.5, 30)
    best = min(((peak((a, b)), a, b) for a in grid for b in grid))
    res = minimize(peak, x0=[best[1], best[2]], method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-7, "maxiter": 400})
    k_best, (a, b) = (res.fun, res.x) if res.fun < best[0] else (best[0], best[1:])
    if not math.isfinite(k_best) or k_best > max_curvature:
        raise InfeasibleCenterline(
            f"required curvature {k_best:.4g} exceeds cap {max_curvature:.4g}")

    ctrl = (p0, p0 + a * d * h0, p3 - b * d * h3, p3)
    dense_t = np.linspace(0.0, 1.0, 4001)
    dense = _bezier(*ctrl, dense_t)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
    n = max(2, math.ceil(s[-1] / spacing))
    ts = np.interp(np.linspace(0, s[-1], n + 1), s, dense_t)
    line = Polyline(_bezier(*ctrl, ts))
    if line.curvatures().max() > max_curvature * (1 + 1e-3):
        raise InfeasibleCenterline("sampled centerline exceeds curvature cap")
    return line


def thicken(centerline: Polyline, width: float) -> Polygon:
    """Polygonal offset of the centerline by width/2 with round caps and joins."""
    if not width > 0:
        raise GeometryError("width must be positive")
    if centerline.length <= 0:
        raise GeometryError("degenerate centerline")
    poly = centerline.line.buffer(width / 2.0, quad_segs=QUAD_SEGS)
    return orient(poly, 1.0)


@dataclass(frozen=True)
class Movement:
    approach: str
    turn: str
    mode: str
    phase: Optional[str] = None

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise GeometryError(f"bad approach {self.approach!r}")
        if self.turn not in TURNS or self.mode not in MODES:
            raise GeometryError(f"bad movement {self.turn}/{self.mode}")
        if self.mode == "pedestrian" and self.turn != "through":
            raise GeometryError("pedestrian movements are crosswalk throughs")
        if self.mode == "vehicle" and self.turn == "right" and self.phase:
            raise GeometryError("right-turn vehicle movements carry no phase")


@dataclass(frozen=True, eq=False)
class Guideway:
    id: str
    movement: Movement
    centerline: Polyline
    width: float
    entry_lane_id: str = ""
    exit_lane_id: str = ""
    stop_s: float = 0.0  # arc length of the stop bar / crosswalk edge
    polygon: Polygon = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "polygon", thicken(self.centerline, self.width))

    @property
    def length(self) -> float:
        return self.centerline.length

    def __hash__(self):
        return hash(self.id)

    def __eq__(self, other):
        return isinstance(other, Guideway) and other.id == self.id


@dataclass(frozen=True, eq=False)
class ConflictZone:
    id: str
    guideway_a: Guideway
    guideway_b: Guideway
    polygon: Polygon
    interval_a: tuple
    interval_b: tuple

    def interval_on(self, gw: Guideway) -> tuple:
        if gw.id == self.guideway_a.id:
            return self.interval_a
        if gw.id == self.guideway_b.id:
            return self.interval_b
        raise KeyError(gw.id)

    def other(self, gw: Guideway) -> Guideway:
        if gw.id == self.guideway_a.id:
            return self.guideway_b
        if gw.id == self.guideway_b.id:
            return self.guideway_a
        raise KeyError(gw.id)


def _components(geom) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]


def _interval(line: Polyline, poly: Polygon) -> tuple:
    ss = [line.project(c) for c in poly.exterior.coords]
    return (min(ss), max(ss))


def conflict_zones(gw_a: Guideway, gw_b: Guideway,
                   min_area: float = MIN_ZONE_AREA) -> list[ConflictZone]:
    """One zone per connected component of the two guideway polygons' overlap."""
    if gw_a.id == gw_b.id:
        raise GeometryError("a guideway does not conflict with itself")
    if not gw_a.polygon.intersects(gw_b.polygon):
        return []
    overlap = gw_a.polygon.intersection(gw_b.polygon)
    if gw_a.entry_lane_id and gw_a.entry_lane_id == gw_b.entry_lane_id and gw_a.stop_s > 0:
        # a shared entry lane is queueing, not conflict: keep only what lies past the stop bar
        lane = gw_a.centerline.sub(0.0, gw_a.stop_s).line
        w = max(gw_a.width, gw_b.width)
        cut = lane.buffer(w, cap_style="flat").union(Point(lane.coords[0]).buffer(w))
        overlap = overlap.difference(cut)
    parts = [orient(p, 1.0) for p in _components(overlap) if p.area >= min_area]
    zones = []
    for p in parts:
        zones.append((_interval(gw_a.centerline, p), _interval(gw_b.centerline, p), p))
    zones.sort(key=lambda z: (z[0][0], z[1][0]))
    return [ConflictZone(f"{gw_a.id}|{gw_b.id}#{k}", gw_a, gw_b, p, ia, ib)
            for k, (ia, ib, p) in enumerate(zones)]


@dataclass(frozen=True, eq=False)
class BlindZone:
    conflict_zone: ConflictZone
    threat_guideway: Guideway
    interval: tuple
    polygon: Polygon
    tau: float
    v_max: float

    @property
    def id(self) -> str:
        return f"BZ[{self.conflict_zone.id}@{self.threat_guideway.id}]"

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]


def blind_zone(cz: ConflictZone, threat_gw: Guideway, v_max: float,
               tau: float) -> BlindZone:
    """Stretch of the threat guideway from which the zone is reachable within tau."""
    if v_max <= 0 or tau < 0:
        raise GeometryError("need v_max > 0 and tau >= 0")
    entry = cz.interval_on(threat_gw)[0]
    start = max(0.0, entry - v_max * tau)
    if entry - start > 1e-9:
        poly = thicken(threat_gw.centerline.sub(start, entry), threat_gw.width)
    else:
        poly = Polygon()
    return BlindZone(cz, threat_gw, (start, entry), poly, tau, v_max)


@dataclass(frozen=True, eq=False)
class ShadowRegion:
    viewpoint: tuple
    obstacles: tuple
    occluded: tuple
    range: float

    @property
    def geometry(self):
        return unary_union(self.occluded) if self.occluded else Polygon()

    def contains(self, pt) -> bool:
        return any(p.covers(Point(pt)) for p in self.occluded)


def _edge_shadows(v: np.ndarray, poly: Polygon, reach: float) -> list[Polygon]:
    out = [poly]
    for ring in [poly.exterior, *poly.interiors]:
        c = np.asarray(ring.coords)
        for a, b in zip(c[:-1], c[1:]):
            da, db = a - v, b - v
            na, nb = np.hypot(*da), np.hypot(*db)
            far_a = v + da / na * reach
            far_b = v + db / nb * reach
            q = Polygon([a, b, far_b, far_a])
            if q.is_valid and q.area > 1e-9:
                out.append(q)
            elif q.area > 1e-9:
                out.append(q.buffer(0))
    return out


def shadow_region(viewpoint, obstacles: Sequence[Polygon], range: float) -> ShadowRegion:
    """Occluded part of the disk of radius `range` around the viewpoint."""
    if range <= 0:
        raise GeometryError("range must be positive")
    v = np.asarray(viewpoint, dtype=float)
    vp = Point(v)
    for o in obstacles:
        if o.contains(vp):
            raise GeometryError("viewpoint lies inside an obstacle")
    disk = vp.buffer(range, quad_segs=64)
    occluded = []
    for o in obstacles:
        dmax = max(np.hypot(*(np.asarray(o.exterior.coords) - v).T))
        reach = 2.0 * max(range, dmax) + 1.0
        if not o.interiors and o.convex_hull.area - o.area <= 1e-9 * max(o.area, 1.0):
            # a convex obstacle and its shadow form the hull of its corners and their far images
            c = np.asarray(o.exterior.coords)[:-1]
            d = c - v
            far = v + d / np.hypot(*d.T)[:, None] * reach
            sh = MultiPoint(np.vstack([c, far])).convex_hull.intersection(disk)
        else:
            sh = unary_union(_edge_shadows(v, o, reach)).intersection(disk)
        occluded.extend(orient(p, 1.0) for p in _components(sh) if p.area > 1e-9)
    return ShadowRegion(tuple(v), tuple(obstacles), tuple(occluded), range)


def visible_fraction(viewpoint, obstacles: Sequence[Polygon], target: Polygon) -> float:
    """Area fraction of `target` that the viewpoint can see past the obstacles."""
    if target.is_empty or target.area <= 0:
        raise GeometryError("target polygon is degenerate")
    if not obstacles:
        return 1.0
    v = np.asarray(viewpoint, dtype=float)
    # only obstacles touching the hull of viewpoint and target can block a sight line to it
    hull = MultiPoint([tuple(v), *target.exterior.coords]).convex_hull
    obstacles = [o for o in obstacles if o.intersects(hull)]
    if not obstacles:
        return 1.0
    reach = max(np.hypot(*(np.asarray(target.exterior.coords) - v).T)) + 1.0
    sh = shadow_region(v, obstacles, reach).geometry
    hidden = target.intersection(sh).area
    return float(min(1.0, max(0.0, 1.0 - hidden / target.area)))


def footprint(center, heading, length: float, width: float) -> Polygon:
    """Rectangle of the given size centred on `center`, long axis along `heading`."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(heading, dtype=float)
    h = h / np.hypot(*h)
    n = np.array([-h[1], h[0]])
    hl, hw = length / 2, width / 2
    # front-left, rear-left, rear-right, front-right: already counter-clockwise
    pts = [c + hl * h + hw * n, c - hl * h + hw * n, c - hl * h - hw * n, c + hl * h - hw * n]
    return Polygon(pts)


def rotate_points(points: np.ndarray, degrees: float, origin=(0.0, 0.0)) -> np.ndarray:
    th = math.radians(degrees)
    r = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    o = np.asarray(origin, dtype=float)
    return (np.asarray(points, dtype=float) - o) @ r.T + o


def rotate_polygon(poly: Polygon, degrees: float, origin=(0.0, 0.0)) -> Polygon:
    return affinity.rotate(poly, degrees, origin=origin)
