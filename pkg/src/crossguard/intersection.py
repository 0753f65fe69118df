"""Intersection map files and their compilation into guideways, zones and blind zones."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

from .geom import (
    APPROACHES,
    BlindZone,
    ConflictZone,
    GeometryError,
    Guideway,
    Movement,
    Polyline,
    Pose,
    blind_zone,
    build_centerline,
    concat,
    conflict_zones,
)

SCHEMA_VERSION = 1

# Standard eight-phase numbering: approach -> (through phase, left phase).
DEFAULT_PHASES = {
    "S": {"through": "phi6", "left": "phi1"},
    "N": {"through": "phi2", "left": "phi5"},
    "W": {"through": "phi8", "left": "phi3"},
    "E": {"through": "phi4", "left": "phi7"},
}
DEFAULT_CROSSWALK_PHASES = {"S": "P8", "E": "P6", "N": "P4", "W": "P2"}
PED_PAIR = {"P2": "phi2", "P4": "phi4", "P6": "phi6", "P8": "phi8"}

DEFAULT_DESIGN = {
    "max_curvature": {"vehicle": 1 / 25, "bicycle": 1 / 10},
    "guideway_width": {"vehicle": 10.0, "bicycle": 4.0, "pedestrian": 10.0},
    "design_speed": {
        "vehicle": {"left": 20.0, "through": 30.0, "right": 15.0},
        "bicycle": {"left": 15.0, "through": 18.0, "right": 12.0},
        "pedestrian": {"through": 5.0},
    },
}

# Profile used for blind zones: maximum speed of a threat per mode.
DEFAULT_PROFILE = {"v_max": {"vehicle": 50.0, "bicycle": 20.0, "pedestrian": 6.0},
                   "tau_speed_factor": 0.8}

_TARGET = {  # approach -> turn -> leg the movement exits on
    "S": {"left": "W", "through": "N", "right": "E"},
    "N": {"left": "E", "through": "S", "right": "W"},
    "W": {"left": "N", "through": "E", "right": "S"},
    "E": {"left": "S", "through": "W", "right": "N"},
}


class MapError(ValueError):
    """A map file failed validation."""


@dataclass(frozen=True)
class Lane:
    id: str
    leg: str
    direction: str
    mode: str
    center: tuple
    heading: tuple
    width: float
    length: float
    turns: tuple = ()
    exits: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Crosswalk:
    id: str
    leg: str
    start: tuple
    end: tuple
    width: float
    phase: Optional[str] = None


@dataclass
class IntersectionMap:
    id: str
    lanes: list
    crosswalks: list
    phases: dict
    crosswalk_phases: dict
    design: dict
    raw: dict
    zone_labels: dict = field(default_factory=dict)   # ego guideway id -> threat ids in label order

    def lane(self, lane_id: str) -> Lane:
        for ln in self.lanes:
            if ln.id == lane_id:
                return ln
        raise MapError(f"unknown lane id {lane_id!r}")


def _merge(base: dict, over: dict) -> dict:
    out = json.loads(json.dumps(base))
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_map(data: dict) -> IntersectionMap:
    """Validate a decoded map document."""
    if data.get("schema") != SCHEMA_VERSION:
        raise MapError(f"unsupported map schema {data.get('schema')!r}")
    lanes, seen = [], set()
    for raw in data.get("lanes", []):
        try:
            ln = Lane(id=str(raw["id"]), leg=raw["leg"], direction=raw["direction"],
                      mode=raw["mode"], center=tuple(map(float, raw["center"])),
                      heading=tuple(map(float, raw["heading"])), width=float(raw["width"]),
                      length=float(raw.get("length", 0.0)), turns=tuple(raw.get("turns", ())),
                      exits=dict(raw.get("exits", {})))
        except KeyError as e:
            raise MapError(f"lane missing field {e}") from None
        if ln.id in seen:
            raise MapError(f"duplicate lane id {ln.id!r}")
        seen.add(ln.id)
        if ln.leg not in APPROACHES or ln.direction not in ("in", "out"):
            raise MapError(f"lane {ln.id!r}: bad leg/direction")
        if ln.mode not in ("vehicle", "bicycle"):
            raise MapError(f"lane {ln.id!r}: bad mode {ln.mode!r}")
        if ln.width <= 0 or ln.length < 0:
            raise MapError(f"lane {ln.id!r}: width must be > 0")
        for t in ln.turns:
            if t not in ("left", "through", "right"):
                raise MapError(f"lane {ln.id!r}: bad turn {t!r}")
        lanes.append(ln)
    for ln in lanes:
        for turn, exit_id in ln.exits.items():
            if exit_id not in seen:
                raise MapError(f"lane {ln.id!r} exit for {turn} names unknown lane id {exit_id!r}")
    xws = []
    for raw in data.get("crosswalks", []):
        xw = Crosswalk(id=str(raw["id"]), leg=raw["leg"], start=tuple(map(float, raw["start"])),
                       end=tuple(map(float, raw["end"])), width=float(raw["width"]),
                       phase=raw.get("phase"))
        if xw.id in seen:
            raise MapError(f"duplicate id {xw.id!r}")
        if xw.width <= 0:
            raise MapError(f"crosswalk {xw.id!r}: width must be > 0")
        seen.add(xw.id)
        xws.append(xw)
    phases = _merge(DEFAULT_PHASES, data.get("phases", {}))
    xphases = _merge(DEFAULT_CROSSWALK_PHASES, data.get("crosswalk_phases", {}))
    design = _merge(DEFAULT_DESIGN, data.get("design", {}))
    labels = data.get("zone_labels", {})
    if not isinstance(labels, dict) or not all(isinstance(v, list) for v in labels.values()):
        raise MapError("zone_labels must map a guideway id to a list of guideway ids")
    return IntersectionMap(str(data.get("id", "map")), lanes, xws, phases, xphases, design, data,
                           {str(k): [str(x) for x in v] for k, v in labels.items()})


def load_map(path) -> IntersectionMap:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise MapError(f"{path}: not valid JSON ({e})") from None
    return parse_map(data)


def _exit_lane(m: IntersectionMap, ln: Lane, turn: str) -> Lane:
    if turn in ln.exits:
        return m.lane(ln.exits[turn])
    leg = _TARGET[ln.leg][turn]
    cands = [o for o in m.lanes if o.direction == "out" and o.leg == leg and o.mode == ln.mode]
    if not cands:
        raise MapError(f"lane {ln.id!r}: no {ln.mode} exit lane on leg {leg} for {turn}")
    return cands[0]


def build_guideways(m: IntersectionMap) -> list[Guideway]:
    gws = []
    widths = m.design["guideway_width"]
    for ln in m.lanes:
        if ln.direction != "in":
            continue
        for turn in ln.turns:
            ex = _exit_lane(m, ln, turn)
            phase = None
            if turn != "right":
                phase = m.phases[ln.leg][turn]
            mv = Movement(ln.leg, turn, ln.mode, phase)
            entry = Pose(*ln.center, *ln.heading)
            exit_ = Pose(*ex.center, *ex.heading)
            try:
                mid = build_centerline(entry, exit_, m.design["max_curvature"][ln.mode])
            except GeometryError as e:
                raise MapError(f"movement {ln.id}->{ex.id}: {e}") from None
            parts = []
            if ln.length > 0:
                parts.append(Polyline([entry.point - entry.heading * ln.length, entry.point]))
            parts.append(mid)
            if ex.length > 0:
                parts.append(Polyline([exit_.point, exit_.point + exit_.heading * ex.length]))
            gws.append(Guideway(f"{ln.id}>{ex.id}", mv, concat(parts), widths[ln.mode],
                                ln.id, ex.id, stop_s=ln.length))
    for xw in m.crosswalks:
        phase = xw.phase or m.crosswalk_phases.get(xw.leg)
        mv = Movement(xw.leg, "through", "pedestrian", phase)
        gws.append(Guideway(xw.id, mv, Polyline([xw.start, xw.end]), xw.width, xw.id, xw.id))
    return gws


def movement_speed(design: dict, mv: Movement) -> float:
    return design["design_speed"][mv.mode][mv.turn]


def traverse_time(gw: Guideway, zones: list[ConflictZone], speed: float,
                  from_s: Optional[float] = None) -> float:
    """Time to reach the far end of the furthest zone from `from_s` (stop bar by default)."""
    if not zones:
        return 0.0
    s0 = gw.stop_s if from_s is None else from_s
    far = max(z.interval_on(gw)[1] for z in zones)
    return max(far - s0, 0.0) / speed


@dataclass
class CompiledIntersection:
    id: str
    map: IntersectionMap
    guideways: list
    zones: list
    blind_zones: list
    profile: dict
    taus: dict

    def guideway(self, gid: str) -> Guideway:
        for g in self.guideways:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def find(self, approach: str, turn: str, mode: str) -> Guideway:
        for g in self.guideways:
            mv = g.movement
            if (mv.approach, mv.turn, mv.mode) == (approach, turn, mode):
                return g
        raise KeyError((approach, turn, mode))

    def zones_of(self, gw: Guideway) -> list[ConflictZone]:
        return [z for z in self.zones if gw.id in (z.guideway_a.id, z.guideway_b.id)]

    def labelled_zones(self, ego: Guideway) -> list[tuple[str, ConflictZone]]:
        """Ego's zones as ("CZ1", zone), ... in the map's declared order, if any;
        undeclared zones follow, ordered by where the ego path enters them."""
        order = {t: i for i, t in enumerate(self.map.zone_labels.get(ego.id, []))}
        zones = sorted(self.zones_of(ego),
                       key=lambda z: (order.get(z.other(ego).id, len(order)),
                                      z.interval_on(ego)[0], z.other(ego).id))
        return [(f"CZ{i}", z) for i, z in enumerate(zones, 1)]

    def blind_zones_of(self, ego: Guideway) -> list[BlindZone]:
        """Blind zones that matter to `ego`: upstream of ego's zones on the other guideway."""
        return [b for b in self.blind_zones
                if ego.id in (b.conflict_zone.guideway_a.id, b.conflict_zone.guideway_b.id)
                and b.threat_guideway.id != ego.id]

    def matrix(self):
        from .signal import conflict_matrix_from_zones
        return conflict_matrix_from_zones(self.guideways, self.zones)

    def to_dict(self) -> dict:
        return compiled_to_dict(self)


def compile_map(m: IntersectionMap, profile: Optional[dict] = None) -> CompiledIntersection:
    """All guideways, pairwise conflict zones and blind zones for a validated map."""
    profile = _merge(DEFAULT_PROFILE, profile or {})
    gws = build_guideways(m)
    zones = []
    for a, b in combinations(gws, 2):
        zones.extend(conflict_zones(a, b))
    known = {g.id for g in gws}
    for ego_id, threats in m.zone_labels.items():
        for gid in [ego_id, *threats]:
            if gid not in known:
                raise MapError(f"zone_labels names unknown guideway id {gid!r}")
    taus = {}
    for g in gws:
        own = [z for z in zones if g.id in (z.guideway_a.id, z.guideway_b.id)]
        speed = profile["tau_speed_factor"] * movement_speed(m.design, g.movement)
        taus[g.id] = traverse_time(g, own, speed)
    bzs = []
    for z in zones:
        for ego, threat in ((z.guideway_a, z.guideway_b), (z.guideway_b, z.guideway_a)):
            bzs.append(blind_zone(z, threat, profile["v_max"][threat.movement.mode], taus[ego.id]))
    return CompiledIntersection(m.id, m, gws, zones, bzs, profile, taus)


def _coords(poly) -> list:
    if poly.is_empty:
        return []
    return [[round(x, 3), round(y, 3)] for x, y in poly.exterior.coords]


def compiled_to_dict(c: CompiledIntersection) -> dict:
    from .signal import phase_catalog
    mat = c.matrix()
    return {
        "schema": SCHEMA_VERSION,
        "id": c.id,
        "source_digest": hashlib.sha256(
            json.dumps(c.map.raw, sort_keys=True).encode()).hexdigest()[:16],
        "guideways": [{
            "id": g.id, "approach": g.movement.approach, "turn": g.movement.turn,
            "mode": g.movement.mode, "phase": g.movement.phase, "width": g.width,
            "stop_s": round(g.stop_s, 3),
            "centerline": [[round(x, 3), round(y, 3)] for x, y in g.centerline.points],
            "polygon": _coords(g.polygon)} for g in c.guideways],
        "conflict_zones": [{
            "id": z.id, "a": z.guideway_a.id, "b": z.guideway_b.id,
            "interval_a": [round(v, 3) for v in z.interval_a],
            "interval_b": [round(v, 3) for v in z.interval_b],
            "area": round(z.polygon.area, 3), "polygon": _coords(z.polygon)} for z in c.zones],
        "blind_zones": [{
            "id": b.id, "zone": b.conflict_zone.id, "threat": b.threat_guideway.id,
            "interval": [round(v, 3) for v in b.interval], "tau": round(b.tau, 3),
            "v_max": b.v_max, "polygon": _coords(b.polygon)} for b in c.blind_zones],
        "conflict_matrix": {"movements": mat.ids,
                            "conflict": [[int(v) for v in row] for row in mat.conflict],
                            "permissive": [[int(v) for v in row] for row in mat.permissive]},
        "phase_catalog": [{"id": s.id, "go": sorted(s.go_movements())}
                          for s in phase_catalog(c)],
    }


def dump_compiled(c: CompiledIntersection) -> str:
    return json.dumps(compiled_to_dict(c), sort_keys=True, separators=(",", ":")) + "\n"


def write_map(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def lane_rotate(pt, quarter_turns: int):
    x, y = pt
    for _ in range(quarter_turns % 4):
        x, y = -y, x
    return [round(x, 6) + 0.0, round(y, 6) + 0.0]




_LEG_QUARTER = {"S": 0, "E": 1, "N": 2, "W": 3}


def from_lane_list(doc: dict) -> dict:
    """Best-effort conversion of a minimal OSM-like lane list into a map document.

    Each entry of ``doc["ways"]`` describes one leg of a four-way crossing with
    OSM-style tags: ``lanes:forward`` (inbound count), ``lanes:backward``
    (outbound count), ``turn:lanes:forward`` ("left|through|through;right"),
    ``width`` per lane, and optional ``crossing`` ("yes"/"no"). Geometry is
    idealised: legs meet at right angles and stop bars sit `stop_distance`
    ft from the centre. Real OSM data needs checking by hand before use.
    """
    stop = float(doc.get("stop_distance", 70.0))
    approach = float(doc.get("approach_length", 240.0))
    lanes, xws = [], []
    for way in doc.get("ways", []):
        leg = way.get("leg")
        if leg not in _LEG_QUARTER:
            raise MapError(f"way with bad leg {leg!r}")
        q = _LEG_QUARTER[leg]
        w = float(way.get("width", 12.0))
        n_in = int(way.get("lanes:forward", 1))
        n_out = int(way.get("lanes:backward", 1))
        turns = str(way.get("turn:lanes:forward", "|".join(["through"] * n_in))).split("|")
        if len(turns) != n_in:
            raise MapError(f"leg {leg}: {n_in} inbound lanes but {len(turns)} turn groups")
        for i, group in enumerate(turns):
            t = [x for x in group.split(";") if x] or ["through"]
            lanes.append({"id": f"{leg}.in.{i + 1}", "leg": leg, "direction": "in",
                          "mode": "vehicle", "center": lane_rotate((w * (i + 0.5), -stop), q),
                          "heading": lane_rotate((0, 1), q), "width": w, "length": approach,
                          "turns": t})
        for i in range(n_out):
            lanes.append({"id": f"{leg}.out.{i + 1}", "leg": leg, "direction": "out",
                          "mode": "vehicle", "center": lane_rotate((-w * (i + 0.5), -stop), q),
                          "heading": lane_rotate((0, -1), q), "width": w, "length": 10.0})
        if str(way.get("crossing", "yes")) != "no":
            half = w * max(n_in, n_out) + 2.0
            xws.append({"id": f"{leg}.crosswalk", "leg": leg, "width": 10.0,
                        "start": lane_rotate((-half, -stop + 13.0), q),
                        "end": lane_rotate((half, -stop + 13.0), q)})
    return {"schema": SCHEMA_VERSION, "id": str(doc.get("id", "lane-list")),
            "lanes": lanes, "crosswalks": xws}
