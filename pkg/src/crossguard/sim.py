"""Fixed-step kinematic simulation of agents moving along guideways.

Every agent lives on one guideway and is described by its arc position `s`
(footprint centre), speed and acceleration. All controllers read a snapshot
taken at the start of the tick, then every agent is integrated at once.
Connected agents read SPaT/ICA messages from an in-process bus that the
intersection fills at tick boundaries.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from shapely import STRtree
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union
from shapely.prepared import prep

from . import i2v
from .geom import ConflictZone, Guideway, footprint
from .intersection import CompiledIntersection
from .resolve import (
    BRAKE_ALERT,
    PROCEED,
    PROCEED_CA,
    THREAT,
    WAIT_PHASE,
    Decision,
    EgoContext,
    IcaReport,
    SeenAgent,
    Track,
    ego_blind_zones,
    resolve,
    violator_alert,
)
from .signal import GO, FixedTimePlan, PhaseState, spat_estimate

log = logging.getLogger(__name__)

DT = 0.05
FOOTPRINT = {"vehicle": (15.0, 6.0), "bicycle": (6.0, 2.0), "pedestrian": (2.0, 2.0)}
ACCEL = {"vehicle": (-32.0, 8.0), "bicycle": (-16.0, 4.0), "pedestrian": (-8.0, 4.0)}
COMFORT_DECEL = {"vehicle": 10.0, "bicycle": 6.0, "pedestrian": 4.0}
DEFAULT_SPEED = {"vehicle": 44.0, "bicycle": 15.0, "pedestrian": 4.0}
VIOLATOR_DECEL = 10.0      # deceleration the intersection expects a driver to use
SIGHT_RANGE = 1000.0
CONTROLLERS = ("signal_compliant", "ego_resolver", "scripted", "violator")


class ScenarioError(ValueError):
    pass


@dataclass
class Agent:
    id: str
    mode: str
    guideway: Guideway
    s: float
    v: float = 0.0
    a: float = 0.0
    length: float = 0.0
    width: float = 0.0
    controller: str = "signal_compliant"
    params: dict = field(default_factory=dict)
    a_min: float = 0.0
    a_max: float = 0.0
    memory: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in FOOTPRINT:
            raise ScenarioError(f"{self.id}: unknown mode {self.mode!r}")
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"{self.id}: unknown controller {self.controller!r}")
        dl, dw = FOOTPRINT[self.mode]
        self.length = self.length or dl
        self.width = self.width or dw
        lo, hi = ACCEL[self.mode]
        self.a_min = self.a_min or lo
        self.a_max = self.a_max or hi
        if self.length <= 0 or self.width <= 0:
            raise ScenarioError(f"{self.id}: footprint must be positive")
        if not 0.0 <= self.s <= self.guideway.length:
            raise ScenarioError(f"{self.id}: s={self.s:.2f} outside guideway {self.guideway.id}")
        if self.v < 0:
            raise ScenarioError(f"{self.id}: negative speed")

    @property
    def v_des(self) -> float:
        return float(self.params.get("v_des", DEFAULT_SPEED[self.mode]))

    @property
    def front(self) -> float:
        return self.s + self.length / 2

    @property
    def position(self) -> np.ndarray:
        return self.guideway.centerline.point_at(self.s)

    @property
    def heading(self) -> np.ndarray:
        return self.guideway.centerline.heading_at(self.s)

    def footprint(self) -> Polygon:
        return footprint(self.position, self.heading, self.length, self.width)

    def viewpoint(self) -> np.ndarray:
        """Eye point: 5 ft behind the front for vehicles, centre otherwise."""
        off = self.length / 2 - 5.0 if self.mode == "vehicle" else 0.0
        return self.position + off * self.heading

    def dist_to_stop(self) -> float:
        return self.guideway.stop_s - self.front


@dataclass(frozen=True)
class SensorSpec:
    id: str
    kind: str                      # zone_detector | advance_loop
    polygon: Optional[Polygon] = None
    lane: Optional[str] = None     # entry lane (or guideway id) for loops
    offset: float = 0.0            # ft upstream of the stop bar

    def __post_init__(self):
        if self.kind == "zone_detector":
            if self.polygon is None or self.polygon.is_empty or not self.polygon.is_valid:
                raise ScenarioError(f"sensor {self.id}: needs a valid polygon")
        elif self.kind == "advance_loop":
            if not self.lane or self.offset < 0:
                raise ScenarioError(f"sensor {self.id}: needs a lane and offset >= 0")
        else:
            raise ScenarioError(f"sensor {self.id}: unknown kind {self.kind!r}")


@dataclass
class AgentSpec:
    """Initial state of an agent, as written in scenario files."""

    id: str
    guideway: str
    controller: str = "signal_compliant"
    s: Optional[float] = None
    stop_offset: Optional[float] = None   # front this far upstream of the stop bar
    v: float = 0.0
    params: dict = field(default_factory=dict)
    length: float = 0.0
    width: float = 0.0

    def build(self, compiled: CompiledIntersection) -> Agent:
        try:
            gw = compiled.guideway(self.guideway)
        except KeyError:
            raise ScenarioError(f"{self.id}: unknown guideway {self.guideway!r}") from None
        mode = gw.movement.mode
        length = self.length or FOOTPRINT[mode][0]
        if (self.s is None) == (self.stop_offset is None):
            raise ScenarioError(f"{self.id}: give exactly one of s and stop_offset")
        s = self.s if self.s is not None else gw.stop_s - self.stop_offset - length / 2
        return Agent(self.id, mode, gw, float(s), float(self.v), 0.0, length, self.width,
                     self.controller, dict(self.params))

    def to_dict(self) -> dict:
        d = {"id": self.id, "guideway": self.guideway, "controller": self.controller}
        if self.s is not None:
            d["s"] = self.s
        else:
            d["stop_offset"] = self.stop_offset
        d["v"] = self.v
        if self.params:
            d["params"] = self.params
        if self.length:
            d["length"] = self.length
        if self.width:
            d["width"] = self.width
        return d


@dataclass
class Scenario:
    name: str
    compiled: CompiledIntersection
    plan: FixedTimePlan
    agents: list
    sensors: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    i2v_enabled: bool = False
    duration: float = 20.0
    dt: float = DT
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if self.duration < 0:
            raise ScenarioError("duration must be >= 0")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("agent ids must be unique")
        for a in self.agents:
            a.build(self.compiled)
        minx, miny, maxx, maxy = _map_bounds(self.compiled)
        for sn in self.sensors:
            if sn.kind == "zone_detector":
                x0, y0, x1, y1 = sn.polygon.bounds
                if x1 < minx or x0 > maxx or y1 < miny or y0 > maxy:
                    raise ScenarioError(f"sensor {sn.id} lies outside the map")
            elif not any(g.entry_lane_id == sn.lane or g.id == sn.lane
                         for g in self.compiled.guideways):
                raise ScenarioError(f"sensor {sn.id}: unknown lane {sn.lane!r}")


def _map_bounds(compiled: CompiledIntersection) -> tuple:
    b = np.array([g.polygon.bounds for g in compiled.guideways]) if compiled.guideways \
        else np.zeros((1, 4))
    return b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()


# ---------------------------------------------------------------- kinematics

def integrate(s: float, v: float, a: float, dt: float) -> tuple[float, float]:
    """Constant-acceleration step that never reverses: returns (s', v')."""
    v1 = v + a * dt
    if v1 < 0.0:
        return s + (v * v / (-2.0 * a) if a < 0 else 0.0), 0.0
    return s + v * dt + 0.5 * a * dt * dt, v1


def travel_time(dist: float, v: float, v_top: float, a: float) -> float:
    """Time to cover `dist` starting at `v`, accelerating at `a` up to `v_top`."""
    if dist <= 0:
        return 0.0
    v_top = max(v_top, v)
    if a <= 0 or v >= v_top:
        return dist / v if v > 0 else math.inf
    t_acc = (v_top - v) / a
    d_acc = v * t_acc + 0.5 * a * t_acc ** 2
    if d_acc >= dist:
        return (-v + math.sqrt(v * v + 2 * a * dist)) / a
    return t_acc + (dist - d_acc) / v_top


def approach_speed(agent: Agent, target: float, dt: float) -> float:
    """Acceleration that moves agent.v toward `target` within its limits."""
    a = (target - agent.v) / dt
    return float(min(max(a, agent.a_min), agent.a_max))


def stop_accel(agent: Agent, dist: float, dt: float) -> float:
    """Deceleration that brings the front to rest `dist` ahead (bounded by a_min)."""
    if agent.v <= 1e-6:
        return 0.0
    if dist <= 0.05:
        return agent.a_min if agent.v > 0.5 else -agent.v / dt
    return float(max(-agent.v ** 2 / (2.0 * dist), agent.a_min))


# ---------------------------------------------------------------- sensing

class SensorField:
    """Which sensors cover which blind zones, fixed for the lifetime of a world."""

    def __init__(self, sensors: Sequence[SensorSpec], compiled: CompiledIntersection):
        self.sensors = list(sensors)
        self.blind_zones = list(compiled.blind_zones)
        lanes = {}
        for g in compiled.guideways:
            lanes.setdefault(g.entry_lane_id, set()).add(g.id)
        self.detector_zones = []          # blind zones read through their own polygon
        self.loops = {}                   # bz id -> list of (lane guideway ids, s_loop, s_end)
        for bz in self.blind_zones:
            if bz.polygon.is_empty:
                continue
            thr = bz.threat_guideway
            for sn in self.sensors:
                if sn.kind == "zone_detector":
                    if sn.polygon.intersection(bz.polygon).area >= 0.995 * bz.polygon.area:
                        self.detector_zones.append(bz)
                        break
            for sn in self.sensors:
                if sn.kind != "advance_loop":
                    continue
                members = lanes.get(sn.lane, {sn.lane})
                if thr.id not in members:
                    continue
                s_loop = thr.stop_s - sn.offset
                if s_loop <= bz.interval[0] + 1e-6:
                    end = bz.conflict_zone.interval_on(thr)[1]
                    self.loops.setdefault(bz.id, []).append((frozenset(members), s_loop, end))
        self._covered = {b.id for b in self.detector_zones} | set(self.loops)

    def covers(self, bz_id: str) -> bool:
        return bz_id in self._covered

    def readout(self, agents: Iterable[Agent], footprints: Mapping[str, Polygon]) -> dict:
        agents = list(agents)
        out = {}
        fps = [footprints[a.id] for a in agents]
        hits = set()
        if fps and self.detector_zones:
            tree = STRtree(fps)
            pairs = tree.query([b.polygon for b in self.detector_zones], predicate="intersects")
            hits = {self.detector_zones[i].id for i in pairs[0]}
        for bz in self.blind_zones:
            if bz.polygon.is_empty:
                out[bz.id] = "clear"
            elif bz.id in hits:
                out[bz.id] = "occupied"
            elif bz.id in self.loops and any(
                    a.guideway.id in members and a.front >= s_loop and a.s - a.length / 2 <= end
                    for members, s_loop, end in self.loops[bz.id] for a in agents):
                out[bz.id] = "occupied"
            elif self.covers(bz.id):
                out[bz.id] = "clear"
            else:
                out[bz.id] = "unknown"
        return out


def sensor_readout(sensors: Sequence[SensorSpec], world: "World") -> dict:
    field_ = world.sensors if world.sensors.sensors == list(sensors) \
        else SensorField(sensors, world.compiled)
    return field_.readout(world.agents.values(), world.footprints)


# ---------------------------------------------------------------- world

def _segment_clear(a, b, obstacles: Sequence[Polygon]) -> bool:
    seg = LineString([tuple(a), tuple(b)])
    return not any(o.intersects(seg) for o in obstacles)


class World:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.compiled = scenario.compiled
        self.plan = scenario.plan
        self.dt = scenario.dt
        self.t = 0.0
        self.tick_no = 0
        self.rng = np.random.default_rng(scenario.seed)
        self.matrix = self.compiled.matrix()
        self.agents: dict[str, Agent] = {}
        for spec in sorted(scenario.agents, key=lambda a: a.id):
            self.agents[spec.id] = spec.build(self.compiled)
        self.initial = {a.id: (a.s, a.v_des) for a in self.agents.values()}
        self.static_obstacles = [orient_ccw(p) for p in scenario.obstacles]
        self.sensors = SensorField(scenario.sensors, self.compiled)
        self.zones_by_gw: dict[str, list[ConflictZone]] = {g.id: [] for g in self.compiled.guideways}
        for z in self.compiled.zones:
            self.zones_by_gw[z.guideway_a.id].append(z)
            self.zones_by_gw[z.guideway_b.id].append(z)
        self.zone_union = {}
        for gid, zs in self.zones_by_gw.items():
            if zs:
                self.zone_union[gid] = prep(unary_union([z.polygon for z in zs]))
        self.state: PhaseState = self.plan.state_at(0.0)
        self.footprints: dict[str, Polygon] = {}
        self.events: list[dict] = []
        self.exited: dict[str, float] = {}
        self.bus = i2v.Bus() if scenario.i2v_enabled else None
        self.clock = i2v.SimClock(0)
        self.broadcaster = None
        self.subscribers: dict[str, tuple] = {}
        if self.bus is not None:
            self.broadcaster = i2v.Broadcaster(
                self.compiled.id, self._spat_provider,
                lambda t: self.sensors.readout(self.agents.values(), self.footprints),
                self.bus, clock=self.clock)
            for a in self.agents.values():
                if a.controller == "ego_resolver" and a.params.get("connected", True):
                    self.subscribers[a.id] = (i2v.Subscriber(clock=self.clock), self.bus.subscribe())
        self.next_broadcast_ms = 0
        self.warned: set = set()
        self.in_zone: set = set()
        self._refresh()

    # -- signal helpers
    def _spat_provider(self, t: float):
        i, el = self.plan.locate(t)
        st = self.plan.state_at(t)
        return st, spat_estimate(None, st.id, el, self.plan)

    def go_remaining(self, gid: str) -> float:
        return self.plan.go_remaining(self.t, gid)

    def red_remaining(self, gid: str, horizon: float = 600.0) -> float:
        tt = self.t
        while tt - self.t < horizon:
            if self.plan.state_at(tt).indications[gid] != "red":
                return tt - self.t
            tt = self.plan._next_change(tt)
        return math.inf

    def zone_end(self, gw: Guideway) -> Optional[float]:
        zs = self.zones_by_gw.get(gw.id)
        return max(z.interval_on(gw)[1] for z in zs) if zs else None

    def _refresh(self):
        self.footprints = {aid: a.footprint() for aid, a in self.agents.items()}
        self.state = self.plan.state_at(self.t)

    def obstacles_for(self, agent: Agent) -> list[Polygon]:
        vp = Point(agent.viewpoint())
        obs = [fp for aid, fp in self.footprints.items() if aid != agent.id]
        obs += self.static_obstacles
        return [o for o in obs if not o.covers(vp)]

    def event(self, kind: str, **kw):
        rec = {"t": round(self.t, 3), "type": kind}
        rec.update(kw)
        self.events.append(rec)


def orient_ccw(poly) -> Polygon:
    from shapely.geometry.polygon import orient
    p = poly if isinstance(poly, Polygon) else Polygon(poly)
    if not p.is_valid or p.is_empty:
        raise ScenarioError("obstacle polygon is invalid")
    return orient(p, 1.0)


def perception(agent: Agent, world: World, own_indication: Optional[str] = None) -> EgoContext:
    """What `agent` can see: every other agent whose centre has a clear sight line."""
    vp = agent.viewpoint()
    obstacles = world.obstacles_for(agent)
    seen = []
    for aid, other in world.agents.items():
        if aid == agent.id:
            continue
        blockers = [o for o in obstacles if o is not world.footprints.get(aid)]
        if _segment_clear(vp, other.position, blockers):
            seen.append(SeenAgent(aid, tuple(np.round(other.position, 6)), other.guideway.id,
                                  other.s))
    own = own_indication or world.state.indication(agent.guideway.id)
    tau = world.compiled.taus.get(agent.guideway.id) or 1.0
    return EgoContext(agent.guideway, tuple(vp), own, tau, tuple(seen), tuple(obstacles))


# ---------------------------------------------------------------- controllers

def _leader_accel(agent: Agent, world: World) -> float:
    """Braking needed to stay behind the nearest agent ahead in the same entry lane."""
    best = math.inf
    lane = agent.guideway.entry_lane_id
    for other in world.agents.values():
        if other.id == agent.id or other.guideway.entry_lane_id != lane:
            continue
        if other.guideway.id != agent.guideway.id and other.s - other.length / 2 > other.guideway.stop_s:
            continue
        gap = other.s - other.length / 2 - agent.front
        if gap < -0.5 or other.s <= agent.s:
            continue
        if gap > agent.v * 2.0 + 20.0 or agent.v <= other.v:
            continue
        room = max(gap - 4.0, 0.05)
        best = min(best, -(agent.v ** 2 - other.v ** 2) / (2.0 * room))
    return max(best, agent.a_min) if math.isfinite(best) else math.inf


def _cruise(agent: Agent, world: World) -> float:
    return min(approach_speed(agent, agent.v_des, world.dt), _leader_accel(agent, world))


def _hold(agent: Agent, world: World, dist: float) -> Optional[float]:
    """Deceleration to stop at `dist`, or None if that exceeds the braking limit."""
    if agent.v > 1e-6 and dist > 0.05 and agent.v ** 2 / (2.0 * dist) > -agent.a_min:
        return None
    return min(stop_accel(agent, max(dist, 0.0), world.dt), _leader_accel(agent, world))


def _clear_time(agent: Agent, world: World) -> float:
    end = world.zone_end(agent.guideway)
    d = (end if end is not None else agent.guideway.stop_s) + agent.length / 2 - agent.s
    return travel_time(d, agent.v, agent.v_des, agent.a_max)


def control_compliant(agent: Agent, world: World) -> float:
    """Obey the agent's own indication; commit only if the last zone clears before red.

    With ``countdown`` (the default) the agent knows how long its indication
    stays go; without it the agent reacts to yellow onset alone.
    """
    m = agent.memory
    dist = agent.dist_to_stop()
    if m.get("committed") or dist < -0.01:
        m["committed"] = True
        return _cruise(agent, world)
    gid = agent.guideway.id
    ind = world.state.indication(gid)
    if agent.params.get("countdown", True):
        rem = world.go_remaining(gid)
        go = ind in GO and _clear_time(agent, world) <= rem - 0.1
    else:
        go = ind in ("green", "walk") or (
            ind == "yellow" and agent.v ** 2 / (2.0 * max(dist, 0.01)) > -agent.a_min)
    if go:
        return _cruise(agent, world)
    need = agent.v ** 2 / (2.0 * max(dist, 0.01))
    if dist > 0.05 and need < 0.6 * COMFORT_DECEL[agent.mode] and agent.params.get("countdown", True):
        return min(_cruise(agent, world), 0.0 if need > 0.3 * COMFORT_DECEL[agent.mode] else math.inf)
    a = _hold(agent, world, dist)
    if a is None:
        m["committed"] = True
        return _cruise(agent, world)
    return a


def control_scripted(agent: Agent, world: World) -> float:
    """Piecewise target speeds: params['schedule'] = [[t, v], ...]."""
    target = agent.params.get("v0", agent.v)
    for t0, v in agent.params.get("schedule", []):
        if world.t + 1e-9 >= t0:
            target = v
    a_cap = agent.params.get("accel")
    a = approach_speed(agent, target, world.dt)
    if a_cap is not None:
        a = min(a, a_cap)
    return a


def control_violator(agent: Agent, world: World) -> float:
    return approach_speed(agent, agent.v_des, world.dt)


def _latest(agent: Agent, world: World):
    sub = world.subscribers.get(agent.id)
    if sub is None:
        return None, None
    subscriber, q = sub
    for r in subscriber.drain(q):
        if r.stale:
            continue
        key = "spat" if isinstance(r.message, i2v.SpatMessage) else "ica"
        agent.memory[key] = r.message
    return agent.memory.get("spat"), agent.memory.get("ica")


def ego_decision(agent: Agent, world: World) -> tuple[Decision, list]:
    """Run the resolver for `agent` with whatever information it holds right now."""
    spat_msg, ica_msg = _latest(agent, world)
    ctx = perception(agent, world)
    zones = world.zones_by_gw[agent.guideway.id]
    spat = est = ica = None
    if spat_msg is not None:
        spat, est = spat_msg.phase_state(), spat_msg.estimate()
    if ica_msg is not None:
        bzs = ego_blind_zones(ctx, zones, world.compiled.profile["v_max"])
        ica = IcaReport(i2v.ica_clear_for(ica_msg, [b.id for b in bzs]), ica_msg.timestamp_ms / 1000)
    return resolve(ctx, zones, world.matrix, spat=spat, ica=ica, estimate=est,
                   v_max=world.compiled.profile["v_max"])


def _threat_active(agent: Agent, world: World, statuses) -> bool:
    """A resolved threat only matters if it is moving or already at the zone."""
    for st in statuses:
        if st.status != THREAT:
            continue
        lo, hi = st.zone.interval_on(st.threat)
        for other in world.agents.values():
            if other.guideway.id != st.threat.id:
                continue
            if lo - other.length <= other.s <= hi + other.length:
                return True
            if other.v > 0.5 and other.s < lo:
                return True
    return False


def control_ego(agent: Agent, world: World) -> float:
    """Resolver-driven agent.

    params: v_des, rtor (allow right turn on red), optimistic (proceed through
    conflicts it merely cannot resolve while it holds right of way),
    enter_on_yellow, connected.
    """
    m = agent.memory
    p = agent.params
    dist = agent.dist_to_stop()
    gid = agent.guideway.id
    _latest(agent, world)

    alert = m.get("alert")
    if alert is not None:
        track = world.agents.get(alert["track"])
        end = world.zone_end(track.guideway) if track is not None else None
        if track is None or end is None or track.s - track.length / 2 > end:
            m.pop("alert")          # the violator has cleared the intersection
            alert = None
    if alert is not None:
        starts = [z.interval_on(agent.guideway)[0] for z in world.zones_by_gw[gid]
                  if z.other(agent.guideway).id == alert["guideway"]]
        if starts:
            _record_decision(agent, world, Decision(BRAKE_ALERT))
            return stop_accel(agent, min(starts) - agent.front - 2.0, world.dt)

    if m.get("committed") or dist < -0.01:
        m["committed"] = True
        return _cruise(agent, world)

    early = _spat_anticipation(agent, world, dist)
    if early is not None:
        _record_decision(agent, world, Decision(WAIT_PHASE, cause="spat_countdown"))
        return early

    window = agent.v ** 2 / (2.0 * COMFORT_DECEL[agent.mode]) + agent.v * 1.0 + 10.0
    if dist > window:
        return _cruise(agent, world)

    own = world.state.indication(gid)
    turn = agent.guideway.movement.turn
    if own == "red":
        if not (turn == "right" and p.get("rtor", False)):
            return _stop_or_commit(agent, world, dist, Decision(WAIT_PHASE, cause="own_red"))
        if not m.get("full_stop"):
            if agent.v < 0.1 and dist < 3.0:
                m["full_stop"] = True
            else:
                return _stop_or_commit(agent, world, dist, Decision(WAIT_PHASE, cause="own_red"))
    connected = agent.id in world.subscribers
    if own == "yellow" and not connected and not p.get("enter_on_yellow", False):
        if agent.v ** 2 / (2.0 * max(dist, 0.01)) <= -agent.a_min:
            return _stop_or_commit(agent, world, dist, Decision(WAIT_PHASE, cause="yellow"))

    decision, statuses = ego_decision(agent, world)
    if decision.action == PROCEED:
        _record_decision(agent, world, decision)
        return _cruise(agent, world)
    if decision.action == PROCEED_CA:
        _record_decision(agent, world, decision)
        if _threat_active(agent, world, statuses):
            a = _hold(agent, world, dist)
            if a is not None:
                return a
        return _cruise(agent, world)
    lawful = own in ("green", "yellow") or (own == "red" and turn == "right" and p.get("rtor"))
    if p.get("optimistic", False) and lawful and decision.cause in ("unresolved", "unknown"):
        _record_decision(agent, world, Decision(PROCEED_CA, decision.unresolved, cause="optimistic"))
        return _cruise(agent, world)
    return _stop_or_commit(agent, world, dist, decision)


def _spat_anticipation(agent: Agent, world: World, dist: float) -> Optional[float]:
    """Comfortable early stop when SPaT says the green ends before the ego can clear.

    Returns None when there is no SPaT, the green continues into the next
    state, the ego can clear in time, or a comfortable stop is no longer possible.
    """
    msg = agent.memory.get("spat")
    gid = agent.guideway.id
    if msg is None or dist <= 0 or msg.phase_state().indication(gid) != "green":
        return None
    nxt = next((s for s in world.plan.states if s.id == msg.next_phase_id), None)
    if nxt is None or nxt.indication(gid) in GO:
        return None
    rem = msg.expected_remaining_ms / 1000.0 - (world.t - msg.timestamp_ms / 1000.0)
    if _clear_time(agent, world) <= rem - 0.1:
        return None
    if agent.v ** 2 / (2.0 * dist) > COMFORT_DECEL[agent.mode]:
        return None
    return min(stop_accel(agent, dist, world.dt), _leader_accel(agent, world))


def _stop_or_commit(agent: Agent, world: World, dist: float, decision: Decision) -> float:
    _record_decision(agent, world, decision)
    a = _hold(agent, world, dist)
    if a is None:
        agent.memory["committed"] = True
        return _cruise(agent, world)
    return a


def _record_decision(agent: Agent, world: World, decision: Decision) -> None:
    key = (decision.action, decision.cause, tuple(z.id for z in decision.unresolved))
    if agent.memory.get("last_decision") == key:
        return
    agent.memory["last_decision"] = key
    world.event("decision", agent=agent.id, action=decision.action, cause=decision.cause,
                unresolved=[z.id for z in decision.unresolved],
                wait=None if decision.wait_time is None else round(decision.wait_time, 3))


CONTROL = {"signal_compliant": control_compliant, "scripted": control_scripted,
           "violator": control_violator, "ego_resolver": control_ego}


# ---------------------------------------------------------------- stepping

def _r(x: float) -> float:
    return round(float(x), 3) + 0.0


def _broadcast(world: World) -> None:
    t_ms = int(round(world.t * 1000))
    while world.next_broadcast_ms <= t_ms:
        world.clock.ms = world.next_broadcast_ms
        for dg in world.broadcaster.tick():
            msg = i2v.decode(dg)
            if isinstance(msg, i2v.SpatMessage):
                world.event("msg", msg="SPAT", seq=msg.seq, phase=msg.current_phase_id,
                            remaining_ms=msg.expected_remaining_ms)
            else:
                occ = sum(1 for _, s in msg.entries if s == "occupied")
                world.event("msg", msg="ICA", seq=msg.seq, occupied=occ)
        world.next_broadcast_ms += world.broadcaster.tick_ms
    world.clock.ms = t_ms


def _detect_violators(world: World) -> None:
    st = world.state
    i, el = world.plan.locate(world.t)
    for a in world.agents.values():
        if a.id in world.warned or a.v <= 0 or a.mode == "pedestrian":
            continue
        if a.guideway.movement.turn == "right":
            continue            # a right turn on red is lawful after a stop
        dist = a.dist_to_stop()
        if dist < 0 or dist > 400.0:
            continue
        rem = world.red_remaining(a.guideway.id)
        est_ = spat_estimate(None, st.id, el, world.plan)
        est_ = type(est_)(st.id, el, rem, {q: rem for q in est_.quantile_remaining},
                          est_.next_phase_id)
        w = violator_alert(Track(a.id, dist, a.v, a.guideway.id), st, est_, VIOLATOR_DECEL,
                           world.matrix)
        if w is None:
            continue
        world.warned.add(a.id)
        world.event("warning", track=a.id, lead_time=_r(w.lead_time),
                    conflicting=list(w.conflicting))
        for ego in world.agents.values():
            if ego.id in world.subscribers and world.matrix.conflicts(ego.guideway.id, a.guideway.id):
                ego.memory["alert"] = {"guideway": a.guideway.id, "track": a.id}


def step(world: World) -> None:
    """Advance the world by one tick of length world.dt."""
    dt = world.dt
    if world.broadcaster is not None:
        _broadcast(world)
        _detect_violators(world)
    accel = {}
    for aid, a in world.agents.items():
        acc = CONTROL[a.controller](a, world)
        accel[aid] = float(min(max(acc, a.a_min), a.a_max))
    for aid, a in world.agents.items():
        v0 = a.v
        a.s, a.v = integrate(a.s, v0, accel[aid], dt)
        # a stop inside the tick only used part of the commanded deceleration
        a.a = accel[aid] if a.v > 0.0 or accel[aid] >= 0 else -v0 / dt
    world.t = round(world.t + dt, 9)
    world.tick_no += 1
    for aid in [aid for aid, a in world.agents.items() if a.s >= a.guideway.length]:
        a = world.agents.pop(aid)
        world.exited[aid] = world.t
        world.event("exit", agent=aid)
    before = world.state.id
    world._refresh()
    if world.state.id != before:
        world.event("phase", phase=world.state.id)


@dataclass
class Metrics:
    collisions: list = field(default_factory=list)
    delay: dict = field(default_factory=dict)
    min_ttc: float = math.inf
    warnings: list = field(default_factory=list)
    red_occupancy: list = field(default_factory=list)
    max_decel: dict = field(default_factory=dict)
    first_brake: dict = field(default_factory=dict)
    first_spat: Optional[float] = None

    @property
    def collision_count(self) -> int:
        return len(self.collisions)

    def summary(self) -> dict:
        return {"collisions": self.collision_count,
                "collision_pairs": [[c["a"], c["b"], c["t"]] for c in self.collisions],
                "delay": {k: _r(v) for k, v in sorted(self.delay.items())},
                "min_ttc": None if math.isinf(self.min_ttc) else _r(self.min_ttc),
                "warnings": self.warnings,
                "red_occupancy": len(self.red_occupancy),
                "max_decel": {k: _r(v) for k, v in sorted(self.max_decel.items())},
                "first_brake": dict(sorted(self.first_brake.items())),
                "first_spat": self.first_spat}


@dataclass
class SimTrace:
    lines: list = field(default_factory=list)

    def dumps(self) -> str:
        return "".join(ln + "\n" for ln in self.lines)

    def records(self) -> list[dict]:
        return [json.loads(ln) for ln in self.lines]


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def _observe(world: World, metrics: Metrics, trace: SimTrace, prev_gap: dict) -> None:
    for ev in world.events:
        trace.lines.append(_dump(ev))
        if ev["type"] == "warning":
            metrics.warnings.append({"track": ev["track"], "t": ev["t"], "lead_time": ev["lead_time"]})
        if ev["type"] == "msg" and ev["msg"] == "SPAT" and metrics.first_spat is None:
            metrics.first_spat = ev["t"]
    world.events.clear()
    ids = sorted(world.agents)
    fps = world.footprints
    seen = {(c["a"], c["b"]) for c in metrics.collisions}
    touching = set()
    if len(ids) > 1:
        hits = STRtree([fps[a] for a in ids]).query([fps[a] for a in ids], predicate="intersects")
        touching = {(i, j) for i, j in zip(*hits) if i < j}
    for i, a in enumerate(ids):
        for j in range(i + 1, len(ids)):
            b = ids[j]
            inter = fps[a].intersection(fps[b]) if (i, j) in touching else None
            if inter is not None and not inter.is_empty and inter.area > 0:
                if (a, b) not in seen:
                    c = inter.centroid
                    rec = {"a": a, "b": b, "t": _r(world.t), "x": _r(c.x), "y": _r(c.y)}
                    metrics.collisions.append(rec)
                    trace.lines.append(_dump({"t": _r(world.t), "type": "collision", **rec}))
                prev_gap.pop((a, b), None)
                continue
            ga, gb = world.agents[a].guideway.id, world.agents[b].guideway.id
            if ga == gb or not world.matrix.conflicts(ga, gb):
                continue
            d = fps[a].distance(fps[b])
            if (a, b) in prev_gap and d < 50.0:
                rate = (prev_gap[(a, b)] - d) / world.dt
                if rate > 1e-6:
                    metrics.min_ttc = min(metrics.min_ttc, d / rate)
            prev_gap[(a, b)] = d
    for aid in ids:
        a = world.agents[aid]
        if a.a < 0:
            metrics.max_decel[aid] = max(metrics.max_decel.get(aid, 0.0), -a.a)
            if a.a < -1.0 and aid not in metrics.first_brake:
                metrics.first_brake[aid] = _r(world.t)
        if a.controller == "signal_compliant" and a.guideway.id in world.zone_union:
            # entering a conflict zone on red counts; finishing a crossing begun on go does not
            inside = world.zone_union[a.guideway.id].intersects(fps[aid])
            if inside and aid not in world.in_zone and world.tick_no > 0 \
                    and world.state.indication(a.guideway.id) in ("red", "dont_walk"):
                metrics.red_occupancy.append((aid, _r(world.t)))
            (world.in_zone.add if inside else world.in_zone.discard)(aid)
        pos = a.position
        trace.lines.append(_dump({"t": _r(world.t), "type": "agent", "id": aid,
                                  "gw": a.guideway.id, "s": _r(a.s), "v": _r(a.v),
                                  "a": _r(a.a), "x": _r(pos[0]), "y": _r(pos[1])}))


def run(scenario: Scenario) -> tuple[SimTrace, Metrics]:
    """Simulate the scenario to completion. Identical inputs give identical traces."""
    trace, metrics = SimTrace(), Metrics()
    if not scenario.agents:
        return trace, metrics
    world = World(scenario)
    prev_gap: dict = {}
    world.event("phase", phase=world.state.id)
    _observe(world, metrics, trace, prev_gap)
    n = int(round(scenario.duration / scenario.dt))
    for _ in range(n):
        if not world.agents:
            break
        step(world)
        _observe(world, metrics, trace, prev_gap)
    end = world.t
    for aid, (s0, v_des) in world.initial.items():
        t_end = world.exited.get(aid, end)
        if aid in world.agents:
            travelled = world.agents[aid].s - s0
        else:
            gw = scenario.compiled.guideway(next(x.guideway for x in scenario.agents if x.id == aid))
            travelled = gw.length - s0
        metrics.delay[aid] = max(0.0, t_end - travelled / v_des) if v_des > 0 else 0.0
    return trace, metrics
