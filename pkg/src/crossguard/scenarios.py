"""Scripted scenario library and scenario-file (de)serialisation.

Each library entry is a builder ``f(i2v: bool, **overrides) -> Scenario``.
Timings are derived from the map so that in the unconnected variant the
agents do reach the conflict point together; the connected variant keeps
every agent and every script identical and only switches on the bus.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Optional

from shapely.geometry import Polygon, box

from .fixtures import MAPS, TEMPE_STOP, fourleg_basic, tempe
from .intersection import CompiledIntersection, compile_map, load_map, parse_map
from .signal import STANDARD_DURATIONS, FixedTimePlan, phase_catalog
from .sim import AgentSpec, Scenario, ScenarioError, SensorSpec, travel_time

SCENARIO_SCHEMA = 1
HONDA_SPEED = 10.0
VOLVO_SPEED = 56.0


# ---------------------------------------------------------------- plans

def plan_from_dict(compiled: CompiledIntersection, d: Optional[dict]) -> FixedTimePlan:
    d = d or {}
    catalog = {s.id: s for s in phase_catalog(compiled.matrix())}
    names = d.get("states") or list(catalog)
    unknown = [n for n in names if n not in catalog]
    if unknown:
        raise ScenarioError(f"plan names unknown states {unknown}")
    dur = dict(STANDARD_DURATIONS, **d.get("durations", {}))
    missing = [n for n in names if n not in dur]
    if missing:
        raise ScenarioError(f"plan lacks durations for {missing}")
    return FixedTimePlan(tuple(catalog[n] for n in names), tuple(float(dur[n]) for n in names),
                         float(d.get("yellow", 4.0)), float(d.get("offset", 0.0)))


def plan_to_dict(plan: FixedTimePlan) -> dict:
    return {"states": [s.id for s in plan.states],
            "durations": {s.id: d for s, d in zip(plan.states, plan.durations)},
            "yellow": plan.yellow, "offset": plan.offset}


def offset_for(plan_dict: dict, state: str, into: float) -> float:
    """Plan offset that puts time 0 `into` seconds after `state` begins."""
    names = plan_dict.get("states") or [s for s in STANDARD_DURATIONS]
    dur = dict(STANDARD_DURATIONS, **plan_dict.get("durations", {}))
    start = sum(dur[n] for n in names[:names.index(state)])
    return -(start + into)


# ---------------------------------------------------------------- helpers

def _zone(compiled: CompiledIntersection, a: str, b: str):
    for z in compiled.zones:
        if {z.guideway_a.id, z.guideway_b.id} == {a, b}:
            return z
    raise ScenarioError(f"{a} and {b} do not conflict")


def _meet(compiled: CompiledIntersection, a: str, b: str) -> tuple[float, float]:
    """Arc positions on a and b of the middle of their (first) conflict zone."""
    z = _zone(compiled, a, b)
    ga, gb = compiled.guideway(a), compiled.guideway(b)
    ia, ib = z.interval_on(ga), z.interval_on(gb)
    return (ia[0] + ia[1]) / 2, (ib[0] + ib[1]) / 2


def _box(x0, y0, x1, y1) -> Polygon:
    return box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _stationary(aid: str, gw: str, **kw) -> AgentSpec:
    return AgentSpec(aid, gw, "scripted", v=0.0, params={"v0": 0.0}, **kw)


def _ego_params(i2v: bool, **kw) -> dict:
    p = {"connected": bool(i2v)}
    p.update(kw)
    return p


# ---------------------------------------------------------------- fourleg scenarios

RIGHT_S = "S.in.right>E.out.veh"
THRU_S = "S.in.through>N.out.veh"
LEFT_S = "S.in.left>W.out.veh"
THRU_W = "W.in.through>E.out.veh"
LEFT_N = "N.in.left>E.out.veh"


def rtor_confusion(i2v: bool, seed: int = 0) -> Scenario:
    """Right turn on red behind a queued through vehicle, during the southbound lag.

    Sight alone leaves the west approach and the south crosswalk unresolved, so
    an unconnected ego waits for its own green; SPaT shows those movements red.
    """
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "SB_LAG", 0.5)}
    agents = [
        AgentSpec("ego", RIGHT_S, "ego_resolver", stop_offset=30.0, v=15.0,
                  params=_ego_params(i2v, v_des=20.0, rtor=True)),
        _stationary("O", THRU_S, stop_offset=0.0),
        AgentSpec("U3", THRU_W, "signal_compliant", stop_offset=180.0, v=40.0,
                  params={"v_des": 40.0}),
    ]
    return Scenario("rtor_confusion", c, plan_from_dict(c, plan), agents,
                    sensors=_full_sensors(c), i2v_enabled=i2v, duration=70.0, seed=seed,
                    meta={"plan": plan})


def _full_sensors(c: CompiledIntersection) -> list:
    """Stop-bar-area detectors over each approach and crosswalk plus advance loops."""
    out = [SensorSpec("DET.box", "zone_detector", polygon=_box(-330, -330, 330, 330))]
    return out


def rtog_pedestrian_delay(i2v: bool, seed: int = 0, ped_lag: float = 0.0) -> Scenario:
    """Right turn on green; a corner building hides a pedestrian starting across the east crosswalk."""
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "NS_THRU", 0.0)}
    ego = c.guideway(RIGHT_S)
    s_ego, s_ped = _meet(c, RIGHT_S, "E.crosswalk")
    ego_v = 20.0
    start = 90.0                        # ego front upstream of the stop bar
    s0 = ego.stop_s - start - 7.5
    t_meet = (s_ego - s0) / ego_v
    # the pedestrian waits at the kerb and steps off so as to reach the turning path with the ego
    t_step = t_meet - travel_time(s_ped - 1.0, 0.0, 4.0, 4.0) + ped_lag
    agents = [
        AgentSpec("ego", RIGHT_S, "ego_resolver", s=s0, v=ego_v,
                  params=_ego_params(i2v, v_des=ego_v, optimistic=True)),
        AgentSpec("ped", "E.crosswalk", "scripted", s=1.0, v=0.0,
                  params={"v0": 0.0, "schedule": [[round(t_step, 2), 4.0]], "accel": 4.0}),
    ]
    building = _box(52, -52, 140, -160)
    sensors = [SensorSpec("DET.E.crosswalk", "zone_detector", polygon=_box(47, -70, 67, 70))]
    return Scenario("rtog_pedestrian_delay", c, plan_from_dict(c, plan), agents,
                    sensors=sensors, obstacles=[building], i2v_enabled=i2v, duration=30.0,
                    seed=seed, meta={"plan": plan})


def yellow_dilemma(i2v: bool, seed: int = 0) -> Scenario:
    """A through vehicle follows a leader that reacts only to yellow onset."""
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "NS_THRU", 22.0 - 4.0 - 2.0)}   # yellow starts at t = 2 s
    v = 44.0
    lead_front = v * 2.0 + 70.0         # 70 ft short of the stop bar at yellow onset
    agents = [
        AgentSpec("leader", THRU_S, "signal_compliant", stop_offset=lead_front, v=v,
                  params={"v_des": v, "countdown": False}),
        AgentSpec("ego", THRU_S, "ego_resolver", stop_offset=lead_front + 15.0 + 40.0, v=v,
                  params=_ego_params(i2v, v_des=v, optimistic=True)),
    ]
    return Scenario("yellow_dilemma", c, plan_from_dict(c, plan), agents, i2v_enabled=i2v,
                    duration=15.0, seed=seed, meta={"plan": plan})


def left_turn_alert(i2v: bool, seed: int = 0) -> Scenario:
    """Permissive left from the north merges into the lane of a hidden right turn from the south."""
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "NS_THRU", 2.0)}
    right = "S.in.right>E.out.veh"
    s_ego, s_rt = _meet(c, LEFT_N, right)
    v_ego, v_rt = 25.0, 20.0
    ego = c.guideway(LEFT_N)
    s0 = ego.stop_s - 60.0 - 7.5
    t_meet = (s_ego - s0) / v_ego
    rt0 = s_rt - v_rt * t_meet
    agents = [
        AgentSpec("ego", LEFT_N, "ego_resolver", s=s0, v=v_ego,
                  params=_ego_params(i2v, v_des=v_ego, optimistic=True)),
        AgentSpec("rt", right, "signal_compliant", s=rt0, v=v_rt, params={"v_des": v_rt}),
        _stationary("SL", LEFT_S, s=c.guideway(LEFT_S).stop_s + 12.0),
    ]
    return Scenario("left_turn_alert", c, plan_from_dict(c, plan), agents,
                    sensors=_full_sensors(c), i2v_enabled=i2v, duration=25.0, seed=seed,
                    meta={"plan": plan})


def pedestrian_los_block(i2v: bool, seed: int = 0) -> Scenario:
    """Right turn on red while queued vehicles hide a pedestrian on the south crosswalk."""
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "EW_THRU", 0.0)}
    ego = c.guideway(RIGHT_S)
    s_ego, s_ped = _meet(c, RIGHT_S, "S.crosswalk")
    agents = [
        AgentSpec("ego", RIGHT_S, "ego_resolver", stop_offset=0.5, v=0.0,
                  params=_ego_params(i2v, v_des=15.0, rtor=True, optimistic=True)),
        _stationary("O", THRU_S, stop_offset=0.0),
        _stationary("L", "S.in.left>W.out.veh", stop_offset=0.0),
        AgentSpec("ped", "S.crosswalk", "signal_compliant", s=0.0, v=4.0,
                  params={"v_des": 4.0, "countdown": False}),
    ]
    # time the pedestrian so it walks into the turning path as the ego gets there
    t_ego = travel_time(s_ego - (ego.stop_s - 0.5 - 7.5), 0.0, 15.0, 8.0) + 0.1
    agents[-1].s = max(s_ped - 4.0 * t_ego, 0.0)
    sensors = [SensorSpec("DET.S.crosswalk", "zone_detector", polygon=_box(-60, -67, 60, -47)),
               SensorSpec("DET.W", "zone_detector", polygon=_box(-330, -45, 60, 45))]
    return Scenario("pedestrian_los_block", c, plan_from_dict(c, plan), agents,
                    sensors=sensors, i2v_enabled=i2v, duration=30.0, seed=seed,
                    meta={"plan": plan})


def red_light_violator(i2v: bool, seed: int = 0) -> Scenario:
    """A westbound driver runs the red while the northbound ego has a green."""
    c = fourleg_basic()
    plan = {"offset": offset_for({}, "NS_THRU", 2.0)}
    viol = "W.in.through>E.out.veh"
    s_ego, s_v = _meet(c, THRU_S, viol)
    v_ego, v_v = 44.0, 50.0
    t_meet = 5.0
    agents = [
        AgentSpec("ego", THRU_S, "ego_resolver", s=s_ego - v_ego * t_meet, v=v_ego,
                  params=_ego_params(i2v, v_des=v_ego)),
        AgentSpec("violator", viol, "violator", s=s_v - v_v * t_meet, v=v_v,
                  params={"v_des": v_v}),
    ]
    return Scenario("red_light_violator", c, plan_from_dict(c, plan), agents, i2v_enabled=i2v,
                    duration=15.0, seed=seed, meta={"plan": plan})


# ---------------------------------------------------------------- tempe

HONDA = "S.in.left>W.out.1"
VOLVO = "N.in.3>S.out.3"
QUEUE_FRONTS = {"N.in.1>S.out.1": -5.0, "N.in.2>S.out.2": 33.0}   # y of the first queued front
QUEUE_GAP = 3.0
QUEUE_LEN = 12


def tempe_plan(t_yellow: float) -> dict:
    d = {"states": ["NS_THRU", "EW_THRU"], "durations": {"NS_THRU": 40.0, "EW_THRU": 20.0}}
    d["offset"] = offset_for(d, "NS_THRU", 36.0 - t_yellow)
    return d


def tempe_crash(i2v: bool, seed: int = 0, honda_speed: float = HONDA_SPEED) -> Scenario:
    """Northbound left turn across three southbound lanes, two of them queued.

    The Honda waits inside the intersection and turns at `honda_speed`; the
    Volvo arrives in lane 3 at 56 ft/s and reaches the stop bar early in the
    yellow. Only the Volvo can be connected.
    """
    if not 0 < honda_speed <= 30:
        raise ScenarioError("honda_speed must be in (0, 30] ft/s")
    c = tempe()
    u = c.guideway(VOLVO)
    s_h, s_u = _meet(c, HONDA, VOLVO)
    h0 = 207.5
    t_go = 1.0
    t_hit = t_go + travel_time(s_h - h0, 0.0, honda_speed, 6.0)
    u0 = s_u - VOLVO_SPEED * t_hit
    t_stopbar = (u.stop_s - (u0 + 7.5)) / VOLVO_SPEED
    plan = tempe_plan(max(t_stopbar - 1.5, 0.0))
    agents = [
        AgentSpec("honda", HONDA, "scripted", s=h0, v=0.0,
                  params={"v0": 0.0, "schedule": [[t_go, honda_speed]], "accel": 6.0}),
        AgentSpec("volvo", VOLVO, "ego_resolver", s=u0, v=VOLVO_SPEED,
                  params=_ego_params(i2v, v_des=VOLVO_SPEED, optimistic=True,
                                     enter_on_yellow=True)),
    ]
    agents += tempe_queue(c)
    sensors = [SensorSpec("LOOP.N3.200", "advance_loop", lane="N.in.3", offset=200.0),
               SensorSpec("LOOP.Sleft.100", "advance_loop", lane="S.in.left", offset=100.0)]
    return Scenario("tempe_crash", c, plan_from_dict(c, plan), agents, sensors=sensors,
                    i2v_enabled=i2v, duration=t_hit + 6.0, seed=seed,
                    meta={"plan": plan, "honda_speed": honda_speed})


def tempe_queue(c: CompiledIntersection) -> list:
    """Stopped southbound vehicles in lanes 1 and 2, nose first into the box."""
    out = []
    for gid, y_front in QUEUE_FRONTS.items():
        gw = c.guideway(gid)
        lane = gid.split(">")[0].split(".")[-1]
        for k in range(QUEUE_LEN):
            front = gw.stop_s + (TEMPE_STOP - y_front) - k * (15.0 + QUEUE_GAP)
            out.append(_stationary(f"q{lane}_{k:02d}", gid, s=front - 7.5))
    return out


# ---------------------------------------------------------------- registry

LIBRARY: dict[str, Callable[..., Scenario]] = {
    "rtor_confusion": rtor_confusion,
    "rtog_pedestrian_delay": rtog_pedestrian_delay,
    "yellow_dilemma": yellow_dilemma,
    "left_turn_alert": left_turn_alert,
    "pedestrian_los_block": pedestrian_los_block,
    "red_light_violator": red_light_violator,
    "tempe_crash": tempe_crash,
}
VARIANTS = ("on", "off")


def scenario_library() -> dict:
    """Every named scenario in both variants: {(name, 'on'|'off'): Scenario}."""
    return {(n, v): f(v == "on") for n, f in LIBRARY.items() for v in VARIANTS}


def build(name: str, i2v: bool, **kw) -> Scenario:
    try:
        f = LIBRARY[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; known: {', '.join(LIBRARY)}") from None
    return f(i2v, **kw)


# ---------------------------------------------------------------- files

def _resolve_map(ref, base: Optional[Path]) -> CompiledIntersection:
    if isinstance(ref, dict):
        return compile_map(parse_map(ref))
    if ref in MAPS:
        return fourleg_basic() if ref == "fourleg-basic" else tempe()
    p = Path(ref)
    if base is not None and not p.is_absolute():
        p = base / p
    return compile_map(load_map(p))


def scenario_from_dict(d: dict, base: Optional[Path] = None) -> Scenario:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}")
    if "library" in d:
        return build(d["library"], bool(d.get("i2v", False)), **d.get("overrides", {}))
    for key in ("name", "map", "agents"):
        if key not in d:
            raise ScenarioError(f"scenario lacks '{key}'")
    c = _resolve_map(d["map"], base)
    agents = []
    for a in d["agents"]:
        try:
            agents.append(AgentSpec(**a))
        except TypeError as e:
            raise ScenarioError(f"bad agent entry {a.get('id')!r}: {e}") from None
    sensors = []
    for s in d.get("sensors", []):
        poly = Polygon(s["polygon"]) if "polygon" in s else None
        sensors.append(SensorSpec(s["id"], s["kind"], poly, s.get("lane"), float(s.get("offset", 0.0))))
    obstacles = [Polygon(o) for o in d.get("obstacles", [])]
    return Scenario(d["name"], c, plan_from_dict(c, d.get("plan")), agents, sensors, obstacles,
                    bool(d.get("i2v", False)), float(d.get("duration", 20.0)),
                    float(d.get("dt", 0.05)), int(d.get("seed", 0)), {"plan": d.get("plan", {})})


def scenario_to_dict(sc: Scenario) -> dict:
    def coords(p):
        return [[round(x, 3), round(y, 3)] for x, y in p.exterior.coords]
    sensors = []
    for s in sc.sensors:
        e = {"id": s.id, "kind": s.kind}
        if s.polygon is not None:
            e["polygon"] = coords(s.polygon)
        if s.lane is not None:
            e["lane"] = s.lane
            e["offset"] = s.offset
        sensors.append(e)
    return {"schema": SCENARIO_SCHEMA, "name": sc.name, "map": sc.compiled.id,
            "plan": plan_to_dict(sc.plan), "i2v": sc.i2v_enabled, "duration": sc.duration,
            "dt": sc.dt, "seed": sc.seed, "agents": [a.to_dict() for a in sc.agents],
            "sensors": sensors, "obstacles": [coords(Polygon(o)) for o in sc.obstacles]}


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{p}: not valid JSON ({e})") from None
    return scenario_from_dict(d, p.parent)
