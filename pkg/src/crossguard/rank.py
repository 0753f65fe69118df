"""Rank intersections by how often a driver faces a blind zone that is both
hidden and occupied.

For each (map, demand) entry we run seeded simulations with random
signal-compliant arrivals. A decision epoch is one approaching vehicle,
inside its decision window, sampled once per `epoch` seconds. An epoch is
hazardous when at least one of that vehicle's blind zones holds another agent
and the vehicle cannot see the blind zone past the agents around it. The
score of an entry is the hazardous fraction pooled over runs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from shapely.geometry import Point

from .geom import SIGHT_THRESHOLD, visible_fraction
from .intersection import CompiledIntersection
from .signal import standard_plan
from .sim import COMFORT_DECEL, DEFAULT_SPEED, Agent, Scenario, ScenarioError, World, step

SPAWN_CLEARANCE = 25.0       # ft of empty lane needed at the guideway start to release an arrival


@dataclass(frozen=True)
class DemandProfile:
    """Arrival rates in vehicles (or bicycles, pedestrians) per hour, keyed by guideway id."""

    rates: Mapping[str, float] = field(default_factory=dict)
    name: str = "demand"

    def __post_init__(self):
        for gid, r in self.rates.items():
            if not (r >= 0 and math.isfinite(r)):
                raise ValueError(f"rate for {gid!r} must be a finite number >= 0")

    def scaled(self, k: float) -> "DemandProfile":
        return DemandProfile({g: r * k for g, r in self.rates.items()}, f"{self.name}x{k:g}")


@dataclass(frozen=True)
class RankEntry:
    map_id: str
    frequency: float
    stderr: float
    epochs: int
    runs: int


@dataclass(frozen=True)
class RunResult:
    hazardous: int
    epochs: int

    @property
    def fraction(self) -> float:
        return self.hazardous / self.epochs if self.epochs else 0.0


def _spawn(world: World, gid: str, n: int) -> bool:
    gw = world.compiled.guideway(gid)
    mode = gw.movement.mode
    for other in world.agents.values():
        if other.guideway.entry_lane_id == gw.entry_lane_id and \
                other.s - other.length / 2 < SPAWN_CLEARANCE:
            return False                            # lane start still occupied: keep it pending
    aid = f"{gid}#{n:05d}"
    a = Agent(aid, mode, gw, 0.0, DEFAULT_SPEED[mode])
    a.s = a.length / 2
    world.agents[aid] = a
    world.initial[aid] = (a.s, a.v_des)
    return True


def _hazard(agent: Agent, world: World) -> bool:
    vp = tuple(agent.viewpoint())
    here = Point(vp)
    for bz in world.compiled.blind_zones_of(agent.guideway):
        if bz.polygon.is_empty:
            continue
        thr = bz.threat_guideway
        end = bz.conflict_zone.interval_on(thr)[1]
        if not any(o.guideway.id == thr.id and bz.interval[0] <= o.s <= end
                   for o in world.agents.values() if o.id != agent.id):
            continue
        # agents on the threat guideway are what the driver looks for, not what hides it
        obstacles = [world.footprints[o.id] for o in world.agents.values()
                     if o.id != agent.id and o.guideway.id != thr.id
                     and not world.footprints[o.id].contains(here)]
        if obstacles and visible_fraction(vp, obstacles, bz.polygon) < SIGHT_THRESHOLD:
            return True
    return False


def simulate_run(compiled: CompiledIntersection, demand: DemandProfile, seed: int,
                 duration: float = 180.0, dt: float = 0.1, epoch: float = 1.0) -> RunResult:
    """One seeded run: Bernoulli arrivals per tick, hazards sampled every `epoch` s."""
    if not duration > 0:
        raise ScenarioError("ranking runs need a positive duration")
    rng = np.random.default_rng(seed)
    plan = standard_plan(compiled)
    plan = dataclasses.replace(plan, offset=float(rng.uniform(0.0, plan.cycle)))
    world = World(Scenario("rank", compiled, plan, [], duration=duration, dt=dt, seed=seed))
    gids = sorted(g for g, r in demand.rates.items() if r > 0)
    for g in gids:
        compiled.guideway(g)                         # unknown ids fail loudly
    pending = {g: 0 for g in gids}
    made = {g: 0 for g in gids}
    probs = {g: demand.rates[g] / 3600.0 * dt for g in gids}
    every = max(int(round(epoch / dt)), 1)
    hazardous = epochs = 0
    for k in range(int(round(duration / dt))):
        draws = rng.random(len(gids))
        for g, u in zip(gids, draws):
            if u < probs[g]:
                pending[g] += 1
            if pending[g] and _spawn(world, g, made[g]):
                pending[g] -= 1
                made[g] += 1
                world.footprints = {aid: a.footprint() for aid, a in world.agents.items()}
        if k % every == 0:
            for a in list(world.agents.values()):
                if a.mode != "vehicle":
                    continue
                d = a.dist_to_stop()
                window = a.v ** 2 / (2.0 * COMFORT_DECEL[a.mode]) + a.v + 10.0
                if 0.0 <= d <= window:
                    epochs += 1
                    hazardous += _hazard(a, world)
        step(world)
    return RunResult(hazardous, epochs)


def estimate(compiled: CompiledIntersection, demand: DemandProfile, runs: int, seed: int,
             duration: float = 180.0, dt: float = 0.1) -> tuple[float, float, int]:
    """Pooled hazardous fraction, its (ratio-estimator) standard error and the epoch count."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(runs)
    res = [simulate_run(compiled, demand, int(s), duration, dt) for s in seeds]
    h = np.array([r.hazardous for r in res], dtype=float)
    e = np.array([r.epochs for r in res], dtype=float)
    if e.sum() == 0:
        return 0.0, 0.0, 0
    f = h.sum() / e.sum()
    se = 0.0
    if runs > 1:
        se = float(np.sqrt(((h - f * e) ** 2).sum() / (runs * (runs - 1))) / e.mean())
    return float(f), se, int(e.sum())


def rank(entries: Sequence[tuple], runs: int = 8, seed: int = 0, duration: float = 180.0,
         dt: float = 0.1) -> list[RankEntry]:
    """entries: (map_id, compiled, DemandProfile). Highest frequency first, ties by map id."""
    out = []
    for map_id, compiled, demand in entries:
        f, se, n = estimate(compiled, demand, runs, seed, duration, dt)
        out.append(RankEntry(map_id, f, se, n, runs))
    return sorted(out, key=lambda e: (-e.frequency, e.map_id))


def uniform_demand(compiled: CompiledIntersection, rate: float,
                   approaches: Optional[Sequence[str]] = None,
                   modes: Sequence[str] = ("vehicle",)) -> DemandProfile:
    """Same rate on every entry guideway of the given approaches and modes."""
    rates = {g.id: rate for g in compiled.guideways
             if g.movement.mode in modes and g.stop_s > 0
             and (approaches is None or g.movement.approach in approaches)}
    return DemandProfile(rates, f"uniform{rate:g}")
