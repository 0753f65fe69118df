"""Conflict resolution for one ego movement: own signal, sight, SPaT, then ICA."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .geom import (
    SIGHT_THRESHOLD,
    BlindZone,
    ConflictZone,
    Guideway,
    blind_zone,
    visible_fraction,
)
from .signal import GO, ConflictMatrix, PhaseState, SignalError, SpatEstimate, validate_phase

CLEAR, THREAT, UNRESOLVED = "resolved_clear", "resolved_threat", "unresolved"
PROCEED = "proceed"
PROCEED_CA = "proceed_collision_avoidance"
WAIT_PHASE = "wait_for_phase"
WAIT_ICA = "wait_for_ica"
BRAKE_ALERT = "brake_alert"

DEFAULT_V_MAX = {"vehicle": 50.0, "bicycle": 20.0, "pedestrian": 6.0}


class ResolveError(ValueError):
    pass


@dataclass(frozen=True)
class SeenAgent:
    id: str
    position: tuple
    guideway_id: str
    s: float


@dataclass(frozen=True)
class EgoContext:
    guideway: Guideway
    viewpoint: tuple
    own_indication: str
    tau: float
    visible_agents: tuple = ()
    obstacles: tuple = ()

    def __post_init__(self):
        if not self.tau > 0:
            raise ResolveError("tau must be positive")

    @property
    def movement(self):
        return self.guideway.movement


@dataclass(frozen=True)
class ConflictStatus:
    zone: ConflictZone
    threat: Guideway
    status: str = UNRESOLVED
    reason: str = "none"

    def __post_init__(self):
        if (self.status == UNRESOLVED) != (self.reason == "none"):
            raise ResolveError(f"inconsistent status {self.status}/{self.reason}")

    @property
    def unresolved(self) -> bool:
        return self.status == UNRESOLVED


@dataclass(frozen=True)
class Decision:
    action: str
    unresolved: tuple = ()
    wait_time: Optional[float] = None
    cause: str = ""   # why a wait: unresolved, occupied, unknown or yellow

    def __post_init__(self):
        if self.action == PROCEED and self.unresolved:
            raise ResolveError("proceed with unresolved conflicts")


@dataclass(frozen=True)
class IcaReport:
    statuses: Mapping
    timestamp: float = 0.0


@dataclass(frozen=True)
class Track:
    id: str
    distance_to_stopbar: float
    speed: float
    guideway_id: str


@dataclass(frozen=True)
class ViolatorWarning:
    track_id: str
    lead_time: float
    conflicting: tuple = field(default_factory=tuple)


def initial_statuses(ego: Guideway, zones: Sequence[ConflictZone]) -> list[ConflictStatus]:
    return [ConflictStatus(z, z.other(ego)) for z in zones]


def _head_movements(ego: Guideway, matrix: ConflictMatrix) -> tuple[set, set]:
    """Movements controlled by the ego's signal head, and its through movements."""
    head, throughs = set(), set()
    for mid, mv in matrix.movements.items():
        if mv.approach != ego.movement.approach or mv.mode == "pedestrian":
            continue
        if mv.turn == "right" or mv.phase is None:
            continue
        head.add(mid)
        if mv.turn == "through":
            throughs.add(mid)
    thr_phases = {matrix.movements[m].phase for m in throughs}
    paired = {mid for mid, mv in matrix.movements.items()
              if mv.mode == "pedestrian" and mv.phase
              and "phi" + mv.phase.lstrip("P") in thr_phases}
    return head | paired, throughs


def step3_part1(ego: Guideway, own_indication: str, matrix: ConflictMatrix,
                zones: Sequence[ConflictZone],
                statuses: Optional[Sequence[ConflictStatus]] = None) -> list[ConflictStatus]:
    """Clear every zone whose other movement cannot hold right of way given ego's light."""
    statuses = list(statuses) if statuses is not None else initial_statuses(ego, zones)
    head, throughs = _head_movements(ego, matrix)
    if own_indication == "red":
        stopped = head
    elif own_indication in ("green", "yellow"):
        greens = set(throughs)
        if ego.movement.turn != "right" and ego.id in matrix.ids:
            greens.add(ego.id)
        stopped = {m for m in matrix.ids
                   if any(m != g and matrix.protected_conflict(m, g) for g in greens)}
    else:
        raise ResolveError(f"unknown own indication {own_indication!r}")
    out = []
    for st in statuses:
        if st.unresolved and st.threat.id in stopped:
            st = replace(st, status=CLEAR, reason="own_signal")
        out.append(st)
    return out


def _bz_lookup(blind_zones: Sequence[BlindZone]) -> dict:
    return {(b.conflict_zone.id, b.threat_guideway.id): b for b in blind_zones}


def ego_blind_zones(ego: EgoContext, zones: Sequence[ConflictZone],
                    v_max: Mapping = DEFAULT_V_MAX) -> list[BlindZone]:
    return [blind_zone(z, z.other(ego.guideway), v_max[z.other(ego.guideway).movement.mode],
                       ego.tau) for z in zones]


def step3_part2(statuses: Sequence[ConflictStatus], ego: EgoContext,
                blind_zones: Sequence[BlindZone]) -> list[ConflictStatus]:
    """Resolve zones whose blind zone the ego can see in full."""
    lookup = _bz_lookup(blind_zones)
    out = []
    for st in statuses:
        if st.unresolved:
            bz = lookup.get((st.zone.id, st.threat.id))
            if bz is None:
                raise ResolveError(f"no blind zone for {st.zone.id} / {st.threat.id}")
            target = bz.polygon if not bz.polygon.is_empty else st.zone.polygon
            if visible_fraction(ego.viewpoint, ego.obstacles, target) >= SIGHT_THRESHOLD:
                lo, hi = bz.interval[0], st.zone.interval_on(st.threat)[1]
                seen = any(a.guideway_id == st.threat.id and lo - 1e-9 <= a.s <= hi
                           for a in ego.visible_agents)
                st = replace(st, status=THREAT if seen else CLEAR, reason="sight")
        out.append(st)
    return out


def step3_part3(statuses: Sequence[ConflictStatus], observed: Mapping[str, str],
                spat: PhaseState, matrix: Optional[ConflictMatrix] = None) -> list[ConflictStatus]:
    """Clear zones whose other movement lacks right of way in the broadcast phase."""
    if matrix is not None and validate_phase(spat, matrix):
        raise SignalError(f"SPaT state {spat.id} contains conflicting greens")
    for mid, ind in (observed or {}).items():
        if spat.indication(mid) != ind:
            raise SignalError(f"SPaT disagrees with observed {mid}={ind}")
    out = []
    for st in statuses:
        if st.unresolved and spat.indication(st.threat.id) not in GO:
            st = replace(st, status=CLEAR, reason="spat")
        out.append(st)
    return out


def _final(statuses: Sequence[ConflictStatus], wait_time: Optional[float]) -> Decision:
    left = tuple(s.zone for s in statuses if s.unresolved)
    if left:
        return Decision(WAIT_PHASE, left, wait_time, "unresolved")
    if any(s.status == THREAT for s in statuses):
        return Decision(PROCEED_CA)
    return Decision(PROCEED)


def step4_ica(statuses: Sequence[ConflictStatus], ica: IcaReport,
              blind_zones: Sequence[BlindZone],
              wait_time: Optional[float] = None) -> tuple[Decision, list[ConflictStatus]]:
    """Use the intersection's blind-zone occupancy report on what is left."""
    lookup = _bz_lookup(blind_zones)
    out, occupied, unknown = [], [], []
    for st in statuses:
        if st.unresolved:
            bz = lookup.get((st.zone.id, st.threat.id))
            if bz is None or bz.id not in ica.statuses:
                raise ResolveError(f"ICA report lacks blind zone for {st.zone.id}")
            v = ica.statuses[bz.id]
            if v == "clear":
                st = replace(st, status=CLEAR, reason="ica")
            elif v == "occupied":
                occupied.append(st.zone)
            elif v == "unknown":
                unknown.append(st.zone)
            else:
                raise ResolveError(f"bad ICA status {v!r}")
        out.append(st)
    if occupied:
        return Decision(WAIT_PHASE, tuple(occupied + unknown), wait_time, "occupied"), out
    if unknown:
        return Decision(WAIT_ICA, tuple(unknown), wait_time, "unknown"), out
    return _final(out, wait_time), out


def resolve(ego: EgoContext, zones: Sequence[ConflictZone], matrix: ConflictMatrix,
            spat: Optional[PhaseState] = None, ica: Optional[IcaReport] = None,
            estimate: Optional[SpatEstimate] = None, observed: Optional[Mapping] = None,
            v_max: Mapping = DEFAULT_V_MAX) -> tuple[Decision, list[ConflictStatus]]:
    """Run own-signal, sight, SPaT and ICA filtering in that order."""
    bzs = ego_blind_zones(ego, zones, v_max)
    st = step3_part1(ego.guideway, ego.own_indication, matrix, zones)
    st = step3_part2(st, ego, bzs)
    if spat is not None:
        st = step3_part3(st, observed or {}, spat, matrix)
    wait = estimate.expected_remaining if estimate is not None else None
    if ica is not None and any(s.unresolved for s in st):
        decision, st = step4_ica(st, ica, bzs, wait)
    else:
        decision = _final(st, wait)
    if (decision.action in (PROCEED, PROCEED_CA) and ego.own_indication == "yellow"
            and estimate is not None and estimate.expected_remaining < ego.tau):
        decision = Decision(WAIT_PHASE, (), estimate.expected_remaining, "yellow")
    return decision, st


def stopping_distance(v: float, decel: float) -> float:
    if v < 0 or decel <= 0:
        raise ValueError("need v >= 0 and decel > 0")
    return v * v / (2.0 * decel)


def violator_alert(track: Track, phase: PhaseState, spat: Optional[SpatEstimate],
                   decel_max: float, matrix: Optional[ConflictMatrix] = None,
                   next_phase: Optional[PhaseState] = None) -> Optional[ViolatorWarning]:
    """Warn when a red-facing track can no longer stop before the stop bar."""
    if track.speed <= 0:
        return None
    if phase.indication(track.guideway_id) != "red":
        return None
    t = track.distance_to_stopbar / track.speed
    red_at_entry = spat is None or t < spat.expected_remaining
    if not red_at_entry and next_phase is not None:
        red_at_entry = next_phase.indication(track.guideway_id) == "red"
    if not red_at_entry:
        return None
    if stopping_distance(track.speed, decel_max) <= track.distance_to_stopbar:
        return None
    conflicting = ()
    if matrix is not None:
        conflicting = tuple(m for m in phase.go_movements()
                            if m != track.guideway_id and matrix.conflicts(track.guideway_id, m))
    return ViolatorWarning(track.id, t, tuple(sorted(conflicting)))
