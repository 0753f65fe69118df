"""Signal phases: conflict matrix, phase states, fixed-time plans and SPaT estimation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geom import Guideway, conflict_zones

VEHICLE_INDICATIONS = ("green", "yellow", "red")
PED_INDICATIONS = ("walk", "dont_walk")
GO = frozenset({"green", "yellow", "walk"})
QUANTILES = (0.1, 0.5, 0.9)


class SignalError(ValueError):
    pass


class EstimateUnavailable(SignalError):
    pass


@dataclass(frozen=True, eq=False)
class ConflictMatrix:
    """Pairwise geometric conflicts between movements.

    ``permissive[i, j]`` marks conflicting pairs that a controller may still
    serve together because one side yields: right turns, left turns yielding
    to whatever their own approach's through movement may run with, and
    movements sharing a phase on the same approach.
    """

    ids: tuple
    conflict: np.ndarray
    permissive: np.ndarray
    movements: Mapping = field(default_factory=dict)

    def index(self, mid: str) -> int:
        try:
            return self.ids.index(mid)
        except ValueError:
            raise SignalError(f"unknown movement id {mid!r}") from None

    def conflicts(self, a: str, b: str) -> bool:
        return bool(self.conflict[self.index(a), self.index(b)])

    def protected_conflict(self, a: str, b: str) -> bool:
        i, j = self.index(a), self.index(b)
        return bool(self.conflict[i, j] and not self.permissive[i, j])


def _permissive(gws: Sequence[Guideway], conflict: np.ndarray) -> np.ndarray:
    n = len(gws)
    idx = {g.id: i for i, g in enumerate(gws)}
    throughs = {}
    for g in gws:
        mv = g.movement
        if mv.turn == "through" and mv.mode != "pedestrian":
            throughs.setdefault(mv.approach, []).append(idx[g.id])

    def yields(i: int, j: int) -> bool:
        a = gws[i].movement
        if a.mode == "pedestrian":
            return False
        if a.turn == "right":
            return True
        if a.turn == "left":
            return not any(conflict[t, j] for t in throughs.get(a.approach, ()) if t != j)
        return False

    out = np.zeros((n, n), dtype=bool)
    for i, j in combinations(range(n), 2):
        if not conflict[i, j]:
            continue
        a, b = gws[i].movement, gws[j].movement
        same_phase = a.phase is not None and a.phase == b.phase and a.approach == b.approach
        out[i, j] = out[j, i] = same_phase or yields(i, j) or yields(j, i)
    return out


def conflict_matrix_from_zones(guideways: Sequence[Guideway], zones) -> ConflictMatrix:
    gws = sorted(guideways, key=lambda g: g.id)
    idx = {g.id: i for i, g in enumerate(gws)}
    conflict = np.zeros((len(gws), len(gws)), dtype=bool)
    for z in zones:
        i, j = idx[z.guideway_a.id], idx[z.guideway_b.id]
        conflict[i, j] = conflict[j, i] = True
    perm = _permissive(gws, conflict)
    conflict.setflags(write=False)
    perm.setflags(write=False)
    return ConflictMatrix(tuple(g.id for g in gws), conflict, perm,
                          {g.id: g.movement for g in gws})


def conflict_matrix_from_geometry(guideways: Sequence[Guideway]) -> ConflictMatrix:
    """Entry (i, j) is true iff the two guideways have a conflict zone."""
    ids = [g.id for g in guideways]
    if len(set(ids)) != len(ids):
        raise SignalError("guideways must be pairwise distinct")
    zones = []
    for a, b in combinations(guideways, 2):
        zones.extend(conflict_zones(a, b))
    return conflict_matrix_from_zones(guideways, zones)


@dataclass(frozen=True)
class PhaseState:
    """Indication of every movement at one instant."""

    id: str
    indications: Mapping
    timestamp: float = 0.0

    def go_movements(self) -> set:
        return {m for m, ind in self.indications.items() if ind in GO}

    def indication(self, mid: str) -> str:
        try:
            return self.indications[mid]
        except KeyError:
            raise SignalError(f"unknown movement id {mid!r}") from None

    def at(self, t: float) -> "PhaseState":
        return PhaseState(self.id, self.indications, t)


def validate_phase(state: PhaseState, matrix: ConflictMatrix) -> list[tuple]:
    """Pairs of conflicting movements that are both allowed to go."""
    for mid, ind in state.indications.items():
        mv = matrix.movements.get(mid)
        if mid not in matrix.ids:
            raise SignalError(f"unknown movement id {mid!r}")
        allowed = PED_INDICATIONS if mv is not None and mv.mode == "pedestrian" else VEHICLE_INDICATIONS
        if ind not in allowed:
            raise SignalError(f"{mid}: indication {ind!r} not valid for this mode")
    missing = set(matrix.ids) - set(state.indications)
    if missing:
        raise SignalError(f"state {state.id} misses movements {sorted(missing)}")
    go = sorted(state.go_movements())
    return [(a, b) for a, b in combinations(go, 2) if matrix.protected_conflict(a, b)]


def state_from_phases(state_id: str, matrix: ConflictMatrix, greens: Iterable[str],
                      walks: Iterable[str] = (), yellows: Iterable[str] = (),
                      timestamp: float = 0.0) -> PhaseState:
    """Expand phase-level greens into per-movement indications.

    Left turns run protected on their own phase and permissive while their
    approach's through phase is green. Right turns show the through head.
    """
    greens, walks, yellows = set(greens), set(walks), set(yellows)
    through_phase = {}
    for mv in matrix.movements.values():
        if mv.turn == "through" and mv.mode != "pedestrian" and mv.phase:
            through_phase[mv.approach] = mv.phase

    def head(phase: Optional[str]) -> str:
        if phase in yellows:
            return "yellow"
        return "green" if phase in greens else "red"

    ind = {}
    for mid in matrix.ids:
        mv = matrix.movements[mid]
        if mv.mode == "pedestrian":
            ind[mid] = "walk" if mv.phase in walks else "dont_walk"
            continue
        thr = head(through_phase.get(mv.approach))
        if mv.turn == "right":
            ind[mid] = thr
        elif mv.turn == "left":
            own = head(mv.phase)
            ind[mid] = "green" if "green" in (own, thr) else ("yellow" if "yellow" in (own, thr) else "red")
        else:
            ind[mid] = head(mv.phase)
    return PhaseState(state_id, ind, timestamp)


# name, green phases, walking crosswalk phases
STANDARD_CYCLE = (
    ("NB_LEAD", ("phi1", "phi6"), ("P6",)),
    ("NS_THRU", ("phi2", "phi6"), ("P2", "P6")),
    ("SB_LAG", ("phi2", "phi5"), ("P2",)),
    ("EW_LPI", (), ("P4", "P8")),
    ("EW_THRU", ("phi4", "phi8"), ("P4", "P8")),
    ("EB_LAG", ("phi3", "phi8"), ("P8",)),
    ("NS_LEFTS", ("phi1", "phi5"), ()),
    ("NS_LPI", (), ("P2", "P6")),
)
STANDARD_DURATIONS = {"NB_LEAD": 8.0, "NS_THRU": 22.0, "SB_LAG": 8.0, "EW_LPI": 4.0,
                      "EW_THRU": 22.0, "EB_LAG": 8.0, "NS_LEFTS": 8.0, "NS_LPI": 4.0}


def phase_catalog(compiled_or_matrix, cycle=STANDARD_CYCLE) -> list[PhaseState]:
    """Legal full-signal states of the standard eight-state cycle."""
    matrix = compiled_or_matrix if isinstance(compiled_or_matrix, ConflictMatrix) \
        else compiled_or_matrix.matrix()
    return [state_from_phases(name, matrix, g, w) for name, g, w in cycle]


def enumerate_compatible_configs(observed: Mapping[str, str], matrix: ConflictMatrix,
                                 phase_catalog: Sequence[PhaseState]) -> list[PhaseState]:
    """Catalog states that agree with every observed indication."""
    for mid in observed:
        matrix.index(mid)
    return [s for s in phase_catalog
            if not validate_phase(s, matrix)
            and all(s.indications.get(m) == ind for m, ind in observed.items())]


@dataclass(frozen=True)
class PhaseRecord:
    phase_id: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


class PhaseLog:
    """Append-only, time-ordered record of served phases."""

    def __init__(self, records: Iterable[PhaseRecord] = ()):
        self._records: list[PhaseRecord] = []
        for r in records:
            self.append(r)

    def append(self, rec: PhaseRecord) -> None:
        if rec.end <= rec.start:
            raise SignalError(f"phase {rec.phase_id}: duration must be positive")
        if self._records and rec.start < self._records[-1].end - 1e-9:
            raise SignalError(f"phase {rec.phase_id} at {rec.start} overlaps previous record")
        self._records.append(rec)

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def __len__(self):
        return len(self._records)

    def durations(self, phase_id: str) -> list[float]:
        return [r.duration for r in self._records if r.phase_id == phase_id]

    def successors(self, phase_id: str) -> list[str]:
        rs = self._records
        return [rs[i + 1].phase_id for i in range(len(rs) - 1) if rs[i].phase_id == phase_id]

    def dumps(self) -> str:
        return "".join(f"{r.phase_id} {r.start:.3f} {r.end:.3f}\n" for r in self._records)

    @classmethod
    def loads(cls, text: str) -> "PhaseLog":
        log = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise SignalError(f"phase log line {n}: expected 'phase_id start end'")
            try:
                log.append(PhaseRecord(parts[0], float(parts[1]), float(parts[2])))
            except ValueError as e:
                raise SignalError(f"phase log line {n}: {e}") from None
        return log


@dataclass(frozen=True)
class FixedTimePlan:
    """Deterministic cycle of catalog states; the last `yellow` seconds of each
    state show yellow on movements that lose the right of way next."""

    states: tuple
    durations: tuple
    yellow: float = 4.0
    offset: float = 0.0

    @property
    def cycle(self) -> float:
        return float(sum(self.durations))

    def duration(self, phase_id: str) -> float:
        for s, d in zip(self.states, self.durations):
            if s.id == phase_id:
                return d
        raise SignalError(f"phase {phase_id!r} not in plan")

    def next_phase(self, phase_id: str) -> str:
        ids = [s.id for s in self.states]
        return ids[(ids.index(phase_id) + 1) % len(ids)]

    def locate(self, t: float) -> tuple[int, float]:
        """Index of the active state and time elapsed in it."""
        u = (t - self.offset) % self.cycle
        acc = 0.0
        for i, d in enumerate(self.durations):
            if u < acc + d - 1e-12:
                return i, u - acc
            acc += d
        return len(self.durations) - 1, self.durations[-1]

    def state_at(self, t: float) -> PhaseState:
        i, el = self.locate(t)
        cur, nxt = self.states[i], self.states[(i + 1) % len(self.states)]
        rem = self.durations[i] - el
        if rem > self.yellow + 1e-12:
            return cur.at(t)
        ind = dict(cur.indications)
        for m, v in cur.indications.items():
            if v == "green" and nxt.indications[m] != "green":
                ind[m] = "yellow"
            elif v == "walk" and nxt.indications[m] != "walk":
                ind[m] = "dont_walk"
        return PhaseState(cur.id, ind, t)

    def go_remaining(self, t: float, movement_id: str, horizon: float = 600.0) -> float:
        """Seconds until the movement next shows red / dont_walk (0 if it does now)."""
        tt = t
        while tt - t < horizon:
            if self.state_at(tt).indications[movement_id] not in GO:
                return tt - t
            tt = self._next_change(tt)
        return math.inf

    def _next_change(self, t: float) -> float:
        i, el = self.locate(t)
        rem = self.durations[i] - el
        if rem > self.yellow + 1e-9:
            return t + rem - self.yellow + 1e-9
        return t + rem + 1e-9

    def log(self, until: float) -> PhaseLog:
        out, t, i = PhaseLog(), self.offset, 0
        while t + self.durations[i] <= until + 1e-9:
            out.append(PhaseRecord(self.states[i].id, t, t + self.durations[i]))
            t += self.durations[i]
            i = (i + 1) % len(self.states)
        return out


def standard_plan(compiled_or_matrix, durations=None, yellow: float = 4.0,
                  offset: float = 0.0) -> FixedTimePlan:
    states = phase_catalog(compiled_or_matrix)
    d = dict(STANDARD_DURATIONS, **(durations or {}))
    return FixedTimePlan(tuple(states), tuple(d[s.id] for s in states), yellow, offset)


@dataclass(frozen=True)
class SpatEstimate:
    current_phase_id: str
    elapsed: float
    expected_remaining: float
    quantile_remaining: Mapping
    next_phase_id: Optional[str]


def spat_estimate(log: Optional[PhaseLog], current_phase_id: str, elapsed: float,
                  plan: Optional[FixedTimePlan] = None) -> SpatEstimate:
    """Remaining duration of the current phase.

    With a fixed-time plan the answer is exact. Otherwise it comes from the
    logged durations of the same phase that outlasted `elapsed`.
    """
    if plan is not None and any(s.id == current_phase_id for s in plan.states):
        rem = max(plan.duration(current_phase_id) - elapsed, 0.0)
        return SpatEstimate(current_phase_id, elapsed, rem, {q: rem for q in QUANTILES},
                            plan.next_phase(current_phase_id))
    if log is None:
        raise EstimateUnavailable("no phase history and no plan")
    d = np.array([x for x in log.durations(current_phase_id) if x > elapsed])
    if d.size == 0:
        raise EstimateUnavailable(
            f"no logged {current_phase_id} lasting longer than {elapsed:.3f} s")
    rem = d - elapsed
    quant = {q: float(np.quantile(rem, q)) for q in QUANTILES}
    succ = Counter(log.successors(current_phase_id))
    nxt = min(succ, key=lambda p: (-succ[p], p)) if succ else None
    return SpatEstimate(current_phase_id, elapsed, float(rem.mean()), quant, nxt)
