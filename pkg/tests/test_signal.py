"""Conflict matrix, phase validation, SPaT estimation and configuration enumeration."""

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossguard.fixtures import RIGHT_FROM_SOUTH, RTOR_CONFIGURATIONS, RTOR_OBSERVATION
from crossguard.signal import (
    EstimateUnavailable,
    FixedTimePlan,
    PhaseLog,
    PhaseRecord,
    PhaseState,
    SignalError,
    conflict_matrix_from_geometry,
    enumerate_compatible_configs,
    phase_catalog,
    spat_estimate,
    standard_plan,
    validate_phase,
)

N_THROUGH = "N.in.through>S.out.veh"
S_THROUGH = "S.in.through>N.out.veh"
W_THROUGH = "W.in.through>E.out.veh"


@pytest.fixture(scope="module")
def matrix(fourleg):
    return fourleg.matrix()


@pytest.fixture(scope="module")
def catalog(matrix):
    return {s.id: s for s in phase_catalog(matrix)}


# ---------------------------------------------------------------- conflict matrix

def test_opposing_throughs_are_compatible(matrix):
    assert not matrix.conflicts(N_THROUGH, S_THROUGH)


def test_right_from_south_conflicts_with_through_from_west(matrix):
    assert matrix.conflicts(RIGHT_FROM_SOUTH, W_THROUGH)


def test_matrix_is_symmetric_with_a_false_diagonal(matrix):
    assert np.array_equal(matrix.conflict, matrix.conflict.T)
    assert not matrix.conflict.diagonal().any()


def test_matrix_matches_compiled_zones(fourleg, matrix):
    pairs = {frozenset((z.guideway_a.id, z.guideway_b.id)) for z in fourleg.zones}
    for i, a in enumerate(matrix.ids):
        for j, b in enumerate(matrix.ids):
            if i != j:
                assert matrix.conflict[i, j] == (frozenset((a, b)) in pairs)


def test_matrix_is_invariant_under_guideway_permutation(fourleg):
    subset = [g for g in fourleg.guideways if g.id.startswith(("S.", "W."))]
    base = conflict_matrix_from_geometry(subset)
    shuffled = list(subset)
    random.Random(4).shuffle(shuffled)
    other = conflict_matrix_from_geometry(shuffled)
    assert base.ids == other.ids
    assert np.array_equal(base.conflict, other.conflict)
    assert np.array_equal(base.permissive, other.permissive)


def test_duplicate_guideways_are_rejected(fourleg):
    g = fourleg.guideways[0]
    with pytest.raises(SignalError):
        conflict_matrix_from_geometry([g, g])


# ---------------------------------------------------------------- phase states

def _all(matrix, vehicle="red", ped="dont_walk"):
    return {m: ped if matrix.movements[m].mode == "pedestrian" else vehicle for m in matrix.ids}


def test_all_red_state_has_no_violations(matrix):
    assert validate_phase(PhaseState("all_red", _all(matrix)), matrix) == []


def test_configuration_iv_is_valid(matrix, catalog):
    iv = catalog[RTOR_CONFIGURATIONS["IV"]]
    assert validate_phase(iv, matrix) == []
    assert iv.indication(RIGHT_FROM_SOUTH) == "red"


def test_injected_conflicting_green_is_reported(matrix, catalog):
    ind = dict(catalog["EW_THRU"].indications)
    ind[N_THROUGH] = "green"
    bad = validate_phase(PhaseState("bad", ind), matrix)
    assert (N_THROUGH, W_THROUGH) in bad


def test_unknown_movement_and_wrong_indication_kind_raise(matrix, catalog):
    ind = dict(catalog["EW_THRU"].indications)
    with pytest.raises(SignalError):
        validate_phase(PhaseState("x", dict(ind, nowhere="red")), matrix)
    with pytest.raises(SignalError):
        validate_phase(PhaseState("x", dict(ind, **{"S.crosswalk": "green"})), matrix)
    ind.pop(N_THROUGH)
    with pytest.raises(SignalError):
        validate_phase(PhaseState("x", ind), matrix)


def test_pedestrian_phases_follow_their_vehicle_phase(matrix, catalog):
    ped_of = {"P2": "phi2", "P4": "phi4", "P6": "phi6", "P8": "phi8"}
    thr = {mv.phase: m for m, mv in matrix.movements.items()
           if mv.turn == "through" and mv.mode == "vehicle"}
    for s in catalog.values():
        for m, mv in matrix.movements.items():
            if mv.mode == "pedestrian" and s.indication(thr[ped_of[mv.phase]]) == "green":
                assert s.indication(m) == "walk", (s.id, m)


def test_catalog_matches_right_turn_constraints(catalog):
    for s in catalog.values():
        if s.indication(RIGHT_FROM_SOUTH) == "green":
            assert s.indication("E.crosswalk") == "walk"
            assert s.indication(W_THROUGH) == "red"
            assert s.indication("S.crosswalk") == "dont_walk"


def test_every_catalog_state_is_valid(matrix, catalog):
    assert len(catalog) == 8
    for s in catalog.values():
        assert validate_phase(s, matrix) == []


def test_fixed_plan_stays_safe_for_10000_ticks(fourleg, matrix):
    plan = standard_plan(fourleg)
    bad = [t for t in range(10_000) if validate_phase(plan.state_at(t * 0.1), matrix)]
    assert bad == []


# ---------------------------------------------------------------- SPaT estimation

def _plan(catalog, d=(30.0, 20.0)):
    return FixedTimePlan((catalog["NS_THRU"], catalog["EW_THRU"]), d)


def test_fixed_plan_remainder_is_exact(catalog):
    est = spat_estimate(None, "NS_THRU", 12.0, plan=_plan(catalog))
    assert est.expected_remaining == 18.0
    assert set(est.quantile_remaining.values()) == {18.0}
    assert est.next_phase_id == "EW_THRU"


@given(st.floats(0, 30))
def test_fixed_plan_remainder_is_exact_for_any_elapsed(catalog, elapsed):
    assert spat_estimate(None, "NS_THRU", elapsed, plan=_plan(catalog)).expected_remaining \
        == 30.0 - elapsed


def _log(durations, phase="A", other="B"):
    log, t = PhaseLog(), 0.0
    for d in durations:
        log.append(PhaseRecord(phase, t, t + d))
        log.append(PhaseRecord(other, t + d, t + d + 5))
        t += d + 5
    return log


def test_conditional_mean_of_20_30_40_at_25_is_10():
    est = spat_estimate(_log([20, 30, 40]), "A", 25.0)
    assert est.expected_remaining == pytest.approx(10.0, abs=1e-9)
    assert est.next_phase_id == "B"


@settings(max_examples=100)
@given(st.lists(st.floats(1, 120), min_size=1, max_size=20), st.floats(0, 100))
def test_conditional_mean_matches_brute_force(durations, elapsed):
    log = _log(durations)
    kept = [r.end - r.start - elapsed for r in log.records
            if r.phase_id == "A" and r.end - r.start > elapsed]
    if not kept:
        with pytest.raises(EstimateUnavailable):
            spat_estimate(log, "A", elapsed)
        return
    est = spat_estimate(log, "A", elapsed)
    assert est.expected_remaining == pytest.approx(sum(kept) / len(kept), abs=1e-9)
    q = est.quantile_remaining
    assert 0 <= q[0.1] <= q[0.5] <= q[0.9]


def test_elapsed_past_every_logged_duration_is_unavailable():
    with pytest.raises(EstimateUnavailable):
        spat_estimate(_log([20, 30, 40]), "A", 45.0)
    with pytest.raises(EstimateUnavailable):
        spat_estimate(None, "A", 1.0)


def test_successor_ties_go_to_the_smallest_id():
    log = PhaseLog([PhaseRecord("A", 0, 10), PhaseRecord("C", 10, 15),
                    PhaseRecord("A", 15, 25), PhaseRecord("B", 25, 30)])
    assert spat_estimate(log, "A", 1.0).next_phase_id == "B"


def test_phase_log_round_trips_and_rejects_overlap():
    log = _log([20, 30])
    assert PhaseLog.loads(log.dumps()).records == log.records
    with pytest.raises(SignalError):
        PhaseLog([PhaseRecord("A", 0, 10), PhaseRecord("B", 5, 12)])
    with pytest.raises(SignalError):
        PhaseLog([PhaseRecord("A", 3, 3)])
    with pytest.raises(SignalError):
        PhaseLog.loads("A 0 1 extra\n")


# ---------------------------------------------------------------- configuration enumeration

def test_rtor_observation_gives_configurations_i_to_iv(matrix, catalog):
    got = enumerate_compatible_configs(RTOR_OBSERVATION, matrix, list(catalog.values()))
    assert {s.id for s in got} == set(RTOR_CONFIGURATIONS.values())


def test_full_observation_gives_a_singleton(matrix, catalog):
    s = catalog["NB_LEAD"]
    got = enumerate_compatible_configs(dict(s.indications), matrix, list(catalog.values()))
    assert [g.id for g in got] == ["NB_LEAD"]


def test_impossible_observation_gives_nothing(matrix, catalog):
    obs = {N_THROUGH: "green", W_THROUGH: "green"}
    assert enumerate_compatible_configs(obs, matrix, list(catalog.values())) == []


def test_unknown_observed_movement_raises(matrix, catalog):
    with pytest.raises(SignalError):
        enumerate_compatible_configs({"nowhere": "red"}, matrix, list(catalog.values()))


@settings(max_examples=50)
@given(st.data())
def test_adding_observations_shrinks_the_set(matrix, catalog, data):
    truth = data.draw(st.sampled_from(sorted(catalog)))
    ids = data.draw(st.lists(st.sampled_from(matrix.ids), max_size=8, unique=True))
    states = list(catalog.values())
    obs, prev = {}, {s.id for s in states}
    for m in ids:
        obs[m] = catalog[truth].indications[m]
        cur = {s.id for s in enumerate_compatible_configs(obs, matrix, states)}
        assert cur <= prev and truth in cur
        prev = cur
