"""Walk the conflict resolver through a right turn from the south, stage by stage.

The ego waits at the stop bar behind a car in the through lane. For each stage
the script prints which of the seven conflict zones (CZ1-CZ7) are still open.

    python3 demos/right_turn_walkthrough.py
"""

from crossguard.fixtures import (
    RIGHT_FROM_SOUTH,
    RTOR_CONFIGURATIONS,
    RTOR_OBSERVATION,
    fourleg_basic,
    occluded_view,
)
from crossguard.resolve import (
    EgoContext,
    IcaReport,
    ego_blind_zones,
    step3_part1,
    step3_part2,
    step3_part3,
    step4_ica,
)
from crossguard.signal import enumerate_compatible_configs, phase_catalog


def open_zones(statuses, label):
    return sorted(label[s.zone.id] for s in statuses if s.unresolved) or ["none"]


def main():
    c = fourleg_basic()
    ego = c.guideway(RIGHT_FROM_SOUTH)
    labelled = c.labelled_zones(ego)
    label = {z.id: name for name, z in labelled}
    zones = [z for _, z in labelled]
    matrix = c.matrix()
    catalog = {s.id: s for s in phase_catalog(matrix)}
    vp, obstacles, _ = occluded_view()

    print(f"ego {ego.id}")
    for name, z in labelled:
        print(f"  {name}: {z.other(ego).id}  ({z.polygon.area:.0f} sq ft)")

    for own in ("red", "green"):
        ctx = EgoContext(ego, vp, own, c.taus[ego.id], (), tuple(obstacles))
        p1 = step3_part1(ego, own, matrix, zones)
        bzs = ego_blind_zones(ctx, zones)
        p2 = step3_part2(p1, ctx, bzs)
        print(f"\nown signal {own}")
        print(f"  after own signal: open {', '.join(open_zones(p1, label))}")
        print(f"  after sight:      open {', '.join(open_zones(p2, label))}")
        if own != "red":
            continue
        configs = enumerate_compatible_configs(RTOR_OBSERVATION, matrix, list(catalog.values()))
        print(f"  {len(configs)} signal states match what the ego sees: "
              f"{', '.join(s.id for s in configs)}")
        for roman, state_id in RTOR_CONFIGURATIONS.items():
            p3 = step3_part3(p2, RTOR_OBSERVATION, catalog[state_id], matrix)
            print(f"  SPaT says {state_id:<8} ({roman:>3}): open {', '.join(open_zones(p3, label))}")
        p3 = step3_part3(p2, RTOR_OBSERVATION, catalog["EW_THRU"], matrix)
        report = IcaReport({b.id: "clear" for b in bzs})
        decision, _ = step4_ica(p3, report, bzs)
        print(f"  with every blind zone reported clear: {decision.action}")


if __name__ == "__main__":
    main()
