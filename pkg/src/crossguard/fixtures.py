"""Built-in intersection maps.

Dimensions are invented for desk-scale work and kept in one place here.
``fourleg-basic``: four legs, each with left/through/right 12-ft vehicle entry
lanes, a 5-ft bicycle lane between the through and right-turn lanes, one
outbound vehicle lane and one outbound bicycle lane, and a 10-ft crosswalk.
``tempe``: a north-south arterial with three southbound through lanes and a
northbound left-turn lane, modelled on the McClintock Dr / Don Carlos Ave crash.
"""

from __future__ import annotations

from functools import lru_cache

from .intersection import compile_map, lane_rotate, parse_map

STOP_BAR = 70.0       # distance of the stop bars / exit anchors from the centre
CROSSWALK = 57.0      # crosswalk centreline distance from the centre
CROSSWALK_HALF = 44.0
APPROACH = 240.0      # upstream straight kept on every entry guideway
EGRESS = 10.0

# lateral offsets from the road centreline, positive = right of inbound traffic
IN_LANES = (("left", "vehicle", 6.0, 12.0), ("through", "vehicle", 18.0, 12.0),
            ("bike", "bicycle", 26.5, 5.0), ("right", "vehicle", 35.0, 12.0))
OUT_LANES = (("veh", "vehicle", 18.0, 12.0), ("bike", "bicycle", 26.5, 5.0))
LEG_TURNS = {"S": 0, "E": 1, "N": 2, "W": 3}

# The right turn from the south and the movements it conflicts with, in CZ1..CZ7 order.
RIGHT_FROM_SOUTH = "S.in.right>E.out.veh"
RIGHT_FROM_SOUTH_THREATS = (
    "S.in.bike>E.out.bike",     # right-turn bicycle from the south
    "S.crosswalk",              # P8 pedestrians
    "W.in.through>E.out.veh",   # through vehicle from the west
    "W.in.bike>E.out.bike",     # through bicycle from the west
    "N.in.bike>E.out.bike",     # left-turn bicycle from the north
    "N.in.left>E.out.veh",      # left-turn vehicle from the north
    "E.crosswalk",              # P6 pedestrians
)


def fourleg_basic_map() -> dict:
    lanes, xws = [], []
    for leg, q in LEG_TURNS.items():
        for name, mode, off, width in IN_LANES:
            turns = [name] if mode == "vehicle" else ["left", "through", "right"]
            lanes.append({
                "id": f"{leg}.in.{name}", "leg": leg, "direction": "in", "mode": mode,
                "center": lane_rotate((off, -STOP_BAR), q), "heading": lane_rotate((0, 1), q),
                "width": width, "length": APPROACH, "turns": turns})
        for name, mode, off, width in OUT_LANES:
            lanes.append({
                "id": f"{leg}.out.{name}", "leg": leg, "direction": "out", "mode": mode,
                "center": lane_rotate((-off, -STOP_BAR), q), "heading": lane_rotate((0, -1), q),
                "width": width, "length": EGRESS})
        xws.append({"id": f"{leg}.crosswalk", "leg": leg,
                    "start": lane_rotate((-CROSSWALK_HALF, -CROSSWALK), q),
                    "end": lane_rotate((CROSSWALK_HALF, -CROSSWALK), q), "width": 10.0})
    return {"schema": 1, "id": "fourleg-basic", "lanes": lanes, "crosswalks": xws,
            "zone_labels": {RIGHT_FROM_SOUTH: list(RIGHT_FROM_SOUTH_THREATS)}}


TEMPE_STOP = 60.0


def tempe_map() -> dict:
    """McClintock Dr (north-south) at Don Carlos Ave (east-west, west leg only used)."""
    s = TEMPE_STOP
    lanes = [
        # southbound lanes 1 (inner) .. 3 (outer), entering from the north
        {"id": "N.in.1", "leg": "N", "direction": "in", "mode": "vehicle",
         "center": [-6, s], "heading": [0, -1], "width": 12, "length": 1000, "turns": ["through"]},
        {"id": "N.in.2", "leg": "N", "direction": "in", "mode": "vehicle",
         "center": [-18, s], "heading": [0, -1], "width": 12, "length": 1000, "turns": ["through"]},
        {"id": "N.in.3", "leg": "N", "direction": "in", "mode": "vehicle",
         "center": [-30, s], "heading": [0, -1], "width": 12, "length": 1000, "turns": ["through"]},
        {"id": "S.out.1", "leg": "S", "direction": "out", "mode": "vehicle",
         "center": [-6, -s], "heading": [0, -1], "width": 12, "length": 100},
        {"id": "S.out.2", "leg": "S", "direction": "out", "mode": "vehicle",
         "center": [-18, -s], "heading": [0, -1], "width": 12, "length": 100},
        {"id": "S.out.3", "leg": "S", "direction": "out", "mode": "vehicle",
         "center": [-30, -s], "heading": [0, -1], "width": 12, "length": 100},
        # northbound left-turn lane and a through lane
        {"id": "S.in.left", "leg": "S", "direction": "in", "mode": "vehicle",
         "center": [6, -s], "heading": [0, 1], "width": 12, "length": 200, "turns": ["left"]},
        {"id": "S.in.1", "leg": "S", "direction": "in", "mode": "vehicle",
         "center": [18, -s], "heading": [0, 1], "width": 12, "length": 200, "turns": ["through"]},
        {"id": "N.out.1", "leg": "N", "direction": "out", "mode": "vehicle",
         "center": [18, s], "heading": [0, 1], "width": 12, "length": 100},
        # Don Carlos Ave westbound exit
        {"id": "W.out.1", "leg": "W", "direction": "out", "mode": "vehicle",
         "center": [-s - 20, 12], "heading": [-1, 0], "width": 12, "length": 100},
    ]
    for ln in lanes:
        if ln["direction"] == "in" and ln["leg"] == "N":
            ln["exits"] = {"through": "S.out." + ln["id"][-1]}
    xws = [{"id": "E.crosswalk", "leg": "E", "start": [44, -47], "end": [44, 47], "width": 10.0}]
    return {"schema": 1, "id": "tempe", "lanes": lanes, "crosswalks": xws}


@lru_cache(maxsize=None)
def fourleg_basic():
    return compile_map(parse_map(fourleg_basic_map()))


@lru_cache(maxsize=None)
def tempe():
    return compile_map(parse_map(tempe_map()))


MAPS = {"fourleg-basic": fourleg_basic_map, "tempe": tempe_map}


# Ego waiting at the right-turn stop bar from the south with a car "O" stopped
# beside it in the through lane. Users U1..U7 sit upstream of CZ1..CZ7, given as
# (threat guideway, distance upstream of the zone entry in ft).
OCCLUDED_VIEWPOINT = (35.0, -80.0)
OCCLUDER = ((18.0, -77.5), (0.0, 1.0), 15.0, 6.0)
OCCLUDED_USERS = {
    "U1": ("S.in.bike>E.out.bike", 20.0),
    "U2": ("S.crosswalk", 34.0),
    "U3": ("W.in.through>E.out.veh", 150.0),
    "U4": ("W.in.bike>E.out.bike", 100.0),
    "U5": ("N.in.bike>E.out.bike", 20.0),
    "U6": ("N.in.left>E.out.veh", 40.0),
    "U7": ("E.crosswalk", 5.0),
}


def occluded_view():
    """(viewpoint, [obstacle polygon], {user: (guideway id, arc position)}) on fourleg-basic."""
    from .geom import footprint

    c = fourleg_basic()
    ego = c.guideway(RIGHT_FROM_SOUTH)
    entry = {z.other(ego).id: z.interval_on(z.other(ego))[0] for z in c.zones_of(ego)}
    users = {u: (gid, entry[gid] - d) for u, (gid, d) in OCCLUDED_USERS.items()}
    return OCCLUDED_VIEWPOINT, [footprint(*OCCLUDER)], users


# What the right-turning ego can see for itself while its light is red: its own
# head, the left-turn head beside it and the pedestrian head across the exit leg.
RTOR_OBSERVATION = {RIGHT_FROM_SOUTH: "red", "S.in.left>W.out.veh": "red",
                    "E.crosswalk": "dont_walk"}
# Catalog states behind configurations I..IV compatible with that observation.
RTOR_CONFIGURATIONS = {"I": "EW_THRU", "II": "EB_LAG", "III": "EW_LPI", "IV": "SB_LAG"}
