"""crossguard: guideways, conflict zones and blind zones for signalised
intersections, a four-step conflict resolver, I2V messages and a scenario
simulator that replays crashes with and without infrastructure support."""

from .geom import (
    SIGHT_THRESHOLD,
    BlindZone,
    ConflictZone,
    Guideway,
    blind_zone,
    conflict_zones,
    shadow_region,
    visible_fraction,
)
from .intersection import CompiledIntersection, MapError, compile_map, load_map, parse_map
from .resolve import Decision, EgoContext, resolve, stopping_distance, violator_alert
from .scenarios import scenario_library
from .sim import Scenario, run

__version__ = "0.1.0"

__all__ = [
    "SIGHT_THRESHOLD", "BlindZone", "ConflictZone", "Guideway", "blind_zone", "conflict_zones",
    "shadow_region", "visible_fraction", "CompiledIntersection", "MapError", "compile_map",
    "load_map", "parse_map", "Decision", "EgoContext", "resolve", "stopping_distance",
    "violator_alert", "scenario_library", "Scenario", "run",
]
