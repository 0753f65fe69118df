"""Command-line entry point: ``crossguard <command> ...``.

Exit codes: 0 success, 1 invalid input (map, scenario, context or arguments),
2 anything that went wrong while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path
from typing import Optional

from shapely.geometry import Polygon

from . import i2v, scenarios, sim
from . import rank as rank_mod
from .fixtures import MAPS, fourleg_basic, tempe
from .geom import GeometryError, footprint
from .intersection import MapError, compile_map, dump_compiled, from_lane_list, load_map, parse_map
from .render import RenderOptions, render_svg
from .resolve import EgoContext, IcaReport, ResolveError, SeenAgent, ego_blind_zones, resolve
from .signal import (EstimateUnavailable, PhaseLog, SignalError, SpatEstimate, phase_catalog,
                     spat_estimate, standard_plan)

log = logging.getLogger("crossguard")

VALIDATION_ERRORS = (MapError, sim.ScenarioError, ResolveError, SignalError, GeometryError,
                     i2v.WireError, json.JSONDecodeError, FileNotFoundError, KeyError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    raw = os.environ.get("CROSSGUARD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CROSSGUARD_SEED must be an integer, got {raw!r}") from None


def load_compiled(ref: str):
    """A built-in fixture name or a map file path."""
    if ref == "fourleg-basic":
        return fourleg_basic()
    if ref == "tempe":
        return tempe()
    p = Path(ref)
    if not p.exists():
        raise FileNotFoundError(f"no map file {ref!r} (built-in maps: {', '.join(MAPS)})")
    return compile_map(load_map(p))


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _obstacle(d: dict) -> Polygon:
    if "polygon" in d:
        return Polygon(d["polygon"])
    return footprint(d["center"], d.get("heading", (0.0, 1.0)), float(d.get("length", 15.0)),
                     float(d.get("width", 6.0)))


# ---------------------------------------------------------------- commands

def cmd_compile(args) -> int:
    if args.lane_list:
        doc = json.loads(Path(args.map).read_text(encoding="utf-8"))
        c = compile_map(parse_map(from_lane_list(doc)))
    else:
        c = load_compiled(args.map)
    _write(dump_compiled(c), args.output)
    if args.output:
        print(f"{c.id}: {len(c.guideways)} guideways, {len(c.zones)} conflict zones, "
              f"{len(c.blind_zones)} blind zones -> {args.output}")
    return 0


def cmd_render(args) -> int:
    c = load_compiled(args.map)
    obstacles = []
    for text in args.obstacle or []:
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 6:
            raise UsageError("--obstacle takes x,y,hx,hy,length,width")
        obstacles.append(footprint(vals[0:2], vals[2:4], vals[4], vals[5]))
    vp = None
    if args.viewpoint:
        vp = tuple(float(v) for v in args.viewpoint.split(","))
        if len(vp) != 2:
            raise UsageError("--viewpoint takes x,y")
    if args.movement:
        c.guideway(args.movement)
    svg = render_svg(c, RenderOptions(movement=args.movement, viewpoint=vp, obstacles=obstacles,
                                      show_blind_zones=not args.no_blind_zones))
    _write(svg, args.output)
    return 0


def _load_scenario(args):
    if args.scenario in scenarios.LIBRARY:
        kw = {}
        if args.honda_speed is not None:
            if args.scenario != "tempe_crash":
                raise UsageError("--honda-speed only applies to tempe_crash")
            kw["honda_speed"] = args.honda_speed
        sc = scenarios.build(args.scenario, args.i2v == "on", **kw)
    else:
        p = Path(args.scenario)
        if not p.exists():
            raise FileNotFoundError(f"{args.scenario!r} is neither a library scenario "
                                    f"({', '.join(scenarios.LIBRARY)}) nor a file")
        sc = scenarios.load_scenario(p)
        if args.i2v is not None:
            sc.i2v_enabled = args.i2v == "on"
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_simulate(args) -> int:
    sc = _load_scenario(args)
    trace, metrics = sim.run(sc)
    if args.trace:
        Path(args.trace).write_text(trace.dumps(), encoding="utf-8")
    summary = metrics.summary()
    if args.json:
        print(json.dumps({"scenario": sc.name, "i2v": sc.i2v_enabled, **summary}, sort_keys=True))
    else:
        print(f"scenario: {sc.name}  i2v: {'on' if sc.i2v_enabled else 'off'}")
        print(f"collisions: {metrics.collision_count}")
        for c in metrics.collisions:
            print(f"  {c['a']} x {c['b']} at t={c['t']} s ({c['x']}, {c['y']})")
        for w in metrics.warnings:
            print(f"violator warning: {w['track']} at t={w['t']} s, lead {w['lead_time']} s")
        ttc = summary["min_ttc"]
        print(f"min TTC: {'n/a' if ttc is None else f'{ttc} s'}")
    return 0


def _resolve_context(d: dict):
    c = load_compiled(d["map"])
    ego = c.guideway(d["ego"])
    matrix = c.matrix()
    catalog = {s.id: s for s in phase_catalog(matrix)}
    spat = None
    if "spat" in d:
        sp = d["spat"]
        if "phase" in sp:
            if sp["phase"] not in catalog:
                raise ResolveError(f"unknown phase {sp['phase']!r}")
            spat = catalog[sp["phase"]]
        else:
            from .signal import PhaseState
            spat = PhaseState(sp.get("id", "custom"), dict(sp["indications"]))
    own = d.get("own") or (spat.indication(ego.id) if spat is not None else None)
    if own is None:
        raise ResolveError("context needs 'own' or a 'spat' state")
    obstacles = tuple(_obstacle(o) for o in d.get("obstacles", []))
    seen = tuple(SeenAgent(a["id"], tuple(c.guideway(a["guideway"]).centerline.point_at(a["s"])),
                           a["guideway"], float(a["s"])) for a in d.get("agents", []))
    tau = float(d.get("tau", c.taus.get(ego.id) or 1.0))
    ctx = EgoContext(ego, tuple(d["viewpoint"]), own, tau, seen, obstacles)
    labelled = c.labelled_zones(ego)
    zones = [z for _, z in labelled]
    ica = None
    if "ica" in d:
        bzs = ego_blind_zones(ctx, zones, c.profile["v_max"])
        default = d["ica"].get("default", "unknown")
        given = d["ica"].get("statuses", {})
        ica = IcaReport({b.id: given.get(b.id, default) for b in bzs})
    est = None
    if "remaining" in d:
        r = float(d["remaining"])
        est = SpatEstimate(spat.id if spat else "?", 0.0, r, {0.1: r, 0.5: r, 0.9: r}, None)
    return c, ctx, zones, matrix, spat, ica, est, d.get("observed")


def cmd_resolve(args) -> int:
    d = json.loads(Path(args.context).read_text(encoding="utf-8"))
    c, ctx, zones, matrix, spat, ica, est, observed = _resolve_context(d)
    decision, statuses = resolve(ctx, zones, matrix, spat=spat, ica=ica, estimate=est,
                                 observed=observed, v_max=c.profile["v_max"])
    label = {z.id: lab for lab, z in c.labelled_zones(ctx.guideway)}
    out = {"action": decision.action, "cause": decision.cause,
           "unresolved": [label[z.id] for z in decision.unresolved],
           "zones": [{"label": label[s.zone.id], "zone": s.zone.id, "threat": s.threat.id,
                      "status": s.status, "reason": s.reason} for s in statuses]}
    print(json.dumps(out, indent=1))
    return 0


def _log_replay(c, log: PhaseLog):
    """SPaT provider that replays a phase log in a loop, estimating from its durations."""
    recs = log.records
    if not recs:
        raise UsageError("phase log is empty")
    catalog = {s.id: s for s in phase_catalog(c.matrix())}
    for r in recs:
        if r.phase_id not in catalog:
            raise SignalError(f"phase log names unknown phase {r.phase_id!r}")
    t0, span = recs[0].start, recs[-1].end - recs[0].start

    def provider(t):
        u = t0 + (t % span)
        rec = next((r for r in recs if r.start <= u < r.end), recs[-1])
        el = u - rec.start
        try:
            est = spat_estimate(log, rec.phase_id, el)
        except EstimateUnavailable:
            est = SpatEstimate(rec.phase_id, el, 0.0, {0.1: 0.0, 0.5: 0.0, 0.9: 0.0}, None)
        return catalog[rec.phase_id].at(t), est
    return provider


def cmd_broadcast(args) -> int:
    ref = args.map_opt or args.map
    if not ref:
        raise UsageError("broadcast needs a map (positional or --map)")
    c = load_compiled(ref)
    if args.phase_log and args.scenario:
        raise UsageError("--phase-log and --scenario are exclusive")
    if args.scenario:
        sc = scenarios.build(args.scenario, True)
        if sc.compiled.id != c.id:
            raise UsageError(f"scenario {args.scenario} runs on map {sc.compiled.id}, not {c.id}")
        world = sim.World(sc)
        plan = sc.plan
        occupancy = lambda t: world.sensors.readout(world.agents.values(), world.footprints)  # noqa: E731
    else:
        world = None
        plan = standard_plan(c)
        occupancy = None

    log_provider = None
    if args.phase_log:
        log_provider = _log_replay(c, PhaseLog.loads(Path(args.phase_log).read_text(encoding="utf-8")))

    def spat_provider(t):
        if log_provider is not None:
            return log_provider(t)
        if world is not None:
            while world.t + 1e-9 < t and world.agents:
                sim.step(world)
        idx, el = plan.locate(t)
        st = plan.state_at(t)
        return st, spat_estimate(None, st.id, el, plan)

    map_msg = i2v.encode(i2v.MapMessage.from_compiled(c))
    ms = int(round(args.duration * 1000))
    if args.simulated:
        counts = {"SPAT": 0, "ICA": 0}
        size = {"SPAT": 0, "ICA": 0}

        def sink(dg: bytes):
            kind = dg.split(b" ", 2)[1].decode()
            counts[kind] += 1
            size[kind] += len(dg)

        b = i2v.Broadcaster(c.id, spat_provider, occupancy, sink, tick_ms=args.tick_ms,
                            clock=i2v.SimClock(0))
        ticks = b.run_simulated(ms)
        print(f"simulated {ticks} ticks over {args.duration:g} s")
        print(f"MAP: 1 message, {len(map_msg)} bytes (in-process only)")
        for k in ("SPAT", "ICA"):
            print(f"{k}: {counts[k]} messages, {size[k]} bytes")
        return 0
    sink = i2v.UdpSink(args.host, args.port)
    start = i2v.wall_clock_ms()
    b = i2v.Broadcaster(c.id, spat_provider, occupancy, sink, tick_ms=args.tick_ms,
                        clock=lambda: i2v.wall_clock_ms() - start)
    stop = threading.Event()
    timer = threading.Timer(args.duration, stop.set)
    timer.start()
    try:
        ticks = b.run(stop)
    except KeyboardInterrupt:
        ticks = b.spat_seq
    finally:
        timer.cancel()
        sink.close()
    print(f"sent {b.spat_seq} SPaT and {b.ica_seq} ICA datagrams to {args.host}:{args.port} "
          f"in {ticks} ticks")
    return 0


def _rank_entries(path: Path):
    spec = json.loads(path.read_text(encoding="utf-8"))
    entries = []
    for e in spec.get("intersections", []):
        c = load_compiled(str(path.parent / e["map"]) if e["map"] not in MAPS else e["map"])
        if "uniform" in e:
            demand = rank_mod.uniform_demand(c, float(e["uniform"]), e.get("approaches"))
        else:
            demand = rank_mod.DemandProfile(dict(e.get("demand", {})), e["id"])
        for g in demand.rates:
            c.guideway(g)
        entries.append((e["id"], c, demand))
    if not entries:
        raise UsageError(f"{path}: no intersections listed")
    return entries


def cmd_rank(args) -> int:
    if not args.duration > 0:
        raise UsageError("--duration must be positive")
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    entries = _rank_entries(Path(args.spec))
    seed = default_seed() if args.seed is None else args.seed
    result = rank_mod.rank(entries, runs=args.runs, seed=seed, duration=args.duration)
    if args.json:
        print(json.dumps([e.__dict__ for e in result], indent=1))
    else:
        print(f"{'rank':>4}  {'intersection':<20} {'frequency':>9}  {'stderr':>7}  epochs")
        for i, e in enumerate(result, 1):
            print(f"{i:>4}  {e.map_id:<20} {e.frequency:9.4f}  {e.stderr:7.4f}  {e.epochs}")
    return 0


def cmd_scenarios(args) -> int:
    for name, f in scenarios.LIBRARY.items():
        doc = (f.__doc__ or "").strip().splitlines()[0] if f.__doc__ else ""
        print(f"{name:<24} {doc}" if args.verbose else name)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crossguard", description="Conflict and blind-zone analysis for "
                "signalised intersections, with a scenario simulator and I2V messages.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("compile", help="compile a map into guideways, zones and blind zones")
    s.add_argument("map", help="map file or built-in name (fourleg-basic, tempe)")
    s.add_argument("-o", "--output", help="write the compiled artifact here instead of stdout")
    s.add_argument("--lane-list", action="store_true",
                   help="input is a minimal OSM-like lane list (best-effort conversion)")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("render", help="draw a map as SVG")
    s.add_argument("map", help="map file or built-in name")
    s.add_argument("-o", "--output", help="SVG file (default stdout)")
    s.add_argument("--movement", help="guideway id whose conflict zones get their own layer")
    s.add_argument("--viewpoint", help="x,y of an observer; adds a shadow layer")
    s.add_argument("--obstacle", action="append",
                   help="x,y,hx,hy,length,width of a vehicle-sized obstacle (repeatable)")
    s.add_argument("--no-blind-zones", action="store_true", help="omit the blind-zone layer")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("simulate", help="run a library scenario or a scenario file")
    s.add_argument("scenario", help="library name (see 'scenarios list') or scenario file")
    s.add_argument("--i2v", choices=("on", "off"), default=None,
                   help="connected variant (library default: off)")
    s.add_argument("--honda-speed", type=float, help="tempe_crash only: left-turn speed, ft/s")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--trace", help="write the JSON-lines trace here")
    s.add_argument("--json", action="store_true", help="print metrics as JSON")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("resolve", help="one-shot decision for an ego described in a JSON file")
    s.add_argument("context", help="context file (see docs/scenario.md)")
    s.set_defaults(func=cmd_resolve)

    s = sub.add_parser("broadcast", help="broadcast SPaT (and ICA) messages")
    s.add_argument("map", nargs="?", help="map file or built-in name")
    s.add_argument("--map", dest="map_opt", help="same as the positional map argument")
    s.add_argument("--scenario", help="library scenario supplying plan and sensors")
    s.add_argument("--phase-log", help="replay this phase log (lines 'phase_id start end')")
    s.add_argument("--tick-ms", type=int, default=i2v.TICK_MS, help="broadcast period, ms")
    s.add_argument("--duration", type=float, default=10.0, help="seconds to broadcast")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=i2v.DEFAULT_PORT)
    s.add_argument("--simulated", action="store_true",
                   help="drive a simulated clock and count messages instead of sending")
    s.set_defaults(func=cmd_broadcast)

    s = sub.add_parser("rank", help="rank intersections by hidden-and-occupied blind-zone frequency")
    s.add_argument("spec", help="JSON file listing intersections and demand")
    s.add_argument("--runs", type=int, default=8)
    s.add_argument("--duration", type=float, default=120.0, help="simulated seconds per run")
    s.add_argument("--seed", type=int, help="base seed (default: CROSSGUARD_SEED or 0)")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("scenarios", help="scenario library")
    ssub = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sl = ssub.add_parser("list", help="list library scenario names")
    sl.add_argument("--verbose", action="store_true", help="include one-line descriptions")
    sl.set_defaults(func=cmd_scenarios)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", "absent") is None and args.command == "simulate":
            env = os.environ.get("CROSSGUARD_SEED")
            args.seed = default_seed() if env is not None else None
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. `head`) went away; stay quiet like other filters
        sys.stdout = open(os.devnull, "w")
        return 0
    except UsageError as e:
        print(f"crossguard: {e}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"crossguard: invalid input: {msg}", file=sys.stderr)
        return 1
    except Exception as e:                          # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"crossguard: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
