"""The `crossguard` command line: exit codes, output and options."""

import copy
import json
import shutil
import subprocess

import pytest

from crossguard import cli, sim
from crossguard.fixtures import fourleg_basic_map
from crossguard.intersection import dump_compiled
from crossguard.scenarios import LIBRARY

SUBCOMMANDS = ["compile", "render", "simulate", "resolve", "broadcast", "rank", "scenarios"]

CONTEXT = {"map": "fourleg-basic", "ego": "S.in.right>E.out.veh", "viewpoint": [35, -80],
           "own": "red",
           "obstacles": [{"center": [18, -77.5], "heading": [0, 1], "length": 15, "width": 6}]}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_console_script_is_installed():
    exe = shutil.which("crossguard")
    assert exe is not None
    done = subprocess.run([exe, "scenarios", "list"],
                          capture_output=True, text=True, check=False)
    assert done.returncode == 0 and done.stdout.split() == list(LIBRARY)


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_every_subcommand_has_help(capsys, cmd):
    with pytest.raises(SystemExit) as e:
        cli.main([cmd, "--help"])
    assert e.value.code == 0
    assert "usage: crossguard " + cmd in capsys.readouterr().out


def test_unknown_command_and_missing_arguments_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["compile"])
    assert e.value.code == 1


def test_scenarios_list_names_all_seven(capsys):
    code, out, _ = run(capsys, "scenarios", "list")
    assert code == 0 and out.split() == list(LIBRARY) and len(LIBRARY) == 7
    code, out, _ = run(capsys, "scenarios", "list", "--verbose")
    assert code == 0 and len(out.strip().splitlines()) == 7


def test_compile_output_is_byte_identical(capsys, tmp_path, fourleg):
    code, first, _ = run(capsys, "compile", "fourleg-basic")
    assert code == 0
    assert first == dump_compiled(fourleg)
    path = write_json(tmp_path / "m.json", fourleg_basic_map())
    out = tmp_path / "c.json"
    code, msg, _ = run(capsys, "compile", path, "-o", str(out))
    assert code == 0 and msg.startswith("fourleg-basic: ") and msg.rstrip().endswith(str(out))
    assert out.read_text() == run(capsys, "compile", path)[1]


def test_map_with_missing_exit_lane_exits_1_and_names_it(capsys, tmp_path):
    doc = copy.deepcopy(fourleg_basic_map())
    doc["lanes"][0]["exits"] = {"left": "W.out.missing"}
    code, out, err = run(capsys, "compile", write_json(tmp_path / "m.json", doc))
    assert code == 1 and out == ""
    assert "W.out.missing" in err


def test_missing_map_file_exits_1(capsys):
    code, _, err = run(capsys, "compile", "no-such-map.json")
    assert code == 1 and "fourleg-basic" in err


def test_lane_list_input_compiles(capsys, tmp_path):
    doc = {"id": "ll", "ways": [{"leg": g} for g in "NESW"]}
    code, out, _ = run(capsys, "compile", "--lane-list", write_json(tmp_path / "l.json", doc))
    assert code == 0 and json.loads(out)["id"] == "ll"


def test_render_writes_svg(capsys, tmp_path):
    out = tmp_path / "m.svg"
    code, _, _ = run(capsys, "render", "fourleg-basic", "--movement", "S.in.right>E.out.veh",
                     "--viewpoint", "35,-80", "--obstacle", "18,-77.5,0,1,15,6", "-o", str(out))
    assert code == 0
    text = out.read_text()
    assert text.startswith("<svg") and 'id="shadows"' in text
    assert run(capsys, "render", "fourleg-basic", "--viewpoint", "1")[0] == 1
    assert run(capsys, "render", "fourleg-basic", "--movement", "nope")[0] == 1


def test_simulate_tempe_with_i2v_has_no_collision(capsys):
    code, out, _ = run(capsys, "simulate", "tempe_crash", "--i2v", "on")
    assert code == 0 and "collisions: 0" in out
    code, out, _ = run(capsys, "simulate", "tempe_crash", "--i2v", "off", "--json")
    assert code == 0 and json.loads(out)["collisions"] == 1


def test_simulate_writes_a_trace_and_validates_options(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    code, _, _ = run(capsys, "simulate", "red_light_violator", "--i2v", "on", "--trace", str(trace))
    assert code == 0
    assert all(json.loads(line) for line in trace.read_text().splitlines())
    assert run(capsys, "simulate", "yellow_dilemma", "--honda-speed", "5")[0] == 1
    assert run(capsys, "simulate", "tempe_crash", "--honda-speed", "0")[0] == 1
    assert run(capsys, "simulate", "nope")[0] == 1


def test_seed_comes_from_the_environment(capsys, monkeypatch):
    seen = []
    real = sim.run

    def spy(sc):
        seen.append(sc.seed)
        return real(sc)

    monkeypatch.setattr(sim, "run", spy)
    monkeypatch.setenv("CROSSGUARD_SEED", "17")
    assert run(capsys, "simulate", "red_light_violator")[0] == 0
    assert run(capsys, "simulate", "red_light_violator", "--seed", "3")[0] == 0
    assert seen == [17, 3]
    monkeypatch.setenv("CROSSGUARD_SEED", "many")
    code, _, err = run(capsys, "simulate", "red_light_violator")
    assert code == 1 and "CROSSGUARD_SEED" in err


def test_runtime_failure_exits_2(capsys, monkeypatch):
    def boom(sc):
        raise RuntimeError("solver diverged")

    monkeypatch.setattr(sim, "run", boom)
    code, _, err = run(capsys, "simulate", "red_light_violator")
    assert code == 2 and "solver diverged" in err


def test_resolve_context_reports_labelled_zones(capsys, tmp_path):
    ctx = dict(CONTEXT, spat={"phase": "EW_THRU"}, ica={"default": "clear"}, remaining=12.5)
    code, out, _ = run(capsys, "resolve", write_json(tmp_path / "c.json", ctx))
    res = json.loads(out)
    assert code == 0 and res["action"] == "proceed"
    assert [z["label"] for z in res["zones"]] == [f"CZ{i}" for i in range(1, 8)]


def test_resolve_without_infrastructure_leaves_hidden_zones(capsys, tmp_path):
    code, out, _ = run(capsys, "resolve", write_json(tmp_path / "c.json", CONTEXT))
    res = json.loads(out)
    assert code == 0 and res["action"] != "proceed"
    assert set(res["unresolved"]) == {"CZ2", "CZ3", "CZ4"}


@pytest.mark.parametrize("change", [{"ego": "nope"}, {"own": "purple"},
                                    {"spat": {"phase": "NOPE"}}, {"own": None}])
def test_bad_resolve_contexts_exit_1(capsys, tmp_path, change):
    ctx = {k: v for k, v in dict(CONTEXT, **change).items() if v is not None}
    assert run(capsys, "resolve", write_json(tmp_path / "c.json", ctx))[0] == 1


def test_simulated_broadcast_counts_ten_spat_per_second(capsys):
    code, out, _ = run(capsys, "broadcast", "fourleg-basic", "--simulated", "--duration", "1")
    assert code == 0
    assert "simulated 10 ticks" in out and "SPAT: 10 messages" in out


def test_broadcast_replays_a_phase_log_and_sensors(capsys, tmp_path):
    log = tmp_path / "phases.txt"
    log.write_text("NS_THRU 0 22\nEW_THRU 22 44\nNS_THRU 44 66\n")
    code, out, _ = run(capsys, "broadcast", "--map", "fourleg-basic", "--phase-log", str(log),
                       "--simulated", "--duration", "2")
    assert code == 0 and "SPAT: 20 messages" in out
    code, out, _ = run(capsys, "broadcast", "fourleg-basic", "--scenario", "rtor_confusion",
                       "--simulated", "--duration", "1")
    assert code == 0 and "ICA: 10 messages" in out
    log.write_text("WARP 0 1\n")
    assert run(capsys, "broadcast", "fourleg-basic", "--phase-log", str(log), "--simulated")[0] == 1
    assert run(capsys, "broadcast", "--simulated")[0] == 1


def test_rank_orders_intersections(capsys, tmp_path):
    spec = {"intersections": [
        {"id": "quiet", "map": "fourleg-basic", "uniform": 0.0},
        {"id": "busy", "map": "fourleg-basic", "uniform": 200.0, "approaches": ["S", "W"]}]}
    path = write_json(tmp_path / "r.json", spec)
    code, out, _ = run(capsys, "rank", path, "--runs", "1", "--duration", "20", "--json")
    assert code == 0
    assert [e["map_id"] for e in json.loads(out)] == ["busy", "quiet"]
    assert run(capsys, "rank", path, "--runs", "0")[0] == 1
    assert run(capsys, "rank", path, "--duration", "0")[0] == 1
    bad = write_json(tmp_path / "b.json", {"intersections": [
        {"id": "x", "map": "fourleg-basic", "demand": {"ghost": 1.0}}]})
    assert run(capsys, "rank", bad, "--runs", "1", "--duration", "5")[0] == 1
