"""End-to-end runs of the ``polcam`` command line."""

import csv
import json
import subprocess
import sys

import pytest

from polcam.cli import COMMANDS, main
from polcam.evio import RunConfig, keys_for, read_events, read_polevents

SMALL = ["--set", "geometry.width=32", "--set", "geometry.height=24", "--set", "simulate.duration_s=0.4",
         "--set", "stimulus.rpm=300"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", *SMALL, "--seed", 3, "--out", out) == 0
    return out


def test_simulate_is_deterministic(sim_dir, tmp_path):
    assert run("simulate", *SMALL, "--seed", 3, "--out", tmp_path) == 0
    for name in ("events.pdevt", "frames.pdfrm"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()
    _, ev = read_events(sim_dir / "events.pdevt")
    assert len(ev) > 1000


def test_seed_changes_events(sim_dir, tmp_path):
    assert run("simulate", *SMALL, "--seed", 4, "--out", tmp_path) == 0
    assert (tmp_path / "events.pdevt").read_bytes() != (sim_dir / "events.pdevt").read_bytes()


def test_manifest_reproduces_run(sim_dir, tmp_path):
    m = json.loads((sim_dir / "manifest.json").read_text())
    assert {"config", "config_hash", "seed", "versions", "outputs", "argv"} <= set(m)
    assert m["seed"] == 3 and m["outputs"] == ["events.pdevt", "frames.pdfrm"]
    cfg = RunConfig(m["config"])
    assert cfg.hash() == m["config_hash"]
    conf = tmp_path / "replay.conf"
    conf.write_text(cfg.to_text())
    assert run("simulate", "--config", conf, "--out", tmp_path / "replay") == 0
    assert (tmp_path / "replay" / "events.pdevt").read_bytes() == (sim_dir / "events.pdevt").read_bytes()


@pytest.mark.parametrize("method", ["frames", "events", "cf"])
def test_reconstruct_methods(sim_dir, tmp_path, method):
    args = ["reconstruct", "--method", method, "--out", tmp_path]
    if method != "frames":
        args += ["--events", sim_dir / "events.pdevt"]
    if method != "events":
        args += ["--frames", sim_dir / "frames.pdfrm"]
    assert run(*args) == 0
    with open(tmp_path / f"stokes_{method}.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows and {r["method"] for r in rows} == {method}
    assert {int(r["X"]) for r in rows} == set(range(16)) and {int(r["Y"]) for r in rows} == set(range(12))
    angles = [float(r["aop_deg"]) for r in rows if r["aop_deg"]]
    assert angles and all(0 <= a < 180 for a in angles)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["method"] == method and m["rows"] == len(rows)
    assert all(len(h) == 64 for h in m["inputs"].values())


def test_reconstruct_roi_and_polevents(sim_dir, tmp_path):
    assert run("reconstruct", "--method", "events", "--events", sim_dir / "events.pdevt", "--polevents",
               "--set", "recon.roi=[4,3,8,6]", "--out", tmp_path) == 0
    with open(tmp_path / "stokes_events.csv") as f:
        rows = list(csv.DictReader(f))
    assert {int(r["X"]) for r in rows} == {4, 5, 6, 7} and {int(r["Y"]) for r in rows} == {3, 4, 5}
    _, ev = read_events(sim_dir / "events.pdevt")
    _, pol = read_polevents(tmp_path / "polevents.pdpol")
    assert len(pol) == len(ev)
    assert run("convert", tmp_path / "polevents.pdpol", "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "polevents.csv").read_text().count("\n") == len(ev) + 1


def test_events_method_without_events_is_domain_error(sim_dir, tmp_path, capsys):
    code = run("reconstruct", "--method", "events", "--frames", sim_dir / "frames.pdfrm", "--out", tmp_path)
    assert code == 4
    assert "event stream" in capsys.readouterr().err
    code = run("reconstruct", "--method", "events", "--events", sim_dir / "frames.pdfrm", "--out", tmp_path)
    assert code == 4
    assert "event stream" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    assert run("simulate", "--set", "dvs.theta_onn=0.1", "--out", tmp_path) == 2
    assert "dvs.theta_onn" in capsys.readouterr().err
    assert run("simulate", "--config", tmp_path / "missing.conf", "--out", tmp_path) == 2
    bad = tmp_path / "bad.conf"
    bad.write_text("[dvs]\ntheta_on = 0.1\ntheta_on = 0.2\n")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2


def test_io_errors_exit_3(tmp_path, capsys):
    assert run("stats", "--events", tmp_path / "nope.pdevt", "--out", tmp_path) == 3
    junk = tmp_path / "junk.pdevt"
    junk.write_bytes(b"not an event file at all")
    assert run("convert", junk, "--out", tmp_path) == 3
    assert "magic" in capsys.readouterr().err


@pytest.mark.parametrize("command", COMMANDS)
def test_help_lists_every_key(command, capsys):
    with pytest.raises(SystemExit) as e:
        main([command, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    for key in keys_for(command):
        assert key in text, key


def test_stats_and_convert(sim_dir, tmp_path, capsys):
    assert run("stats", "--events", sim_dir / "events.pdevt", "--roi", 10, 6, 22, 18, "--out", tmp_path) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n_pixels"] == 144 and summary["mean_rate_hz_per_pixel"] > 0
    with open(tmp_path / "interevent_histogram.csv") as f:
        hist = list(csv.DictReader(f))
    assert len(hist) == 50 and sum(int(r["count"]) for r in hist) == summary["n_intervals"]
    assert (tmp_path / "rate_vs_time.csv").exists()
    assert run("convert", sim_dir / "events.pdevt", "--out", tmp_path) == 0
    _, ev = read_events(sim_dir / "events.pdevt")
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0] == "t_us,x,y,polarity" and len(lines) == len(ev) + 1


def test_convert_rejects_frames(sim_dir, tmp_path):
    assert run("convert", sim_dir / "frames.pdfrm", "--out", tmp_path) == 3


@pytest.mark.slow
def test_default_sweep(tmp_path, capsys):
    assert run("sweep", "--out", tmp_path) == 0
    res = json.loads((tmp_path / "sweep.json").read_text())
    rows = res["rows"] if isinstance(res, dict) else res
    ev = [r for r in rows if r["method"] == "events"]
    assert len(ev) == 6 and all(r["aop_mae_deg"] < 10 for r in ev)
    assert (tmp_path / "sweep.csv").read_text().startswith("rpm")
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "sweep"


@pytest.mark.slow
def test_hdr_command(tmp_path):
    assert run("hdr", "--set", "hdr.duration_s=1.5", "--set", "hdr.discard_s=1.0", "--out", tmp_path) == 0
    with open(tmp_path / "hdr_sectors.csv") as f:
        rows = list(csv.DictReader(f))
    methods = {r["method"] for r in rows}
    assert {"events", "cf", "frames[0]", "frames[1]"} <= methods
    events = [r for r in rows if r["method"] == "events"]
    assert len(events) == 12 and all(r["recoverable"] == "true" for r in events)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["recoverable"]["events"] == {"bright": True, "dark": True}


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "polcam.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("polcam ")


def test_argument_errors_use_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["reconstruct", "--method", "bogus"])
    assert e.value.code == 2
