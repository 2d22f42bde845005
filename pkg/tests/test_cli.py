from __future__ import annotations

import hashlib

import numpy as np
import pytest

from entwp.cli import EXIT_INVALID, EXIT_OK, main
from entwp.io import read_table

SMALL = """\
[propagation]
total_fs = 120
[scan]
delay_min_fs = 0
delay_max_fs = 100
delay_step_fs = 5
n_phases = 8
n_phase_average = 4
[events]
shots_per_delay = 200
shots_per_phase = 2000
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.ini"
    p.write_text(SMALL)
    return p


def run(*argv):
    return main([*map(str, argv), "--threads", "1"])


@pytest.fixture(scope="module")
def pipeline(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("propagate", "--config", small_cfg, "--out", out / "propagate") == EXIT_OK
    assert run("scan", "--config", small_cfg, "--out", out / "scan") == EXIT_OK
    assert run("synth", "--config", small_cfg, "--out", out / "synth") == EXIT_OK
    ev = [out / "synth" / "events_delay.csv", out / "synth" / "events_phase.csv"]
    assert run("covmap", "--config", small_cfg, "--out", out / "covmap", *ev) == EXIT_OK
    maps = [out / "scan" / "yield_phase.dat", out / "covmap" / "covmap_phase.dat",
            out / "covmap" / "covmap_delay.dat"]
    assert run("analyze", "--config", small_cfg, "--out", out / "analyze", *maps) == EXIT_OK
    return out


def test_pipeline_writes_outputs(pipeline):
    for rel in ["propagate/packets.dat", "propagate/phase_difference.dat",
                "propagate/phase_difference.png", "propagate/config_used.ini",
                "scan/yield_phase.dat", "scan/yield_delay.dat",
                "synth/events_delay.csv", "synth/events_phase.csv",
                "covmap/covmap_phase.dat", "covmap/covmap_delay.dat",
                "analyze/covmap_delay_spectrum.dat", "analyze/covmap_phase_phase_fit.dat",
                "analyze/yield_phase_phase_fit.dat"]:
        assert (pipeline / rel).is_file(), rel


def test_tables_carry_config_hash(pipeline):
    t = read_table(pipeline / "scan" / "yield_delay.dat")
    c = read_table(pipeline / "covmap" / "covmap_delay.dat")
    assert t.config_hash and t.config_hash == c.config_hash
    assert np.unique(t.column("delay_fs")).size == 21


def test_same_seed_gives_identical_events(small_cfg, pipeline, tmp_path):
    assert run("synth", "--config", small_cfg, "--out", tmp_path, "--axis", "phase") == EXIT_OK
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
    assert digest(tmp_path / "events_phase.csv") == digest(pipeline / "synth" / "events_phase.csv")
    other = tmp_path / "other"
    assert run("synth", "--config", small_cfg, "--out", other, "--axis", "phase",
               "--seed", "5") == EXIT_OK
    assert digest(other / "events_phase.csv") != digest(tmp_path / "events_phase.csv")


def test_bad_config_names_key(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[events]\nsede = 1\n")
    assert run("scan", "--config", p, "--out", tmp_path / "o") == EXIT_INVALID
    assert "events.sede" in capsys.readouterr().err


def test_missing_files(tmp_path, capsys):
    assert run("scan", "--config", tmp_path / "nope.ini", "--out", tmp_path) == EXIT_INVALID
    assert run("covmap", "--out", tmp_path, tmp_path / "missing.csv") == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_malformed_event_file(small_cfg, pipeline, tmp_path, capsys):
    lines = (pipeline / "synth" / "events_phase.csv").read_text().splitlines()
    lines[9] = "1,2,3"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("covmap", "--config", small_cfg, "--out", tmp_path, bad) == EXIT_INVALID
    assert "line 10" in capsys.readouterr().err


def test_identical_potentials_give_flat_phase_difference(tmp_path):
    cfg = tmp_path / "same.ini"
    cfg.write_text("[potentials]\nv2_scale = 1.0\noffset_ev = 0.0\n"
                   "[propagation]\ntotal_fs = 100\n"
                   "[scan]\nphase_delay_fs = 50\ndelay_max_fs = 100\n")
    assert run("propagate", "--config", cfg, "--out", tmp_path) == EXIT_OK
    t = read_table(tmp_path / "phase_difference.dat")
    w, dphi = t.column("weight"), t.column("dphi_rad")
    use = np.isfinite(dphi) & (w > 1e-3 * w.max())
    assert use.sum() > 10
    assert np.max(np.abs(dphi[use])) < 1e-8


def test_no_coherence_gives_flat_phase_scan(tmp_path):
    cfg = tmp_path / "inc.ini"
    cfg.write_text("[system]\na2 = 0\n[propagation]\ntotal_fs = 100\n"
                   "[scan]\nn_phases = 8\ndelay_max_fs = 100\n")
    assert run("scan", "--config", cfg, "--out", tmp_path, "--axis", "phase") == EXIT_OK
    t = read_table(tmp_path / "yield_phase.dat")
    phase, ker, y = t.column("phase_rad"), t.column("ker_ev"), t.column("yield")
    assert np.unique(phase).size == 8
    for e in np.unique(ker):
        row = y[ker == e]
        assert np.ptp(row) <= 1e-12 * np.max(np.abs(row))
