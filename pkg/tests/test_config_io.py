from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from entwp.config import (ConfigError, RunConfig, load_config, parse_config, parse_points,
                          validate)
from entwp.io import TableError, grid_to_long, long_to_grid, read_table, write_table


def test_defaults_are_valid_and_round_trip():
    cfg = RunConfig()
    validate(cfg)
    again = parse_config(cfg.to_ini())
    assert again.to_ini() == cfg.to_ini()
    assert again.sha256() == cfg.sha256()


def test_hash_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.sha256() == b.sha256()
    b.events.seed += 1
    assert a.sha256() != b.sha256()
    assert RunConfig().with_seed(None).events.seed == RunConfig().events.seed
    assert RunConfig().with_seed(5).events.seed == 5


def test_partial_config_keeps_defaults():
    cfg = parse_config("[events]\nseed = 7\n[system]\na2 = 0.5+0.1j\n")
    assert cfg.events.seed == 7
    assert cfg.system.a2 == complex(0.5, 0.1)
    assert cfg.grid.n_points == RunConfig().grid.n_points


@pytest.mark.parametrize("text,key", [
    ("[events]\nsede = 3\n", "events.sede"),
    ("[evnts]\nseed = 3\n", "evnts"),
    ("[events]\nseed = three\n", "events.seed"),
    ("[events]\nscale_pair_prob = maybe\n", "events.scale_pair_prob"),
    ("[grid]\nn_points = 1000\n", "grid.n_points"),
    ("[scan]\ndelay_max_fs = 900\n", "scan.delay_max_fs"),
    ("[system]\nphoton_separation = 4\n", "system.photon_separation"),
    ("[potentials]\nv1_points = 1:0, 2:1\n", "potentials.v1_points"),
    ("[potentials]\nv1_points = 1-0, 2:1, 3:0, 4:0\n", "potentials.v1_points"),
    ("[meta]\nversion = 9\n", "meta.version"),
])
def test_bad_config_names_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(text)


def test_malformed_ini():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("seed = 3\n")


def test_load_config(tmp_path):
    assert load_config(None).sha256() == RunConfig().sha256()
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")
    p = tmp_path / "c.ini"
    p.write_text("[events]\nseed = 11  ; comment\n")
    assert load_config(p).events.seed == 11


def test_parse_points():
    assert parse_points("1:0.5, 2:-1", "k") == [(1.0, 0.5), (2.0, -1.0)]


def test_table_round_trip(tmp_path):
    data = np.array([[0.1, 1e-300, -3.0], [np.pi, 2.0 / 3.0, 1e17]])
    p = write_table(tmp_path / "t.dat", "demo", ["a", "b", "c"], data, "abc", period_fs=28.0)
    t = read_table(p)
    assert t.kind == "demo" and t.columns == ["a", "b", "c"] and t.config_hash == "abc"
    assert t.meta == {"period_fs": "28.0"}
    assert np.array_equal(t.data, data)
    assert np.array_equal(t.column("b"), data[:, 1])
    with pytest.raises(KeyError):
        t.column("d")


@settings(max_examples=30, deadline=None)
@given(data=arrays(float, (7, 2), elements=st.floats(allow_nan=False, allow_infinity=False,
                                                   width=64)))
def test_table_values_exact(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("t") / "t.dat"
    write_table(p, "x", ["u", "v"], data)
    assert np.array_equal(read_table(p).data, data)


def test_empty_table(tmp_path):
    p = write_table(tmp_path / "e.dat", "empty", ["a", "b"], np.empty((0, 2)))
    assert read_table(p).data.shape == (0, 2)


def test_bad_tables(tmp_path):
    p = tmp_path / "bad.dat"
    p.write_text("hello\n1 2\n")
    with pytest.raises(TableError, match="not an entwp table"):
        read_table(p)
    write_table(p, "x", ["a", "b"], np.ones((2, 2)))
    p.write_text(p.read_text() + "1 2 3\n")
    with pytest.raises(TableError):
        read_table(p)
    with pytest.raises(ValueError):
        write_table(p, "x", ["a"], np.ones((2, 2)))


def test_long_grid_round_trip():
    xs, ys = np.array([0.0, 1.0, 2.0]), np.array([5.0, 6.0])
    Z = np.arange(6.0).reshape(2, 3)
    rows = grid_to_long(xs, ys, Z)
    assert rows.shape == (6, 3)
    x2, y2, Z2 = long_to_grid(rows[:, 0], rows[:, 1], rows[:, 2])
    assert np.array_equal(x2, xs) and np.array_equal(y2, ys) and np.array_equal(Z2, Z)
    with pytest.raises(TableError):
        long_to_grid(rows[:-1, 0], rows[:-1, 1], rows[:-1, 2])
