"""Unit tests for configuration loading and the reproducible parallel helpers."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "homogeneity"))

from config import CACHE_ENV, CONFIG_ENV, cache_dir, load_config
from parallel import chunk_ranges, derive_seed, rng_for, run_indexed


def _square(x: int) -> int:
    return x * x


def test_defaults_are_packaged() -> None:
    config = load_config()
    assert config["r_law"]["table_size"] == 200000
    assert config["adjustment"]["rn2_star"] == {"kind": "scale", "a": 6.325, "b": 1.176}
    assert config["calibration"]["n_grid"][0] == 10


def test_overlay_merges_nested_sections(tmp_path) -> None:
    path = tmp_path / "local.yaml"
    path.write_text("r_law:\n  table_size: 5000\nfit:\n  n_random_starts: 2\n")
    config = load_config(path)
    assert config["r_law"]["table_size"] == 5000
    assert config["r_law"]["seed"] == 1973
    assert config["fit"]["n_random_starts"] == 2
    assert load_config()["r_law"]["table_size"] == 200000


def test_overlay_from_environment(tmp_path, monkeypatch) -> None:
    path = tmp_path / "env.yaml"
    path.write_text("simulation:\n  reps: 11\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_config()["simulation"]["reps"] == 11


def test_cache_dir_from_environment(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv(CACHE_ENV, str(tmp_path))
    assert cache_dir() == tmp_path
    monkeypatch.delenv(CACHE_ENV)
    assert cache_dir().name == "upht"


def test_seeds_depend_only_on_keys() -> None:
    a = rng_for(5, 1, 2).standard_normal(4)
    b = rng_for(5, 1, 2).standard_normal(4)
    c = rng_for(5, 2, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    state = derive_seed(5, 1).generate_state(2)
    np.testing.assert_array_equal(state, derive_seed(5, 1).generate_state(2))


def test_chunk_ranges_cover_total() -> None:
    assert chunk_ranges(7, 3) == [(0, 3), (3, 6), (6, 7)]
    assert chunk_ranges(0, 3) == []


def test_run_indexed_keeps_task_order() -> None:
    tasks = list(range(10))
    assert run_indexed(_square, tasks, threads=1) == [t * t for t in tasks]
    assert run_indexed(_square, tasks, threads=2) == [t * t for t in tasks]
