"""Unit tests for the four likelihood-ratio statistics and the combined report."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "homogeneity"))

from errors import NestingViolationError
from estimation import Constraint, FitOptions
from lrt import TestReport, lrt_rho0, lrt_rho_free, lrt_statistic, run_all
from model import Theta, UnorderedDataset
from null_laws import RLawSettings, StatId, build_r_law
from parallel import rng_for
from simulate import STANDARD_THETA, generate_dataset

FAST = FitOptions(n_random_starts=3)


@pytest.fixture(scope="module")
def small_law():
    return build_r_law(RLawSettings(size=20000, seed=3))


def test_statistic_clamps_round_off() -> None:
    assert lrt_statistic(-10.0, -10.0) == 0.0
    assert lrt_statistic(-10.0 - 4e-7, -10.0) == 0.0
    assert lrt_statistic(-8.0, -10.0) == pytest.approx(4.0)


def test_statistic_rejects_real_nesting_violation() -> None:
    with pytest.raises(NestingViolationError):
        lrt_statistic(-10.001, -10.0, "rn1")


@pytest.mark.parametrize("seed,theta", [
    (1, STANDARD_THETA),
    (2, Theta(0.0, 0.0, 1.0, 1.0, -0.5)),
    (3, Theta(0.0, 1.0, 1.0, 0.5, 0.25)),
    (4, Theta(0.0, 1.5, 1.0, 1.0, 0.0)),
])
def test_statistics_are_nested(seed: int, theta: Theta) -> None:
    ds = generate_dataset(30, theta, rng_for(seed, 0))
    rn1, rn2 = lrt_rho0(ds, FAST)
    rn1s, rn2s = lrt_rho_free(ds, FAST)
    assert 0.0 <= rn1 <= rn2 + 1e-9
    assert 0.0 <= rn1s <= rn2s + 1e-9


def test_statistics_are_affine_invariant() -> None:
    ds = generate_dataset(30, Theta(0.0, 1.0, 1.0, 0.5, 0.3), rng_for(21, 0))
    base = lrt_rho0(ds, FAST) + lrt_rho_free(ds, FAST)
    moved_ds = ds.affine(0.25, 40.0)
    moved = lrt_rho0(moved_ds, FAST) + lrt_rho_free(moved_ds, FAST)
    np.testing.assert_allclose(moved, base, atol=1e-5)


def test_report_ignores_row_order_and_orientation(small_law) -> None:
    ds = generate_dataset(25, Theta(0.0, 0.5, 1.0, 0.8, 0.0), rng_for(22, 0))
    flipped = UnorderedDataset.from_array(ds.as_array()[::-1, ::-1])
    a = run_all(ds, FAST, r_law=small_law)
    b = run_all(flipped, FAST, r_law=small_law)
    assert a.to_dict() == b.to_dict()


def test_clear_alternative_is_detected(small_law) -> None:
    ds = generate_dataset(75, Theta(0.0, 1.0, 1.0, 0.5, 0.5), rng_for(23, 0))
    report = run_all(ds, FAST, r_law=small_law)
    assert report.complete
    assert report.p_adj[StatId.RN2_STAR].value < 0.01


def test_report_contents_and_round_trip(small_law) -> None:
    ds = generate_dataset(100, STANDARD_THETA, rng_for(24, 0))
    report = run_all(ds, FAST, r_law=small_law)
    assert report.complete and report.n == 100
    assert set(report.fits) == set(Constraint)
    for s in StatId:
        assert 0.0 < report.p_raw[s].value <= 1.0
        assert 0.0 < report.p_adj[s].value <= 1.0
    assert report.rn2 == report.statistics[StatId.RN2]
    again = TestReport.from_dict(report.to_dict())
    assert again.to_dict() == report.to_dict()


def test_partial_report_on_small_sample(small_law) -> None:
    ds = generate_dataset(5, STANDARD_THETA, rng_for(25, 0))
    report = run_all(ds, FAST, r_law=small_law)
    assert not report.complete
    assert set(report.statistics) == {StatId.RN1}
    assert StatId.RN1 in report.p_adj
    for key in ("free_rho0", "eqvar_rhofree", "free", "rn2", "rn1_star", "rn2_star"):
        assert key in report.errors
    assert "need at least" in report.errors["free"]


def test_statistics_without_pvalues() -> None:
    ds = generate_dataset(20, STANDARD_THETA, rng_for(26, 0))
    report = run_all(ds, FAST, with_pvalues=False)
    assert len(report.statistics) == 4
    assert not report.p_raw and not report.p_adj


def test_report_lists_near_singular_fits(small_law) -> None:
    x1 = rng_for(61, 0).normal(0.0, 1.0, 20)
    report = run_all(UnorderedDataset(x1, 2.0 * x1 + 0.3), FAST, r_law=small_law)
    assert "free" in report.near_singular
    assert "free_rho0" not in report.near_singular
    assert TestReport.from_dict(report.to_dict()).near_singular == report.near_singular
