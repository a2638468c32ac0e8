"""Unit tests for the limiting null laws, the R table and the adjusted p-values."""
from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chi2

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "homogeneity"))

import null_laws
from calibration import save_coefficients
from errors import LawStateError, ParameterDomainError
from null_laws import (
    AdjustmentCoefficients,
    ChiBarMix,
    CorrectionKind,
    RLaw,
    RLawSettings,
    RStarLaw,
    StatId,
    adjusted_pvalue,
    adjusted_quantile,
    build_r_law,
    chibar_quantile,
    chibar_tail,
    coefficients_from_config,
    critical_values,
    load_coefficients,
    load_or_build_r_law,
    r_quantile,
    r_tail,
    raw_pvalue,
    rstar_quantile,
    sample_R,
)
from parallel import rng_for


@pytest.fixture(scope="module")
def r_law(tmp_path_factory) -> RLaw:
    """Full-size default table, built once per module into a private cache."""
    return load_or_build_r_law(RLawSettings(), tmp_path_factory.mktemp("cache"))


def _grid_R(w: np.ndarray, m: int = 601) -> float:
    """Brute-force max of the quartic over a 2-D (x1, x2) grid."""
    x1, x2 = np.meshgrid(np.linspace(-3, 3, m), np.linspace(-3, 3, m))
    quad = 2 * (x1 * x1 * w[0] + x2 * x2 * w[1] + 2 * x1 * x2 * w[2])
    quart = x1**4 + x2**4 + 4 * x1 * x1 * x2 * x2
    return float(np.max(quad - quart))


# ---- chi-bar mixture ----

def test_chibar_tail_at_zero_and_five_percent() -> None:
    assert chibar_tail(0.0) == 1.0
    assert chibar_tail(2.706) == pytest.approx(0.05, abs=1e-4)


def test_chibar_weight_one_is_chi_square() -> None:
    assert ChiBarMix(1.0).tail(3.0) == pytest.approx(chi2.sf(3.0, 1))


def test_chibar_quantile_inverts_tail() -> None:
    for alpha in (0.6, 0.9, 0.95, 0.99):
        q = chibar_quantile(alpha, 0.7)
        assert chibar_tail(q, 0.7) == pytest.approx(1 - alpha, abs=1e-12)
    assert chibar_quantile(0.4) == 0.0


@pytest.mark.parametrize("call", [
    lambda: chibar_tail(-1.0),
    lambda: ChiBarMix(0.4),
    lambda: chibar_quantile(1.0),
])
def test_chibar_domain(call) -> None:
    with pytest.raises(ParameterDomainError):
        call()


# ---- R law ----

def test_sample_R_fixed_points() -> None:
    assert sample_R([0.0, 0.0, 0.0]) == 0.0
    assert sample_R([1.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-9)


def test_sample_R_symmetry_and_bounds() -> None:
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.standard_normal(3)
        r = sample_R(w)
        assert r == pytest.approx(sample_R([w[1], w[0], w[2]]), abs=1e-9)
        assert r == pytest.approx(sample_R([w[0], w[1], -w[2]]), abs=1e-9)
        assert r >= max(w[0], 0) ** 2 - 1e-12
        assert r >= max(w[0] + w[1] + 2 * w[2], 0) ** 2 / 6 - 1e-12
        assert r <= float(w @ w) + 1e-12


def test_sample_R_beats_brute_force_grid() -> None:
    rng = np.random.default_rng(2)
    for _ in range(5):
        w = rng.standard_normal(3)
        r, g = sample_R(w), _grid_R(w)
        assert r >= g - 1e-9
        assert r - g <= 0.05


def test_r_table_is_deterministic() -> None:
    s = RLawSettings(size=3000, seed=5, block_size=1000)
    a = build_r_law(s, threads=1)
    b = build_r_law(s, threads=2)
    np.testing.assert_array_equal(a.mc_table, b.mc_table)
    assert not np.array_equal(a.mc_table, build_r_law(RLawSettings(size=3000, seed=6)).mc_table)


def test_r_table_cache_round_trip(tmp_path) -> None:
    s = RLawSettings(size=2000, seed=9)
    built = load_or_build_r_law(s, tmp_path)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    cached = load_or_build_r_law(s, tmp_path)
    np.testing.assert_array_equal(built.mc_table, cached.mc_table)


def test_r_tail_conventions() -> None:
    law = RLaw(np.array([0.0, 0.5, 1.0, 2.0]))
    assert law.tail(0.0) == 1.0
    assert law.tail(1.0) == pytest.approx(3 / 5)
    assert law.tail(10.0) == pytest.approx(1 / 5)
    with pytest.raises(LawStateError):
        RLaw(np.array([])).tail(1.0)


def test_r_law_against_rare_event_approximation(r_law: RLaw) -> None:
    # P(R > t) ~ (L / 2pi) exp(-t/2) with L the length of the sphere curve traced by the cone
    ratio = r_law.tail(9.0) / math.exp(-4.5)
    assert 0.68 < ratio < 0.86
    assert r_law.quantile(0.95) > chi2.isf(0.1, 1)


def test_r_pvalue_below_table_resolution(r_law: RLaw) -> None:
    p = raw_pvalue(StatId.RN2, 80.0, r_law=r_law)
    assert p.below_resolution
    assert p.value == pytest.approx(1 / (r_law.size + 1))
    assert p.format().startswith("<")


# ---- R* law ----

def test_rstar_cdf_basics() -> None:
    law = RStarLaw()
    assert law.cdf(0.0) == 0.0
    for x in (0.5, 1.0, 3.0, 8.0):
        assert law.cdf(x) <= chi2.cdf(x, 1) + 1e-12
        assert law.cdf(x) + law.sf(x) == pytest.approx(1.0, abs=1e-8)


def test_rstar_quantile_inverts_cdf() -> None:
    law = RStarLaw()
    for alpha in (0.5, 0.9, 0.95, 0.99):
        assert law.cdf(law.quantile(alpha)) == pytest.approx(alpha, abs=1e-7)
    assert law.quantile(0.95) >= 3.841


def test_rstar_matches_monte_carlo() -> None:
    w = rng_for(77, 0).standard_normal((100000, 3))
    pos = np.maximum(w[:, 1:].max(axis=1), 0.0) ** 2
    draws = w[:, 0] ** 2 + pos
    law = RStarLaw()
    for x in (1.0, 3.0, 6.0):
        p = float(np.mean(draws <= x))
        se = math.sqrt(p * (1 - p) / draws.size)
        assert abs(law.cdf(x) - p) <= 4 * se
    assert abs(law.mean() - draws.mean()) <= 4 * draws.std() / math.sqrt(draws.size)


# ---- adjusted laws ----

def test_adjusted_anchor_values(r_law: RLaw) -> None:
    p = lambda s, t, n: adjusted_pvalue(s, t, n, r_law=r_law).value  # noqa: E731
    assert 6.5e-5 <= p(StatId.RN1, 14.91, 40) <= 7.5e-5
    assert p(StatId.RN1_STAR, 1.08, 40) == pytest.approx(0.21, abs=0.005)
    assert p(StatId.RN1, 6.51, 40) == pytest.approx(6.6e-3, abs=0.4e-3)
    assert p(StatId.RN1_STAR, 10.74, 40) == pytest.approx(7.5e-4, abs=0.5e-4)
    assert 3.5e-4 <= p(StatId.RN2_STAR, 16.69, 40) < 4.5e-4
    assert p(StatId.RN2_STAR, 13.48, 40) == pytest.approx(1.9e-3, abs=0.3e-3)
    assert 1.5e-4 <= p(StatId.RN2, 17.71, 40) <= 2.5e-4
    assert p(StatId.RN2, 9.47, 40) == pytest.approx(8.9e-3, abs=1e-3)


def test_adjustment_vanishes_for_large_n(r_law: RLaw) -> None:
    for s in StatId:
        raw = raw_pvalue(s, 4.0, r_law=r_law).value
        adj = adjusted_pvalue(s, 4.0, 1_000_000, r_law=r_law).value
        assert abs(raw - adj) <= 1e-3


def test_adjustment_is_clipped_for_tiny_n() -> None:
    value, clipped = coefficients_from_config()[StatId.RN1_STAR].value(3)
    assert clipped and value == 1.0
    p = adjusted_pvalue(StatId.RN1_STAR, 2.0, 3)
    assert p.clipped and p.value == pytest.approx(chi2.sf(2.0, 1))


def test_adjusted_requires_n_of_three() -> None:
    with pytest.raises(ParameterDomainError):
        adjusted_pvalue(StatId.RN1, 1.0, 2)


def test_adjusted_quantile_inverts_pvalue(r_law: RLaw) -> None:
    for s in StatId:
        q = adjusted_quantile(s, 0.95, 40, r_law=r_law)
        assert adjusted_pvalue(s, q, 40, r_law=r_law).value == pytest.approx(0.05, abs=2e-3)


def test_raw_critical_values(r_law: RLaw) -> None:
    cv = critical_values(None, 0.05, r_law=r_law)
    assert cv[StatId.RN1] == pytest.approx(chi2.isf(0.1, 1))
    assert cv[StatId.RN2_STAR] == pytest.approx(RStarLaw().quantile(0.95))


def test_coefficient_table_defaults() -> None:
    coeffs = coefficients_from_config()
    assert coeffs[StatId.RN1] == AdjustmentCoefficients(1.440, 0.676, CorrectionKind.WEIGHT)
    assert coeffs[StatId.RN2_STAR] == AdjustmentCoefficients(6.325, 1.176, CorrectionKind.SCALE)
    assert coeffs[StatId.RN2].value(40)[0] == pytest.approx(1.0629, abs=1e-4)


@pytest.mark.parametrize("suffix", [".yaml", ".json"])
def test_coefficients_file_round_trip(tmp_path, suffix: str) -> None:
    coeffs = coefficients_from_config()
    path = tmp_path / f"coeffs{suffix}"
    save_coefficients(path, coeffs, {"reps": 100, "low_precision": True})
    assert load_coefficients(path) == coeffs


def test_coefficients_file_rejects_wrong_kind(tmp_path) -> None:
    coeffs = dict(coefficients_from_config())
    coeffs[StatId.RN1] = AdjustmentCoefficients(1.0, 1.0, CorrectionKind.SCALE)
    path = tmp_path / "bad.json"
    save_coefficients(path, coeffs, {})
    with pytest.raises(ParameterDomainError):
        load_coefficients(path)


def test_r_wrappers_feed_pvalues_and_quantiles() -> None:
    law = build_r_law(RLawSettings(size=4000, seed=21))
    for t in (0.5, 2.0, 6.0):
        assert r_tail(t, law) == law.tail(t)
        assert raw_pvalue(StatId.RN2, t, r_law=law).value == r_tail(t, law)
    for alpha in (0.5, 0.9):
        assert r_quantile(alpha, law) == law.quantile(alpha)
        assert adjusted_quantile(StatId.RN2, alpha, r_law=law) == r_quantile(alpha, law)


def test_rstar_quantile_matches_simulation() -> None:
    w = rng_for(78, 0).standard_normal((1_000_000, 3))
    draws = w[:, 0] ** 2 + np.maximum(np.maximum(w[:, 1], w[:, 2]), 0.0) ** 2
    law = RStarLaw()
    for alpha in (0.5, 0.9, 0.95, 0.99):
        q = rstar_quantile(alpha, law)
        empirical = float(np.mean(draws <= q))
        assert abs(empirical - alpha) <= 4 * math.sqrt(alpha * (1 - alpha) / draws.size)


def test_default_coefficients_are_parsed_once(tmp_path, monkeypatch) -> None:
    calls = []
    real = null_laws.load_config

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(null_laws, "load_config", counting)
    monkeypatch.setattr(null_laws, "_DEFAULT_COEFFS", {})
    monkeypatch.delenv("UPHT_CONFIG", raising=False)
    first = [adjusted_pvalue(StatId.RN1, 2.0, n).value for n in range(10, 60)]
    assert len(calls) == 1

    overlay = tmp_path / "weights.yaml"
    overlay.write_text("adjustment:\n  rn1: {kind: weight, a: 0.0, b: 1.0}\n")
    monkeypatch.setenv("UPHT_CONFIG", str(overlay))
    assert adjusted_pvalue(StatId.RN1, 2.0, 40).value == pytest.approx(chibar_tail(2.0))
    assert adjusted_pvalue(StatId.RN1, 2.0, 40).value != first[30]
    assert len(calls) == 2
