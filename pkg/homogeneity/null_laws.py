"""
Limiting null laws of the four LRT statistics and their finite-sample adjustments.

  rn1, rn1_star : chi-bar mixture (1 - p) chi2_0 + p chi2_1, p = 0.5 asymptotically
  rn2           : R = sup_x {2 x'w - x'x}, x' = (x1^2, x2^2, 2 x1 x2), w ~ N3(0, I); simulated table
  rn2_star      : R* = max{w1^2 + (w2+)^2, w1^2 + (w3+)^2}; c.d.f. by one-dimensional quadrature

Adjusted laws replace p by 0.5 + a n^-b (weight kind) or scale R, R* by 1 + a n^-b (scale kind).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import yaml
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr
from scipy.stats import chi2

from config import CONFIG_ENV, cache_dir, load_config
from errors import LawStateError, ParameterDomainError
from parallel import chunk_ranges, rng_for, run_indexed

logger = logging.getLogger(__name__)

R_TABLE_FORMAT_VERSION = 1
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(u: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * u * u)


class StatId(str, Enum):
    RN1 = "rn1"
    RN2 = "rn2"
    RN1_STAR = "rn1_star"
    RN2_STAR = "rn2_star"

    @property
    def label(self) -> str:
        return {"rn1": "R_n1", "rn2": "R_n2", "rn1_star": "R*_n1", "rn2_star": "R*_n2"}[self.value]


class CorrectionKind(str, Enum):
    WEIGHT = "weight"  # intercept 0.5
    SCALE = "scale"    # intercept 1

    @property
    def intercept(self) -> float:
        return 0.5 if self is CorrectionKind.WEIGHT else 1.0


TEST_KIND = {
    StatId.RN1: CorrectionKind.WEIGHT,
    StatId.RN2: CorrectionKind.SCALE,
    StatId.RN1_STAR: CorrectionKind.WEIGHT,
    StatId.RN2_STAR: CorrectionKind.SCALE,
}


@dataclass(frozen=True)
class AdjustmentCoefficients:
    a: float
    b: float
    kind: CorrectionKind

    def __post_init__(self):
        object.__setattr__(self, "kind", CorrectionKind(self.kind))
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b <= 0:
            raise ParameterDomainError(f"need finite a and b > 0, got a={self.a}, b={self.b}")

    @property
    def c(self) -> float:
        return self.kind.intercept

    def value(self, n: int) -> tuple[float, bool]:
        """(p_n or r_n, clipped). Weights are clipped into [0.5, 1], scales to >= 1."""
        v = self.c + self.a * float(n) ** (-self.b)
        hi = 1.0 if self.kind is CorrectionKind.WEIGHT else math.inf
        clipped = v < self.c or v > hi
        return min(max(v, self.c), hi), clipped

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "c": self.c, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> "AdjustmentCoefficients":
        return cls(a=float(d["a"]), b=float(d["b"]), kind=CorrectionKind(d["kind"]))


CoefficientSet = Dict[StatId, AdjustmentCoefficients]


def coefficients_from_config(config: Optional[dict] = None) -> CoefficientSet:
    section = (config or load_config()).get("adjustment", {})
    return {t: AdjustmentCoefficients.from_dict(section[t.value]) for t in StatId}


_DEFAULT_COEFFS: Dict[str, CoefficientSet] = {}


def default_coefficients() -> CoefficientSet:
    """Coefficients of the active config, parsed once per config file."""
    key = os.environ.get(CONFIG_ENV, "")
    if key not in _DEFAULT_COEFFS:
        _DEFAULT_COEFFS[key] = coefficients_from_config()
    return _DEFAULT_COEFFS[key]


def load_coefficients(path: Path) -> CoefficientSet:
    """Read a coefficients file written by `calibrate` (YAML or JSON)."""
    with open(path) as f:
        doc = yaml.safe_load(f) or {}
    section = doc.get("coefficients", doc)
    missing = [t.value for t in StatId if t.value not in section]
    if missing:
        raise ParameterDomainError(f"{path}: coefficients missing for {', '.join(missing)}")
    coeffs = {t: AdjustmentCoefficients.from_dict(section[t.value]) for t in StatId}
    for t, c in coeffs.items():
        if c.kind is not TEST_KIND[t]:
            raise ParameterDomainError(f"{path}: {t.value} must be of kind {TEST_KIND[t].value}")
    if doc.get("provenance", {}).get("low_precision"):
        logger.warning("coefficients in %s were calibrated with few replicates", path)
    return coeffs


@dataclass(frozen=True)
class PValue:
    value: float
    clipped: bool = False
    below_resolution: bool = False
    table_size: Optional[int] = None

    def __float__(self) -> float:
        return self.value

    def format(self) -> str:
        if self.below_resolution and self.table_size:
            return f"< {self.value:.3e} (1/(N+1), N={self.table_size})"
        return f"{self.value:.3e}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PValue":
        return cls(**d)


def _check_t(t: float) -> float:
    t = float(t)
    if not t >= 0 or math.isnan(t):
        raise ParameterDomainError(f"statistic must be >= 0, got {t}")
    return t


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ParameterDomainError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


# ---- chi-bar mixture ----

@dataclass(frozen=True)
class ChiBarMix:
    weight: float = 0.5

    def __post_init__(self):
        if not 0.5 <= self.weight <= 1.0:
            raise ParameterDomainError(f"chi-bar weight must lie in [0.5, 1], got {self.weight}")

    def tail(self, t: float) -> float:
        t = _check_t(t)
        if t == 0.0:
            return 1.0
        return self.weight * float(chi2.sf(t, 1))

    def quantile(self, alpha: float) -> float:
        alpha = _check_alpha(alpha)
        if alpha <= 1.0 - self.weight:
            return 0.0
        return float(chi2.isf((1.0 - alpha) / self.weight, 1))


def chibar_tail(t: float, weight: float = 0.5) -> float:
    return ChiBarMix(weight).tail(t)


def chibar_quantile(alpha: float, weight: float = 0.5) -> float:
    return ChiBarMix(weight).quantile(alpha)


# ---- R law ----

def _angle_basis(m: int):
    phi = np.linspace(0.0, 2.0 * np.pi, int(m), endpoint=False)
    return phi, np.cos(phi), np.sin(phi)


def _profile(w: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(v.w)+^2 / |v|^2 with v = ((1+c)/2, (1-c)/2, s); radius maximized out."""
    vw = 0.5 * (w[:, 0:1] + w[:, 1:2]) + 0.5 * (w[:, 0:1] - w[:, 1:2]) * c + w[:, 2:3] * s
    return np.square(np.maximum(vw, 0.0)) / (0.5 * (3.0 - c * c))


def sample_R_batch(w: np.ndarray, angle_grid: int = 720, refine_iters: int = 60) -> np.ndarray:
    """
    R for each row of w (shape (m, 3)). Writing (x1, x2) = r (cos t, sin t) and phi = 2t turns
    x into r^2 v(phi), so the radius profiles out and only the angle is searched: a grid that
    contains the axes and diagonals, then golden-section refinement around the best cell.
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    phi, c, s = _angle_basis(angle_grid)
    vals = _profile(w, c[None, :], s[None, :])
    best = np.argmax(vals, axis=1)
    out = vals[np.arange(w.shape[0]), best]
    step = 2.0 * np.pi / angle_grid
    lo, hi = phi[best] - step, phi[best] + step

    def h(x: np.ndarray) -> np.ndarray:
        return _profile(w, np.cos(x)[:, None], np.sin(x)[:, None])[:, 0]

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = h(x1), h(x2)
    for _ in range(refine_iters):
        left = f1 >= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + _GOLDEN * (hi - lo))
        x1n = np.where(left, hi - _GOLDEN * (hi - lo), x2)
        f2n = np.where(left, f1, np.nan)
        f1n = np.where(left, np.nan, f2)
        x1, x2 = x1n, x2n
        need1, need2 = np.isnan(f1n), np.isnan(f2n)
        f1n[need1] = h(x1)[need1]
        f2n[need2] = h(x2)[need2]
        f1, f2 = f1n, f2n
    return np.maximum(out, np.maximum(f1, f2))


def sample_R(w, angle_grid: int = 720, refine_iters: int = 60) -> float:
    """R for a single w = (w1, w2, w3). Always >= 0."""
    w = np.asarray(w, dtype=np.float64).reshape(1, 3)
    return float(sample_R_batch(w, angle_grid, refine_iters)[0])


@dataclass(frozen=True)
class RLawSettings:
    size: int = 200000
    seed: int = 1973
    angle_grid: int = 720
    refine_iters: int = 60
    block_size: int = 10000

    @classmethod
    def from_config(cls, config: Optional[dict] = None) -> "RLawSettings":
        sect = (config or load_config()).get("r_law", {})
        d = cls()
        return cls(
            size=int(sect.get("table_size", d.size)),
            seed=int(sect.get("seed", d.seed)),
            angle_grid=int(sect.get("angle_grid", d.angle_grid)),
            refine_iters=int(sect.get("refine_iters", d.refine_iters)),
            block_size=int(sect.get("block_size", d.block_size)),
        )

    def settings_hash(self) -> str:
        payload = dict(asdict(self), format_version=R_TABLE_FORMAT_VERSION)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


class RLaw:
    """Sorted Monte-Carlo draws of R. Tail estimates are (k + 1) / (N + 1)."""

    def __init__(self, draws: np.ndarray, settings: Optional[RLawSettings] = None):
        draws = np.sort(np.asarray(draws, dtype=np.float64).ravel())
        draws.setflags(write=False)
        self.mc_table = draws
        self.settings = settings

    @property
    def size(self) -> int:
        return int(self.mc_table.shape[0])

    @property
    def seed(self) -> Optional[int]:
        return self.settings.seed if self.settings else None

    @property
    def resolution(self) -> float:
        return 1.0 / (self.size + 1)

    def _require(self) -> None:
        if self.size == 0:
            raise LawStateError("R law table is empty")

    def exceed_count(self, t: float) -> int:
        self._require()
        return int(self.size - np.searchsorted(self.mc_table, t, side="left"))

    def tail(self, t: float) -> float:
        t = _check_t(t)
        self._require()
        if t == 0.0:
            return 1.0
        return (self.exceed_count(t) + 1) / (self.size + 1)

    def quantile(self, alpha: float) -> float:
        alpha = _check_alpha(alpha)
        self._require()
        return float(np.quantile(self.mc_table, alpha))

    def mean(self) -> float:
        self._require()
        return float(np.mean(self.mc_table))


def _r_block(args) -> np.ndarray:
    settings, block, (start, stop) = args
    w = rng_for(settings.seed, block).standard_normal((stop - start, 3))
    return sample_R_batch(w, settings.angle_grid, settings.refine_iters)


def build_r_law(settings: Optional[RLawSettings] = None, threads: int = 1) -> RLaw:
    """Simulate the R table block by block; each block has its own seed, so workers don't matter."""
    settings = settings or RLawSettings()
    if settings.size < 1:
        raise ParameterDomainError(f"R table size must be positive, got {settings.size}")
    blocks = chunk_ranges(settings.size, settings.block_size)
    parts = run_indexed(_r_block, [(settings, i, rng) for i, rng in enumerate(blocks)], threads)
    return RLaw(np.concatenate(parts), settings)


def _cache_path(settings: RLawSettings, directory: Path) -> Path:
    return directory / f"r_law_{settings.seed}_{settings.size}_{settings.settings_hash()}.npz"


def load_or_build_r_law(
    settings: Optional[RLawSettings] = None,
    directory: Optional[Path] = None,
    threads: int = 1,
) -> RLaw:
    settings = settings or RLawSettings()
    directory = Path(directory) if directory is not None else cache_dir()
    path = _cache_path(settings, directory)
    if path.exists():
        try:
            with np.load(path) as z:
                if (str(z["settings_hash"]) == settings.settings_hash()
                        and int(z["format_version"]) == R_TABLE_FORMAT_VERSION):
                    logger.debug("R law cache hit: %s", path)
                    return RLaw(z["draws"], settings)
            logger.info("R law cache %s is stale; regenerating", path)
        except (OSError, KeyError, ValueError) as e:
            logger.warning("unreadable R law cache %s (%s); regenerating", path, e)
    logger.info("simulating R law table (size=%d, seed=%d)", settings.size, settings.seed)
    law = build_r_law(settings, threads)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            draws=law.mc_table,
            seed=settings.seed,
            size=settings.size,
            settings_hash=settings.settings_hash(),
            format_version=R_TABLE_FORMAT_VERSION,
        )
    except OSError as e:
        logger.warning("could not write R law cache %s: %s", path, e)
    return law


_LAWS: Dict[RLawSettings, RLaw] = {}
_DEFAULT_SETTINGS: Dict[str, RLawSettings] = {}


def default_r_law(settings: Optional[RLawSettings] = None, threads: int = 1) -> RLaw:
    """Process-wide R table for `settings` (config defaults when None), via the disk cache."""
    if settings is None:
        key = os.environ.get(CONFIG_ENV, "")
        if key not in _DEFAULT_SETTINGS:
            _DEFAULT_SETTINGS[key] = RLawSettings.from_config()
        settings = _DEFAULT_SETTINGS[key]
    if settings not in _LAWS:
        _LAWS[settings] = load_or_build_r_law(settings, threads=threads)
    return _LAWS[settings]


def r_tail(t: float, law: RLaw) -> float:
    return law.tail(t)


def r_quantile(alpha: float, law: RLaw) -> float:
    return law.quantile(alpha)


# ---- R* law ----

@dataclass(frozen=True)
class RStarLaw:
    """P(R* <= x) = E[Phi^2(sqrt(x - w1^2)); w1^2 <= x], integrated in u = |w1|."""

    epsabs: float = 1e-9
    limit: int = 200

    @classmethod
    def from_config(cls, config: Optional[dict] = None) -> "RStarLaw":
        sect = (config or load_config()).get("rstar", {})
        return cls(epsabs=float(sect.get("epsabs", 1e-9)), limit=int(sect.get("limit", 200)))

    def _integral(self, x: float, integrand) -> float:
        val, _ = quad(
            integrand, 0.0, math.sqrt(x), epsabs=self.epsabs, epsrel=1e-10, limit=self.limit
        )
        return val

    def cdf(self, x: float) -> float:
        x = _check_t(x)
        if x == 0.0:
            return 0.0

        def f(u):
            return ndtr(math.sqrt(max(x - u * u, 0.0))) ** 2 * _phi(u)

        return min(1.0, max(0.0, 2.0 * self._integral(x, f)))

    def sf(self, x: float) -> float:
        x = _check_t(x)
        if x == 0.0:
            return 1.0

        def f(u):
            r = math.sqrt(max(x - u * u, 0.0))
            # 1 - Phi^2 = (1 - Phi)(1 + Phi), kept accurate in the far tail
            return ndtr(-r) * (1.0 + ndtr(r)) * _phi(u)

        return min(1.0, max(0.0, float(chi2.sf(x, 1)) + 2.0 * self._integral(x, f)))

    def quantile(self, alpha: float) -> float:
        alpha = _check_alpha(alpha)
        target = 1.0 - alpha
        lo = float(chi2.isf(target, 1))  # R* >= w1^2, so sf(lo) >= target
        hi = max(2.0 * lo, 1.0)
        while self.sf(hi) > target:
            hi *= 2.0
        return float(brentq(lambda x: self.sf(x) - target, lo, hi, xtol=1e-10, rtol=1e-12))

    def mean(self) -> float:
        """E[R*] = 1 + E[(max(w2, w3)+)^2], by quadrature over the density of max(w2, w3)."""
        val, _ = quad(lambda m: m * m * 2.0 * _phi(m) * ndtr(m), 0.0, np.inf, epsabs=1e-12)
        return 1.0 + val


_RSTAR = RStarLaw()


def rstar_cdf(x: float, law: Optional[RStarLaw] = None) -> float:
    return (law or _RSTAR).cdf(x)


def rstar_sf(x: float, law: Optional[RStarLaw] = None) -> float:
    return (law or _RSTAR).sf(x)


def rstar_quantile(alpha: float, law: Optional[RStarLaw] = None) -> float:
    return (law or _RSTAR).quantile(alpha)


# ---- raw and adjusted p-values ----

def raw_pvalue(test: StatId, t: float, r_law: Optional[RLaw] = None,
               rstar: Optional[RStarLaw] = None) -> PValue:
    """p-value from the limiting law (no finite-sample correction)."""
    return _pvalue(StatId(test), _check_t(t), 0.5, 1.0, False, r_law, rstar)


def adjusted_pvalue(
    test: StatId,
    t: float,
    n: int,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    rstar: Optional[RStarLaw] = None,
) -> PValue:
    """p-value from the finite-sample adjusted law for sample size n."""
    test = StatId(test)
    t = _check_t(t)
    factor, clipped = _correction(test, n, coeffs)
    if clipped:
        logger.warning("%s: adjustment at n=%d clipped to %.4g", test.value, n, factor)
    if TEST_KIND[test] is CorrectionKind.WEIGHT:
        return _pvalue(test, t, factor, 1.0, clipped, r_law, rstar)
    return _pvalue(test, t, 0.5, factor, clipped, r_law, rstar)


def _correction(test: StatId, n: int, coeffs: Optional[CoefficientSet]) -> tuple[float, bool]:
    if n is None or int(n) < 3:
        raise ParameterDomainError(f"adjusted laws need n >= 3, got {n}")
    coeffs = coeffs or default_coefficients()
    return coeffs[test].value(int(n))


def _pvalue(test, t, weight, scale, clipped, r_law, rstar) -> PValue:
    if test in (StatId.RN1, StatId.RN1_STAR):
        return PValue(chibar_tail(t, weight), clipped=clipped)
    if test is StatId.RN2_STAR:
        return PValue(rstar_sf(t / scale, rstar), clipped=clipped)
    law = r_law or default_r_law()
    x = t / scale
    below = x > 0 and law.exceed_count(x) == 0
    return PValue(r_tail(x, law), clipped=clipped, below_resolution=below, table_size=law.size)


def adjusted_quantile(
    test: StatId,
    alpha: float,
    n: Optional[int] = None,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    rstar: Optional[RStarLaw] = None,
) -> float:
    """Lower alpha-quantile of the (adjusted, when n is given) law of `test`."""
    test = StatId(test)
    alpha = _check_alpha(alpha)
    weight, scale = 0.5, 1.0
    if n is not None:
        factor, _ = _correction(test, n, coeffs)
        if TEST_KIND[test] is CorrectionKind.WEIGHT:
            weight = factor
        else:
            scale = factor
    if test in (StatId.RN1, StatId.RN1_STAR):
        return chibar_quantile(alpha, weight)
    if test is StatId.RN2_STAR:
        return scale * rstar_quantile(alpha, rstar)
    return scale * r_quantile(alpha, r_law or default_r_law())


def critical_values(
    n: Optional[int],
    level: float,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
) -> Dict[StatId, float]:
    """Rejection thresholds at significance `level` for the four tests."""
    return {t: adjusted_quantile(t, 1.0 - level, n, coeffs, r_law) for t in StatId}
