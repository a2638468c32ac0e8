"""
Finite-sample adjustment by computer experiment.

For each n on a grid, simulate the four statistics under the standard bivariate normal,
match first moments (p_n = E R_n1, r_n = E R_n2 / E R, and likewise for the starred tests),
then fit c + a n^-b to each sequence by least squares.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.optimize import minimize_scalar

from config import VERSION
from errors import CalibrationError, ParameterDomainError
from estimation import FitOptions
from lrt import run_all
from null_laws import (
    TEST_KIND,
    AdjustmentCoefficients,
    CorrectionKind,
    RLawSettings,
    StatId,
    build_r_law,
)
from parallel import chunk_ranges, rng_for, run_indexed
from simulate import CHUNK_SIZE, STANDARD_THETA, generate_dataset

logger = logging.getLogger(__name__)

B_BRACKET = (0.05, 3.0)
B_SCAN_POINTS = 200
MIN_GRID_N = 10


@dataclass
class MomentRecord:
    n: int
    stat: StatId
    mean_stat: float
    reps: int
    seed: int
    std_stat: float = 0.0
    failures: int = 0

    @property
    def stderr(self) -> float:
        return self.std_stat / math.sqrt(self.reps) if self.reps else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stat"] = self.stat.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MomentRecord":
        return cls(**{**d, "stat": StatId(d["stat"])})


@dataclass
class CalibrationTarget:
    n: int
    stat: StatId
    value: float
    stderr: float = 0.0
    clipped: bool = False


@dataclass
class PowerLawFit:
    c: float
    a: float
    b: float
    rss: float
    n_points: int = 0

    def predict(self, n) -> np.ndarray:
        return self.c + self.a * np.asarray(n, dtype=np.float64) ** (-self.b)

    def to_coefficients(self, kind: CorrectionKind) -> AdjustmentCoefficients:
        return AdjustmentCoefficients(a=self.a, b=self.b, kind=kind)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_grid(n_grid: Sequence[int]) -> List[int]:
    grid = [int(n) for n in n_grid]
    if len(grid) < 3 or len(set(grid)) != len(grid):
        raise ParameterDomainError(f"need at least 3 distinct grid points, got {grid}")
    if min(grid) < MIN_GRID_N:
        raise ParameterDomainError(f"grid points must be >= {MIN_GRID_N}, got {min(grid)}")
    return sorted(grid)


def _moment_chunk(args) -> np.ndarray:
    """Statistics for replicates [start, stop) at sample size n; NaN rows mark failures."""
    n, seed, (start, stop), opts = args
    out = np.full((stop - start, len(StatId)), np.nan)
    for j, i in enumerate(range(start, stop)):
        ds = generate_dataset(n, STANDARD_THETA, rng_for(seed, n, i))
        report = run_all(ds, opts, with_pvalues=False)
        if report.complete:
            out[j] = [report.statistics[s] for s in StatId]
    return out


def estimate_moments(
    n_grid: Sequence[int],
    reps: int,
    seed: int,
    opts: Optional[FitOptions] = None,
    threads: int = 1,
    max_failure_rate: float = 0.001,
    chunk_size: int = CHUNK_SIZE,
) -> List[MomentRecord]:
    """Monte-Carlo first moments of the four statistics at each n; one record per (n, stat)."""
    if reps < 1:
        raise ParameterDomainError(f"reps must be >= 1, got {reps}")
    records: List[MomentRecord] = []
    for n in n_grid:
        tasks = [(int(n), seed, rng, opts) for rng in chunk_ranges(reps, chunk_size)]
        stats = np.concatenate(run_indexed(_moment_chunk, tasks, threads), axis=0)
        ok = ~np.isnan(stats).any(axis=1)
        failures = int(reps - ok.sum())
        if failures > max_failure_rate * reps:
            raise CalibrationError(
                f"n={n}: {failures} of {reps} replicates failed (limit {max_failure_rate:.2%})"
            )
        if failures:
            logger.warning("n=%d: %d replicates excluded after fit failures", n, failures)
        used = stats[ok]
        for k, s in enumerate(StatId):
            records.append(MomentRecord(
                n=int(n), stat=s, mean_stat=float(np.mean(used[:, k])), reps=int(used.shape[0]),
                seed=seed, std_stat=float(np.std(used[:, k], ddof=1)) if used.shape[0] > 1 else 0.0,
                failures=failures,
            ))
        logger.info("n=%d: means %s", n, [round(r.mean_stat, 4) for r in records[-len(StatId):]])
    return records


def reference_mean_R(
    draws: int, seed: int, threads: int = 1, with_stderr: bool = False
):
    """Monte-Carlo E[R] from a fresh table of `draws` samples."""
    law = build_r_law(RLawSettings(size=int(draws), seed=int(seed)), threads)
    mean = law.mean()
    if with_stderr:
        return mean, float(np.std(law.mc_table, ddof=1) / math.sqrt(law.size))
    return mean


def reference_mean_Rstar(draws: int, seed: int, with_stderr: bool = False):
    """
    Monte-Carlo E[R*] from the max form. Cross-checked against 1 + E[(max(w2, w3)+)^2] on an
    independent stream; disagreement beyond 4 combined standard errors is logged.
    """
    w = rng_for(seed, 0).standard_normal((int(draws), 3))
    pos = np.maximum(w[:, 1:], 0.0) ** 2
    r = np.maximum(w[:, 0] ** 2 + pos[:, 0], w[:, 0] ** 2 + pos[:, 1])
    mean, se = float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size))

    v = rng_for(seed, 1).standard_normal((int(draws), 2))
    alt = 1.0 + np.maximum(v.max(axis=1), 0.0) ** 2
    alt_mean, alt_se = float(alt.mean()), float(alt.std(ddof=1) / math.sqrt(alt.size))
    if abs(mean - alt_mean) > 4.0 * math.hypot(se, alt_se):
        logger.warning("E[R*] estimators disagree: %.5f vs %.5f", mean, alt_mean)
    return (mean, se) if with_stderr else mean


def moments_to_targets(
    records: Sequence[MomentRecord], mean_R: float, mean_Rstar: float
) -> List[CalibrationTarget]:
    """Weight targets are the means themselves (clipped into [0.5, 1]); scale targets are ratios."""
    out = []
    for rec in records:
        kind = TEST_KIND[rec.stat]
        if kind is CorrectionKind.WEIGHT:
            value, se = rec.mean_stat, rec.stderr
            clipped = not 0.5 <= value <= 1.0
            if clipped:
                logger.warning("%s n=%d: weight target %.4f clipped into [0.5, 1]",
                               rec.stat.value, rec.n, value)
                value = min(max(value, 0.5), 1.0)
        else:
            ref = mean_R if rec.stat is StatId.RN2 else mean_Rstar
            value, se, clipped = rec.mean_stat / ref, rec.stderr / ref, False
        out.append(CalibrationTarget(rec.n, rec.stat, float(value), float(se), clipped))
    return out


def fit_power_law(points: Sequence[Tuple[float, float]], c: float) -> PowerLawFit:
    """
    Least squares for y = c + a n^-b with c fixed. For fixed b the optimal a is linear,
    so rss is profiled over b: a log-spaced scan of the bracket, then bounded Brent search
    between the scan neighbours of the best point.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n, y = pts[:, 0], pts[:, 1] - c
    if pts.shape[0] < 3 or len(np.unique(n)) != pts.shape[0]:
        raise CalibrationError(f"need at least 3 points with distinct n, got {pts.shape[0]}")
    if np.any(n <= 0):
        raise CalibrationError("n must be positive")
    if np.allclose(y, 0.0, atol=1e-15):
        raise CalibrationError("responses equal the intercept; exponent is not identified")

    def a_of(b: float) -> float:
        x = n ** (-b)
        return float(np.dot(x, y) / np.dot(x, x))

    def rss(b: float) -> float:
        return float(np.sum((y - a_of(b) * n ** (-b)) ** 2))

    scan = np.geomspace(B_BRACKET[0], B_BRACKET[1], B_SCAN_POINTS)
    vals = np.array([rss(b) for b in scan])
    k = int(np.argmin(vals))
    if k == 0 or k == len(scan) - 1:
        raise CalibrationError(f"rss minimum at the edge of b in {B_BRACKET}; not bracketed")
    res = minimize_scalar(rss, bounds=(scan[k - 1], scan[k + 1]), method="bounded",
                          options={"xatol": 1e-10})
    b = float(res.x) if res.fun <= vals[k] else float(scan[k])
    return PowerLawFit(c=c, a=a_of(b), b=b, rss=rss(b), n_points=int(pts.shape[0]))


@dataclass
class CalibrationResult:
    records: List[MomentRecord]
    targets: List[CalibrationTarget]
    fits: Dict[StatId, PowerLawFit]
    mean_R: float
    mean_Rstar: float
    provenance: dict = field(default_factory=dict)

    def coefficients(self) -> Dict[StatId, AdjustmentCoefficients]:
        return {s: f.to_coefficients(TEST_KIND[s]) for s, f in self.fits.items()}

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "targets": [{**asdict(t), "stat": t.stat.value} for t in self.targets],
            "fits": {s.value: f.to_dict() for s, f in self.fits.items()},
            "mean_R": self.mean_R,
            "mean_Rstar": self.mean_Rstar,
            "provenance": self.provenance,
        }


def fit_targets(targets: Sequence[CalibrationTarget]) -> Dict[StatId, PowerLawFit]:
    fits = {}
    for s in StatId:
        pts = [(t.n, t.value) for t in targets if t.stat is s]
        fits[s] = fit_power_law(pts, TEST_KIND[s].intercept)
        logger.info("%s: a=%.4f b=%.4f rss=%.3g", s.value, fits[s].a, fits[s].b, fits[s].rss)
    return fits


def calibrate(
    n_grid: Sequence[int],
    reps: int,
    seed: int,
    reference_draws: int = 200000,
    opts: Optional[FitOptions] = None,
    threads: int = 1,
    max_failure_rate: float = 0.001,
    low_precision_reps: int = 10000,
) -> CalibrationResult:
    """The whole experiment: moments, reference means, targets, power-law fits."""
    grid = _check_grid(n_grid)
    records = estimate_moments(grid, reps, seed, opts, threads, max_failure_rate)
    mean_R = reference_mean_R(reference_draws, seed, threads)
    mean_Rstar = reference_mean_Rstar(reference_draws, seed)
    targets = moments_to_targets(records, mean_R, mean_Rstar)
    fits = fit_targets(targets)
    provenance = {
        "n_grid": grid,
        "reps": int(reps),
        "seed": int(seed),
        "reference_draws": int(reference_draws),
        "mean_R": mean_R,
        "mean_Rstar": mean_Rstar,
        "low_precision": bool(reps < low_precision_reps),
        "clipped_targets": [[t.stat.value, t.n] for t in targets if t.clipped],
        "version": VERSION,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if provenance["low_precision"]:
        logger.warning("reps=%d < %d: coefficients flagged low precision", reps, low_precision_reps)
    return CalibrationResult(records, targets, fits, mean_R, mean_Rstar, provenance)


def save_coefficients(
    path: Path, coeffs: Dict[StatId, AdjustmentCoefficients], provenance: dict
) -> None:
    """YAML for .yaml/.yml, JSON otherwise; readable by null_laws.load_coefficients."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "coefficients": {s.value: c.to_dict() for s, c in coeffs.items()},
        "provenance": provenance,
    }
    if path.suffix in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(doc, sort_keys=True))
    else:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
