"""
Data generation under a given Theta, and type-I-error / power experiments.

Every replicate i draws its data from rng_for(seed, i), so tables depend only on the seed
and never on the worker count. Replicates whose fits fail are excluded and counted.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import VERSION, load_config
from errors import CalibrationError, ParameterDomainError
from estimation import FitOptions
from lrt import run_all
from model import Theta, UnorderedDataset
from null_laws import (
    CoefficientSet,
    RLaw,
    RStarLaw,
    StatId,
    adjusted_pvalue,
    default_coefficients,
    default_r_law,
    raw_pvalue,
)
from parallel import chunk_ranges, rng_for, run_indexed

logger = logging.getLogger(__name__)

STANDARD_THETA = Theta(0.0, 0.0, 1.0, 1.0, 0.0)
CHUNK_SIZE = 100
STANDARD_RHOS = (-0.5, -0.25, 0.0, 0.25, 0.5)


def generate_dataset(n: int, theta: Theta, rng: np.random.Generator) -> UnorderedDataset:
    """n pairs from N2(theta), each sorted into (y_lo, y_hi)."""
    if n < 1:
        raise ParameterDomainError(f"n must be positive, got {n}")
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    x1 = theta.mu1 + theta.sigma1 * u
    x2 = theta.mu2 + theta.sigma2 * (theta.rho * u + math.sqrt(1.0 - theta.rho**2) * v)
    return UnorderedDataset(x1, x2)


class Calibration(str, Enum):
    RAW = "raw"
    ADJUSTED = "adjusted"


@dataclass
class ScenarioConfig:
    n: int
    theta: Theta
    reps: int
    levels: Tuple[float, ...] = (0.01, 0.05, 0.10)
    seed: int = 4242
    tests: Tuple[StatId, ...] = tuple(StatId)
    modes: Tuple[Calibration, ...] = (Calibration.ADJUSTED,)
    label: str = ""

    def __post_init__(self):
        self.levels = tuple(sorted(float(a) for a in self.levels))
        self.tests = tuple(StatId(t) for t in self.tests)
        self.modes = tuple(Calibration(m) for m in self.modes)

    def validate(self) -> None:
        if self.reps < 1:
            raise ParameterDomainError(f"reps must be >= 1, got {self.reps}")
        if self.n < 7:
            raise ParameterDomainError(f"n must be >= 7 to fit every regime, got {self.n}")
        if not self.levels or not all(0.0 < a < 1.0 for a in self.levels):
            raise ParameterDomainError(f"levels must lie in (0, 1), got {self.levels}")
        if not self.tests or not self.modes:
            raise ParameterDomainError("need at least one test and one calibration mode")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "theta": self.theta.to_dict(),
            "reps": self.reps,
            "levels": list(self.levels),
            "seed": self.seed,
            "tests": [t.value for t in self.tests],
            "modes": [m.value for m in self.modes],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            n=int(d["n"]),
            theta=Theta.from_dict(d["theta"]),
            reps=int(d["reps"]),
            levels=tuple(d.get("levels", (0.01, 0.05, 0.10))),
            seed=int(d.get("seed", 4242)),
            tests=tuple(d.get("tests", [t.value for t in StatId])),
            modes=tuple(d.get("modes", ["adjusted"])),
            label=d.get("label", ""),
        )


@dataclass
class RejectionRow:
    test: StatId
    level: float
    mode: Calibration
    rejections: int
    reps_used: int

    @property
    def rate(self) -> float:
        return self.rejections / self.reps_used if self.reps_used else math.nan

    @property
    def pct(self) -> float:
        return 100.0 * self.rate

    @property
    def se(self) -> float:
        """Monte-Carlo standard error of pct."""
        p = self.rate
        return 100.0 * math.sqrt(p * (1.0 - p) / self.reps_used) if self.reps_used else math.nan


@dataclass
class RejectionTable:
    scenario: ScenarioConfig
    rows: List[RejectionRow] = field(default_factory=list)
    failures: int = 0

    def row(self, test: StatId, level: float, mode: str = "adjusted") -> RejectionRow:
        test, mode = StatId(test), Calibration(mode)
        for r in self.rows:
            if r.test is test and r.mode is mode and math.isclose(r.level, level):
                return r
        raise KeyError(f"no row for ({test}, {level}, {mode})")

    def percent(self, test: StatId, level: float, mode: str = "adjusted") -> float:
        return self.row(test, level, mode).pct

    def to_frame(self) -> pd.DataFrame:
        s = self.scenario
        return pd.DataFrame(
            [
                {
                    "label": s.label,
                    "n": s.n,
                    "mu1": s.theta.mu1,
                    "mu2": s.theta.mu2,
                    "sigma1": s.theta.sigma1,
                    "sigma2": s.theta.sigma2,
                    "rho": s.theta.rho,
                    "test": r.test.value,
                    "level": r.level,
                    "mode": r.mode.value,
                    "reject_pct": r.pct,
                    "se_pct": r.se,
                    "reps_used": r.reps_used,
                    "failures": self.failures,
                }
                for r in self.rows
            ]
        )


def _replicate_chunk(args) -> np.ndarray:
    """p-values for replicates [start, stop): shape (k, tests, modes); NaN rows mark failures."""
    cfg, (start, stop), opts, coeffs, r_law, rstar = args
    out = np.full((stop - start, len(cfg.tests), len(cfg.modes)), np.nan)
    for j, i in enumerate(range(start, stop)):
        ds = generate_dataset(cfg.n, cfg.theta, rng_for(cfg.seed, i))
        report = run_all(ds, opts, with_pvalues=False)
        if not all(t in report.statistics for t in cfg.tests):
            logger.debug("replicate %d excluded: %s", i, report.errors)
            continue
        for a, t in enumerate(cfg.tests):
            stat = report.statistics[t]
            for b, mode in enumerate(cfg.modes):
                if mode is Calibration.RAW:
                    p = raw_pvalue(t, stat, r_law=r_law, rstar=rstar)
                else:
                    p = adjusted_pvalue(t, stat, cfg.n, coeffs, r_law=r_law, rstar=rstar)
                out[j, a, b] = p.value
    return out


def simulate_pvalues(
    cfg: ScenarioConfig,
    opts: Optional[FitOptions] = None,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    rstar: Optional[RStarLaw] = None,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> np.ndarray:
    """(reps, tests, modes) array of p-values in replicate order."""
    cfg.validate()
    if StatId.RN2 in cfg.tests and r_law is None:
        r_law = default_r_law(threads=threads)
    if Calibration.ADJUSTED in cfg.modes and coeffs is None:
        coeffs = default_coefficients()
    chunks = chunk_ranges(cfg.reps, chunk_size)
    tasks = [(cfg, rng, opts, coeffs, r_law, rstar) for rng in chunks]
    return np.concatenate(run_indexed(_replicate_chunk, tasks, threads), axis=0)


def rejection_study(
    cfg: ScenarioConfig,
    opts: Optional[FitOptions] = None,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    rstar: Optional[RStarLaw] = None,
    threads: int = 1,
    max_failure_rate: float = 0.005,
    chunk_size: int = CHUNK_SIZE,
) -> RejectionTable:
    pv = simulate_pvalues(cfg, opts, coeffs, r_law, rstar, threads, chunk_size)
    ok = ~np.isnan(pv).any(axis=(1, 2))
    failures = int(cfg.reps - ok.sum())
    if failures:
        label = cfg.label or "scenario"
        logger.warning("%s: %d of %d replicates failed", label, failures, cfg.reps)
    if failures > max_failure_rate * cfg.reps:
        raise CalibrationError(
            f"{failures} of {cfg.reps} replicates failed (limit {max_failure_rate:.2%})"
        )
    used = pv[ok]
    table = RejectionTable(scenario=cfg, failures=failures)
    for a, t in enumerate(cfg.tests):
        for b, mode in enumerate(cfg.modes):
            for level in cfg.levels:
                rej = int(np.sum(used[:, a, b] <= level))
                table.rows.append(RejectionRow(t, level, mode, rej, int(used.shape[0])))
    return table


def standard_scenarios(
    kind: str,
    n_values: Sequence[int] = (25, 75),
    reps: int = 10000,
    seed: int = 4242,
) -> List[ScenarioConfig]:
    """
    "null": mu1 = mu2 = 0, sigma1 = sigma2 = 1, five rho values; raw and adjusted, levels
    1/5/10%. "power": mu1 = 0, sigma1 = 1, mu2 in {1, 1.5}, sigma2 in {1, 0.5}, five rho
    values; adjusted, 5% level.
    """
    out: List[ScenarioConfig] = []
    if kind == "null":
        for rho in STANDARD_RHOS:
            for n in n_values:
                out.append(ScenarioConfig(
                    n=n, theta=Theta(0.0, 0.0, 1.0, 1.0, rho), reps=reps,
                    levels=(0.01, 0.05, 0.10), seed=seed,
                    modes=(Calibration.RAW, Calibration.ADJUSTED),
                    label=f"null rho={rho:g} n={n}",
                ))
    elif kind == "power":
        for rho in STANDARD_RHOS:
            for sigma2 in (1.0, 0.5):
                for mu2 in (1.0, 1.5):
                    for n in n_values:
                        out.append(ScenarioConfig(
                            n=n, theta=Theta(0.0, mu2, 1.0, sigma2, rho), reps=reps,
                            levels=(0.05,), seed=seed,
                            label=f"power rho={rho:g} sigma={sigma2:g} mu={mu2:g} n={n}",
                        ))
    else:
        raise ParameterDomainError(f"unknown scenario kind {kind!r} (expected 'null' or 'power')")
    return out


def type1_sweep(
    n_values: Iterable[int],
    reps: int,
    seed: int,
    level: float = 0.05,
    opts: Optional[FitOptions] = None,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """Raw and adjusted type-I error (%) at rho = 0 across n, one row per (n, test)."""
    rows = []
    for n in n_values:
        cfg = ScenarioConfig(n=int(n), theta=STANDARD_THETA, reps=reps, levels=(level,), seed=seed,
                             modes=(Calibration.RAW, Calibration.ADJUSTED), label=f"sweep n={n}")
        table = rejection_study(cfg, opts, coeffs, r_law, threads=threads)
        for t in cfg.tests:
            raw = table.row(t, level, Calibration.RAW)
            adj = table.row(t, level, Calibration.ADJUSTED)
            rows.append({"n": int(n), "test": t.value, "level": level,
                         "raw_pct": raw.pct, "adjusted_pct": adj.pct, "se_pct": adj.se,
                         "failures": table.failures})
        logger.info("sweep n=%d done", n)
    return pd.DataFrame(rows)


def scenarios_from_config(path: Path) -> Tuple[List[ScenarioConfig], dict]:
    """Scenario list from a YAML file: {simulation: {...}, scenarios: [{n, theta, ...}, ...]}."""
    config = load_config(path)
    sim = config.get("simulation", {})
    out = []
    for i, d in enumerate(config.get("scenarios", [])):
        d = dict(d)
        d.setdefault("reps", sim.get("reps", 10000))
        d.setdefault("levels", sim.get("levels", (0.01, 0.05, 0.10)))
        d.setdefault("seed", sim.get("seed", 4242))
        d.setdefault("label", f"scenario {i}")
        out.append(ScenarioConfig.from_dict(d))
    return out, config


def write_table_csv(path: Path, frame: pd.DataFrame, metadata: Dict[str, object]) -> None:
    """CSV preceded by '# key: value' metadata lines (config echo, seed, version, timestamp)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"software": f"upht {VERSION}", **metadata,
            "created_at": datetime.now(timezone.utc).isoformat()}
    with open(path, "w", newline="") as f:
        for k, v in meta.items():
            text = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
            f.write(f"# {k}: {text}\n")
        frame.to_csv(f, index=False, float_format="%.6g")


def read_table_csv(path: Path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    meta: Dict[str, str] = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            meta[key] = value
    return pd.read_csv(path, comment="#"), meta
