"""
The four LRT statistics and the test report.

  rn1      = 2 {l(equal variance, rho=0) - l(null, rho=0)}
  rn2      = 2 {l(free, rho=0)           - l(null, rho=0)}
  rn1_star = 2 {l(equal variance)        - l(null)}          rho free throughout
  rn2_star = 2 {l(free)                  - l(null)}
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from errors import NestingViolationError, UphtError
from estimation import Constraint, FitOptions, FitResult, fit_all
from model import UnorderedDataset
from null_laws import (
    CoefficientSet,
    PValue,
    RLaw,
    RStarLaw,
    StatId,
    adjusted_pvalue,
    raw_pvalue,
)

logger = logging.getLogger(__name__)

CLAMP_SLACK = 1e-6

# statistic -> (larger regime, null regime)
STAT_REGIMES: Dict[StatId, Tuple[Constraint, Constraint]] = {
    StatId.RN1: (Constraint.EQVAR_RHO0, Constraint.NULL_RHO0),
    StatId.RN2: (Constraint.FREE_RHO0, Constraint.NULL_RHO0),
    StatId.RN1_STAR: (Constraint.EQVAR_RHOFREE, Constraint.NULL_RHOFREE),
    StatId.RN2_STAR: (Constraint.FREE, Constraint.NULL_RHOFREE),
}


def lrt_statistic(loglik_big: float, loglik_small: float, name: str = "statistic") -> float:
    """2 (l_big - l_small), clamped at 0 within CLAMP_SLACK; further below is an error."""
    stat = 2.0 * (loglik_big - loglik_small)
    if stat < -CLAMP_SLACK:
        raise NestingViolationError(
            f"{name} = {stat:.3g} < 0: the nested fit beat the larger one (optimizer failure)"
        )
    return max(stat, 0.0)


def _stats(fits: Dict[Constraint, FitResult], ids) -> Dict[StatId, float]:
    out = {}
    for s in ids:
        big, small = STAT_REGIMES[s]
        out[s] = lrt_statistic(fits[big].loglik, fits[small].loglik, s.value)
    return out


def lrt_rho0(ds: UnorderedDataset, opts: Optional[FitOptions] = None) -> Tuple[float, float]:
    fits = fit_all(ds, opts, (Constraint.NULL_RHO0, Constraint.EQVAR_RHO0, Constraint.FREE_RHO0))
    s = _stats(fits, (StatId.RN1, StatId.RN2))
    return s[StatId.RN1], s[StatId.RN2]


def lrt_rho_free(ds: UnorderedDataset, opts: Optional[FitOptions] = None) -> Tuple[float, float]:
    fits = fit_all(ds, opts, (Constraint.NULL_RHOFREE, Constraint.EQVAR_RHOFREE, Constraint.FREE))
    s = _stats(fits, (StatId.RN1_STAR, StatId.RN2_STAR))
    return s[StatId.RN1_STAR], s[StatId.RN2_STAR]


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    n: int
    statistics: Dict[StatId, float] = field(default_factory=dict)
    p_raw: Dict[StatId, PValue] = field(default_factory=dict)
    p_adj: Dict[StatId, PValue] = field(default_factory=dict)
    fits: Dict[Constraint, FitResult] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    @property
    def rn1(self) -> Optional[float]:
        return self.statistics.get(StatId.RN1)

    @property
    def rn2(self) -> Optional[float]:
        return self.statistics.get(StatId.RN2)

    @property
    def rn1_star(self) -> Optional[float]:
        return self.statistics.get(StatId.RN1_STAR)

    @property
    def rn2_star(self) -> Optional[float]:
        return self.statistics.get(StatId.RN2_STAR)

    @property
    def near_singular(self) -> List[str]:
        """Regimes whose fit hit the correlation cap."""
        return [c.value for c, f in self.fits.items() if f.near_singular]

    @property
    def complete(self) -> bool:
        return not self.errors and len(self.statistics) == len(StatId)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "statistics": {k.value: v for k, v in self.statistics.items()},
            "p_raw": {k.value: v.to_dict() for k, v in self.p_raw.items()},
            "p_adj": {k.value: v.to_dict() for k, v in self.p_adj.items()},
            "fits": {k.value: v.to_dict() for k, v in self.fits.items()},
            "errors": dict(self.errors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        return cls(
            n=int(d["n"]),
            statistics={StatId(k): float(v) for k, v in d.get("statistics", {}).items()},
            p_raw={StatId(k): PValue.from_dict(v) for k, v in d.get("p_raw", {}).items()},
            p_adj={StatId(k): PValue.from_dict(v) for k, v in d.get("p_adj", {}).items()},
            fits={Constraint(k): FitResult.from_dict(v) for k, v in d.get("fits", {}).items()},
            errors=dict(d.get("errors", {})),
        )


def run_all(
    ds: UnorderedDataset,
    opts: Optional[FitOptions] = None,
    coeffs: Optional[CoefficientSet] = None,
    r_law: Optional[RLaw] = None,
    rstar: Optional[RStarLaw] = None,
    with_pvalues: bool = True,
) -> TestReport:
    """
    All six fits, four statistics, raw and adjusted p-values. A failing fit or statistic
    leaves the other tests intact; its error is recorded under the regime or statistic id.
    """
    report = TestReport(n=ds.n)

    def record(c: Constraint, e: Exception) -> None:
        logger.warning("fit %s failed: %s", c.value, e)
        report.errors[c.value] = str(e)

    report.fits = fit_all(ds, opts, on_error=record)
    for s, (big, small) in STAT_REGIMES.items():
        if big not in report.fits or small not in report.fits:
            missing = big if big not in report.fits else small
            report.errors[s.value] = f"missing fit for {missing.value}"
            continue
        try:
            report.statistics[s] = lrt_statistic(
                report.fits[big].loglik, report.fits[small].loglik, s.value
            )
        except NestingViolationError as e:
            logger.warning("%s", e)
            report.errors[s.value] = str(e)
            continue
        if not with_pvalues:
            continue
        t = report.statistics[s]
        try:
            report.p_raw[s] = raw_pvalue(s, t, r_law=r_law, rstar=rstar)
            report.p_adj[s] = adjusted_pvalue(s, t, ds.n, coeffs, r_law=r_law, rstar=rstar)
        except UphtError as e:
            report.errors[s.value] = str(e)
    return report
