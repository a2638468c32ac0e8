"""
Constrained maximum-likelihood estimation of Theta for unordered pairs.

Six regimes are needed by the four tests. The exchangeable (null) fits have closed forms.
The rho-free regimes use the half-sum/half-difference split: the normal part is maximized in
closed form and only the two-component part is searched numerically. The rho = 0 regimes
couple both parts and are searched jointly in (mu, log sigma) coordinates.

Numerical fits are multi-start Nelder-Mead with an optional BFGS polish; the likelihood is
quartic-flat near the null, where gradient line searches stall.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from errors import DegenerateDataError, FitConvergenceError, ParameterDomainError
from model import (
    ReparamTheta,
    Theta,
    UnorderedDataset,
    from_reparam,
    log_likelihood,
    loglik_mixture_part,
    pair_log_densities,
    to_reparam,
)
from parallel import rng_for

logger = logging.getLogger(__name__)

RHO_START_CLIP = 0.95


class Constraint(Enum):
    NULL_RHO0 = "null_rho0"          # (mu1, sigma1) = (mu2, sigma2), rho = 0
    EQVAR_RHO0 = "eqvar_rho0"        # sigma1 = sigma2, rho = 0
    FREE_RHO0 = "free_rho0"          # rho = 0
    NULL_RHOFREE = "null_rhofree"    # (mu1, sigma1) = (mu2, sigma2)
    EQVAR_RHOFREE = "eqvar_rhofree"  # sigma1 = sigma2
    FREE = "free"

    @property
    def rho_free(self) -> bool:
        return self in (Constraint.NULL_RHOFREE, Constraint.EQVAR_RHOFREE, Constraint.FREE)

    @property
    def level(self) -> int:
        """0 = null, 1 = equal variance, 2 = unrestricted margins."""
        return {
            Constraint.NULL_RHO0: 0, Constraint.NULL_RHOFREE: 0,
            Constraint.EQVAR_RHO0: 1, Constraint.EQVAR_RHOFREE: 1,
            Constraint.FREE_RHO0: 2, Constraint.FREE: 2,
        }[self]

    @property
    def index(self) -> int:
        return list(Constraint).index(self)

    @property
    def n_free(self) -> int:
        return 2 + self.level + (1 if self.rho_free else 0)

    def nested_in(self, other: "Constraint") -> bool:
        """True when every Theta feasible here is feasible under `other`."""
        return self.level <= other.level and (other.rho_free or not self.rho_free)

    def satisfied_by(self, theta: Theta) -> bool:
        if not self.rho_free and theta.rho != 0.0:
            return False
        if self.level <= 1 and theta.sigma1 != theta.sigma2:
            return False
        if self.level == 0 and theta.mu1 != theta.mu2:
            return False
        return True

    def project(self, theta: Theta) -> Theta:
        """A nearby feasible Theta (used to map starts into the regime)."""
        mu1, mu2, s1, s2, rho = theta.mu1, theta.mu2, theta.sigma1, theta.sigma2, theta.rho
        if not self.rho_free:
            rho = 0.0
        if self.level <= 1 and s1 != s2:
            s1 = s2 = math.sqrt(0.5 * (s1 * s1 + s2 * s2))
        if self.level == 0 and mu1 != mu2:
            mu1 = mu2 = 0.5 * (mu1 + mu2)
        return Theta(mu1, mu2, s1, s2, rho)


@dataclass
class FitOptions:
    tolerance: float = 1e-10
    xtol: float = 1e-8
    max_iter: int = 5000
    n_random_starts: int = 8
    perturb_scale: float = 0.25
    rho_cap: float = 12.0
    polish: bool = True
    seed: int = 20240101

    @classmethod
    def from_config(cls, config: dict) -> "FitOptions":
        fit_cfg = config.get("fit", {})
        return cls(**{k: fit_cfg[k] for k in cls.__dataclass_fields__ if k in fit_cfg})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    theta_hat: Theta
    loglik: float
    constraint: Constraint
    n_starts: int
    converged: bool
    best_start_index: int
    near_singular: bool = False
    n_converged: int = 0

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "loglik": self.loglik,
            "constraint": self.constraint.value,
            "n_starts": self.n_starts,
            "converged": self.converged,
            "best_start_index": self.best_start_index,
            "near_singular": self.near_singular,
            "n_converged": self.n_converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            theta_hat=Theta.from_dict(d["theta_hat"]),
            loglik=float(d["loglik"]),
            constraint=Constraint(d["constraint"]),
            n_starts=int(d["n_starts"]),
            converged=bool(d["converged"]),
            best_start_index=int(d["best_start_index"]),
            near_singular=bool(d.get("near_singular", False)),
            n_converged=int(d.get("n_converged", 0)),
        )


# ---- closed forms ----

def _mean_part_mle(ds: UnorderedDataset) -> tuple[float, float]:
    mu = float(np.mean(ds.z1))
    sp2 = float(np.mean((ds.z1 - mu) ** 2))
    if not sp2 > 0:
        raise DegenerateDataError("sample variance of the pair midpoints is zero")
    return mu, math.sqrt(sp2)


def closed_form_null(ds: UnorderedDataset, rho_free: bool) -> Theta:
    """MLE under (mu1, sigma1) = (mu2, sigma2), with rho = 0 or rho free."""
    if not rho_free:
        values = ds.values
        mu = float(np.mean(values))
        s2 = float(np.mean((values - mu) ** 2))
        if not s2 > 0:
            raise DegenerateDataError("all observed values are identical")
        return Theta(mu, mu, math.sqrt(s2), math.sqrt(s2), 0.0)
    mu, sp = _mean_part_mle(ds)
    sp2 = sp * sp
    sm2 = float(np.mean(ds.z2**2))
    if not sm2 > 0:
        raise DegenerateDataError("every pair is tied (y_lo == y_hi)")
    sigma = math.sqrt(sp2 + sm2)
    return Theta(mu, mu, sigma, sigma, (sp2 - sm2) / (sp2 + sm2))


def moment_starts(ds: UnorderedDataset) -> List[Theta]:
    """Per-coordinate moments with the pairs read as (lo, hi) and as (hi, lo)."""
    out = []
    for x1, x2 in ((ds.lo, ds.hi), (ds.hi, ds.lo)):
        s1, s2 = float(np.std(x1)), float(np.std(x2))
        if s1 <= 0 or s2 <= 0:
            continue
        r = float(np.mean((x1 - x1.mean()) * (x2 - x2.mean())) / (s1 * s2))
        r = float(np.clip(r, -RHO_START_CLIP, RHO_START_CLIP))
        out.append(Theta(float(x1.mean()), float(x2.mean()), s1, s2, r))
    return out


# ---- regime codecs: internal unconstrained vector <-> feasible Theta ----

class _Codec:
    """Unconstrained coordinates for one regime; `objective` is minus the varying loglik part."""

    def __init__(self, ds: UnorderedDataset, constraint: Constraint, rho_cap: float):
        self.ds = ds
        self.constraint = constraint
        self.rho_cap = rho_cap
        if constraint.rho_free:
            self.mu, self.sigma_plus = _mean_part_mle(ds)
            self._log_sp = math.log(self.sigma_plus)

    # rho = 0 regimes work in (mu1, mu2, log sigma...) coordinates
    def encode(self, theta: Theta) -> np.ndarray:
        c = self.constraint
        if c is Constraint.EQVAR_RHO0:
            return np.array([theta.mu1, theta.mu2, math.log(theta.sigma1)])
        if c is Constraint.FREE_RHO0:
            return np.array([theta.mu1, theta.mu2, math.log(theta.sigma1), math.log(theta.sigma2)])
        r = to_reparam(theta)
        if c is Constraint.EQVAR_RHOFREE:
            return np.array([r.beta0 + self.mu * r.beta1, math.log(r.eta)])
        return np.array([r.beta0, r.beta1, math.log(r.eta)])

    def _log_eta(self, v: float) -> float:
        # |atanh rho| <= cap  <=>  |log eta - log sigma_plus| <= cap when beta1 = 0
        return float(np.clip(v, self._log_sp - self.rho_cap, self._log_sp + self.rho_cap))

    def eta_clipped(self, v: np.ndarray) -> bool:
        """True when the log-eta coordinate of `v` sits on (or past) the clip."""
        if not self.constraint.rho_free or self.constraint.level == 0:
            return False
        raw = float(v[-1])
        return abs(raw - self._log_sp) >= self.rho_cap - 1e-6

    def decode(self, v: np.ndarray) -> Theta:
        c = self.constraint
        if c is Constraint.EQVAR_RHO0:
            s = math.exp(v[2])
            return Theta(v[0], v[1], s, s, 0.0)
        if c is Constraint.FREE_RHO0:
            return Theta(v[0], v[1], math.exp(v[2]), math.exp(v[3]), 0.0)
        if c is Constraint.EQVAR_RHOFREE:
            eta = math.exp(self._log_eta(v[1]))
            sp2, e2 = self.sigma_plus**2, eta * eta
            s = math.sqrt(sp2 + e2)
            return Theta(self.mu + v[0], self.mu - v[0], s, s, (sp2 - e2) / (sp2 + e2))
        return from_reparam(
            ReparamTheta(self.mu, self.sigma_plus, v[0], v[1], math.exp(self._log_eta(v[2])))
        )

    def objective(self, v: np.ndarray) -> float:
        if not np.all(np.isfinite(v)):
            return math.inf
        c = self.constraint
        try:
            if c is Constraint.EQVAR_RHOFREE:
                val = loglik_mixture_part(self.ds, v[0], 0.0, math.exp(self._log_eta(v[1])))
            elif c is Constraint.FREE:
                val = loglik_mixture_part(self.ds, v[0], v[1], math.exp(self._log_eta(v[2])))
            else:
                val = float(np.sum(pair_log_densities(self.ds, self.decode(v))))
        except (ParameterDomainError, OverflowError):
            return math.inf
        return -val if math.isfinite(val) else math.inf

    def scales(self, center: Theta) -> np.ndarray:
        """Perturbation scale per coordinate: data scale for locations, 1 for logs/slopes."""
        c = self.constraint
        loc = max(center.sigma1, center.sigma2)
        if c is Constraint.EQVAR_RHO0:
            return np.array([loc, loc, 1.0])
        if c is Constraint.FREE_RHO0:
            return np.array([loc, loc, 1.0, 1.0])
        eta = to_reparam(center).eta
        if c is Constraint.EQVAR_RHOFREE:
            return np.array([eta, 1.0])
        return np.array([eta, 1.0, 1.0])


def _canonical(theta: Theta) -> Theta:
    """Label-swap representative: mu1 <= mu2, ties broken by sigma1 <= sigma2."""
    if theta.mu1 > theta.mu2 or (theta.mu1 == theta.mu2 and theta.sigma1 > theta.sigma2):
        return theta.swapped()
    return theta


def _near_singular(theta: Theta, rho_cap: float) -> bool:
    return abs(math.atanh(theta.rho)) >= rho_cap - 1e-6


def _run_start(codec: _Codec, v0: np.ndarray, opts: FitOptions):
    res = minimize(
        codec.objective,
        v0,
        method="Nelder-Mead",
        options={"xatol": opts.xtol, "fatol": opts.tolerance, "maxiter": opts.max_iter},
    )
    x, fun, ok = res.x, float(res.fun), bool(res.success)
    if opts.polish and math.isfinite(fun):
        try:
            pol = minimize(codec.objective, x, method="BFGS", options={"gtol": 1e-9})
            if math.isfinite(pol.fun) and pol.fun < fun:
                x, fun = pol.x, float(pol.fun)
        except (ValueError, FloatingPointError) as e:
            logger.debug("polish skipped: %s", e)
    return x, fun, ok


def fit(
    ds: UnorderedDataset,
    c: Constraint,
    opts: Optional[FitOptions] = None,
    warm_starts: Sequence[Theta] = (),
) -> FitResult:
    """
    MLE of Theta under constraint `c`. Starts: closed-form null, the two moment starts,
    any `warm_starts` (e.g. optima of nested regimes), then seeded random perturbations
    of the null start. The best start wins; ties go to the lower start index.
    """
    opts = opts or FitOptions()
    ds.require_fittable(c.n_free)

    null = closed_form_null(ds, rho_free=c.rho_free)
    if c.level == 0:
        near = _near_singular(null, opts.rho_cap)
        return FitResult(null, log_likelihood(ds, null), c, 1, True, 0, near, 1)

    codec = _Codec(ds, c, opts.rho_cap)
    starts: List[np.ndarray] = [codec.encode(null)]
    for theta in [*moment_starts(ds), *warm_starts]:
        try:
            starts.append(codec.encode(c.project(theta)))
        except ParameterDomainError as e:
            logger.debug("start dropped: %s", e)
    rng = rng_for(opts.seed, c.index)
    base, scale = starts[0], codec.scales(null)
    for _ in range(opts.n_random_starts):
        starts.append(base + opts.perturb_scale * scale * rng.standard_normal(base.shape[0]))

    best_i, best_x, best_f = -1, None, math.inf
    n_conv = 0
    for i, v0 in enumerate(starts):
        x, fun, ok = _run_start(codec, v0, opts)
        n_conv += int(ok)
        if fun < best_f:
            best_i, best_x, best_f = i, x, fun
    if best_x is None:
        raise FitConvergenceError(f"{c.value}: no start produced a finite log-likelihood")

    theta = codec.decode(best_x)
    if c.level == 2:
        theta = _canonical(theta)
    result = FitResult(
        theta_hat=theta,
        loglik=log_likelihood(ds, theta),
        constraint=c,
        n_starts=len(starts),
        converged=n_conv > 0,
        best_start_index=best_i,
        near_singular=_near_singular(theta, opts.rho_cap) or codec.eta_clipped(best_x),
        n_converged=n_conv,
    )
    logger.debug("%s: loglik=%.10g best start %d of %d (%d converged)",
                 c.value, result.loglik, best_i, len(starts), n_conv)
    if result.near_singular:
        logger.warning("%s: correlation reached the cap %.1f; fit flagged", c.value, opts.rho_cap)
    if n_conv == 0:
        raise FitConvergenceError(
            f"{c.value}: no start converged in {opts.max_iter} iterations", best=result
        )
    return result


FIT_ORDER = (
    Constraint.NULL_RHO0,
    Constraint.EQVAR_RHO0,
    Constraint.FREE_RHO0,
    Constraint.NULL_RHOFREE,
    Constraint.EQVAR_RHOFREE,
    Constraint.FREE,
)


def fit_all(
    ds: UnorderedDataset,
    opts: Optional[FitOptions] = None,
    constraints: Iterable[Constraint] = FIT_ORDER,
    on_error: Optional[Callable[[Constraint, Exception], None]] = None,
) -> Dict[Constraint, FitResult]:
    """
    Fit regimes from most to least constrained, seeding each fit with the optima of the
    regimes nested in it, so maximized logliks are monotone along the nesting order.
    Errors go to `on_error` (and the regime is skipped) when given, else propagate.
    """
    wanted = set(constraints)
    results: Dict[Constraint, FitResult] = {}
    for c in FIT_ORDER:
        if c not in wanted:
            continue
        warm = [r.theta_hat for k, r in results.items() if k is not c and k.nested_in(c)]
        try:
            results[c] = fit(ds, c, opts, warm_starts=warm)
        except (DegenerateDataError, FitConvergenceError) as e:
            if on_error is None:
                raise
            on_error(c, e)
    return results
