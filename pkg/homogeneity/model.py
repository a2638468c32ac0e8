"""
Bivariate-normal model for unordered pairs: parameter types, pair density, log-likelihood,
and the half-sum / half-difference reparameterization with its likelihood decomposition.

An observation is (Y1, Y2) = (min, max) of (X1, X2) ~ N2(mu1, mu2, sigma1^2, sigma2^2, rho),
so its density is phi2(y1, y2) + phi2(y2, y1). With Z1 = (Y1 + Y2)/2 and Z2 = (Y2 - Y1)/2 the
log-likelihood splits into a normal part in (mu, sigma_plus) and a symmetric two-component
part in (beta0, beta1, eta).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np
from scipy.stats import norm

from errors import DegenerateDataError, ParameterDomainError

LOG_2PI = math.log(2.0 * math.pi)
LOG_HALF = math.log(0.5)


def _finite(name: str, value: float) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ParameterDomainError(f"{name} must be finite, got {value!r}")
    return v


@dataclass(frozen=True)
class Theta:
    """(mu1, mu2, sigma1, sigma2, rho) of the underlying ordered pair (X1, X2)."""

    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    rho: float

    def __post_init__(self):
        for name in ("mu1", "mu2", "sigma1", "sigma2", "rho"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ParameterDomainError(
                f"scales must be positive, got sigma1={self.sigma1}, sigma2={self.sigma2}"
            )
        if not -1.0 < self.rho < 1.0:
            raise ParameterDomainError(f"rho must lie strictly inside (-1, 1), got {self.rho}")

    @property
    def is_exchangeable(self) -> bool:
        return self.mu1 == self.mu2 and self.sigma1 == self.sigma2

    def swapped(self) -> "Theta":
        """Relabel the subunits: (mu1, sigma1) <-> (mu2, sigma2). Same pair likelihood."""
        return Theta(self.mu2, self.mu1, self.sigma2, self.sigma1, self.rho)

    def affine(self, a: float, b: float) -> "Theta":
        """Parameters of (a X + b) for a > 0."""
        if not a > 0:
            raise ParameterDomainError(f"scale factor must be positive, got {a}")
        return Theta(a * self.mu1 + b, a * self.mu2 + b, a * self.sigma1, a * self.sigma2, self.rho)

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2, self.sigma1, self.sigma2, self.rho])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Theta":
        return cls(**{k: d[k] for k in ("mu1", "mu2", "sigma1", "sigma2", "rho")})


@dataclass(frozen=True)
class ReparamTheta:
    """
    (mu, sigma_plus, beta0, beta1, eta): Z1 ~ N(mu, sigma_plus^2) and
    Z2 | Z1 ~ N(beta0 + beta1 Z1, eta^2), with Z1, Z2 the half-sum and half-difference.
    """

    mu: float
    sigma_plus: float
    beta0: float
    beta1: float
    eta: float

    def __post_init__(self):
        for name in ("mu", "sigma_plus", "beta0", "beta1", "eta"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.sigma_plus <= 0 or self.eta <= 0:
            raise ParameterDomainError(
                f"sigma_plus and eta must be positive, got {self.sigma_plus}, {self.eta}"
            )

    @property
    def delta(self) -> float:
        """(mu1 - mu2) / 2."""
        return self.beta0 + self.mu * self.beta1

    @property
    def sigma_minus(self) -> float:
        return math.sqrt(self.eta**2 + (self.beta1 * self.sigma_plus) ** 2)

    @property
    def xi(self) -> float:
        """Correlation of Z1 and Z2."""
        return self.beta1 * self.sigma_plus / self.sigma_minus

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma_plus, self.beta0, self.beta1, self.eta])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UnorderedPair:
    y_lo: float
    y_hi: float

    def __post_init__(self):
        a, b = _finite("y_lo", self.y_lo), _finite("y_hi", self.y_hi)
        if b < a:
            a, b = b, a
        object.__setattr__(self, "y_lo", a)
        object.__setattr__(self, "y_hi", b)


def validate_pairs(x: np.ndarray) -> Tuple[bool, str]:
    """Validate an (n, 2) array of pair values. Returns (ok, message)."""
    if x.ndim != 2:
        return False, f"expected 2D array, got ndim={x.ndim}"
    if x.shape[1] != 2:
        return False, f"expected 2 columns, got {x.shape[1]}"
    if x.shape[0] < 1:
        return False, "no pairs"
    if not np.all(np.isfinite(x)):
        return False, "non-finite values"
    return True, ""


@dataclass(frozen=True, eq=False)
class UnorderedDataset:
    """
    n unordered pairs stored as sorted columns (y_lo <= y_hi per row). Rows are kept in
    lexicographic order so that every reduction over pairs is independent of input order.
    """

    lo: np.ndarray
    hi: np.ndarray
    z1: np.ndarray = field(init=False, repr=False)
    z2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.column_stack([np.asarray(self.lo, dtype=np.float64).ravel(),
                             np.asarray(self.hi, dtype=np.float64).ravel()])
        ok, msg = validate_pairs(x)
        if not ok:
            raise ParameterDomainError(msg)
        lo, hi = np.minimum(x[:, 0], x[:, 1]), np.maximum(x[:, 0], x[:, 1])
        order = np.lexsort((hi, lo))
        lo, hi = lo[order], hi[order]
        z1, z2 = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for name, arr in (("lo", lo), ("hi", hi), ("z1", z1), ("z2", z2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_array(cls, x: np.ndarray) -> "UnorderedDataset":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != 2:
            raise ParameterDomainError(f"expected an (n, 2) array, got shape {x.shape}")
        return cls(x[:, 0], x[:, 1])

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "UnorderedDataset":
        rows = [(p.y_lo, p.y_hi) if isinstance(p, UnorderedPair) else tuple(p) for p in pairs]
        return cls.from_array(np.array(rows, dtype=np.float64).reshape(-1, 2))

    @property
    def n(self) -> int:
        return int(self.lo.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def pairs(self) -> Tuple[UnorderedPair, ...]:
        return tuple(UnorderedPair(a, b) for a, b in zip(self.lo.tolist(), self.hi.tolist()))

    def __iter__(self) -> Iterator[UnorderedPair]:
        return iter(self.pairs)

    @property
    def values(self) -> np.ndarray:
        """All 2n observed values."""
        return np.concatenate([self.lo, self.hi])

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.lo, self.hi])

    def affine(self, a: float, b: float) -> "UnorderedDataset":
        if not a > 0:
            raise ParameterDomainError(f"scale factor must be positive, got {a}")
        return UnorderedDataset(a * self.lo + b, a * self.hi + b)

    def degeneracy(self) -> Optional[str]:
        """Reason the data cannot be fitted, or None."""
        if np.all(self.z2 == 0):
            return "every pair is tied (y_lo == y_hi)"
        if np.all(self.z1 == self.z1[0]):
            return "all pair midpoints are equal"
        return None

    def require_fittable(self, n_free: int) -> None:
        if self.n < n_free + 2:
            raise DegenerateDataError(
                f"need at least {n_free + 2} pairs to fit {n_free} free parameters, got {self.n}"
            )
        reason = self.degeneracy()
        if reason:
            raise DegenerateDataError(reason)


# ---- densities ----

def _log_phi2(x1: np.ndarray, x2: np.ndarray, theta: Theta) -> np.ndarray:
    """log of the bivariate normal density at (x1, x2), from the explicit quadratic form."""
    u1 = (x1 - theta.mu1) / theta.sigma1
    u2 = (x2 - theta.mu2) / theta.sigma2
    one_m_r2 = (1.0 - theta.rho) * (1.0 + theta.rho)
    q = (u1 * u1 - 2.0 * theta.rho * u1 * u2 + u2 * u2) / one_m_r2
    const = LOG_2PI + math.log(theta.sigma1) + math.log(theta.sigma2) + 0.5 * math.log(one_m_r2)
    return -const - 0.5 * q


def pair_log_densities(ds: UnorderedDataset, theta: Theta) -> np.ndarray:
    """Per-pair log{phi2(lo, hi) + phi2(hi, lo)}, summed in log space."""
    return np.logaddexp(_log_phi2(ds.lo, ds.hi, theta), _log_phi2(ds.hi, ds.lo, theta))


def pair_log_density(pair: UnorderedPair, theta: Theta) -> float:
    lo, hi = np.array([pair.y_lo]), np.array([pair.y_hi])
    return float(np.logaddexp(_log_phi2(lo, hi, theta), _log_phi2(hi, lo, theta))[0])


def log_likelihood(ds: UnorderedDataset, theta: Theta) -> float:
    return float(np.sum(pair_log_densities(ds, theta)))


# ---- reparameterization ----

def to_reparam(theta: Theta) -> ReparamTheta:
    s1, s2 = theta.sigma1**2, theta.sigma2**2
    c = theta.rho * theta.sigma1 * theta.sigma2
    sp2 = 0.25 * (s1 + s2 + 2.0 * c)
    cov = 0.25 * (s1 - s2)
    mu = 0.5 * (theta.mu1 + theta.mu2)
    delta = 0.5 * (theta.mu1 - theta.mu2)
    beta1 = cov / sp2
    # (1 - xi^2) sigma_minus^2 written without cancellation
    eta2 = 0.25 * s1 * s2 * (1.0 - theta.rho) * (1.0 + theta.rho) / sp2
    return ReparamTheta(mu, math.sqrt(sp2), delta - mu * beta1, beta1, math.sqrt(eta2))


def from_reparam(r: ReparamTheta) -> Theta:
    sp2 = r.sigma_plus**2
    sm2 = r.eta**2 + (r.beta1**2) * sp2
    cov = r.beta1 * sp2
    s1 = sp2 + sm2 + 2.0 * cov
    s2 = sp2 + sm2 - 2.0 * cov
    if s1 <= 0 or s2 <= 0:
        raise ParameterDomainError(f"implied variances not positive: sigma1^2={s1}, sigma2^2={s2}")
    sigma1, sigma2 = math.sqrt(s1), math.sqrt(s2)
    delta = r.delta
    return Theta(r.mu + delta, r.mu - delta, sigma1, sigma2, (sp2 - sm2) / (sigma1 * sigma2))


def loglik_mean_part(ds: UnorderedDataset, mu: float, sigma_plus: float) -> float:
    """Normal log-likelihood of the half-sums Z1."""
    return float(np.sum(norm.logpdf(ds.z1, loc=mu, scale=sigma_plus)))


def loglik_mixture_part(ds: UnorderedDataset, beta0: float, beta1: float, eta: float) -> float:
    """Sum of log{0.5 phi(Z2; m, eta) + 0.5 phi(-Z2; m, eta)}, m = beta0 + beta1 Z1."""
    m = beta0 + beta1 * ds.z1
    terms = np.logaddexp(norm.logpdf(ds.z2, m, eta), norm.logpdf(-ds.z2, m, eta))
    return float(np.sum(LOG_HALF + terms))


def decomposed_log_likelihood(ds: UnorderedDataset, r: ReparamTheta) -> float:
    return loglik_mean_part(ds, r.mu, r.sigma_plus) + loglik_mixture_part(
        ds, r.beta0, r.beta1, r.eta
    )

