"""Bivariate one-parameter copula families.

Every family here is exchangeable, so ``C(u, v) = C(v, u)`` and the
h-function of the second argument given the first is obtained by swapping
arguments. All unit-interval inputs are clamped into ``[EPS, 1 - EPS]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

EPS = 1e-10


class ParameterDomainError(ValueError):
    """A copula parameter lies outside its family's domain."""


class TauInversionError(ValueError):
    """Kendall's tau cannot be mapped into a family's parameter domain."""


class CopulaFamily(str, enum.Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"

    @classmethod
    def parse(cls, name: str) -> "CopulaFamily":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown copula family {name!r}") from None


@dataclass(frozen=True)
class PairCopula:
    """One bivariate copula: a family and its dependence parameter."""

    family: CopulaFamily
    theta: float | None = None

    def __post_init__(self):
        check_domain(self.family, self.theta)

    @property
    def n_params(self) -> int:
        return 0 if self.family is CopulaFamily.INDEPENDENCE else 1

    def __str__(self):
        if self.family is CopulaFamily.INDEPENDENCE:
            return "independence"
        return f"{self.family.value}({self.theta:.6g})"


def check_domain(family: CopulaFamily, theta) -> None:
    if family is CopulaFamily.INDEPENDENCE:
        if theta is not None:
            raise ParameterDomainError("independence copula takes no parameter")
        return
    if theta is None or not math.isfinite(theta):
        raise ParameterDomainError(f"{family.value}: theta must be finite, got {theta}")
    if family is CopulaFamily.GAUSSIAN and not -1.0 < theta < 1.0:
        raise ParameterDomainError(f"gaussian: theta={theta} outside (-1, 1)")
    if family is CopulaFamily.CLAYTON and not theta > 0.0:
        raise ParameterDomainError(f"clayton: theta={theta} outside (0, inf)")
    if family is CopulaFamily.GUMBEL and not theta >= 1.0:
        raise ParameterDomainError(f"gumbel: theta={theta} outside [1, inf)")


INDEPENDENCE = PairCopula(CopulaFamily.INDEPENDENCE)


def clamp(u):
    return np.clip(u, EPS, 1.0 - EPS)


def norm_cdf(x):
    return ndtr(x)


def norm_ppf(u):
    return ndtri(u)


def _log_expm1(x):
    # log(exp(x) - 1) for x >= 0 without overflow or cancellation
    x = np.asarray(x, dtype=float)
    big = x > 30.0
    small = np.where(big, 1.0, x)
    return np.where(big, x + np.log1p(-np.exp(-np.where(big, x, 30.0))), np.log(np.expm1(small)))


def _clayton_core(theta, lu, lv):
    # log(u^-theta + v^-theta - 1)
    return _log_expm1(np.logaddexp(-theta * lu, -theta * lv))


def _gumbel_core(theta, u, v):
    lx = np.log(-np.log(u))
    ly = np.log(-np.log(v))
    log_s = np.logaddexp(theta * lx, theta * ly)
    a = np.exp(log_s / theta)
    return lx, ly, log_s, a


def log_density(spec: PairCopula, u, v):
    """Log copula density ``log c(u, v; theta)``.

    Parameters
    ----------
    spec : PairCopula
        Family and parameter.
    u, v : float or ndarray
        Points in the unit square; clamped into ``[EPS, 1 - EPS]``.

    Returns
    -------
    float or ndarray
        Finite log-density values.
    """
    fam, theta = spec.family, spec.theta
    u = clamp(np.asarray(u, dtype=float))
    v = clamp(np.asarray(v, dtype=float))
    if fam is CopulaFamily.INDEPENDENCE:
        return np.zeros(np.broadcast(u, v).shape)[()]
    if fam is CopulaFamily.GAUSSIAN:
        a = ndtri(u)
        b = ndtri(v)
        r2 = 1.0 - theta * theta
        out = -0.5 * math.log(r2) - (theta * theta * (a * a + b * b) - 2.0 * theta * a * b) / (2.0 * r2)
        return out[()]
    if fam is CopulaFamily.CLAYTON:
        lu, lv = np.log(u), np.log(v)
        out = (
            math.log1p(theta)
            - (1.0 + theta) * (lu + lv)
            - (2.0 + 1.0 / theta) * _clayton_core(theta, lu, lv)
        )
        return out[()]
    # Gumbel
    lx, ly, log_s, a = _gumbel_core(theta, u, v)
    out = (
        -a
        - np.log(u)
        - np.log(v)
        + (theta - 1.0) * (lx + ly)
        + (2.0 / theta - 2.0) * log_s
        + np.log1p((theta - 1.0) / a)
    )
    return out[()]


def h_function(spec: PairCopula, u, v):
    """Conditional distribution ``F(u | v) = dC(u, v)/dv``.

    The result is non-decreasing in ``u`` and clamped into ``[EPS, 1 - EPS]``.
    """
    fam, theta = spec.family, spec.theta
    u = clamp(np.asarray(u, dtype=float))
    v = clamp(np.asarray(v, dtype=float))
    if fam is CopulaFamily.INDEPENDENCE:
        out = np.broadcast_to(u, np.broadcast(u, v).shape).copy()
    elif fam is CopulaFamily.GAUSSIAN:
        out = ndtr((ndtri(u) - theta * ndtri(v)) / math.sqrt(1.0 - theta * theta))
    elif fam is CopulaFamily.CLAYTON:
        lu, lv = np.log(u), np.log(v)
        out = np.exp(-(theta + 1.0) * lv - (1.0 + 1.0 / theta) * _clayton_core(theta, lu, lv))
    else:
        lx, ly, log_s, a = _gumbel_core(theta, u, v)
        out = np.exp(-a + (1.0 / theta - 1.0) * log_s + (theta - 1.0) * ly - np.log(v))
    return clamp(out)[()]


def h_inverse(spec: PairCopula, w, v, tol: float = 1e-12):
    """Solve ``h_function(spec, u, v) = w`` for ``u``.

    Closed forms for the Gaussian and Clayton families; the Gumbel inverse
    is found by bisection on ``u`` to ``tol``.
    """
    fam, theta = spec.family, spec.theta
    w = clamp(np.asarray(w, dtype=float))
    v = clamp(np.asarray(v, dtype=float))
    if fam is CopulaFamily.INDEPENDENCE:
        out = np.broadcast_to(w, np.broadcast(w, v).shape).copy()
    elif fam is CopulaFamily.GAUSSIAN:
        out = ndtr(ndtri(w) * math.sqrt(1.0 - theta * theta) + theta * ndtri(v))
    elif fam is CopulaFamily.CLAYTON:
        lv = np.log(v)
        a = np.exp(-theta / (1.0 + theta) * (np.log(w) + (theta + 1.0) * lv)) - np.exp(-theta * lv) + 1.0
        out = np.exp(-np.log(a) / theta)
    else:
        w, v = np.broadcast_arrays(w, v)
        lo = np.full(w.shape, EPS)
        hi = np.full(w.shape, 1.0 - EPS)
        while np.max(hi - lo, initial=0.0) > tol:
            mid = 0.5 * (lo + hi)
            below = h_function(spec, mid, v) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
    return clamp(out)[()]


def cdf(spec: PairCopula, u, v):
    """Copula distribution function ``C(u, v)``; used by tests and sampling checks."""
    fam, theta = spec.family, spec.theta
    u = clamp(np.asarray(u, dtype=float))
    v = clamp(np.asarray(v, dtype=float))
    if fam is CopulaFamily.INDEPENDENCE:
        return (u * v)[()]
    if fam is CopulaFamily.CLAYTON:
        return np.exp(-_clayton_core(theta, np.log(u), np.log(v)) / theta)[()]
    if fam is CopulaFamily.GUMBEL:
        return np.exp(-_gumbel_core(theta, u, v)[3])[()]
    raise NotImplementedError("gaussian copula cdf has no closed form here")


def theta_from_tau(family: CopulaFamily, tau: float) -> float:
    """Invert Kendall's tau to the family parameter.

    Raises
    ------
    TauInversionError
        If ``tau`` is outside ``(-1, 1)`` for the Gaussian family or outside
        ``(0, 1)`` for Clayton and Gumbel.
    """
    if not math.isfinite(tau):
        raise TauInversionError(f"tau={tau} is not finite")
    if family is CopulaFamily.GAUSSIAN:
        if not -1.0 < tau < 1.0:
            raise TauInversionError(f"gaussian: tau={tau} outside (-1, 1)")
        return math.sin(math.pi * tau / 2.0)
    if family is CopulaFamily.CLAYTON:
        if not 0.0 < tau < 1.0:
            raise TauInversionError(f"clayton: tau={tau} outside (0, 1)")
        return 2.0 * tau / (1.0 - tau)
    if family is CopulaFamily.GUMBEL:
        if not 0.0 < tau < 1.0:
            raise TauInversionError(f"gumbel: tau={tau} outside (0, 1)")
        return 1.0 / (1.0 - tau)
    raise TauInversionError("independence copula has no parameter")


def tau_from_theta(spec: PairCopula) -> float:
    fam, theta = spec.family, spec.theta
    if fam is CopulaFamily.INDEPENDENCE:
        return 0.0
    if fam is CopulaFamily.GAUSSIAN:
        return 2.0 / math.pi * math.asin(theta)
    if fam is CopulaFamily.CLAYTON:
        return theta / (theta + 2.0)
    return 1.0 - 1.0 / theta


def to_unconstrained(spec: PairCopula) -> float:
    fam, theta = spec.family, spec.theta
    if fam is CopulaFamily.GAUSSIAN:
        return math.atanh(theta)
    if fam is CopulaFamily.CLAYTON:
        return math.log(theta)
    if fam is CopulaFamily.GUMBEL:
        return math.log(theta - 1.0)
    raise ValueError("independence copula has no parameter")


def from_unconstrained(family: CopulaFamily, psi: float) -> PairCopula:
    if family is CopulaFamily.GAUSSIAN:
        return PairCopula(family, math.tanh(psi))
    if family is CopulaFamily.CLAYTON:
        return PairCopula(family, math.exp(psi))
    if family is CopulaFamily.GUMBEL:
        return PairCopula(family, 1.0 + math.exp(psi))
    raise ValueError("independence copula has no parameter")
