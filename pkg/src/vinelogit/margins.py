"""Class-conditional exponential-family margins.

Continuous columns are ``N(mu_y, sigma^2)`` with a shared variance, binary
columns ``Bernoulli(rho_y)`` and count columns ``Poisson(lambda_y)``. These
margins make the class log-density ratio of every column affine in ``x``,
so a margin set maps onto a coefficient vector of a linear logistic model.
The reverse map fixes the free parameters by matching sample moments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .copulas import EPS, norm_cdf

PI_LOW = 1e-8
PI_HIGH = 1.0 - 1e-8
SCAN_POINTS = 512


class MarginKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    COUNT = "count"


class ConversionError(ValueError):
    """Coefficients could not be converted back to margin parameters."""


class KindError(ValueError):
    """An operation was applied to a column of the wrong kind."""


@dataclass(frozen=True, eq=False)
class MarginSet:
    """Per-column margin parameters for both classes.

    ``param0``/``param1`` hold ``mu``, ``rho`` or ``lambda`` depending on the
    column kind; ``sigma`` is NaN for non-continuous columns.
    """

    kinds: tuple
    param0: np.ndarray
    param1: np.ndarray
    sigma: np.ndarray
    pi_y: float

    def __post_init__(self):
        p = len(self.kinds)
        for name in ("param0", "param1", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (p,):
                raise ValueError(f"{name} must have shape ({p},)")
            object.__setattr__(self, name, arr)
        if not 0.0 < self.pi_y < 1.0:
            raise ValueError(f"pi_y={self.pi_y} outside (0, 1)")
        cont, binr, cnt = _masks(self.kinds)
        if np.any(~(self.sigma[cont] > 0)):
            raise ValueError("sigma must be positive for continuous columns")
        for arr in (self.param0, self.param1):
            if np.any(~((arr[binr] > 0) & (arr[binr] < 1))):
                raise ValueError("binary margin probabilities must lie in (0, 1)")
            if np.any(~(arr[cnt] > 0)):
                raise ValueError("count margin rates must be positive")

    @property
    def p(self) -> int:
        return len(self.kinds)

    def mean(self, y: int) -> np.ndarray:
        return self.param1 if y == 1 else self.param0

    def implied_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture mean and variance of every column under ``pi_y``."""
        pi = self.pi_y
        m0, m1 = self.param0, self.param1
        mean = (1 - pi) * m0 + pi * m1
        cont, binr, cnt = _masks(self.kinds)
        within = np.where(cont, self.sigma**2, 0.0)
        within = np.where(binr, (1 - pi) * m0 * (1 - m0) + pi * m1 * (1 - m1), within)
        within = np.where(cnt, (1 - pi) * m0 + pi * m1, within)
        var = within + (m1 - m0) ** 2 * pi * (1 - pi)
        return mean, var


def _masks(kinds):
    k = [MarginKind(x) for x in kinds]
    return (
        np.array([x is MarginKind.CONTINUOUS for x in k], dtype=bool),
        np.array([x is MarginKind.BINARY for x in k], dtype=bool),
        np.array([x is MarginKind.COUNT for x in k], dtype=bool),
    )


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _intercept_terms(masks, p0, p1, sigma):
    """Per-column contribution to the intercept."""
    cont, binr, cnt = masks
    s2 = np.where(cont, sigma, 1.0) ** 2
    out = np.where(cont, 0.5 * (p0**2 - p1**2) / s2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(binr, np.log1p(-p1) - np.log1p(-p0), out)
    out = np.where(cnt, p0 - p1, out)
    return out


def _slopes(masks, p0, p1, sigma):
    cont, binr, cnt = masks
    s2 = np.where(cont, sigma, 1.0) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(cont, (p1 - p0) / s2, 0.0)
        out = np.where(binr, _logit(p1) - _logit(p0), out)
        out = np.where(cnt, np.log(p1) - np.log(p0), out)
    return out


def coeffs_from_margins(margins: MarginSet) -> np.ndarray:
    """Coefficient vector ``(beta_0, ..., beta_p)`` implied by a margin set."""
    m = margins
    masks = _masks(m.kinds)
    beta = np.empty(m.p + 1)
    beta[0] = float(_logit(m.pi_y)) + float(np.sum(_intercept_terms(masks, m.param0, m.param1, m.sigma)))
    beta[1:] = _slopes(masks, m.param0, m.param1, m.sigma)
    return beta


class _PriorEquation:
    """Moment-matched margins and the class-prior residual as functions of ``pi``.

    Methods accept ``pi`` with a trailing axis of length one so that a whole
    scan is evaluated in a single call.
    """

    def __init__(self, beta, means, variances, masks):
        cont, binr, cnt = masks
        self.masks = masks
        self.beta0 = beta[0]
        self.ci, self.bi, self.ni = (np.flatnonzero(m) for m in masks)
        slopes = beta[1:]
        self.bc, self.mc, self.vc = slopes[self.ci], means[self.ci], variances[self.ci]
        self.bb, self.mb = slopes[self.bi], means[self.bi]
        self.bn, self.mn = slopes[self.ni], means[self.ni]
        self.kb = -np.expm1(self.bb)
        self.eb = np.exp(self.bb)
        self.kn = -np.expm1(self.bn)
        self.en = np.exp(self.bn)

    def continuous(self, pi):
        # sigma^2 solves b^2 q sigma^4 + sigma^2 - s^2 = 0; the rationalised
        # root has no 0/0 as b -> 0
        b = self.bc
        a = b * b * pi * (1.0 - pi)
        s2 = 2.0 * self.vc / (1.0 + np.sqrt(1.0 + 4.0 * a * self.vc))
        mu0 = self.mc - b * pi * s2
        mu1 = self.mc + b * (1.0 - pi) * s2
        return mu0, mu1, s2

    def binary(self, pi):
        # k (1 - pi) rho0^2 - B rho0 + xbar = 0 with k = 1 - e^b
        k, xbar = self.kb, self.mb
        big_b = 1.0 + k * (xbar - pi)
        qa = k * (1.0 - pi)
        disc = big_b * big_b - 4.0 * qa * xbar
        with np.errstate(invalid="ignore", divide="ignore"):
            root = np.sqrt(disc)
            # stable pair of roots; 'minus' is the branch with -sqrt
            pos = big_b >= 0
            qq = 0.5 * (big_b + np.where(pos, root, -root))
            minus = np.where(pos, xbar / qq, qq / qa)
            plus = np.where(pos, qq / qa, xbar / qq)
            rho0 = np.where((minus > 0) & (minus < 1), minus, plus)
            rho1 = self.eb * rho0 / (1.0 - k * rho0)
            ok = (disc >= 0) & (rho0 > 0) & (rho0 < 1) & (rho1 > 0) & (rho1 < 1)
        return np.where(ok, rho0, np.nan), np.where(ok, rho1, np.nan)

    def count(self, pi):
        lam0 = self.mn / (1.0 - self.kn * pi)
        return lam0, lam0 * self.en

    def residual(self, t):
        t = np.asarray(t, dtype=float)
        pi = (1.0 / (1.0 + np.exp(-t)))[..., None]
        total = t - self.beta0
        if self.ci.size:
            mu0, mu1, s2 = self.continuous(pi)
            total = total + np.sum(0.5 * (mu0 * mu0 - mu1 * mu1) / s2, axis=-1)
        if self.bi.size:
            r0, r1 = self.binary(pi)
            total = total + np.sum(np.log1p(-r1) - np.log1p(-r0), axis=-1)
        if self.ni.size:
            l0, l1 = self.count(pi)
            total = total + np.sum(l0 - l1, axis=-1)
        return total

    def margins(self, kinds, pi) -> MarginSet:
        p = len(kinds)
        p0 = np.empty(p)
        p1 = np.empty(p)
        sigma = np.full(p, np.nan)
        mu0, mu1, s2 = self.continuous(pi)
        p0[self.ci], p1[self.ci], sigma[self.ci] = mu0, mu1, np.sqrt(s2)
        p0[self.bi], p1[self.bi] = self.binary(pi)
        p0[self.ni], p1[self.ni] = self.count(pi)
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise ConversionError("a binary column has no admissible (rho0, rho1) at the class-prior root")
        return MarginSet(kinds, p0, p1, sigma, pi)


def margins_from_coeffs(beta, sample_means, sample_vars, kinds, pi_hint: float = 0.5) -> MarginSet:
    """Convert logistic coefficients into moment-matched margins.

    The class prior solves ``logit(pi) + sum_j c_j(pi) = beta_0`` where
    ``c_j`` is column ``j``'s intercept contribution under margins matching
    the sample mean (and, for continuous columns, the sample variance).

    Parameters
    ----------
    beta : array_like, shape (p + 1,)
        Intercept followed by slopes.
    sample_means, sample_vars : array_like, shape (p,)
        Column moments the implied mixture must reproduce.
    kinds : sequence of MarginKind
    pi_hint : float
        When the prior equation has several roots, the one closest to this
        value (typically the response mean) is returned.

    Raises
    ------
    ConversionError
        If no root exists on ``(1e-8, 1 - 1e-8)`` or a binary column has no
        admissible probability pair.
    """
    beta = np.asarray(beta, dtype=float)
    means = np.asarray(sample_means, dtype=float)
    variances = np.asarray(sample_vars, dtype=float)
    kinds = tuple(MarginKind(k) for k in kinds)
    masks = _masks(kinds)
    cont, binr, cnt = masks
    if beta.shape != (len(kinds) + 1,):
        raise ValueError(f"beta must have length {len(kinds) + 1}")
    if np.any(~(variances[cont] > 0)):
        raise ConversionError("sample variances of continuous columns must be positive")
    if np.any(~((means[binr] > 0) & (means[binr] < 1))):
        raise ConversionError("binary column means must lie strictly inside (0, 1)")
    if np.any(~(means[cnt] > 0)):
        raise ConversionError("count column means must be positive")
    eq = _PriorEquation(beta, means, variances, masks)

    def scalar(t):
        return float(eq.residual(t))

    grid = np.linspace(_logit(PI_LOW), _logit(PI_HIGH), SCAN_POINTS)
    vals = eq.residual(grid)
    finite = np.isfinite(vals)
    roots = list(grid[finite & (vals == 0.0)])
    crossing = finite[:-1] & finite[1:] & (vals[:-1] * vals[1:] < 0)
    for i in np.flatnonzero(crossing):
        roots.append(brentq(scalar, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15))
    if not roots:
        ok = vals[finite]
        detail = (
            f"residual range [{ok.min():.3g}, {ok.max():.3g}] over {ok.size} finite scan points"
            if ok.size
            else "no finite residuals on the scan"
        )
        raise ConversionError(f"no class-prior root on ({PI_LOW}, {PI_HIGH}): {detail}")
    hint_t = float(_logit(min(max(pi_hint, PI_LOW), PI_HIGH)))
    t = min(roots, key=lambda r: abs(r - hint_t))
    if abs(scalar(t)) > 1e-10:
        raise ConversionError(f"class-prior residual {scalar(t):.3g} exceeds 1e-10")
    return eq.margins(kinds, 1.0 / (1.0 + math.exp(-t)))


def prior_residual(margins: MarginSet, beta) -> float:
    """Residual of the class-prior equation at ``margins.pi_y``."""
    m = margins
    terms = _intercept_terms(_masks(m.kinds), m.param0, m.param1, m.sigma)
    return float(_logit(m.pi_y) + np.sum(terms) - beta[0])


def marginal_cdf(margins: MarginSet, j: int, y: int, x):
    """``Phi((x - mu_{y,j}) / sigma_j)`` clamped into ``[EPS, 1 - EPS]``."""
    if margins.kinds[j] is not MarginKind.CONTINUOUS:
        raise KindError(f"column {j} is {margins.kinds[j].value}; only continuous columns have a copula CDF")
    mu = margins.mean(y)[j]
    z = (np.asarray(x, dtype=float) - mu) / margins.sigma[j]
    return np.clip(norm_cdf(z), EPS, 1.0 - EPS)[()]


def marginal_logdensity_ratio(margins: MarginSet, j: int, x):
    """``log p(x_j | Y=1) - log p(x_j | Y=0)`` for column ``j``."""
    m = margins
    masks = _masks(m.kinds)
    a = _intercept_terms(masks, m.param0, m.param1, m.sigma)[j]
    b = _slopes(masks, m.param0, m.param1, m.sigma)[j]
    return (a + b * np.asarray(x, dtype=float))[()]
