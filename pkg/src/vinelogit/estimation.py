"""Discriminative estimation of the copula-extended logistic model.

The log-odds are ``(1, x) @ beta + g(x)``; the copula term ``g`` depends on
margins that are themselves recomputed from ``beta`` (with the training
moments held fixed) every time ``beta`` changes.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import copulas as cop
from .copulas import CopulaFamily, PairCopula
from .data import Dataset
from .margins import MarginSet, margins_from_coeffs
from .vine import PseudoObs, VineStructure, g_eval

log = logging.getLogger(__name__)

FD_REL_STEP = 1e-6
HESSIAN_REL_STEP = 1e-4


class EstimationError(RuntimeError):
    """Fitting failed or the model cannot be evaluated."""


class SeparationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Coefficients, the shared vine, and the margin view implied by ``beta``.

    ``means``, ``variances`` and ``pi_hint`` are the training constants used
    to convert ``beta`` into margins.
    """

    beta: np.ndarray
    structure: VineStructure
    margins: MarginSet
    means: np.ndarray
    variances: np.ndarray
    pi_hint: float = 0.5

    @classmethod
    def build(cls, beta, structure: VineStructure, kinds, means, variances, pi_hint=0.5) -> "ModelParams":
        beta = np.asarray(beta, dtype=float)
        margins = margins_from_coeffs(beta, means, variances, kinds, pi_hint)
        return cls(beta, structure, margins, np.asarray(means, float), np.asarray(variances, float), pi_hint)

    @classmethod
    def for_data(cls, beta, data: Dataset, structure: VineStructure | None = None) -> "ModelParams":
        if structure is None:
            structure = VineStructure(covariates=frozenset(data.continuous))
        return cls.build(beta, structure, data.kinds, data.means, data.variances, data.response_mean)

    @property
    def kinds(self):
        return self.margins.kinds

    def with_beta(self, beta) -> "ModelParams":
        return ModelParams.build(beta, self.structure, self.kinds, self.means, self.variances, self.pi_hint)

    def with_structure(self, structure: VineStructure) -> "ModelParams":
        return replace(self, structure=structure)


class TraceEntry(NamedTuple):
    step: str
    loglik: float


@dataclass
class FitReport:
    params: ModelParams
    loglik: float
    trace: list = field(default_factory=list)
    std_errors: np.ndarray | None = None
    converged: bool = False
    info: np.ndarray | None = None
    n_iter: int = 0


# -- parameter vectors -------------------------------------------------------


def free_parameters(structure: VineStructure) -> list[tuple[int, int]]:
    """``(edge_index, class)`` for every non-independence pair copula."""
    out = []
    for i, e in enumerate(structure.edges):
        for y in (0, 1):
            if e.copula(y).family is not CopulaFamily.INDEPENDENCE:
                out.append((i, y))
    return out


def parameter_names(params: ModelParams, names=None) -> list[str]:
    p = len(params.beta) - 1
    names = list(names) if names else [f"x{j + 1}" for j in range(p)]
    out = ["(intercept)"] + [f"beta[{n}]" for n in names]
    for i, y in free_parameters(params.structure):
        out.append(f"theta{y}[{params.structure.edges[i].label}]")
    return out


def to_vector(params: ModelParams, unconstrained: bool = False) -> np.ndarray:
    thetas = []
    for i, y in free_parameters(params.structure):
        c = params.structure.edges[i].copula(y)
        thetas.append(cop.to_unconstrained(c) if unconstrained else c.theta)
    return np.concatenate([params.beta, thetas])


def _structure_from_thetas(structure: VineStructure, thetas, unconstrained: bool) -> VineStructure:
    edges = list(structure.edges)
    for (i, y), t in zip(free_parameters(structure), thetas):
        fam = edges[i].copula(y).family
        c = cop.from_unconstrained(fam, float(t)) if unconstrained else PairCopula(fam, float(t))
        edges[i] = replace(edges[i], **{f"cop{y}": c})
    return replace(structure, edges=tuple(edges))


class _ParamMap:
    """Maps vectors to :class:`ModelParams`, caching margins per ``beta``."""

    def __init__(self, template: ModelParams, unconstrained: bool):
        self.template = template
        self.unconstrained = unconstrained
        self.p1 = len(template.beta)
        self._cache: dict = {template.beta.tobytes(): template.margins}

    def __call__(self, vec) -> ModelParams:
        vec = np.asarray(vec, dtype=float)
        beta = vec[: self.p1].copy()
        key = beta.tobytes()
        margins = self._cache.get(key)
        t = self.template
        if margins is None:
            margins = margins_from_coeffs(beta, t.means, t.variances, t.kinds, t.pi_hint)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = margins
        structure = _structure_from_thetas(t.structure, vec[self.p1 :], self.unconstrained)
        return replace(t, beta=beta, structure=structure, margins=margins)


# -- likelihood --------------------------------------------------------------


def log_odds(params: ModelParams, x):
    """Linear predictor plus the copula correction, for one row or many."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    eta = params.beta[0] + xs @ params.beta[1:]
    if params.structure.edges:
        eta = eta + g_eval(params.structure, params.margins, xs)
    return float(eta[0]) if np.ndim(x) == 1 else eta


def loglik_from_eta(eta, y) -> float:
    eta = np.asarray(eta, dtype=float)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def log_likelihood(params: ModelParams, data: Dataset) -> float:
    return loglik_from_eta(log_odds(params, data.X), data.y)


def likelihood_function(template: ModelParams, data: Dataset, unconstrained: bool = True) -> Callable:
    """``f(vector) -> loglik``; invalid or non-finite evaluations give ``-inf``."""
    pmap = _ParamMap(template, unconstrained)

    def f(vec):
        try:
            with np.errstate(all="ignore"):
                val = log_likelihood(pmap(vec), data)
        except (ValueError, ArithmeticError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    f.to_params = pmap
    return f


def _central(fp: float, fm: float, h: float, f0: Callable[[], float]) -> float:
    if math.isfinite(fp) and math.isfinite(fm):
        return (fp - fm) / (2.0 * h)
    if math.isfinite(fp):
        return (fp - f0()) / h
    if math.isfinite(fm):
        return (f0() - fm) / h
    return 0.0


def fd_gradient(f: Callable, x, fx: float | None = None, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference gradient; falls back to a one-sided difference
    where one side is not finite."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    f0 = (lambda: fx) if fx is not None else (lambda: f(x))
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = _central(f(xp), f(xm), h, f0)
    return g


class Objective:
    """Log-likelihood over the flat vector ``(beta, psi)`` with a structured
    finite-difference gradient.

    Perturbing ``beta`` changes the margins and hence every term, so those
    coordinates use full evaluations. Perturbing one copula parameter only
    changes that edge and the edges built on top of it in the same class,
    so only those terms are recomputed.
    """

    def __init__(self, template: ModelParams, data: Dataset, unconstrained: bool = True,
                 rel_step: float = FD_REL_STEP):
        self.f = likelihood_function(template, data, unconstrained)
        self.to_params = self.f.to_params
        self.data = data
        self.unconstrained = unconstrained
        self.rel_step = rel_step
        self.free = free_parameters(template.structure)
        self.p1 = len(template.beta)
        edges = template.structure.edges
        self.affected = [
            [k for k, e in enumerate(edges) if k == i or e.nodes > edges[i].nodes] for i in range(len(edges))
        ]

    def __call__(self, vec) -> float:
        return self.f(vec)

    def _copula(self, family, value) -> PairCopula:
        return cop.from_unconstrained(family, value) if self.unconstrained else PairCopula(family, value)

    def gradient(self, vec, fx: float | None = None) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        g = np.empty_like(vec)
        f0 = (lambda: fx) if fx is not None else (lambda: self.f(vec))
        for i in range(self.p1):
            h = self.rel_step * max(1.0, abs(vec[i]))
            xp, xm = vec.copy(), vec.copy()
            xp[i] += h
            xm[i] -= h
            g[i] = _central(self.f(xp), self.f(xm), h, f0)
        if not self.free:
            return g

        prm = self.to_params(vec)
        structure, data = prm.structure, self.data
        po = [PseudoObs(structure, prm.margins, y, data.X) for y in (0, 1)]
        with np.errstate(all="ignore"):
            dens = [[cop.log_density(e.copula(y), *po[y].edge_args(e)) for e in structure.edges] for y in (0, 1)]
            eta = prm.beta[0] + data.X @ prm.beta[1:] + sum(dens[1][k] - dens[0][k] for k in range(len(dens[0])))

        def shifted(i, y, value):
            e = structure.edges[i]
            try:
                c = self._copula(e.copula(y).family, value)
            except (ValueError, ArithmeticError):
                return -math.inf
            edges = list(structure.edges)
            edges[i] = replace(e, **{f"cop{y}": c})
            s = replace(structure, edges=tuple(edges))
            fresh = PseudoObs(s, prm.margins, y, data.X)
            fresh.cache = {
                key: v for key, v in po[y].cache.items() if not (key[1] and e.nodes <= key[1] | {key[0]})
            }
            delta = 0.0
            with np.errstate(all="ignore"):
                for k in self.affected[i]:
                    delta = delta + cop.log_density(s.edges[k].copula(y), *fresh.edge_args(s.edges[k])) - dens[y][k]
                val = loglik_from_eta(eta + (delta if y == 1 else -delta), data.y)
            return val if math.isfinite(val) else -math.inf

        for q, (i, y) in enumerate(self.free):
            m = self.p1 + q
            h = self.rel_step * max(1.0, abs(vec[m]))
            g[m] = _central(shifted(i, y, vec[m] + h), shifted(i, y, vec[m] - h), h, f0)
        return g


# -- optimisers --------------------------------------------------------------


class OptimResult(NamedTuple):
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    history: list


def lbfgs_maximize(
    f: Callable,
    x0,
    gtol: float = 1e-6,
    max_iter: int = 500,
    memory: int = 10,
    c1: float = 1e-4,
    ftol: float = 0.0,
    grad: Callable | None = None,
    window: int = 10,
) -> OptimResult:
    """Limited-memory BFGS ascent with Armijo backtracking.

    Every accepted step increases ``f``; ``history`` lists ``f`` after each
    accepted step, starting with ``f(x0)``. Stops when the gradient's
    infinity norm is at most ``gtol``, when the total improvement over the
    last ``window`` steps is below ``ftol * (1 + |f|)``, when no ascent step
    can be found, or after ``max_iter`` iterations. ``converged`` reports
    the gradient criterion only.
    """
    if grad is None:
        grad = lambda z, fz=None: fd_gradient(f, z, fz)  # noqa: E731
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    if not math.isfinite(fx):
        raise EstimationError("objective is not finite at the starting point")
    history = [fx]
    if x.size == 0:
        return OptimResult(x, fx, np.zeros(0), 0, True, history)
    g = grad(x, fx)
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            n_iter -= 1
            break
        # two-loop recursion on the minimisation problem -f
        q = -g.copy()
        alphas = []
        for s, yv in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / (yv @ s)
            a = rho * (s @ q)
            alphas.append((a, rho, s, yv))
            q -= a * yv
        if s_hist:
            s, yv = s_hist[-1], y_hist[-1]
            q *= (s @ yv) / (yv @ yv)
        else:
            q /= max(1.0, np.max(np.abs(g)))
        for a, rho, s, yv in reversed(alphas):
            b = rho * (yv @ q)
            q += s * (a - b)
        d = -q
        slope = g @ d
        if not slope > 0:
            s_hist.clear()
            y_hist.clear()
            d = g / max(1.0, np.max(np.abs(g)))
            slope = g @ d
        step = 1.0
        for _ in range(60):
            x_new = x + step * d
            f_new = f(x_new)
            if math.isfinite(f_new) and f_new >= fx + c1 * step * slope:
                break
            step *= 0.5
        else:
            log.debug("line search failed at iteration %d", n_iter)
            break
        if not f_new >= fx:
            break
        g_new = grad(x_new, f_new)
        s = x_new - x
        yv = g - g_new
        if s @ yv > 1e-12 * np.sqrt((s @ s) * (yv @ yv)):
            s_hist.append(s)
            y_hist.append(yv)
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        if ftol > 0 and len(history) > window and fx - history[-1 - window] <= ftol * (1.0 + abs(fx)):
            break
    converged = bool(np.max(np.abs(g)) <= gtol)
    return OptimResult(x, fx, g, n_iter, converged, history)


def fit_irls(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Maximum-likelihood linear logistic regression by IRLS (Newton steps).

    Raises
    ------
    EstimationError
        If the design matrix with intercept is rank deficient.
    """
    X = data.design()
    y = data.y.astype(float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError("design matrix (with intercept) is rank deficient")
    beta = np.zeros(X.shape[1])
    ll = loglik_from_eta(X @ beta, y)
    for _ in range(max_iter):
        eta = X @ beta
        p = expit(eta)
        grad = X.T @ (y - p)
        if np.max(np.abs(grad)) < tol:
            break
        w = p * (1.0 - p)
        hess = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik_from_eta(X @ cand, y)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
    eta = X @ beta
    pos, neg = eta[y == 1], eta[y == 0]
    # diverging log-odds that order the classes perfectly indicate separation
    if pos.size and neg.size and np.max(np.abs(eta)) > 30 and pos.min() >= neg.max():
        warnings.warn("IRLS log-odds are diverging; data may be separable", SeparationWarning)
    return beta


def optimize(params: ModelParams, data: Dataset, gtol: float = 1e-6, max_iter: int = 500, ftol: float = 0.0) -> FitReport:
    """Joint quasi-Newton refinement of ``beta`` and all copula parameters.

    Copula parameters are optimised on their unconstrained scale. The
    returned log-likelihood is never below the starting value.
    """
    f = Objective(params, data, unconstrained=True)
    x0 = to_vector(params, unconstrained=True)
    if not math.isfinite(f(x0)):
        raise EstimationError("log-likelihood is not finite at the starting parameters")
    res = lbfgs_maximize(f, x0, gtol=gtol, max_iter=max_iter, ftol=ftol, grad=f.gradient)
    fitted = f.to_params(res.x)
    trace = [TraceEntry("start", res.history[0])]
    trace += [TraceEntry(f"quasi-newton step {i}", v) for i, v in enumerate(res.history[1:], start=1)]
    return FitReport(fitted, res.fun, trace, converged=res.converged, n_iter=res.n_iter)


# -- inference ---------------------------------------------------------------


def numerical_hessian(f: Callable, x, rel_step: float = HESSIAN_REL_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    m = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    H = np.empty((m, m))
    eye = np.eye(m)
    for i in range(m):
        ei = eye[i] * h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = eye[j] * h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4.0 * h[i] * h[j]
            )
    return H


def fisher_info(params: ModelParams, data: Dataset, rel_step: float = HESSIAN_REL_STEP) -> np.ndarray:
    """Observed information: minus the numerical Hessian of the
    log-likelihood in ``(beta, theta)`` on the natural parameter scale."""
    f = likelihood_function(params, data, unconstrained=False)
    H = numerical_hessian(f, to_vector(params), rel_step)
    info = -H
    return 0.5 * (info + info.T)


def standard_errors(info: np.ndarray) -> np.ndarray | None:
    """Square roots of the diagonal of ``info^-1``; ``None`` unless ``info``
    is positive definite."""
    if not np.all(np.isfinite(info)):
        return None
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    inv = np.linalg.inv(L)
    return np.sqrt(np.sum(inv * inv, axis=0))


class Interval(NamedTuple):
    estimate: float
    lower: float
    upper: float
    se: float


def delta_ci(params: ModelParams, info: np.ndarray, x=None, level: float = 0.95, psi: Callable | None = None,
             rel_step: float = FD_REL_STEP) -> Interval:
    """Delta-method confidence interval for a smooth functional.

    ``psi`` maps :class:`ModelParams` to a float; by default it is the
    log-odds at ``x``. ``info`` must be the observed information on the
    natural scale (as returned by :func:`fisher_info`), which already sums
    over observations, so no further ``n`` scaling is applied.
    """
    if psi is None:
        if x is None:
            raise ValueError("either x or psi is required")
        row = np.asarray(x, dtype=float)
        psi = lambda prm: float(log_odds(prm, row))  # noqa: E731
    pmap = _ParamMap(params, unconstrained=False)
    vec = to_vector(params)
    grad = fd_gradient(lambda v: psi(pmap(v)), vec, rel_step=rel_step)
    try:
        sol = np.linalg.solve(info, grad)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("information matrix is singular") from exc
    if np.linalg.cond(info) > 1e14:
        raise EstimationError("information matrix is singular")
    var = max(float(grad @ sol), 0.0)
    se = math.sqrt(var)
    z = float(norm.ppf(0.5 + level / 2.0))
    est = psi(params)
    return Interval(est, est - z * se, est + z * se, se)
