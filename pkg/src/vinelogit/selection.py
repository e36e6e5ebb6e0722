"""Greedy forward selection of the vine edges.

Trees are filled in order. Within a tree the candidate with the largest
log-likelihood gain (all copulas Gaussian at this stage) is accepted while
its gain reaches the threshold ``tau``; each accepted edge then gets its
per-class families chosen and all parameters are re-estimated jointly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy.stats import kendalltau

from . import copulas as cop
from .copulas import CopulaFamily, PairCopula
from .data import Dataset
from .estimation import (
    EstimationError,
    FitReport,
    ModelParams,
    TraceEntry,
    fisher_info,
    fit_irls,
    lbfgs_maximize,
    log_odds,
    loglik_from_eta,
    optimize,
    standard_errors,
)
from .vine import Edge, PseudoObs, VineStructure, parent_edge, validate

log = logging.getLogger(__name__)

GAUSSIAN = CopulaFamily.GAUSSIAN
FALLBACK_THETA = 0.05


class SelectionError(EstimationError):
    """Selection failed; ``trace`` holds the steps completed so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass(frozen=True)
class SelectConfig:
    tau: float = 2.0
    max_trees: int = 4
    families: tuple = (CopulaFamily.GAUSSIAN, CopulaFamily.CLAYTON, CopulaFamily.GUMBEL)
    gtol: float = 1e-6
    ftol: float = 1e-8
    max_iter: int = 500
    candidate_gtol: float = 1e-6
    compute_se: bool = True

    def __post_init__(self):
        fams = tuple(CopulaFamily.parse(f) if isinstance(f, str) else CopulaFamily(f) for f in self.families)
        object.__setattr__(self, "families", fams)
        if GAUSSIAN not in fams:
            raise ValueError("the gaussian family is required for candidate scoring")
        if CopulaFamily.INDEPENDENCE in fams:
            raise ValueError("independence is not a selectable family")
        if self.max_trees < 1:
            raise ValueError("max_trees must be at least 1")
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")


class Candidate(NamedTuple):
    tree: int
    conditioned: tuple
    conditioning: frozenset

    def edge(self, cop0=cop.INDEPENDENCE, cop1=cop.INDEPENDENCE) -> Edge:
        return Edge(self.tree, self.conditioned, self.conditioning, cop0, cop1)

    def sort_key(self):
        return (self.conditioned, tuple(sorted(self.conditioning)))

    @property
    def label(self) -> str:
        return self.edge().label


class Gain(NamedTuple):
    gain: float
    theta0: float
    theta1: float
    loglik: float


def _forest(pairs):
    uf: dict = {}

    def find(a):
        uf.setdefault(a, a)
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    for a, b in pairs:
        uf[find(a)] = find(b)
    return find


def allowed_candidates(structure: VineStructure, t: int, eligible) -> list[Candidate]:
    """Legal new edges for tree ``t``, in lexicographic order.

    Tree 1 admits every continuous pair while empty and afterwards only
    pairs touching an included variable without closing a cycle. Deeper
    trees join two edges of tree ``t - 1`` sharing ``t - 1`` nodes, with
    both parent pseudo-observations available (strong hierarchy).
    """
    eligible = sorted(set(eligible))
    present = {e.nodes for e in structure.edges}
    out = []
    if t == 1:
        edges = structure.tree(1)
        find = _forest(e.conditioned for e in edges)
        included = {i for e in edges for i in e.conditioned}
        for j, k in combinations(eligible, 2):
            if frozenset((j, k)) in present:
                continue
            if edges and not ({j, k} & included):
                continue
            if edges and find(j) == find(k):
                continue
            out.append(Candidate(1, (j, k), frozenset()))
    else:
        lower = structure.tree(t - 1)
        find = _forest(
            tuple(parent_edge(structure, j, e.conditioning).nodes for j in e.conditioned) for e in structure.tree(t)
        )
        allowed = set(eligible)
        for a, b in combinations(lower, 2):
            shared = a.nodes & b.nodes
            if len(shared) != t - 1:
                continue
            (j,) = a.nodes - shared
            (k,) = b.nodes - shared
            if j not in a.conditioned or k not in b.conditioned:
                continue
            if not {j, k} | shared <= allowed or (shared | {j, k}) in present:
                continue
            if find(a.nodes) == find(b.nodes):
                continue
            j, k = min(j, k), max(j, k)
            out.append(Candidate(t, (j, k), frozenset(shared)))
    return sorted(out, key=Candidate.sort_key)


class _Snapshot:
    """Read-only view of the current model used to score candidates."""

    def __init__(self, params: ModelParams, data: Dataset):
        self.params = params
        self.data = data
        self.eta = np.asarray(log_odds(params, data.X), dtype=float)
        self.loglik = loglik_from_eta(self.eta, data.y)
        self.po = tuple(PseudoObs(params.structure, params.margins, y, data.X) for y in (0, 1))

    def args(self, cand: Candidate | Edge, y: int):
        j, k = cand.conditioned
        return self.po[y][j, cand.conditioning], self.po[y][k, cand.conditioning]


def _fit_terms(snap: _Snapshot, terms, x0, gtol: float):
    """Maximise ``loglik(eta + sum(terms(x)))`` over an unconstrained vector."""
    y = snap.data.y

    def f(x):
        try:
            with np.errstate(all="ignore"):
                val = loglik_from_eta(snap.eta + terms(x), y)
        except (ValueError, ArithmeticError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    return lbfgs_maximize(f, x0, gtol=gtol, max_iter=200)


def _init_theta(u, v, mask) -> float:
    tau = kendalltau(u[mask], v[mask]).statistic
    try:
        theta = cop.theta_from_tau(GAUSSIAN, float(tau))
    except cop.TauInversionError:
        return FALLBACK_THETA
    return float(np.clip(theta, -0.95, 0.95))


def candidate_gain(current: ModelParams, candidate: Candidate, data: Dataset, gtol: float = 1e-6,
                   snapshot: _Snapshot | None = None) -> Gain:
    """Log-likelihood gain from adding ``candidate`` with Gaussian copulas.

    Only the two new parameters are fitted; everything else is frozen. The
    independence point is part of the search space, so the gain is never
    negative.
    """
    snap = snapshot or _Snapshot(current, data)
    u0, v0 = snap.args(candidate, 0)
    u1, v1 = snap.args(candidate, 1)
    init = [_init_theta(u0, v0, data.y == 0), _init_theta(u1, v1, data.y == 1)]

    def terms(x):
        c0 = PairCopula(GAUSSIAN, math.tanh(x[0]))
        c1 = PairCopula(GAUSSIAN, math.tanh(x[1]))
        return cop.log_density(c1, u1, v1) - cop.log_density(c0, u0, v0)

    best = Gain(0.0, 0.0, 0.0, snap.loglik)
    try:
        res = _fit_terms(snap, terms, np.arctanh(init), gtol)
    except EstimationError as exc:
        log.warning("candidate %s: fit failed (%s); gain recorded as 0", candidate.label, exc)
        return best
    gain = res.fun - snap.loglik
    if gain > 0:
        th = np.tanh(res.x)
        best = Gain(float(gain), float(th[0]), float(th[1]), float(res.fun))
    return best


def family_select(current: ModelParams, index: int, data: Dataset, families, gtol: float = 1e-6):
    """Choose the family of edge ``index`` separately for each class.

    ``current`` holds the edge with its Gaussian fit. Each class in turn
    tries every family while the other class keeps its incumbent copula.
    Clayton and Gumbel only model positive dependence and are skipped when
    the Gaussian parameter is not positive.

    Returns
    -------
    (PairCopula, PairCopula)
        Selected class-0 and class-1 copulas.
    """
    edge = current.structure.edges[index]
    base = current.with_structure(current.structure.without(index))
    snap = _Snapshot(base, data)
    args = (snap.args(edge, 0), snap.args(edge, 1))
    chosen = [edge.cop0, edge.cop1]
    for y in (0, 1):
        other = 1 - y
        other_term = cop.log_density(chosen[other], *args[other])
        sign = 1.0 if y == 1 else -1.0
        fixed = -sign * other_term

        def loglik_of(c: PairCopula):
            with np.errstate(all="ignore"):
                return loglik_from_eta(snap.eta + fixed + sign * cop.log_density(c, *args[y]), data.y)

        incumbent = chosen[y]
        best, best_ll = incumbent, loglik_of(incumbent)
        gauss_theta = incumbent.theta if incumbent.family is GAUSSIAN else math.nan
        for fam in families:
            if fam is GAUSSIAN or fam is incumbent.family:
                continue
            if not gauss_theta > 0:
                continue
            try:
                theta0 = cop.theta_from_tau(fam, cop.tau_from_theta(incumbent))
                start = cop.to_unconstrained(PairCopula(fam, theta0))
            except (cop.TauInversionError, cop.ParameterDomainError, ValueError):
                continue

            def terms(x, fam=fam):
                return fixed + sign * cop.log_density(cop.from_unconstrained(fam, float(x[0])), *args[y])

            try:
                res = _fit_terms(snap, terms, np.array([start]), gtol)
            except EstimationError:
                continue
            if res.fun > best_ll:
                best, best_ll = cop.from_unconstrained(fam, float(res.x[0])), res.fun
        chosen[y] = best
    return chosen[0], chosen[1]


@dataclass
class _State:
    params: ModelParams
    loglik: float
    trace: list = field(default_factory=list)


def _best_candidate(state: _State, t: int, data: Dataset, eligible, config: SelectConfig):
    cands = allowed_candidates(state.params.structure, t, eligible)
    if not cands:
        return None, None
    snap = _Snapshot(state.params, data)
    best = None
    for c in cands:
        g = candidate_gain(state.params, c, data, config.candidate_gtol, snap)
        if best is None or g.gain > best[1].gain:
            best = (c, g)
    return best


def select_model(data: Dataset, config: SelectConfig | None = None) -> FitReport:
    """Fit the linear model, then grow the vine greedily tree by tree.

    The trace starts with the linear fit and gets one entry per accepted
    edge holding the log-likelihood after joint re-estimation.
    """
    config = config or SelectConfig()
    eligible = data.continuous
    trace: list = []
    try:
        beta = fit_irls(data)
        structure = VineStructure(max_trees=config.max_trees, covariates=frozenset(eligible))
        params = ModelParams.for_data(beta, data, structure)
    except (EstimationError, ValueError) as exc:
        raise SelectionError(f"linear start failed: {exc}", trace) from exc
    state = _State(params, loglik_from_eta(log_odds(params, data.X), data.y))
    state.trace.append(TraceEntry("linear logistic fit", state.loglik))
    converged = True

    for t in range(1, config.max_trees + 1):
        accepted = 0
        while len(eligible) >= 2:
            try:
                cand, gain = _best_candidate(state, t, data, eligible, config)
            except (EstimationError, ValueError) as exc:
                raise SelectionError(f"tree {t}: candidate scoring failed: {exc}", state.trace) from exc
            if cand is None or not gain.gain >= config.tau:
                break
            edge = cand.edge(PairCopula(GAUSSIAN, gain.theta0), PairCopula(GAUSSIAN, gain.theta1))
            try:
                trial = state.params.with_structure(state.params.structure.with_edge(edge))
                index = len(trial.structure.edges) - 1
                c0, c1 = family_select(trial, index, data, config.families, config.candidate_gtol)
                trial = trial.with_structure(trial.structure.with_copulas(index, c0, c1))
                report = optimize(trial, data, gtol=config.gtol, max_iter=config.max_iter, ftol=config.ftol)
            except (EstimationError, ValueError) as exc:
                raise SelectionError(f"edge {cand.label}: re-estimation failed: {exc}", state.trace) from exc
            check = validate(report.params.structure)
            if not check.ok:
                raise SelectionError(f"edge {cand.label}: {check.violation.message}", state.trace)
            converged = report.converged
            e = report.params.structure.edges[index]
            state.params, state.loglik = report.params, report.loglik
            state.trace.append(
                TraceEntry(f"accept {e.label} (tree {t}, gain {gain.gain:.4f}; {e.cop0} | {e.cop1})", report.loglik)
            )
            accepted += 1
            log.info("accepted %s, loglik %.6f", e.label, report.loglik)
        if accepted == 0:
            break

    out = FitReport(state.params, state.loglik, state.trace, converged=converged)
    if config.compute_se:
        try:
            info = fisher_info(state.params, data)
        except (EstimationError, ValueError):
            info = None
        if info is not None:
            out.info = info
            out.std_errors = standard_errors(info)
    return out
