"""Truncated regular vines shared by both classes and the copula correction term.

An edge couples the conditioned pair ``(j, k)`` given the conditioning set
``D``; its two arguments are the pseudo-observations ``u_{j|D}`` and
``u_{k|D}``, each produced by the h-function of a parent edge in the tree
below. Both classes use the same edges but carry their own copulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import copulas as cop
from .copulas import PairCopula
from .margins import MarginSet, marginal_cdf


class HierarchyError(ValueError):
    """An edge's parent pseudo-observation cannot be produced."""


@dataclass(frozen=True)
class Edge:
    tree: int
    conditioned: tuple[int, int]
    conditioning: frozenset = frozenset()
    cop0: PairCopula = cop.INDEPENDENCE
    cop1: PairCopula = cop.INDEPENDENCE

    def __post_init__(self):
        object.__setattr__(self, "conditioned", tuple(int(i) for i in self.conditioned))
        object.__setattr__(self, "conditioning", frozenset(int(i) for i in self.conditioning))

    @property
    def nodes(self) -> frozenset:
        return self.conditioning | set(self.conditioned)

    def copula(self, y: int) -> PairCopula:
        return self.cop1 if y == 1 else self.cop0

    @property
    def label(self) -> str:
        j, k = self.conditioned
        if not self.conditioning:
            return f"{j},{k}"
        return f"{j},{k}|{','.join(str(i) for i in sorted(self.conditioning))}"

    def is_independent(self) -> bool:
        ind = cop.CopulaFamily.INDEPENDENCE
        return self.cop0.family is ind and self.cop1.family is ind


class Violation(NamedTuple):
    kind: str
    message: str
    edge: Edge | None


@dataclass(frozen=True)
class ValidationReport:
    violation: Violation | None = None

    @property
    def ok(self) -> bool:
        return self.violation is None

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class VineStructure:
    """Edges of a truncated vine, grouped by tree through ``Edge.tree``.

    Absent edges are independence copulas in both classes.
    """

    edges: tuple = ()
    max_trees: int = 4
    covariates: frozenset | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.covariates is not None:
            object.__setattr__(self, "covariates", frozenset(self.covariates))

    def __len__(self):
        return len(self.edges)

    @property
    def n_trees(self) -> int:
        return max((e.tree for e in self.edges), default=0)

    def tree(self, t: int) -> list[Edge]:
        return [e for e in self.edges if e.tree == t]

    @cached_property
    def _by_nodes(self) -> dict:
        return {e.nodes: e for e in self.edges}

    def edge_with_nodes(self, nodes) -> Edge | None:
        return self._by_nodes.get(frozenset(nodes))

    def with_edge(self, edge: Edge) -> "VineStructure":
        return replace(self, edges=self.edges + (edge,))

    def without(self, index: int) -> "VineStructure":
        return replace(self, edges=self.edges[:index] + self.edges[index + 1 :])

    def with_copulas(self, index: int, cop0: PairCopula, cop1: PairCopula) -> "VineStructure":
        edges = list(self.edges)
        edges[index] = replace(edges[index], cop0=cop0, cop1=cop1)
        return replace(self, edges=tuple(edges))


def parent_edge(structure: VineStructure, j: int, conditioning: frozenset) -> Edge | None:
    """The tree-``|D|`` edge that produces ``u_{j|D}`` by an h-function step."""
    e = structure.edge_with_nodes(conditioning | {j})
    if e is None or j not in e.conditioned:
        return None
    return e


def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def validate(structure: VineStructure) -> ValidationReport:
    """Check the vine invariants and report the first violation found."""
    if structure.n_trees > structure.max_trees:
        return ValidationReport(
            Violation("max_trees", f"{structure.n_trees} trees exceed K={structure.max_trees}", None)
        )
    seen = set()
    for e in structure.edges:
        j, k = e.conditioned
        if e.tree < 1 or len(e.conditioning) != e.tree - 1:
            return ValidationReport(Violation("shape", f"edge {e.label} has |D| != tree - 1", e))
        if j == k or j in e.conditioning or k in e.conditioning:
            return ValidationReport(Violation("shape", f"edge {e.label} repeats an index", e))
        if structure.covariates is not None and not e.nodes <= structure.covariates:
            return ValidationReport(Violation("covariates", f"edge {e.label} uses a non-eligible column", e))
        if e.nodes in seen:
            return ValidationReport(Violation("duplicate", f"edge {e.label} duplicates another edge", e))
        seen.add(e.nodes)

    for t in range(1, structure.n_trees + 1):
        uf: dict = {}
        for e in structure.tree(t):
            if t == 1:
                a, b = e.conditioned
            else:
                j, k = e.conditioned
                pa = parent_edge(structure, j, e.conditioning)
                pb = parent_edge(structure, k, e.conditioning)
                if pa is None or pb is None:
                    missing = sorted(e.conditioning | {j if pa is None else k})
                    return ValidationReport(
                        Violation(
                            "proximity",
                            f"edge {e.label} needs a tree-{t - 1} parent on {missing} sharing a node",
                            e,
                        )
                    )
                a, b = pa.nodes, pb.nodes
            uf.setdefault(a, a)
            uf.setdefault(b, b)
            ra, rb = _find(uf, a), _find(uf, b)
            if ra == rb:
                return ValidationReport(Violation("cycle", f"edge {e.label} closes a cycle in tree {t}", e))
            uf[ra] = rb
    return ValidationReport()


class PseudoObs:
    """Memoised conditional CDF values ``u^y_{j|D}`` for one class.

    ``x`` is an ``(n, p)`` array (a single row is promoted); values are
    arrays of length ``n``.
    """

    def __init__(self, structure: VineStructure, margins: MarginSet, y: int, x):
        self.structure = structure
        self.margins = margins
        self.y = y
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.cache: dict = {}

    def __getitem__(self, key):
        j, conditioning = key
        conditioning = frozenset(conditioning)
        key = (j, conditioning)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if not conditioning:
            val = marginal_cdf(self.margins, j, self.y, self.x[:, j])
        else:
            e = parent_edge(self.structure, j, conditioning)
            if e is None:
                raise HierarchyError(f"no parent edge yields u_{{{j}|{sorted(conditioning)}}}")
            a, b = e.conditioned
            m = b if a == j else a
            rest = conditioning - {m}
            val = cop.h_function(e.copula(self.y), self[j, rest], self[m, rest])
        self.cache[key] = val
        return val

    def edge_args(self, e: Edge):
        j, k = e.conditioned
        return self[j, e.conditioning], self[k, e.conditioning]


def pseudo_obs(structure: VineStructure, margins: MarginSet, y: int, x) -> dict:
    """All pseudo-observations needed to evaluate the class-``y`` vine at ``x``.

    Returns a dict keyed by ``(j, frozenset(D))``. Marginal values are
    included for every continuous column.
    """
    po = PseudoObs(structure, margins, y, x)
    for j, kind in enumerate(margins.kinds):
        if kind.value == "continuous":
            po[j, frozenset()]
    for e in structure.edges:
        po.edge_args(e)
    single = np.ndim(x) == 1
    return {k: (float(v[0]) if single else v) for k, v in po.cache.items()}


def edge_terms(structure: VineStructure, margins: MarginSet, x) -> np.ndarray:
    """Per-edge ``log c1 - log c0`` as an array of shape ``(n_edges, n)``."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((len(structure.edges), xs.shape[0]))
    if not structure.edges:
        return out
    po = (PseudoObs(structure, margins, 0, xs), PseudoObs(structure, margins, 1, xs))
    for i, e in enumerate(structure.edges):
        if e.is_independent():
            continue
        out[i] = cop.log_density(e.cop1, *po[1].edge_args(e)) - cop.log_density(e.cop0, *po[0].edge_args(e))
    return out


def g_eval(structure: VineStructure, margins: MarginSet, x):
    """Copula correction to the linear log-odds.

    Sum over edges of the class-1 minus class-0 log pair-copula densities,
    each evaluated at its own class's pseudo-observations.
    """
    total = edge_terms(structure, margins, x).sum(axis=0)
    return float(total[0]) if np.ndim(x) == 1 else total


def gaussian_pair_closed_form(mu0, mu1, sigma, theta0, theta1):
    """Quadratic coefficients of one Gaussian-Gaussian tree-1 edge.

    For Gaussian margins ``N(mu_{y,i}, sigma_i^2)`` the edge contributes
    ``a0 + a11 x1 + a21 x2 + a12 x1^2 + a22 x2^2 + a3 x1 x2`` to the log-odds.

    Returns
    -------
    tuple of float
        ``(a0, a11, a21, a12, a22, a3)``.
    """
    mu = (np.asarray(mu0, dtype=float), np.asarray(mu1, dtype=float))
    s1, s2 = (float(s) for s in sigma)
    th = (float(theta0), float(theta1))
    q = [t * t / (1.0 - t * t) for t in th]
    w = [t / (1.0 - t * t) for t in th]

    def diff(f):
        return f(1) - f(0)

    a0 = -0.5 * np.log((1.0 - th[1] ** 2) / (1.0 - th[0] ** 2)) + diff(
        lambda y: -0.5 * q[y] * (mu[y][0] ** 2 / s1**2 + mu[y][1] ** 2 / s2**2)
        + w[y] * mu[y][0] * mu[y][1] / (s1 * s2)
    )
    a11 = diff(lambda y: q[y] * mu[y][0] - w[y] * mu[y][1] * s1 / s2) / s1**2
    a21 = diff(lambda y: q[y] * mu[y][1] - w[y] * mu[y][0] * s2 / s1) / s2**2
    a12 = -0.5 * (q[1] - q[0]) / s1**2
    a22 = -0.5 * (q[1] - q[0]) / s2**2
    a3 = (w[1] - w[0]) / (s1 * s2)
    return tuple(float(a) for a in (a0, a11, a21, a12, a22, a3))
