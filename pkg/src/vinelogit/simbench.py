"""Simulation models, baseline classifiers, metrics and the benchmark driver."""

from __future__ import annotations

import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import copulas as cop
from .copulas import CopulaFamily, PairCopula
from .data import Dataset
from .estimation import fit_irls, log_odds, loglik_from_eta
from .margins import MarginKind
from .selection import SelectConfig, select_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MODEL_IDS = (1, 2, 3, 4, 5)
STRENGTHS = ("strong", "weak")
METHODS = ("coplr", "linlr", "nb")
THREADS_ENV = "VINELOGIT_THREADS"


class SpecError(ValueError):
    """A simulation model or scenario is invalid."""


class MetricError(ValueError):
    pass


# -- simulation models -------------------------------------------------------


@dataclass(frozen=True)
class VinePair:
    """D-vine edge coupling ``start`` and ``start + tree`` given the columns between."""

    tree: int
    start: int
    family: CopulaFamily
    theta0: float
    theta1: float

    def copula(self, y: int) -> PairCopula:
        return PairCopula(self.family, self.theta1 if y == 1 else self.theta0)


@dataclass(frozen=True, eq=False)
class SimModelSpec:
    model_id: int
    p: int
    strength: str
    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    R0: np.ndarray | None = None
    R1: np.ndarray | None = None
    vine: tuple = ()

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise SpecError(f"model_id must be one of {MODEL_IDS}, got {self.model_id}")
        if self.strength not in STRENGTHS:
            raise SpecError(f"strength must be one of {STRENGTHS}, got {self.strength!r}")
        for name in ("mu0", "mu1", "sigma0", "sigma1"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.p,)).copy()
            object.__setattr__(self, name, arr)
        if np.any(self.sigma0 <= 0) or np.any(self.sigma1 <= 0):
            raise SpecError("standard deviations must be positive")
        if self.model_id in (2, 4, 5) and not np.array_equal(self.sigma0, self.sigma1):
            raise SpecError(f"model {self.model_id} requires equal class standard deviations")
        if self.gaussian:
            for name in ("R0", "R1"):
                R = np.asarray(getattr(self, name) if getattr(self, name) is not None else np.eye(self.p), float)
                if R.shape != (self.p, self.p) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
                    raise SpecError(f"{name} must be a symmetric {self.p}x{self.p} correlation matrix")
                try:
                    np.linalg.cholesky(R)
                except np.linalg.LinAlgError:
                    raise SpecError(f"{name} is not positive definite") from None
                object.__setattr__(self, name, R)
            if self.model_id == 5 and not (np.array_equal(self.R0, np.eye(self.p)) and np.array_equal(self.R1, self.R0)):
                raise SpecError("model 5 requires identity correlation in both classes")
        else:
            for e in self.vine:
                if not (1 <= e.tree and 0 <= e.start and e.start + e.tree < self.p):
                    raise SpecError(f"vine edge (tree {e.tree}, start {e.start}) out of range for p={self.p}")
                if e.tree > 3 and e.theta0 != e.theta1:
                    raise SpecError("class differences are confined to the first three trees")
                e.copula(0), e.copula(1)

    @property
    def gaussian(self) -> bool:
        return self.model_id in (1, 2, 5)

    def correlation(self, y: int) -> np.ndarray:
        return self.R1 if y == 1 else self.R0

    def mean(self, y: int) -> np.ndarray:
        return self.mu1 if y == 1 else self.mu0

    def sd(self, y: int) -> np.ndarray:
        return self.sigma1 if y == 1 else self.sigma0


def load_defaults() -> dict:
    text = resources.files("vinelogit").joinpath("scenarios/defaults.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def _halve(a: float, b: float, fwd, inv) -> tuple[float, float]:
    za, zb = fwd(a), fwd(b)
    return a, float(inv(za + 0.5 * (zb - za)))


def _weak_theta(family: CopulaFamily, t0: float, t1: float) -> tuple[float, float]:
    if family is CopulaFamily.CLAYTON:
        return _halve(t0, t1, math.log, math.exp)
    if family is CopulaFamily.GUMBEL:
        return _halve(t0, t1, lambda t: math.log(t - 1.0), lambda z: 1.0 + math.exp(z))
    return _halve(t0, t1, math.atanh, math.tanh)


def default_spec(model_id: int, p: int | None = None, strength: str = "strong", overrides: dict | None = None,
                 defaults: dict | None = None) -> SimModelSpec:
    """Build a model from the packaged defaults, optionally overriding keys
    of its ``[model.N]`` table."""
    if model_id not in MODEL_IDS:
        raise SpecError(f"model_id must be one of {MODEL_IDS}, got {model_id}")
    if strength not in STRENGTHS:
        raise SpecError(f"strength must be one of {STRENGTHS}, got {strength!r}")
    cfg = defaults or load_defaults()
    common = cfg["common"]
    table = {**common, **cfg["model"][str(model_id)], **(overrides or {})}
    p = int(p if p is not None else table["p"])
    if p < 2:
        raise SpecError("p must be at least 2")
    weak = strength == "weak"
    mu0 = np.full(p, float(table.get("mu0", table["mu"])))
    mu1 = np.full(p, float(table.get("mu1", table["mu"])))
    sigma0 = float(table.get("sigma0", table["sigma"]))
    sigma1 = float(table.get("sigma1", table["sigma"]))
    if weak:
        sigma0, sigma1 = _halve(sigma0, sigma1, math.log, math.exp)
    if model_id == 5:
        shift = float(table["mean_shift"]) * (0.5 if weak else 1.0)
        mu1 = mu0 + shift
        return SimModelSpec(5, p, strength, mu0, mu1, sigma0, sigma1, np.eye(p), np.eye(p))
    if model_id in (1, 2):
        r0, r1 = float(table["rho0"]), float(table["rho1"])
        if weak:
            r0, r1 = _weak_theta(CopulaFamily.GAUSSIAN, r0, r1)
        k = min(int(table["n_pairs"]), p - 1) + 1
        R0, R1 = np.eye(p), np.eye(p)
        lag = np.abs(np.subtract.outer(np.arange(k), np.arange(k)))
        R0[:k, :k] = r0**lag
        R1[:k, :k] = r1**lag
        return SimModelSpec(model_id, p, strength, mu0, mu1, sigma0, sigma1, R0, R1)
    pairs = []
    params = {CopulaFamily.GUMBEL: table["gumbel"], CopulaFamily.CLAYTON: table["clayton"]}
    for t in range(1, min(int(table["n_trees"]), p - 1) + 1):
        for m in range(p - t):
            fam = CopulaFamily.GUMBEL if (t + m) % 2 == 0 else CopulaFamily.CLAYTON
            t0, t1 = (float(v) for v in params[fam])
            if weak:
                t0, t1 = _weak_theta(fam, t0, t1)
            pairs.append(VinePair(t, m, fam, t0, t1))
    return SimModelSpec(model_id, p, strength, mu0, mu1, sigma0, sigma1, vine=tuple(pairs))


# -- D-vine sampling and density ---------------------------------------------


def _vine_table(spec: SimModelSpec, y: int) -> dict:
    return {(e.tree, e.start): e.copula(y) for e in spec.vine}


def _dvine_sample(table: dict, w: np.ndarray) -> np.ndarray:
    """Turn independent uniforms ``w`` (n x p) into a D-vine sample.

    ``F[k][i] = F(u_i | u_{i-1}, ..., u_{i-k})`` and
    ``B[k][m] = F(u_m | u_{m+1}, ..., u_{m+k})``; each new column is
    obtained by inverting the forward chain.
    """
    n, p = w.shape
    depth = max((t for t, _ in table), default=0)
    F = [[None] * p for _ in range(depth + 1)]
    B = [[None] * p for _ in range(depth + 1)]
    for i in range(p):
        kmax = min(i, depth)
        z = w[:, i]
        for k in range(kmax, 0, -1):
            c = table.get((k, i - k), cop.INDEPENDENCE)
            z = cop.h_inverse(c, z, B[k - 1][i - k])
        F[0][i] = B[0][i] = z
        for k in range(1, kmax + 1):
            c = table.get((k, i - k), cop.INDEPENDENCE)
            F[k][i] = cop.h_function(c, F[k - 1][i], B[k - 1][i - k])
            B[k][i - k] = cop.h_function(c, B[k - 1][i - k], F[k - 1][i])
    return np.column_stack(F[0])


def _dvine_logpdf(table: dict, u: np.ndarray) -> np.ndarray:
    n, p = u.shape
    depth = max((t for t, _ in table), default=0)
    F = [list(u.T)]
    B = [list(u.T)]
    out = np.zeros(n)
    for k in range(1, depth + 1):
        Fk, Bk = [None] * p, [None] * p
        for m in range(p - k):
            c = table.get((k, m), cop.INDEPENDENCE)
            a, b = B[k - 1][m], F[k - 1][m + k]
            out += cop.log_density(c, a, b)
            Fk[m + k] = cop.h_function(c, b, a)
            Bk[m] = cop.h_function(c, a, b)
        F.append(Fk)
        B.append(Bk)
    return out


def _class_draw(spec: SimModelSpec, y: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.gaussian:
        L = np.linalg.cholesky(spec.correlation(y))
        z = rng.standard_normal((n, spec.p)) @ L.T
    else:
        u = _dvine_sample(_vine_table(spec, y), rng.random((n, spec.p)))
        z = cop.norm_ppf(cop.clamp(u))
    return spec.mean(y) + spec.sd(y) * z


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an integer seed or a ``SeedSequence``."""
    return np.random.Generator(np.random.PCG64(seed))


def simulate(spec: SimModelSpec, n: int, seed) -> Dataset:
    """Draw ``n`` labelled rows; identical seeds give identical datasets."""
    if n < 1:
        raise SpecError("n must be at least 1")
    rng = make_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.int64)
    X = np.empty((n, spec.p))
    for cls in (0, 1):
        rows = np.flatnonzero(y == cls)
        X[rows] = _class_draw(spec, cls, rows.size, rng)
    return Dataset(X, y, (MarginKind.CONTINUOUS,) * spec.p)


def class_logpdf(spec: SimModelSpec, y: int, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu, sd = spec.mean(y), spec.sd(y)
    z = (X - mu) / sd
    if spec.gaussian:
        R = spec.correlation(y)
        L = np.linalg.cholesky(R)
        w = np.linalg.solve(L, z.T)
        return -0.5 * np.sum(w * w, axis=0) - np.sum(np.log(np.diag(L))) - np.sum(np.log(sd)) - 0.5 * spec.p * math.log(
            2.0 * math.pi
        )
    base = np.sum(-0.5 * z * z - np.log(sd) - 0.5 * math.log(2.0 * math.pi), axis=1)
    return base + _dvine_logpdf(_vine_table(spec, y), cop.clamp(cop.norm_cdf(z)))


def bayes_log_odds(spec: SimModelSpec, X) -> np.ndarray:
    """True log-odds under the generating model (equal class priors)."""
    return class_logpdf(spec, 1, X) - class_logpdf(spec, 0, X)


def bayes_auc(spec: SimModelSpec, n: int = 100_000, seed=0) -> float:
    data = simulate(spec, n, seed)
    return auc(bayes_log_odds(spec, data.X), data.y)


# -- metrics -----------------------------------------------------------------


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise MetricError("AUC needs both classes among the labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def mean_loglik(eta, y) -> float:
    """Out-of-sample log-likelihood per observation."""
    return loglik_from_eta(eta, y) / len(y)


# -- classifiers -------------------------------------------------------------


class GaussianNB:
    """Naive Bayes with per-class MLE margins.

    Continuous columns get a normal with per-class mean and variance (floored
    at ``VAR_FLOOR``), binary columns a Bernoulli and count columns a Poisson.
    """

    name = "nb"
    VAR_FLOOR = 1e-12
    RATE_FLOOR = 1e-12

    def fit(self, data: Dataset) -> "GaussianNB":
        self.kinds = data.kinds
        ybar = data.response_mean
        if ybar in (0.0, 1.0):
            raise MetricError("naive Bayes needs both classes in the training data")
        self.log_prior = math.log(ybar / (1.0 - ybar))
        self.mean = np.array([data.X[data.y == c].mean(axis=0) for c in (0, 1)])
        self.var = np.maximum(np.array([data.X[data.y == c].var(axis=0) for c in (0, 1)]), self.VAR_FLOOR)
        return self

    def log_odds(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.log_prior)
        for j, kind in enumerate(self.kinds):
            x = X[:, j]
            lp = []
            for c in (0, 1):
                m, v = self.mean[c, j], self.var[c, j]
                if kind is MarginKind.CONTINUOUS:
                    lp.append(-0.5 * (x - m) ** 2 / v - 0.5 * math.log(v))
                elif kind is MarginKind.BINARY:
                    r = min(max(m, self.RATE_FLOOR), 1.0 - self.RATE_FLOOR)
                    lp.append(x * math.log(r) + (1.0 - x) * math.log1p(-r))
                else:
                    lam = max(m, self.RATE_FLOOR)
                    lp.append(x * math.log(lam) - lam)
            out += lp[1] - lp[0]
        return out

    def predict(self, X) -> np.ndarray:
        return expit(self.log_odds(X))


class LinearLR:
    name = "linlr"

    def fit(self, data: Dataset) -> "LinearLR":
        self.beta = fit_irls(data)
        return self

    def log_odds(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.beta[0] + X @ self.beta[1:]

    def predict(self, X) -> np.ndarray:
        return expit(self.log_odds(X))


class CopulaLR:
    name = "coplr"

    def __init__(self, config: SelectConfig | None = None):
        self.config = config or SelectConfig(compute_se=False)

    def fit(self, data: Dataset) -> "CopulaLR":
        self.report = select_model(data, self.config)
        self.params = self.report.params
        return self

    def log_odds(self, X) -> np.ndarray:
        return np.asarray(log_odds(self.params, np.atleast_2d(X)), dtype=float)

    def predict(self, X) -> np.ndarray:
        return expit(self.log_odds(X))


# -- benchmark ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    model_id: int = 2
    strength: str = "strong"
    p: int = 8
    n: int = 1000
    n_test: int = 4000
    replicates: int = 10
    seed: int = 0
    methods: tuple = METHODS
    tau: float = 2.0
    max_trees: int = 4
    families: tuple = ("gaussian", "clayton", "gumbel")
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise SpecError(f"model_id must be one of {MODEL_IDS}, got {self.model_id}")
        object.__setattr__(self, "methods", tuple(str(m).lower() for m in self.methods))
        object.__setattr__(self, "families", tuple(str(f).lower() for f in self.families))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise SpecError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.n < 2 or self.n_test < 2 or self.replicates < 1:
            raise SpecError("n and n_test must be at least 2 and replicates at least 1")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")

    def spec(self) -> SimModelSpec:
        return default_spec(self.model_id, self.p, self.strength, self.model)

    def select_config(self) -> SelectConfig:
        return SelectConfig(tau=self.tau, max_trees=self.max_trees, families=self.families, compute_se=False)


SCENARIO_KEYS = {f for f in Scenario.__dataclass_fields__}


def load_scenario(path, **overrides) -> Scenario:
    """Read a scenario from a TOML file with a ``[scenario]`` table and an
    optional ``[model]`` table overriding the default generating parameters."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from exc
    table = dict(doc.get("scenario", {}))
    unknown = set(table) - SCENARIO_KEYS
    if unknown:
        raise SpecError(f"{path}: unknown scenario keys {sorted(unknown)}")
    if "model" in doc:
        table["model"] = dict(doc["model"])
    table.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("methods", "families"):
        if key in table:
            table[key] = tuple(table[key])
    try:
        return Scenario(**table)
    except TypeError as exc:
        raise SpecError(f"{path}: {exc}") from exc


class EvalResult(NamedTuple):
    model_id: int
    method: str
    replicate: int
    n: int
    p: int
    auc: float
    oos_loglik: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _make(method: str, scenario: Scenario):
    if method == "coplr":
        return CopulaLR(scenario.select_config())
    if method == "linlr":
        return LinearLR()
    return GaussianNB()


def replicate_seeds(seed: int, replicates: int) -> list:
    """Independent (train, test) seed sequences per replicate."""
    return [child.spawn(2) for child in np.random.SeedSequence(seed).spawn(replicates)]


def run_replicate(scenario: Scenario, r: int) -> list[EvalResult]:
    spec = scenario.spec()
    train_seed, test_seed = replicate_seeds(scenario.seed, scenario.replicates)[r]
    train = simulate(spec, scenario.n, train_seed)
    test = simulate(spec, scenario.n_test, test_seed)
    out = []
    for method in scenario.methods:
        try:
            model = _make(method, scenario).fit(train)
            eta = model.log_odds(test.X)
            res = EvalResult(scenario.model_id, method, r, scenario.n, spec.p, auc(eta, test.y),
                             mean_loglik(eta, test.y))
        except Exception as exc:  # noqa: BLE001 - failures are counted, not fatal
            log.warning("replicate %d, %s failed: %s", r, method, exc)
            res = EvalResult(scenario.model_id, method, r, scenario.n, spec.p, math.nan, math.nan,
                             f"{type(exc).__name__}: {exc}")
        out.append(res)
    return out


def thread_cap(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        raise SpecError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise SpecError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def benchmark(scenario: Scenario, threads: int | None = None) -> list[EvalResult]:
    """Run every replicate and method; results are ordered by replicate and
    method regardless of the degree of parallelism."""
    scenario.spec()
    workers = min(threads or thread_cap(), scenario.replicates)
    reps = range(scenario.replicates)
    if workers <= 1:
        chunks = [run_replicate(scenario, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_replicate, [scenario] * scenario.replicates, reps))
    return [res for chunk in chunks for res in chunk]


class BenchRow(NamedTuple):
    model_id: int
    method: str
    n: int
    p: int
    mean_auc: float
    mean_oos_loglik: float
    replicates: int
    failures: int


BENCH_COLUMNS = BenchRow._fields


def aggregate(results: Sequence[EvalResult]) -> list[BenchRow]:
    """Mean metrics per method over successful replicates, in first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.model_id, r.method, r.n, r.p), []).append(r)
    rows = []
    for (model_id, method, n, p), rs in groups.items():
        ok = [r for r in rs if not r.failed]
        mean_auc = float(np.mean([r.auc for r in ok])) if ok else math.nan
        mean_ll = float(np.mean([r.oos_loglik for r in ok])) if ok else math.nan
        rows.append(BenchRow(model_id, method, n, p, mean_auc, mean_ll, len(ok), len(rs) - len(ok)))
    return rows


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)
