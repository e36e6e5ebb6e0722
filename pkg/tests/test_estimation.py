import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import expit

from conftest import gaussian_pair_data
from vinelogit.copulas import CopulaFamily, PairCopula
from vinelogit.data import Dataset
from vinelogit.estimation import (
    EstimationError,
    ModelParams,
    Objective,
    SeparationWarning,
    delta_ci,
    fd_gradient,
    fisher_info,
    fit_irls,
    lbfgs_maximize,
    log_likelihood,
    log_odds,
    loglik_from_eta,
    optimize,
    parameter_names,
    standard_errors,
    to_vector,
)
from vinelogit.vine import Edge, VineStructure, gaussian_pair_closed_form

G, C, GU = CopulaFamily.GAUSSIAN, CopulaFamily.CLAYTON, CopulaFamily.GUMBEL


def linear_data(n=300, p=3, seed=0):
    g = np.random.default_rng(seed)
    X = g.standard_normal((n, p))
    eta = 0.3 + X @ np.linspace(0.8, -0.5, p)
    y = (g.random(n) < expit(eta)).astype(int)
    return Dataset(X, y, ("continuous",) * p)


def chain_structure(p=3, thetas=((0.3, 0.6), (-0.2, 0.2), (0.1, -0.3))):
    (a0, a1), (b0, b1), (c0, c1) = thetas
    return VineStructure(
        (
            Edge(1, (0, 1), frozenset(), PairCopula(G, a0), PairCopula(G, a1)),
            Edge(1, (1, 2), frozenset(), PairCopula(C, 0.5 + abs(b0)), PairCopula(GU, 1.3 + abs(b1))),
            Edge(2, (0, 2), frozenset({1}), PairCopula(G, c0), PairCopula(G, c1)),
        ),
        covariates=frozenset(range(p)),
    )


def textbook_info(beta, data):
    X = data.design()
    p = expit(X @ beta)
    return X.T @ (X * (p * (1 - p))[:, None])


class TestLogLikelihood:
    def test_single_observation(self):
        assert loglik_from_eta([0.0], [1]) == pytest.approx(-0.693147, abs=1e-6)

    def test_two_observations(self):
        assert loglik_from_eta([2.0, -2.0], [1, 0]) == pytest.approx(-0.253856, abs=1e-6)
        assert loglik_from_eta([2.0, -2.0], [1, 0]) == pytest.approx(-2 * math.log1p(math.exp(-2)), abs=1e-14)

    def test_overflow_safe(self):
        assert loglik_from_eta([800.0, -800.0], [1, 0]) == pytest.approx(0.0, abs=1e-300)
        assert loglik_from_eta([800.0], [0]) == pytest.approx(-800.0)

    def test_empty_structure_is_textbook(self):
        data = linear_data()
        beta = np.array([0.1, -0.2, 0.4, 0.0])
        prm = ModelParams.for_data(beta, data)
        eta = data.design() @ beta
        p = expit(eta)
        direct = np.sum(data.y * np.log(p) + (1 - data.y) * np.log1p(-p))
        assert log_likelihood(prm, data) == pytest.approx(direct, rel=1e-12)
        assert_allclose(log_odds(prm, data.X), eta, atol=1e-14)
        assert log_odds(ModelParams.for_data(np.zeros(4), data), data.X[0]) == 0.0

    def test_log_odds_adds_gaussian_pair_quadratic(self):
        data = gaussian_pair_data(500, -0.4, 0.5, p=2, seed=1)
        s = VineStructure((Edge(1, (0, 1), frozenset(), PairCopula(G, -0.4), PairCopula(G, 0.5)),))
        beta = np.array([0.05, 0.2, -0.1])
        prm = ModelParams.for_data(beta, data, s)
        m = prm.margins
        a = gaussian_pair_closed_form(m.param0, m.param1, m.sigma, -0.4, 0.5)
        x1, x2 = data.X.T
        quad = a[0] + a[1] * x1 + a[2] * x2 + a[3] * x1**2 + a[4] * x2**2 + a[5] * x1 * x2
        assert_allclose(log_odds(prm, data.X), data.design() @ beta + quad, atol=1e-8)

    @given(st.integers(0, 2**31))
    def test_permutation_invariant(self, seed):
        data = linear_data(n=60, seed=3)
        prm = ModelParams.for_data(np.array([0.1, 0.3, -0.2, 0.5]), data, chain_structure())
        perm = np.random.default_rng(seed).permutation(data.n)
        shuffled = data.subset(perm)
        assert log_likelihood(prm, shuffled) == pytest.approx(log_likelihood(prm, data), rel=1e-12)


class TestIrls:
    def test_intercept_only(self):
        data = Dataset(np.zeros((10, 0)), [1, 1, 1, 0, 0, 0, 0, 0, 0, 0], ())
        beta = fit_irls(data)
        assert beta[0] == pytest.approx(math.log(3 / 7), abs=1e-10)

    def test_gradient_vanishes(self):
        data = linear_data()
        beta = fit_irls(data)
        X = data.design()
        assert np.max(np.abs(X.T @ (data.y - expit(X @ beta)))) < 1e-8

    def test_flip_symmetry(self):
        data = linear_data(seed=4)
        b = fit_irls(data)
        ll = loglik_from_eta(data.design() @ b, data.y)
        mirrored = Dataset(-data.X, data.y, data.kinds)
        relabelled = Dataset(-data.X, 1 - data.y, data.kinds)
        bm, br = fit_irls(mirrored), fit_irls(relabelled)
        assert_allclose(bm, np.concatenate([[b[0]], -b[1:]]), atol=1e-8)
        assert_allclose(br, np.concatenate([[-b[0]], b[1:]]), atol=1e-8)
        for d, bb in ((mirrored, bm), (relabelled, br)):
            assert loglik_from_eta(d.design() @ bb, d.y) == pytest.approx(ll, rel=1e-10)

    @given(st.integers(0, 10_000))
    def test_dominates_zero(self, seed):
        data = linear_data(n=80, p=2, seed=seed)
        beta = fit_irls(data)
        assert loglik_from_eta(data.design() @ beta, data.y) >= loglik_from_eta(np.zeros(data.n), data.y)

    def test_rank_deficient(self):
        X = np.random.default_rng(0).normal(size=(20, 1))
        data = Dataset(np.column_stack([X, 2 * X]), np.arange(20) % 2, ("continuous", "continuous"))
        with pytest.raises(EstimationError):
            fit_irls(data)

    def test_separation_warns(self):
        x = np.linspace(-1, 1, 20)[:, None]
        data = Dataset(x, (x[:, 0] > 0).astype(int), ("continuous",))
        with pytest.warns(SeparationWarning):
            fit_irls(data, max_iter=50)


class TestOptimizer:
    def test_quadratic(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        b = np.array([1.0, -1.0])
        res = lbfgs_maximize(lambda z: -0.5 * z @ A @ z + b @ z, np.zeros(2), gtol=1e-8)
        assert res.converged
        assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-6)
        assert all(np.diff(res.history) >= 0)

    def test_rejects_non_finite_start(self):
        with pytest.raises(EstimationError):
            lbfgs_maximize(lambda z: -math.inf, np.zeros(1))

    def test_empty_structure_at_irls(self):
        data = linear_data()
        beta = fit_irls(data)
        report = optimize(ModelParams.for_data(beta, data), data)
        assert_allclose(report.params.beta, beta, atol=1e-5)
        assert report.loglik >= report.trace[0].loglik

    def test_agrees_with_irls_from_zero(self):
        data = linear_data(seed=5)
        report = optimize(ModelParams.for_data(np.zeros(4), data), data)
        assert report.converged
        assert_allclose(report.params.beta, fit_irls(data), atol=1e-5)

    def test_ascent_and_monotone_trace(self):
        data = gaussian_pair_data(400, -0.5, 0.5, p=3, seed=2)
        beta = fit_irls(data)
        prm = ModelParams.for_data(beta, data, chain_structure())
        start = log_likelihood(prm, data)
        report = optimize(prm, data, max_iter=60)
        assert report.loglik >= start
        lls = [t.loglik for t in report.trace]
        assert lls[0] == pytest.approx(start)
        assert all(np.diff(lls) >= 0)
        assert report.loglik == pytest.approx(log_likelihood(report.params, data), rel=1e-12)
        theta = [report.params.structure.edges[0].copula(y).theta for y in (0, 1)]
        assert theta[1] - theta[0] > 0.5


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_secant(self, seed):
        g = np.random.default_rng(seed)
        data = gaussian_pair_data(300, -0.4, 0.4, p=3, seed=10 + seed)
        beta = fit_irls(data) + 0.05 * g.standard_normal(4)
        th = tuple(tuple(g.uniform(-0.6, 0.6, 2)) for _ in range(3))
        prm = ModelParams.for_data(beta, data, chain_structure(thetas=th))
        f = Objective(prm, data)
        x = to_vector(prm, unconstrained=True)
        fx = f(x)
        grad = f.gradient(x, fx)
        h = 1e-4
        for _ in range(20):
            d = g.standard_normal(x.size)
            d /= np.linalg.norm(d)
            secant = (f(x + h * d) - f(x - h * d)) / (2 * h)
            assert grad @ d == pytest.approx(secant, rel=1e-4, abs=1e-4 * np.linalg.norm(grad))

    def test_structured_matches_full_difference(self):
        data = gaussian_pair_data(200, -0.4, 0.4, p=3, seed=7)
        prm = ModelParams.for_data(fit_irls(data), data, chain_structure())
        f = Objective(prm, data)
        x = to_vector(prm, unconstrained=True)
        assert_allclose(f.gradient(x), fd_gradient(f, x), rtol=1e-6, atol=1e-6)


class TestFisherInfo:
    def test_closed_form_logistic(self):
        data = linear_data()
        beta = fit_irls(data)
        prm = ModelParams.for_data(beta, data)
        info = fisher_info(prm, data)
        ref = textbook_info(beta, data)
        assert np.max(np.abs(info - ref)) <= 1e-4 * np.max(np.abs(ref))
        assert_allclose(info, ref, rtol=1e-4, atol=1e-4 * np.max(np.abs(ref)))

    def test_symmetric_and_additive(self):
        data = gaussian_pair_data(200, -0.4, 0.4, p=3, seed=8)
        prm = ModelParams.for_data(fit_irls(data), data, chain_structure())
        info = fisher_info(prm, data)
        assert np.array_equal(info, info.T)
        doubled = Dataset(np.vstack([data.X, data.X]), np.concatenate([data.y, data.y]), data.kinds)
        # the training moments are unchanged by stacking, so the model is the same
        prm2 = ModelParams(prm.beta, prm.structure, prm.margins, prm.means, prm.variances, prm.pi_hint)
        assert_allclose(fisher_info(prm2, doubled), 2 * info, rtol=1e-6, atol=1e-6 * np.max(np.abs(info)))

    def test_standard_errors(self):
        assert standard_errors(-np.eye(2)) is None
        assert standard_errors(np.full((2, 2), np.nan)) is None
        assert_allclose(standard_errors(np.diag([4.0, 25.0])), [0.5, 0.2])

    def test_parameter_names(self):
        data = linear_data()
        prm = ModelParams.for_data(np.zeros(4), data, chain_structure())
        names = parameter_names(prm, ["a", "b", "c"])
        assert names[:4] == ["(intercept)", "beta[a]", "beta[b]", "beta[c]"]
        assert len(names) == len(to_vector(prm))


class TestDeltaCi:
    def test_textbook_interval(self):
        data = linear_data()
        beta = fit_irls(data)
        prm = ModelParams.for_data(beta, data)
        info = fisher_info(prm, data)
        x = np.array([0.5, -1.0, 0.25])
        ci = delta_ci(prm, info, x)
        xt = np.concatenate([[1.0], x])
        se = math.sqrt(xt @ np.linalg.solve(textbook_info(beta, data), xt))
        est = xt @ beta
        assert ci.estimate == pytest.approx(est, abs=1e-12)
        assert ci.se == pytest.approx(se, rel=1e-4)
        assert ci.lower == pytest.approx(est - 1.959964 * se, abs=1e-4)
        assert ci.upper == pytest.approx(est + 1.959964 * se, abs=1e-4)

    def test_level_quantile(self):
        data = linear_data()
        prm = ModelParams.for_data(fit_irls(data), data)
        ci = delta_ci(prm, np.eye(4), np.zeros(3))
        assert (ci.upper - ci.estimate) / ci.se == pytest.approx(1.959964, abs=1e-6)

    def test_constant_functional_has_zero_width(self):
        data = linear_data()
        prm = ModelParams.for_data(fit_irls(data), data)
        ci = delta_ci(prm, np.eye(4), psi=lambda _: 1.5)
        assert ci.lower == ci.upper == 1.5

    def test_singular(self):
        data = linear_data()
        prm = ModelParams.for_data(fit_irls(data), data)
        with pytest.raises(EstimationError):
            delta_ci(prm, np.zeros((4, 4)), np.zeros(3))
        with pytest.raises(ValueError):
            delta_ci(prm, np.eye(4))


def test_no_warnings_on_regular_fit():
    data = linear_data()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_irls(data)
