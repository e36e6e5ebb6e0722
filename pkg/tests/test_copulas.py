import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from vinelogit.copulas import (
    EPS,
    INDEPENDENCE,
    CopulaFamily,
    PairCopula,
    ParameterDomainError,
    TauInversionError,
    cdf,
    from_unconstrained,
    h_function,
    h_inverse,
    log_density,
    tau_from_theta,
    theta_from_tau,
    to_unconstrained,
)

G, C, U = CopulaFamily.GAUSSIAN, CopulaFamily.CLAYTON, CopulaFamily.GUMBEL

THETAS = {G: (-0.7, 0.2, 0.8), C: (0.3, 1.5, 4.0), U: (1.2, 2.0, 3.5)}
ALL = [PairCopula(f, t) for f, ts in THETAS.items() for t in ts]


def gaussian_cdf(theta, u, v):
    mvn = multivariate_normal(mean=[0, 0], cov=[[1, theta], [theta, 1]])
    return mvn.cdf(np.column_stack([norm.ppf(u), norm.ppf(v)]))


def copula_cdf(spec, u, v):
    if spec.family is G:
        return gaussian_cdf(spec.theta, np.atleast_1d(u), np.atleast_1d(v))
    return cdf(spec, u, v)


class TestDomain:
    @pytest.mark.parametrize(
        "family, theta",
        [(G, 1.0), (G, -1.0), (G, math.nan), (C, 0.0), (C, -1.0), (U, 0.99), (C, math.inf)],
    )
    def test_rejects(self, family, theta):
        with pytest.raises(ParameterDomainError):
            PairCopula(family, theta)

    def test_gumbel_one_is_allowed(self):
        assert PairCopula(U, 1.0).theta == 1.0

    def test_parse(self):
        assert CopulaFamily.parse("Gaussian") is G
        assert CopulaFamily.parse(" gumbel ") is U
        with pytest.raises(ValueError):
            CopulaFamily.parse("frank")


class TestLogDensity:
    def test_independence(self):
        assert_allclose(log_density(INDEPENDENCE, [0.1, 0.7], [0.9, 0.2]), 0.0)

    def test_gaussian_zero(self):
        assert log_density(PairCopula(G, 0.0), 0.3, 0.8) == pytest.approx(0.0, abs=1e-15)

    def test_gaussian_value(self):
        assert log_density(PairCopula(G, 0.5), 0.5, 0.5) == pytest.approx(math.log(1 / math.sqrt(0.75)), abs=1e-12)
        assert log_density(PairCopula(G, 0.5), 0.5, 0.5) == pytest.approx(0.143841, abs=1e-6)

    def test_clayton_value(self):
        expected = math.log(3 * 0.25**-3 * 7**-2.5)
        assert log_density(PairCopula(C, 2.0), 0.5, 0.5) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.39271, abs=1e-5)

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_matches_mixed_partial(self, spec):
        d = 1e-4
        for u, v in [(0.3, 0.6), (0.7, 0.2), (0.5, 0.5)]:
            mixed = (
                copula_cdf(spec, u + d, v + d)
                - copula_cdf(spec, u + d, v - d)
                - copula_cdf(spec, u - d, v + d)
                + copula_cdf(spec, u - d, v - d)
            ) / (4 * d * d)
            assert math.exp(log_density(spec, u, v)) == pytest.approx(float(np.squeeze(mixed)), rel=2e-4)

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_integrates_to_one(self, spec):
        nodes, weights = np.polynomial.legendre.leggauss(200)
        # map to (0,1) in normal-score space to resolve the corners
        z = 8.0 * nodes
        w = 8.0 * weights * norm.pdf(z)
        u = norm.cdf(z)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        dens = np.exp(log_density(spec, uu, vv))
        total = np.einsum("i,ij,j->", w, dens, w)
        assert total == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_symmetric(self, spec, rng):
        u, v = rng.uniform(size=(2, 50))
        assert_allclose(log_density(spec, u, v), log_density(spec, v, u), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("spec", [PairCopula(C, 1e-4), PairCopula(U, 1 + 1e-4)], ids=str)
    def test_independence_limit(self, spec):
        g = np.linspace(0.05, 0.95, 10)
        uu, vv = np.meshgrid(g, g)
        assert np.max(np.abs(log_density(spec, uu, vv))) < 1e-3

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_finite_at_extremes(self, spec):
        pts = np.array([0.0, EPS, 1e-300, 0.5, 1 - 1e-17, 1.0])
        uu, vv = np.meshgrid(pts, pts)
        assert np.all(np.isfinite(log_density(spec, uu, vv)))


class TestHFunction:
    def test_independence(self):
        assert_allclose(h_function(INDEPENDENCE, [0.2, 0.9], [0.5, 0.1]), [0.2, 0.9])

    def test_gaussian_zero(self):
        assert h_function(PairCopula(G, 0.0), 0.42, 0.77) == pytest.approx(0.42, abs=1e-14)

    def test_gaussian_example(self):
        spec = PairCopula(G, 0.7)
        d = 1e-5
        fd = (gaussian_cdf(0.7, [0.3], [0.6 + d]) - gaussian_cdf(0.7, [0.3], [0.6 - d])) / (2 * d)
        assert h_function(spec, 0.3, 0.6) == pytest.approx(float(fd), abs=1e-6)

    @pytest.mark.parametrize("spec", [s for s in ALL if s.family is not G], ids=str)
    def test_matches_cdf_derivative_grid(self, spec):
        d = 1e-5
        g = np.linspace(0.05, 0.95, 10)
        uu, vv = np.meshgrid(g, g)
        fd = (cdf(spec, uu, vv + d) - cdf(spec, uu, vv - d)) / (2 * d)
        assert_allclose(h_function(spec, uu, vv), fd, atol=1e-6)

    @pytest.mark.parametrize("theta", THETAS[G])
    def test_gaussian_matches_cdf_derivative_grid(self, theta):
        g = np.linspace(0.05, 0.95, 10)
        uu, vv = (a.ravel() for a in np.meshgrid(g, g))
        # exact derivative of the bivariate normal cdf in v
        expected = norm.cdf((norm.ppf(uu) - theta * norm.ppf(vv)) / math.sqrt(1 - theta**2))
        assert_allclose(h_function(PairCopula(G, theta), uu, vv), expected, atol=1e-12)
        d = 1e-4
        fd = (gaussian_cdf(theta, uu, vv + d) - gaussian_cdf(theta, uu, vv - d)) / (2 * d)
        assert_allclose(h_function(PairCopula(G, theta), uu, vv), fd, atol=1e-5)

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_monotone_in_u(self, spec):
        u = np.linspace(0.0, 1.0, 401)
        for v in (0.01, 0.3, 0.8, 0.99):
            h = h_function(spec, u, v)
            assert np.all(np.diff(h) >= 0)
            assert np.all((h >= EPS) & (h <= 1 - EPS))

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_is_a_conditional_cdf(self, spec):
        for v in (0.2, 0.5, 0.9):
            val, _ = integrate.quad(lambda s: math.exp(log_density(spec, s, v)), 0, 0.4, epsabs=1e-10)
            assert h_function(spec, 0.4, v) == pytest.approx(val, abs=1e-6)

    @pytest.mark.parametrize("spec", ALL, ids=str)
    def test_inverse(self, spec, rng):
        u, v = rng.uniform(0.01, 0.99, size=(2, 200))
        w = h_function(spec, u, v)
        ok = (w > 1e-8) & (w < 1 - 1e-8)
        assert_allclose(h_inverse(spec, w, v)[ok], u[ok], atol=1e-8)


class TestTau:
    def test_examples(self):
        assert theta_from_tau(G, 0.0) == 0.0
        assert theta_from_tau(C, 0.5) == pytest.approx(2.0)
        assert theta_from_tau(U, 0.5) == pytest.approx(2.0)

    @pytest.mark.parametrize("family, tau", [(C, -0.1), (C, 0.0), (U, 0.0), (U, 1.0), (G, 1.0), (G, math.nan)])
    def test_out_of_range(self, family, tau):
        with pytest.raises(TauInversionError):
            theta_from_tau(family, tau)

    @given(st.floats(0.01, 0.95), st.sampled_from([G, C, U]))
    def test_round_trip(self, tau, family):
        spec = PairCopula(family, theta_from_tau(family, tau))
        assert tau_from_theta(spec) == pytest.approx(tau, abs=1e-12)


class TestReparameterisation:
    def test_examples(self):
        assert from_unconstrained(G, 0.0).theta == 0.0
        assert from_unconstrained(C, 0.0).theta == 1.0
        assert to_unconstrained(PairCopula(U, 2.5)) == pytest.approx(math.log(1.5))
        assert from_unconstrained(U, math.log(1.5)).theta == pytest.approx(2.5, abs=1e-12)

    @given(st.floats(-15, 15), st.sampled_from([G, C, U]))
    def test_round_trip(self, psi, family):
        try:
            spec = from_unconstrained(family, psi)
        except ParameterDomainError:
            assert family is G and abs(math.tanh(psi)) == 1.0
            return
        if family is G and abs(spec.theta) > 1 - 1e-6:
            return
        assert to_unconstrained(spec) == pytest.approx(psi, abs=1e-9)
        assert from_unconstrained(family, to_unconstrained(spec)).theta == pytest.approx(spec.theta, abs=1e-12)
