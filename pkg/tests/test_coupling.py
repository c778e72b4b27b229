"""Marginals, martingale kernels, convex order, and sampling laws."""

import numpy as np
import pytest

from arcadeproc import (
    ConfigError,
    DiscreteMarginal,
    builtin_kernels,
    check_convex_order,
    gaussian_marginal,
    kernel_from_json,
    sample_coupling,
    uniform_marginal,
)
from arcadeproc.coupling import (
    AffineBranchKernel,
    CouplingKernel,
    DiscreteRowKernel,
    GaussianMarginal,
    UniformMarginal,
    antithetic_pm1_chain,
    binary_pm1_kernel,
    brownian_coupling,
    comonotone_kernel,
    convex_order_report,
    uniform_mot_kernel,
)

from conftest import assert_within_3se


class TestDiscreteMarginal:
    def test_invariants(self):
        with pytest.raises(ConfigError):
            DiscreteMarginal(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ConfigError):
            DiscreteMarginal(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
        with pytest.raises(ConfigError):
            DiscreteMarginal(np.array([0.0, 1.0]), np.array([1.0, 0.0]))

    def test_call_function_by_enumeration(self):
        m = DiscreteMarginal(np.array([-1.0, 0.5, 2.0]), np.array([0.25, 0.5, 0.25]))
        for k in (-2.0, 0.0, 1.0, 3.0):
            want = sum(w * max(v - k, 0.0) for v, w in zip(m.values, m.weights))
            assert m.call_value(k) == pytest.approx(want, abs=1e-15)

    def test_quantile_is_right_continuous(self):
        m = DiscreteMarginal(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
        assert m.quantile(0.5) == 0.0
        assert m.quantile(0.5 + 1e-12) == 1.0

    def test_gaussian_discretizations(self):
        from scipy import integrate
        from scipy.special import ndtri
        from scipy.stats import norm

        mid = gaussian_marginal(0.0, 1.0, 15, "midpoint")
        cm = gaussian_marginal(0.0, 1.0, 15, "cell_mean")
        assert mid.mean() == pytest.approx(0.0, abs=1e-12)
        assert cm.mean() == pytest.approx(0.0, abs=1e-12)
        # mid-quantile atoms sit at the (k - 1/2)/15 quantiles
        assert np.allclose(mid.values, ndtri((np.arange(15) + 0.5) / 15))
        # cell-mean atoms are the conditional means of the equal-mass cells
        edges = ndtri(np.linspace(0.0, 1.0, 16))
        for k in (0, 7, 14):
            lo, hi = edges[k], edges[k + 1]
            num, _ = integrate.quad(lambda x: x * norm.pdf(x), lo, hi)
            assert cm.values[k] == pytest.approx(15.0 * num, abs=1e-9)
        # cell means preserve the second moment better than mid-quantiles
        assert cm.second_moment() > mid.second_moment()
        # scaling: atoms of N(0,2) are sqrt(2) times those of N(0,1)
        cm2 = gaussian_marginal(0.0, 2.0, 15, "cell_mean")
        assert np.allclose(cm2.values, np.sqrt(2.0) * cm.values)


class TestConvexOrder:
    def test_reflexive(self):
        m = uniform_marginal(-1.0, 1.0, 21)
        assert check_convex_order(m, m)

    def test_uniform_dilation(self):
        mu = uniform_marginal(-1.0, 1.0, 21)
        nu = uniform_marginal(-2.0, 2.0, 21)
        assert check_convex_order(mu, nu)
        assert not check_convex_order(nu, mu)

    def test_mean_mismatch(self):
        mu = DiscreteMarginal(np.array([1.0]), np.array([1.0]))
        nu = DiscreteMarginal(np.array([0.0]), np.array([1.0]))
        ok, worst, witness = convex_order_report(mu, nu)
        assert not ok and witness["kind"] == "mean"

    def test_call_function_witness(self):
        # same mean, but nu is *less* spread: order fails with a strike witness
        mu = DiscreteMarginal(np.array([-2.0, 2.0]), np.array([0.5, 0.5]))
        nu = DiscreteMarginal(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        ok, _, witness = convex_order_report(mu, nu)
        assert not ok and witness["kind"] == "call_function"

    def test_builtin_martingale_kernels_imply_order(self):
        # Strassen direction on the fully discrete builtins
        for name in ("binary_pm1", "binary_chain_2"):
            kern = builtin_kernels()[name]
            for k in range(len(kern.steps)):
                mu_k = kern.pushforward(k)
                nu_k = kern.pushforward(k + 1)
                assert check_convex_order(mu_k, nu_k), name


class TestKernels:
    def test_martingale_flags(self):
        kernels = builtin_kernels()
        assert kernels["binary_pm1"].martingale
        assert kernels["uniform_mot"].martingale
        assert kernels["gaussian_n01"].martingale
        assert kernels["brownian"].martingale
        assert kernels["binary_chain_2"].martingale
        assert kernels["deterministic"].martingale
        assert not kernels["comonotone_uniform"].martingale
        assert not kernels["antithetic_pm1"].martingale
        assert not kernels["independent_pm1"].martingale

    def test_discrete_row_kernel_validation(self):
        x = np.array([-1.0, 1.0])
        y = np.array([-2.0, 0.0, 2.0])
        with pytest.raises(ConfigError):
            DiscreteRowKernel(x, y, np.array([[0.6, 0.6, 0.0], [0.0, 0.5, 0.5]]))
        gamma = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
        kern = DiscreteRowKernel(x, y, gamma)
        resid = kern.martingale_residual(x)
        assert resid == pytest.approx(0.0, abs=1e-12)

    def test_martingale_flag_is_verified_not_trusted(self):
        x = np.array([-1.0, 1.0])
        y = np.array([-2.0, 0.0, 2.0])
        gamma = np.array([[0.25, 0.5, 0.25], [0.25, 0.5, 0.25]])  # means are 0, not x
        init = DiscreteMarginal(x, np.array([0.5, 0.5]))
        kern = CouplingKernel(init, (DiscreteRowKernel(x, y, gamma),))
        assert not kern.martingale

    def test_comonotone_of_discrete_marginals(self):
        mu = uniform_marginal(-1.0, 1.0, 8)
        nu = uniform_marginal(-2.0, 2.0, 8)
        kern = comonotone_kernel(mu, nu)
        # quantile coupling of these laws doubles: E[X_1 | X_0] = 2 X_0
        mean = kern.steps[0].mean_given(mu.values)
        assert np.allclose(mean, 2.0 * mu.values)
        assert not kern.martingale

    def test_suffix_enumeration(self):
        kern = builtin_kernels()["binary_chain_2"]
        paths, probs = kern.enumerate_suffixes(0, 1.0)
        assert paths.shape == (4, 2)
        assert probs.sum() == pytest.approx(1.0)
        # chain means: E[X_2 | X_0 = 1] = 1
        assert float(probs @ paths[:, -1]) == pytest.approx(1.0, abs=1e-12)


class TestSampling:
    def test_antithetic_perfect_anticorrelation(self):
        kern = antithetic_pm1_chain(5)
        draws = sample_coupling(kern, 5000, seed=1)
        assert draws.shape == (5000, 6)
        corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert corr == pytest.approx(-1.0, abs=1e-12)
        assert np.all(draws[:, 2] == draws[:, 0])

    def test_uniform_mot_conditional_mean(self):
        draws = sample_coupling(uniform_mot_kernel(), 100_000, seed=2)
        x0, x1 = draws[:, 0], draws[:, 1]
        for lo in (-1.0, -0.5, 0.0, 0.5):
            sel = (x0 >= lo) & (x0 < lo + 0.5)
            diff = x1[sel] - x0[sel]
            assert_within_3se(diff.mean(), 0.0,
                              diff.std(ddof=1) / np.sqrt(diff.size),
                              f"E[X1-X0 | bin {lo}]")

    def test_brownian_covariance_matrix(self):
        draws = sample_coupling(brownian_coupling(1.0, 1.0), 100_000, seed=3)
        want = np.array([[1.0, 1.0], [1.0, 2.0]])
        for a in range(2):
            for b in range(2):
                prod = (draws[:, a] - draws[:, a].mean()) * (draws[:, b] - draws[:, b].mean())
                assert_within_3se(prod.mean(), want[a, b],
                                  prod.std(ddof=1) / np.sqrt(prod.size),
                                  f"cov[{a},{b}]")

    def test_marginals_within_ks_band(self):
        # Dvoretzky-style 95% band: sup |F_n - F| <= 1.36 / sqrt(n)
        n = 20_000
        band = 1.36 / np.sqrt(n)
        kern = brownian_coupling(1.0, 1.0)
        draws = sample_coupling(kern, n, seed=4)
        for col, law in ((0, GaussianMarginal(0.0, 1.0)), (1, GaussianMarginal(0.0, 2.0))):
            xs = np.sort(draws[:, col])
            emp = np.arange(1, n + 1) / n
            gap = np.max(np.abs(emp - law.cdf(xs)))
            assert gap <= band, f"column {col}: KS gap {gap} > {band}"
        draws_u = sample_coupling(uniform_mot_kernel(), n, seed=5)
        for col, law in ((0, UniformMarginal(-1.0, 1.0)), (1, UniformMarginal(-2.0, 2.0))):
            xs = np.sort(draws_u[:, col])
            emp = np.arange(1, n + 1) / n
            gap = np.max(np.abs(emp - law.cdf(xs)))
            assert gap <= band, f"uniform column {col}: KS gap {gap} > {band}"

    def test_seed_domain_separation(self):
        # same seed: target draws do not depend on how many driver draws happen
        kern = binary_pm1_kernel()
        a = sample_coupling(kern, 100, seed=7)
        b = sample_coupling(kern, 100, seed=7)
        assert np.array_equal(a, b)

    def test_kernel_from_json(self):
        doc = {
            "atoms_mu": [[-1.0, 0.5], [1.0, 0.5]],
            "values_nu": [-2.0, 0.0, 2.0],
            "gamma": [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]],
        }
        kern = kernel_from_json(doc)
        assert kern.martingale
        preset = kernel_from_json({"preset": "binary_pm1"})
        assert preset.name == "binary_pm1"
        with pytest.raises(ConfigError):
            kernel_from_json({"preset": "nope"})
        with pytest.raises(ConfigError):
            kernel_from_json({})

    def test_affine_branch_probability_validation(self):
        with pytest.raises(ConfigError):
            AffineBranchKernel(((1.0, 0.0, 0.7), (1.0, 0.0, 0.2)))
