import numpy as np
import pytest

from femgp.errors import ConditioningError, IterationError, ParameterError
from femgp.fem import TensorGrid, design_matrix
from femgp.fields import precision_for_grid
from femgp.inference import (
    ClassificationDataset,
    RegressionDataset,
    class_gradient,
    class_hessian,
    class_log_posterior,
    classify_map,
    pcn_sampler,
    pcn_step,
    posterior_weights,
    regress_cf,
    regress_fe,
)
from femgp.matern import BoxDomain, MaternParams


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(0)
    p = MaternParams(1, 2, 2.0)
    tg = TensorGrid.uniform([1.0], 8)
    P = precision_for_grid(p, tg)
    X = rng.uniform(0, 1, 40)
    y = np.sin(3 * X) + 0.1 * rng.standard_normal(40)
    return p, tg, P, RegressionDataset(X, y, 0.3)


class TestRegressionCF:
    def test_single_point_formula(self):
        p = MaternParams(1, 2, 1.0)
        tau = 0.2
        out = regress_cf(RegressionDataset([0.3], [1.0], tau), p)
        assert out[0] == pytest.approx(p.sigma2 / (p.sigma2 + tau**2), rel=1e-14)

    def test_interpolates_without_noise(self):
        p = MaternParams(1, 2, 3.0)
        X = np.linspace(0, 1, 10)
        y = np.cos(4 * X)
        np.testing.assert_allclose(regress_cf(RegressionDataset(X, y, 0.0), p), y, atol=1e-8)

    def test_prior_dominates(self):
        p = MaternParams(1, 2, 1.0)
        X = np.linspace(0, 1, 5)
        out = regress_cf(RegressionDataset(X, np.ones(5), 1e6 * np.sqrt(p.sigma2)), p)
        assert np.max(np.abs(out)) < 1e-10

    def test_duplicates_without_noise_fail(self):
        p = MaternParams(1, 2, 1.0)
        with pytest.raises(ConditioningError):
            regress_cf(RegressionDataset([0.2, 0.2, 0.5], [1.0, 2.0, 0.0], 0.0), p)

    def test_folded_covariance_option(self):
        p = MaternParams(1, 2, 2.0)
        dom = BoxDomain((1.0,))
        data = RegressionDataset(np.linspace(0.1, 0.9, 6), np.arange(6.0), 0.1)
        out = regress_cf(data, p, cov="folded", domain=dom, eval_points=np.array([0.5]))
        assert np.isfinite(out).all()
        with pytest.raises(ParameterError):
            regress_cf(data, p, cov="folded")


class TestRegressionFE:
    def test_projection_idempotent(self):
        tg = TensorGrid.uniform([1.0], 4)
        P = precision_for_grid(MaternParams(1, 2, 1.0), tg)
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, 30)
        y = rng.standard_normal(30)
        f1 = regress_fe(RegressionDataset(X, y, 0.0), tg, P)
        f2 = regress_fe(RegressionDataset(X, f1, 0.0), tg, P)
        np.testing.assert_allclose(f2, f1, atol=1e-10)

    def test_huge_noise_gives_zero(self, small_problem):
        _, tg, P, d = small_problem
        out = regress_fe(RegressionDataset(d.X, d.y, 1e8), tg, P)
        assert np.max(np.abs(out)) < 1e-10

    def test_linearity(self, small_problem):
        p, tg, P, d = small_problem
        y2 = np.random.default_rng(5).standard_normal(d.N)
        for fit in (lambda y: regress_fe(RegressionDataset(d.X, y, d.tau), tg, P),
                    lambda y: regress_cf(RegressionDataset(d.X, y, d.tau), p)):
            np.testing.assert_allclose(fit(2 * d.y - 3 * y2), 2 * fit(d.y) - 3 * fit(y2), atol=1e-12)

    def test_fe_approaches_cf(self):
        rng = np.random.default_rng(3)
        p = MaternParams(1, 2, 4.0)
        X = rng.uniform(0, 1, 200)
        y = np.sin(5 * X) + 0.05 * rng.standard_normal(200)
        data = RegressionDataset(X, y, 0.05)
        f_cf = regress_cf(data, p)
        from femgp.harness import extended_grid

        tg = extended_grid([1.0], p, 1.0, 256)
        f_fe = regress_fe(data, tg, precision_for_grid(p, tg))
        assert np.sqrt(np.mean((f_fe - f_cf) ** 2)) < 0.1 * np.sqrt(np.mean(f_cf**2))


class TestPosteriorWeights:
    def test_residual(self, small_problem):
        _, tg, P, d = small_problem
        pw = posterior_weights(d, tg, P)
        S = design_matrix(tg, d.X)
        rhs = S.T @ d.y
        res = (S.T @ S + d.tau**2 * P.Q) @ pw.mean - rhs
        assert np.max(np.abs(res)) <= 1e-9 * np.max(np.abs(rhs))

    def test_zero_data(self, small_problem):
        _, tg, P, d = small_problem
        assert np.all(posterior_weights(RegressionDataset(d.X, np.zeros(d.N), d.tau), tg, P).mean == 0)
        empty = posterior_weights(RegressionDataset(np.zeros(0), np.zeros(0), 1.0), tg, P)
        assert np.all(empty.mean == 0)
        assert abs(empty.precision - P.Q).max() == 0

    def test_posterior_samples(self, small_problem):
        _, tg, P, d = small_problem
        pw = posterior_weights(d, tg, P)
        n = 50_000
        draws = pw.sample(0, size=n)
        C = np.linalg.inv(pw.precision.toarray())
        se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
        assert np.max(np.abs(np.cov(draws) - C) / se) < 5
        assert np.max(np.abs(draws.mean(axis=1) - pw.mean) / np.sqrt(np.diag(C) / n)) < 5


@pytest.fixture
def class_problem():
    rng = np.random.default_rng(2)
    p = MaternParams(1, 2, 2.0)
    tg = TensorGrid.uniform([1.0], 8)
    P = precision_for_grid(p, tg)
    X = rng.uniform(0, 1, 50)
    y = (rng.uniform(size=50) < 1 / (1 + np.exp(-3 * np.sin(6 * X)))).astype(float)
    return tg, P, ClassificationDataset(X, y)


class TestClassification:
    def test_labels_validated(self):
        with pytest.raises(ParameterError):
            ClassificationDataset([0.1, 0.2], [0, 2])

    def test_finite_differences(self, class_problem):
        tg, P, d = class_problem
        S, Q, y = design_matrix(tg, d.X), P.Q, d.y
        rng = np.random.default_rng(8)
        E = np.eye(tg.n_h)
        for _ in range(5):
            w = 2 * rng.standard_normal(tg.n_h)
            eps = 1e-6
            g_fd = np.array([(class_log_posterior(w + eps * e, S, y, Q) - class_log_posterior(w - eps * e, S, y, Q)) / (2 * eps) for e in E])
            np.testing.assert_allclose(class_gradient(w, S, y, Q), g_fd, rtol=1e-5, atol=1e-8)
            H_fd = np.array([(class_gradient(w + eps * e, S, y, Q) - class_gradient(w - eps * e, S, y, Q)) / (2 * eps) for e in E])
            np.testing.assert_allclose(class_hessian(w, S, y, Q).toarray(), H_fd, rtol=1e-4, atol=1e-7)

    def test_map_converges_and_ascends(self, class_problem):
        tg, P, d = class_problem
        trace = []
        w = classify_map(d, tg, P, trace=trace)
        S = design_matrix(tg, d.X)
        assert np.max(np.abs(class_gradient(w, S, d.y, P.Q))) <= 1e-8
        assert np.all(np.diff(trace) >= 0)

    def test_label_swap_symmetry(self, class_problem):
        tg, P, d = class_problem
        w = classify_map(d, tg, P)
        w_swap = classify_map(ClassificationDataset(d.X, 1 - d.y), tg, P)
        np.testing.assert_allclose(w_swap, -w, atol=1e-7)

    def test_no_data_gives_prior_mode(self, class_problem):
        tg, P, _ = class_problem
        w = classify_map(ClassificationDataset(np.zeros(0), np.zeros(0)), tg, P)
        assert np.all(w == 0)

    def test_iteration_cap(self, class_problem):
        tg, P, d = class_problem
        with pytest.raises(IterationError) as info:
            classify_map(d, tg, P, max_iter=1, tol=1e-14)
        assert info.value.grad_norm > 0


class TestPCN:
    def test_limits(self):
        tg = TensorGrid.uniform([1.0], 8)
        P = precision_for_grid(MaternParams(1, 2, 1.0), tg)
        w = np.arange(tg.n_h, dtype=float)
        np.testing.assert_array_equal(pcn_step(w, 1.0, P, 0), w)
        from femgp.fields import sample_weights

        np.testing.assert_allclose(pcn_step(w, 0.0, P, 4), sample_weights(P, 4))
        with pytest.raises(ParameterError):
            pcn_step(w, 1.5, P, 0)

    def test_flat_likelihood_accepts_everything(self):
        tg = TensorGrid.uniform([1.0], 8)
        P = precision_for_grid(MaternParams(1, 2, 1.0), tg)
        assert pcn_sampler(None, tg, P, 0.7, 2000, 0).acceptance_rate == 1.0

    def test_conjugate_mean(self, small_problem):
        _, tg, P, d = small_problem
        exact = posterior_weights(d, tg, P).mean
        ch = pcn_sampler(d, tg, P, 0.9, 60_000, 1, burn_in=1000)
        assert np.all(np.abs(ch.mean - exact) < 4 * ch.batch_stderr)

    def test_smaller_steps_accept_more(self, small_problem):
        _, tg, P, d = small_problem
        start = posterior_weights(d, tg, P).mean
        rates = [pcn_sampler(d, tg, P, th, 5000, 2, w0=start).acceptance_rate for th in (0.5, 0.9, 0.999)]
        assert rates == sorted(rates) and rates[0] < rates[-1]
