import numpy as np
import pytest
from scipy.optimize import minimize

from psar_ann.lbfgsb import maximize_box_constrained, minimize_lbfgsb, project, projected_gradient_norm


def neg_quad(x):
    return -((x[0] - 2.0) ** 2), np.array([-2.0 * (x[0] - 2.0)])


def neg_rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return -f, -g


class TestMaximize:
    def test_interior_quadratic(self):
        res = maximize_box_constrained(neg_quad, [0.5], [0.0], [5.0])
        assert res.converged
        assert res.x[0] == pytest.approx(2.0, abs=1e-8)
        assert res.fun == pytest.approx(0.0, abs=1e-12)

    def test_active_bound(self):
        res = maximize_box_constrained(neg_quad, [4.0], [3.0], [5.0])
        assert res.converged
        assert res.x[0] == 3.0

    def test_rosenbrock(self):
        res = maximize_box_constrained(neg_rosenbrock, [-1.2, 1.0], [-2, -2], [2, 2], pgtol=1e-9, ftol=1e-16)
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)

    def test_value_never_below_start(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x0 = rng.uniform(-2, 2, 2)
            res = maximize_box_constrained(neg_rosenbrock, x0, [-2, -2], [2, 2])
            assert res.fun >= neg_rosenbrock(x0)[0]
            assert np.all(res.x >= -2) and np.all(res.x <= 2)

    def test_infeasible_bounds(self):
        with pytest.raises(ValueError):
            maximize_box_constrained(neg_quad, [0.0], [1.0], [0.0])

    def test_nonfinite_start(self):
        with pytest.raises(ValueError):
            maximize_box_constrained(lambda x: (np.nan, np.zeros(1)), [0.0])

    def test_iteration_cap_reported(self):
        res = maximize_box_constrained(neg_rosenbrock, [-1.2, 1.0], max_iter=3)
        assert not res.converged
        assert res.message == "iteration limit reached"
        assert res.iterations == 3


class TestAgainstReference:
    def test_random_box_quadratics(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            a = rng.normal(size=(n, n))
            h = a @ a.T + 0.1 * np.eye(n)
            c = rng.normal(size=n) * 3
            lo = -rng.uniform(0.2, 2.0, n)
            hi = rng.uniform(0.2, 2.0, n)

            def fg(x):
                return 0.5 * x @ h @ x - c @ x, h @ x - c

            ours = minimize_lbfgsb(fg, np.zeros(n), lo, hi, pgtol=1e-10, ftol=1e-15)
            ref = minimize(fg, np.zeros(n), jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)), options={"gtol": 1e-12, "ftol": 1e-15})
            assert ours.fun <= ref.fun + 1e-8

    def test_unbounded_matches_closed_form(self):
        h = np.diag([1.0, 10.0, 100.0])
        c = np.array([1.0, -2.0, 3.0])
        res = minimize_lbfgsb(lambda x: (0.5 * x @ h @ x - c @ x, h @ x - c), np.zeros(3), pgtol=1e-10, ftol=1e-16)
        np.testing.assert_allclose(res.x, np.linalg.solve(h, c), atol=1e-8)


class TestHelpers:
    def test_project(self):
        np.testing.assert_array_equal(project([-3.0, 0.5, 9.0], [-1, -1, -1], [1, 1, 1]), [-1, 0.5, 1])

    def test_projected_gradient_at_active_bound(self):
        # minimizing: gradient pushing outward at a bound is not a violation
        assert projected_gradient_norm(np.array([0.0]), np.array([1.0]), np.array([0.0]), np.array([1.0])) == 0.0
        assert projected_gradient_norm(np.array([0.5]), np.array([1.0]), np.array([0.0]), np.array([1.0])) == 0.5
