import numpy as np
import pytest

from psar_ann import Dataset, FitOptions, FitResult, ModelSpec, ParameterVector, fit, fit_alternating, fit_joint
from psar_ann.fitting import SLOPE_FLOOR, default_bounds, starting_values
from psar_ann.simulation import SimConfig, generate_dataset, lattice_design

from conftest import random_dataset

REFERENCE_MEAN = np.array([0.6178, 4.8504, 0.5410, 1.0576])
REFERENCE_SD = np.array([0.0075, 0.0812, 0.0425, 0.0431])


def _sar_config(rows, cols, rho, seed):
    spec = ModelSpec(q=1, h=0)
    return SimConfig(rows, cols, spec, ParameterVector([1.0], rho, [], np.zeros((0, 1))), seed=seed)


def _psar_data(seed, rows=20, cols=20):
    spec = ModelSpec(q=1, h=1, neuron_bias=True, linear=False)
    theta = ParameterVector([], 0.6, [5.0], [[0.5, 1.0]])
    return generate_dataset(SimConfig(rows, cols, spec, theta, seed=seed), 0).data, spec


class TestFitJoint:
    def test_lattice_design_single_replicate(self):
        cfg = lattice_design("normal", replicates=1, seed=99)
        data = generate_dataset(cfg, 0).data
        res = fit_joint(data, cfg.spec, FitOptions(seed=1))
        assert res.converged
        assert np.all(np.abs(res.theta.flatten() - REFERENCE_MEAN) <= 4 * REFERENCE_SD)

    def test_pure_sar_recovery(self):
        cfg = _sar_config(50, 50, 0.5, seed=3)
        data = generate_dataset(cfg, 0).data
        res = fit_joint(data, cfg.spec)
        assert abs(res.theta.rho - 0.5) < 0.05
        assert res.grad_norm <= 1e-4

    def test_bounds_and_restrictions_hold(self):
        data, spec = _psar_data(4)
        spec2 = ModelSpec(q=1, h=2, neuron_bias=True, linear=False)
        res = fit_joint(data, spec2, FitOptions(seed=2))
        flat = res.theta.flatten()
        b = default_bounds(spec2, data.w.rho_interval)
        assert b.contains(flat)
        assert np.all(np.diff(res.theta.lam) <= 0)
        assert np.all(res.theta.gamma[:, 1] >= SLOPE_FLOOR)

    def test_nan_rejected_before_optimization(self):
        data, spec = _psar_data(5)
        y = data.y.copy()
        y[3] = np.nan
        with pytest.raises(ValueError):
            fit_joint(Dataset(y, data.x, data.w), spec)

    def test_covariate_count_mismatch(self):
        data, _ = _psar_data(5)
        with pytest.raises(ValueError):
            fit_joint(data, ModelSpec(q=2, h=1))

    def test_bit_reproducible(self):
        data, spec = _psar_data(6)
        a = fit_joint(data, spec, FitOptions(seed=11))
        b = fit_joint(data, spec, FitOptions(seed=11))
        assert a.to_json() == b.to_json()

    def test_nesting_on_pure_sar_truth(self):
        for seed in range(5):
            cfg = _sar_config(15, 15, 0.4, seed=seed)
            data = generate_dataset(cfg, 0).data
            h0 = fit_joint(data, ModelSpec(q=1, h=0))
            h1 = fit_joint(data, ModelSpec(q=1, h=1), FitOptions(seed=seed))
            assert h1.loglik >= h0.loglik - 1e-6

    def test_starting_values(self):
        spec = ModelSpec(q=2, h=2)
        theta = ParameterVector([1.0, -1.0], 0.0, [0.5, 0.2], [[1.0, 0.0], [0.0, 1.0]])
        data = random_dataset(spec, theta, seed=8)
        start = starting_values(data, spec, np.random.default_rng(0))
        assert start[spec.rho_index] == 0.0
        neural = start[spec.n_beta + 1 :]
        assert np.all((neural >= 0) & (neural < 0.05))

    def test_result_json_round_trip(self, tmp_path):
        data, spec = _psar_data(7, 10, 10)
        res = fit(data, spec, FitOptions(seed=3))
        path = tmp_path / "fit.json"
        res.to_json(path)
        back = FitResult.from_json(path)
        np.testing.assert_array_equal(back.theta.flatten(), res.theta.flatten())
        assert back.loglik == res.loglik and back.spec == spec and back.options == res.options


class TestFitAlternating:
    def test_trace_nondecreasing_and_stopping_rule(self):
        data, spec = _psar_data(8)
        res = fit_alternating(data, spec, FitOptions(mode="alternating", seed=1))
        trace = np.array(res.trace)
        assert np.all(np.diff(trace) >= 0)
        assert res.converged
        assert trace[-1] - trace[-2] < 1e-2
        assert res.loglik == trace[-1]

    def test_close_to_joint_in_most_runs(self):
        close = 0
        for seed in range(20):
            data, spec = _psar_data(100 + seed, 15, 15)
            joint = fit_joint(data, spec, FitOptions(seed=seed))
            alt = fit_alternating(data, spec, FitOptions(mode="alternating", seed=seed))
            close += alt.loglik >= joint.loglik - 1.0
        assert close >= 16

    def test_h0_equals_joint(self):
        cfg = _sar_config(12, 12, 0.3, seed=2)
        data = generate_dataset(cfg, 0).data
        alt = fit_alternating(data, cfg.spec, FitOptions(mode="alternating"))
        joint = fit_joint(data, cfg.spec)
        assert alt.loglik == pytest.approx(joint.loglik, abs=1e-6)

    def test_dispatch(self):
        data, spec = _psar_data(9, 10, 10)
        res = fit(data, spec, FitOptions(mode="alternating", seed=0))
        assert len(res.trace) >= 2


class TestOptions:
    @pytest.mark.parametrize("kwargs", [dict(mode="sgd"), dict(gtol=0), dict(outer_tol=-1), dict(restarts=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitOptions(**kwargs)
