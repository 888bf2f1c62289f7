import numpy as np
import pytest

from psar_ann import Dataset, ModelSpec, ParameterVector, build_lattice_adjacency, row_standardize
from psar_ann.simulation import SimConfig, generate_dataset

QUEEN_3X3 = np.array(
    [
        [0, 1, 0, 1, 1, 0, 0, 0, 0],
        [1, 0, 1, 1, 1, 1, 0, 0, 0],
        [0, 1, 0, 0, 1, 1, 0, 0, 0],
        [1, 1, 0, 0, 1, 0, 1, 1, 0],
        [1, 1, 1, 1, 0, 1, 1, 1, 1],
        [0, 1, 1, 0, 1, 0, 0, 1, 1],
        [0, 0, 0, 1, 1, 0, 0, 1, 0],
        [0, 0, 0, 1, 1, 1, 1, 0, 1],
        [0, 0, 0, 0, 1, 1, 0, 1, 0],
    ],
    dtype=float,
)


def lattice_w(rows, cols, rule="queen"):
    return row_standardize(build_lattice_adjacency(rows, cols, rule))


def random_dataset(spec, theta, rows=7, cols=7, seed=0):
    """PSAR-ANN data on a small queen lattice at ``theta``."""
    cfg = SimConfig(rows, cols, spec, theta, seed=seed)
    return generate_dataset(cfg, 0).data


def random_theta(spec, rng, rho_scale=0.8):
    flat = np.empty(spec.n_params)
    flat[: spec.n_beta] = rng.normal(0, 1, spec.n_beta)
    flat[spec.rho_index] = rng.uniform(-rho_scale, rho_scale)
    flat[spec.lambda_slice()] = rng.uniform(1.0, 4.0, spec.h) * rng.choice([-1, 1], spec.h)
    for i in range(spec.h):
        sl = spec.gamma_slice(i)
        flat[sl] = rng.normal(0, 0.7, spec.neuron_width)
        flat[spec.slope_index(i)] = rng.uniform(0.3, 1.5)
    return ParameterVector.unflatten(flat, spec)


@pytest.fixture
def sim_spec():
    return ModelSpec(q=1, h=1, neuron_bias=True, linear=False)


@pytest.fixture
def sim_theta():
    return ParameterVector([], 0.6, [5.0], [[0.5, 1.0]])


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
