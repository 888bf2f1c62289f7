"""
Lattice Monte Carlo for PSAR-ANN estimators: data generation, seeded
replications, summary tables and normal-quantile plot data.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.stats import norm

from .fitting import FitError, FitOptions, fit
from .likelihood import Density
from .model import Dataset, ModelSpec, ParameterVector, mean_function
from .weights import WeightMatrix, build_lattice_adjacency, row_standardize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo design on a row-standardized lattice."""

    rows: int
    cols: int
    spec: ModelSpec
    theta: ParameterVector
    rule: str = "queen"
    x_mean: float = 0.5
    x_sd: float = 3.0
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        self.theta.check(self.spec)
        if not self.x_sd > 0:
            raise ValueError("x_sd must be positive")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def weights(self) -> WeightMatrix:
        return _lattice_weights(self.rows, self.cols, self.rule)

    def to_dict(self) -> dict:
        return {
            "lattice": {"rows": self.rows, "cols": self.cols, "rule": self.rule},
            "model": self.spec.to_dict(),
            "theta": self.theta.to_dict(),
            "x_mean": self.x_mean,
            "x_sd": self.x_sd,
            "replicates": self.replicates,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        lat = d["lattice"]
        return cls(
            rows=int(lat["rows"]),
            cols=int(lat["cols"]),
            rule=lat.get("rule", "queen"),
            spec=ModelSpec.from_dict(d["model"]),
            theta=ParameterVector.from_dict(d["theta"]),
            x_mean=float(d.get("x_mean", 0.5)),
            x_sd=float(d.get("x_sd", 3.0)),
            replicates=int(d.get("replicates", 1)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def lattice_design(family: str = "normal", rows: int = 50, cols: int = 50, replicates: int = 50, seed: int = 2024) -> SimConfig:
    """The single-neuron lattice design: rho=0.6, lambda=5, center 0.5, slope 1."""
    df = 4.0 if family == "t" else None
    spec = ModelSpec(q=1, h=1, family=family, df=df, neuron_bias=True, linear=False)
    theta = ParameterVector([], 0.6, [5.0], [[0.5, 1.0]])
    return SimConfig(rows, cols, spec, theta, replicates=replicates, seed=seed)


_WEIGHTS_CACHE: dict = {}


def _lattice_weights(rows: int, cols: int, rule: str) -> WeightMatrix:
    key = (rows, cols, rule)
    if key not in _WEIGHTS_CACHE:
        _WEIGHTS_CACHE[key] = row_standardize(build_lattice_adjacency(rows, cols, rule))
    return _WEIGHTS_CACHE[key]


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, replicate index)."""
    return np.random.default_rng([int(seed), int(index)])


def sample_errors(density: Density, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance draws from the family's law."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return density.sample(rng, n)


@dataclass(frozen=True, eq=False)
class Simulated:
    data: Dataset
    eps: np.ndarray


def generate_dataset(config: SimConfig, replicate_index: int = 0, w: Optional[WeightMatrix] = None) -> Simulated:
    """Draw X and eps, then solve (I - rho W) y = g(X) + eps."""
    w = config.weights() if w is None else w
    rng = replicate_rng(config.seed, replicate_index)
    n = w.n
    x = rng.normal(config.x_mean, config.x_sd, size=(n, config.spec.q))
    eps = sample_errors(Density.for_spec(config.spec), n, rng)
    rhs = mean_function(config.theta, x, config.spec) + eps
    rho = config.theta.rho
    lo, hi = w.rho_interval
    assert lo < rho < hi, "rho outside the admissible interval"
    if rho == 0.0:
        y = rhs
    else:
        system = sp.csc_matrix(sp.identity(n) - rho * w.sparse)
        y = splu(system).solve(rhs)
    return Simulated(Dataset(y, x, w), eps)


@dataclass
class McSummary:
    names: list
    estimates: np.ndarray  # replicates x params, NaN rows for failures
    converged: np.ndarray
    logliks: np.ndarray
    truth: Optional[np.ndarray] = None
    asymptotic_se: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return self.estimates.shape[0]

    @property
    def failures(self) -> int:
        return int((~self.converged).sum())

    @property
    def mean(self) -> np.ndarray:
        good = self.estimates[self.converged]
        return good.mean(axis=0) if len(good) else np.full(len(self.names), np.nan)

    @property
    def sd(self) -> np.ndarray:
        """Sample SD over converged replicates; NaN with fewer than two."""
        good = self.estimates[self.converged]
        if len(good) < 2:
            return np.full(len(self.names), np.nan)
        return good.std(axis=0, ddof=1)

    def column(self, name: str) -> np.ndarray:
        return self.estimates[self.converged, self.names.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["replicate", "converged", "loglik", *self.names])
            for i in range(self.replicates):
                out.writerow([i, int(self.converged[i]), repr(float(self.logliks[i]))] + [repr(float(v)) for v in self.estimates[i]])
            out.writerow(["mean", "", ""] + [repr(float(v)) for v in self.mean])
            out.writerow(["sd", "", ""] + [repr(float(v)) for v in self.sd])
            out.writerow(["failures", self.failures, ""] + [""] * len(self.names))
            if self.asymptotic_se is not None:
                out.writerow(["asymptotic_se", "", ""] + [repr(float(v)) for v in self.asymptotic_se])

    @classmethod
    def from_csv(cls, path) -> "McSummary":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][3:]
        est, conv, ll = [], [], []
        asym = None
        for row in rows[1:]:
            if row[0].isdigit():
                conv.append(row[1] == "1")
                ll.append(float(row[2]))
                est.append([float(v) for v in row[3:]])
            elif row[0] == "asymptotic_se":
                asym = np.array([float(v) for v in row[3:]])
        return cls(names, np.array(est, dtype=float).reshape(len(est), len(names)), np.array(conv, dtype=bool), np.array(ll), asymptotic_se=asym)

    def table(self) -> str:
        lines = ["param      mean        sd"]
        for name, m, s in zip(self.names, self.mean, self.sd):
            lines.append(f"{name:<8} {m:10.4f} {s:9.4f}")
        lines.append(f"failures: {self.failures}/{self.replicates}")
        return "\n".join(lines)


def _run_replicate(args):
    config, index, options, start_at_truth = args
    w = config.weights()
    sim = generate_dataset(config, index, w)
    opts = FitOptions(**{**options.__dict__, "seed": _fit_seed(config.seed, index)})
    start = config.theta if start_at_truth else None
    try:
        res = fit(sim.data, config.spec, opts, start=start)
    except (FitError, ValueError) as exc:
        log.warning("replicate %d failed: %s", index, exc)
        return index, None, -np.inf, False
    return index, res.theta.flatten(), res.loglik, bool(res.converged)


def _fit_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index), 1]).generate_state(1)[0])


def monte_carlo(
    config: SimConfig,
    options: Optional[FitOptions] = None,
    *,
    workers: int = 1,
    start_at_truth: bool = False,
) -> McSummary:
    """Fit every replicate; failures are counted and left out of the moments."""
    options = options or FitOptions()
    tasks = [(config, i, options, start_at_truth) for i in range(config.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, tasks))
    else:
        results = [_run_replicate(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    p = config.spec.n_params
    est = np.full((config.replicates, p), np.nan)
    conv = np.zeros(config.replicates, dtype=bool)
    ll = np.full(config.replicates, -np.inf)
    for index, theta, loglik, ok in results:
        if theta is not None:
            est[index] = theta
            ll[index] = loglik
            conv[index] = ok
    if not conv.any():
        raise FitError("every Monte Carlo replicate failed to converge")
    summary = McSummary(config.spec.param_names(), est, conv, ll, truth=config.theta.flatten())
    if config.replicates == 1:
        summary.notes.append("single replicate: standard deviations undefined")
    return summary


def qq_data(values) -> tuple[np.ndarray, np.ndarray]:
    """Theoretical normal quantiles at (i - 0.5)/m against the sorted sample."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    m = v.size
    if m < 3:
        raise ValueError("need at least three values for a normal plot")
    theo = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return theo, v
