"""
PSAR-ANN model pieces: model specification, parameter layout, the logistic
neural-network component, residuals, and neuron canonicalization.

The response satisfies

    (I - rho W) y = X beta + sum_i lambda_i F(z_i) + eps

with F the logistic function. Neuron ``i`` sees ``z_i = X gamma_i``; with a
neuron bias the leading covariate is centered first,
``z_i = gamma_i1 (x_1 - c_i) + sum_{j>1} gamma_ij x_j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .weights import WeightMatrix

FAMILIES = ("normal", "t", "laplace")


@dataclass(frozen=True)
class ModelSpec:
    """Shape and error law of a PSAR-ANN model.

    ``linear=False`` drops the X beta block entirely (the pure nonlinear
    design used in the lattice simulations).
    """

    q: int
    h: int = 1
    family: str = "normal"
    df: Optional[float] = None
    intercept: bool = False
    neuron_bias: bool = False
    linear: bool = True

    def __post_init__(self):
        if self.q < 1 and (self.h > 0 or (self.linear and not self.intercept)):
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.h < 0:
            raise ValueError(f"h must be >= 0, got {self.h}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "t":
            if self.df is None or not self.df > 2:
                raise ValueError(f"the t family needs df > 2, got {self.df}")
        elif self.df is not None:
            raise ValueError(f"df only applies to the t family, not {self.family!r}")
        if self.intercept and not self.linear:
            raise ValueError("an intercept requires the linear block")

    @property
    def n_beta(self) -> int:
        return (self.q + int(self.intercept)) if self.linear else 0

    @property
    def neuron_width(self) -> int:
        return self.q + int(self.neuron_bias)

    @property
    def n_params(self) -> int:
        return self.n_beta + 1 + self.h + self.h * self.neuron_width

    @property
    def rho_index(self) -> int:
        return self.n_beta

    def lambda_slice(self) -> slice:
        start = self.n_beta + 1
        return slice(start, start + self.h)

    def gamma_slice(self, i: int) -> slice:
        start = self.n_beta + 1 + self.h + i * self.neuron_width
        return slice(start, start + self.neuron_width)

    def slope_index(self, i: int) -> int:
        """Flat index of neuron i's leading slope (the one kept positive)."""
        return self.gamma_slice(i).start + int(self.neuron_bias)

    def param_names(self) -> list[str]:
        names = []
        if self.linear:
            if self.intercept:
                names.append("beta0")
            names += [f"beta{j + 1}" for j in range(self.q)]
        names.append("rho")
        names += ["lambda" if self.h == 1 else f"lambda{i + 1}" for i in range(self.h)]
        for i in range(self.h):
            tag = "" if self.h == 1 else f"_{i + 1}"
            if self.neuron_bias:
                names.append(f"gamma0{tag}")
            names += [f"gamma{j + 1}{tag}" for j in range(self.q)]
        return names

    def design(self, x: np.ndarray) -> np.ndarray:
        """Columns multiplying beta."""
        if not self.linear:
            return np.zeros((x.shape[0], 0))
        if self.intercept:
            return np.column_stack([np.ones(x.shape[0]), x])
        return x

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "h": self.h,
            "family": self.family,
            "df": self.df,
            "intercept": self.intercept,
            "neuron_bias": self.neuron_bias,
            "linear": self.linear,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{k: d[k] for k in ("q", "h", "family", "df", "intercept", "neuron_bias", "linear") if k in d})


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """theta = (beta, rho, lambda, gamma_1, ..., gamma_h).

    ``gamma`` has one row per neuron; with a neuron bias column 0 holds the
    centering offset and the slopes follow.
    """

    beta: np.ndarray
    rho: float
    lam: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        lam = np.array(self.lam, dtype=float).reshape(-1)
        gamma = np.array(self.gamma, dtype=float)
        if gamma.size == 0:
            gamma = gamma.reshape(lam.size, -1) if lam.size else np.zeros((0, 0))
        if gamma.ndim != 2 or gamma.shape[0] != lam.size:
            raise ValueError(f"gamma must have one row per neuron ({lam.size}), got shape {gamma.shape}")
        for a in (beta, lam, gamma):
            a.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def h(self) -> int:
        return self.lam.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.rho], self.lam, self.gamma.ravel()])

    @classmethod
    def unflatten(cls, flat, spec: ModelSpec) -> "ParameterVector":
        flat = np.asarray(flat, dtype=float)
        if flat.size != spec.n_params:
            raise ValueError(f"expected {spec.n_params} parameters, got {flat.size}")
        nb = spec.n_beta
        lam = flat[spec.lambda_slice()]
        gamma = flat[nb + 1 + spec.h :].reshape(spec.h, spec.neuron_width)
        return cls(flat[:nb], flat[nb], lam, gamma)

    def check(self, spec: ModelSpec) -> None:
        if self.beta.size != spec.n_beta or self.h != spec.h:
            raise ValueError(
                f"parameter blocks (beta={self.beta.size}, h={self.h}) do not match "
                f"the model (beta={spec.n_beta}, h={spec.h})"
            )
        if spec.h and self.gamma.shape[1] != spec.neuron_width:
            raise ValueError(f"gamma rows must have length {spec.neuron_width}, got {self.gamma.shape[1]}")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "rho": self.rho,
            "lambda": self.lam.tolist(),
            "gamma": self.gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        lam = d.get("lambda", [])
        return cls(d.get("beta", []), d["rho"], lam, d.get("gamma", np.zeros((len(lam), 0))))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ParameterVector":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y``, covariates ``x`` (n x q) and their weight matrix."""

    y: np.ndarray
    x: np.ndarray
    w: WeightMatrix
    wy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.size < 1:
            raise ValueError("dataset needs at least one unit")
        if x.shape[0] != y.size:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.size} entries")
        if self.w.n != y.size:
            raise ValueError(f"weight matrix is {self.w.n}x{self.w.n} but there are {y.size} units")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise ValueError("y and x must be finite")
        y.setflags(write=False)
        x.setflags(write=False)
        wy = self.w.sparse @ y
        wy.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "wy", wy)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def q(self) -> int:
        return self.x.shape[1]


def logistic(z, order: int = 0):
    """Logistic function F and its first two derivatives."""
    f = expit(z)
    if order == 0:
        return f
    g = expit(-np.asarray(z, dtype=float))  # 1 - F without cancellation
    d1 = f * g
    if order == 1:
        return d1
    if order == 2:
        return d1 * (g - f)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


def neuron_inputs(x: np.ndarray, gamma_row: np.ndarray, bias: bool) -> tuple[np.ndarray, np.ndarray]:
    """Argument ``z`` of one neuron and the effective input matrix."""
    if bias:
        xe = x.copy()
        xe[:, 0] -= gamma_row[0]
        slopes = gamma_row[1:]
    else:
        xe = x
        slopes = gamma_row
    return xe @ slopes, xe


def neuron_outputs(x: np.ndarray, gamma: np.ndarray, bias: bool = False) -> np.ndarray:
    """n x h matrix of F(z_i)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float)) if np.size(gamma) else np.zeros((0, x.shape[1] + bias))
    width = x.shape[1] + int(bias)
    if gamma.shape[0] and gamma.shape[1] != width:
        raise ValueError(f"gamma rows must have length {width}, got {gamma.shape[1]}")
    out = np.empty((x.shape[0], gamma.shape[0]))
    for i, row in enumerate(gamma):
        out[:, i] = logistic(neuron_inputs(x, row, bias)[0])
    return out


def nn_component(x, gamma, lam, bias: bool = False) -> np.ndarray:
    """sum_i lambda_i F(z_i), one entry per unit."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if lam.size == 0:
        return np.zeros(x.shape[0])
    outs = neuron_outputs(x, gamma, bias)
    if outs.shape[1] != lam.size:
        raise ValueError(f"{lam.size} output weights for {outs.shape[1]} neurons")
    return outs @ lam


def mean_function(theta: ParameterVector, x: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """X beta + F(X gamma') lambda."""
    theta.check(spec)
    if x.shape[1] != spec.q:
        raise ValueError(f"model expects {spec.q} covariates, data has {x.shape[1]}")
    g = nn_component(x, theta.gamma, theta.lam, spec.neuron_bias)
    if spec.linear:
        g = g + spec.design(x) @ theta.beta
    return g


def residuals(theta: ParameterVector, data: Dataset, spec: ModelSpec) -> np.ndarray:
    """eps(theta) = (I - rho W) y - X beta - F(X gamma') lambda."""
    if not np.isfinite(theta.flatten()).all():
        raise ValueError("parameters must be finite")
    return data.y - theta.rho * data.wy - mean_function(theta, data.x, spec)


@dataclass(frozen=True)
class CanonicalDiagnostics:
    zero_lambda: tuple[int, ...]
    nonpositive_slope: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not (self.zero_lambda or self.nonpositive_slope)


def canonicalize(theta: ParameterVector, spec: ModelSpec) -> tuple[ParameterVector, CanonicalDiagnostics]:
    """Sort neurons by decreasing lambda; report, never repair, sign problems.

    Ties in lambda are ordered by the gamma rows, compared lexicographically.
    """
    theta.check(spec)
    h = theta.h
    if h == 0:
        return theta, CanonicalDiagnostics((), ())
    keys = [(-theta.lam[i], tuple(theta.gamma[i])) for i in range(h)]
    order = sorted(range(h), key=lambda i: keys[i])
    out = ParameterVector(theta.beta, theta.rho, theta.lam[order], theta.gamma[order])
    slope_col = int(spec.neuron_bias)
    diag = CanonicalDiagnostics(
        tuple(i for i in range(h) if out.lam[i] == 0.0),
        tuple(i for i in range(h) if out.gamma[i, slope_col] <= 0.0),
    )
    return out, diag
