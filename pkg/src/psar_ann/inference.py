"""
Inference after a fit: sandwich covariance, Wald intervals, Moran's I on
residuals, AIC and the likelihood-ratio test.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .likelihood import Likelihood, UnsupportedFamilyError
from .model import Dataset, ModelSpec, ParameterVector
from .weights import WeightMatrix

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-10


@dataclass
class CovarianceEstimate:
    """A-hat (average negative Hessian), B-hat (average outer product of
    per-location scores) and Omega-hat = A^-1 B A^-1 for sqrt(n)(theta_hat - theta).
    """

    a_hat: np.ndarray
    b_hat: np.ndarray
    omega: np.ndarray
    omega_info: np.ndarray
    n: int
    names: list
    condition: float
    singular: bool = False

    @property
    def dim(self) -> int:
        return self.a_hat.shape[0]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega), 0.0, None) / self.n)

    @property
    def se_info(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega_info), 0.0, None) / self.n)

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "se": self.se.tolist(),
            "se_inverse_information": self.se_info.tolist(),
            "omega": self.omega.tolist(),
            "a_hat": self.a_hat.tolist(),
            "b_hat": self.b_hat.tolist(),
            "condition_number": self.condition,
            "singular": self.singular,
            "n": self.n,
        }


def _sym_inverse(a: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Inverse through the eigendecomposition, flooring tiny eigenvalues."""
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    top = np.abs(vals).max() if vals.size else 0.0
    small = np.abs(vals) < EIG_FLOOR * top if top > 0 else np.ones_like(vals, dtype=bool)
    cond = float(top / np.abs(vals).min()) if vals.size and np.abs(vals).min() > 0 else np.inf
    inv_vals = np.where(small, 0.0, 1.0 / np.where(small, 1.0, vals))
    return (vecs * inv_vals) @ vecs.T, cond, bool(small.any())


def asymptotic_covariance(theta: ParameterVector, data: Dataset, spec: ModelSpec) -> CovarianceEstimate:
    """Sandwich covariance at ``theta`` from per-location derivatives.

    Raises :class:`UnsupportedFamilyError` for the Laplace family.
    """
    if spec.family == "laplace":
        raise UnsupportedFamilyError(
            "covariance matrix cannot be computed for Laplace errors: the log-density is not twice differentiable at 0"
        )
    lik = Likelihood(data, spec)
    flat = theta.flatten()
    n = data.n
    a_hat = -lik.per_location_hessians(flat).sum(axis=0) / n
    scores = lik.per_location_scores(flat)
    b_hat = scores.T @ scores / n
    a_hat = 0.5 * (a_hat + a_hat.T)
    a_inv, cond, singular = _sym_inverse(a_hat)
    if singular:
        warnings.warn(f"A-hat is near singular (condition number {cond:.3g}); using a pseudo-inverse", RuntimeWarning)
    omega = a_inv @ b_hat @ a_inv
    omega = 0.5 * (omega + omega.T)
    return CovarianceEstimate(a_hat, b_hat, omega, a_inv, n, spec.param_names(), cond, singular)


def confidence_intervals(cov: CovarianceEstimate, theta: ParameterVector, level: float = 0.95) -> np.ndarray:
    """Wald intervals, one (low, high) row per parameter."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    est = theta.flatten()
    z = stats.norm.ppf(0.5 * (1 + level))
    half = z * cov.se
    return np.column_stack([est - half, est + half])


def interval_table(cov: CovarianceEstimate, theta: ParameterVector, level: float = 0.95) -> list[dict]:
    ci = confidence_intervals(cov, theta, level)
    return [
        {"name": name, "estimate": float(e), "se": float(s), "low": float(lo), "high": float(hi)}
        for name, e, s, (lo, hi) in zip(cov.names, theta.flatten(), cov.se, ci)
    ]


@dataclass(frozen=True)
class MoranResult:
    statistic: float
    expected: float
    variance: float
    z: float
    p_value: float

    def to_dict(self) -> dict:
        return {"I": self.statistic, "expected": self.expected, "variance": self.variance, "z": self.z, "p": self.p_value}


def morans_i(values, w: WeightMatrix) -> MoranResult:
    """Global Moran's I with the normality-assumption z-score (two-sided p)."""
    v = np.asarray(values, dtype=float).reshape(-1)
    n = v.size
    if n != w.n:
        raise ValueError(f"{n} values for a {w.n}-unit weight matrix")
    e = v - v.mean()
    ee = float(e @ e)
    if ee <= 1e-300 or np.ptp(v) == 0:
        raise ValueError("Moran's I is undefined for a constant vector")
    m = w.sparse
    s0 = float(m.sum())
    stat = (n / s0) * float(e @ (m @ e)) / ee

    sym = m + m.T
    s1 = 0.5 * float(sym.multiply(sym).sum())
    rows = np.asarray(m.sum(axis=1)).ravel()
    cols = np.asarray(m.sum(axis=0)).ravel()
    s2 = float(((rows + cols) ** 2).sum())
    expected = -1.0 / (n - 1)
    var = (n * n * s1 - n * s2 + 3 * s0 * s0) / ((n * n - 1) * s0 * s0) - expected**2
    z = (stat - expected) / np.sqrt(var)
    p = 2.0 * stats.norm.sf(abs(z))
    return MoranResult(stat, expected, var, float(z), float(min(1.0, p)))


def aic(loglik: float, k: int) -> float:
    """2k - 2 ln L."""
    return 2.0 * k - 2.0 * loglik


@dataclass(frozen=True)
class LRTResult:
    statistic: float
    df: int
    p_value: float

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p": self.p_value}


def lrt(null_loglik: float, alt_loglik: float, df: int) -> LRTResult:
    """-2 ln L_null + 2 ln L_alt against chi-square(df)."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    stat = 2.0 * (alt_loglik - null_loglik)
    if stat < 0:
        warnings.warn("alternative log-likelihood is below the null's; the models may not be nested", RuntimeWarning)
        stat = 0.0
    return LRTResult(stat, df, float(stats.chi2.sf(stat, df)))
