"""
Log-likelihood of the PSAR-ANN model with its analytic gradient and Hessian.

The Jacobian term ln|I - rho W| and its rho-derivatives come from the cached
real spectrum of W, so no n x n inverse or determinant is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import Dataset, ModelSpec, ParameterVector, logistic, neuron_inputs

LOG_2PI = math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)
RHO_GUARD = 1e-6


class UnsupportedFamilyError(ValueError):
    """The density has no second derivative (Laplace)."""


class RhoOutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Density:
    """Unit-variance error density.

    ``score`` is f'/f and ``curvature`` is d^2 ln f / d eps^2.
    """

    name: str
    df: float | None = None

    def __post_init__(self):
        if self.name not in ("normal", "t", "laplace"):
            raise ValueError(f"unknown family {self.name!r}")
        if self.name == "t" and (self.df is None or not self.df > 2):
            raise ValueError(f"the t family needs df > 2, got {self.df}")

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "Density":
        return cls(spec.family, spec.df)

    @property
    def has_curvature(self) -> bool:
        return self.name != "laplace"

    def logpdf(self, eps):
        eps = np.asarray(eps, dtype=float)
        if self.name == "normal":
            return -0.5 * LOG_2PI - 0.5 * eps**2
        if self.name == "t":
            nu = self.df
            const = gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * math.log((nu - 2) * math.pi)
            return const - 0.5 * (nu + 1) * np.log1p(eps**2 / (nu - 2))
        return -0.5 * math.log(2.0) - SQRT2 * np.abs(eps)

    def score(self, eps):
        eps = np.asarray(eps, dtype=float)
        if self.name == "normal":
            return -eps
        if self.name == "t":
            nu = self.df
            return -(nu + 1) * eps / (nu - 2 + eps**2)
        # subgradient: sign(0) = 0
        return -SQRT2 * np.sign(eps)

    def curvature(self, eps):
        eps = np.asarray(eps, dtype=float)
        if self.name == "normal":
            return -np.ones_like(eps)
        if self.name == "t":
            nu = self.df
            e2 = eps**2
            return -(nu + 1) * (nu - 2 - e2) / (nu - 2 + e2) ** 2
        raise UnsupportedFamilyError("the Laplace density is not twice differentiable at 0; no curvature")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.name == "normal":
            return rng.standard_normal(n)
        if self.name == "t":
            return rng.standard_t(self.df, n) * math.sqrt((self.df - 2) / self.df)
        return rng.laplace(0.0, SQRT2 / 2, n)


def density_eval(density: Density, eps: float) -> tuple[float, float, float]:
    """(logpdf, score, curvature) at one point."""
    return float(density.logpdf(eps)), float(density.score(eps)), float(density.curvature(eps))


def _check_rho(rho: float, spectrum: np.ndarray) -> np.ndarray:
    one_minus = 1.0 - rho * spectrum
    if not np.isfinite(rho) or (one_minus <= 0).any():
        raise RhoOutOfBoundsError(f"rho={rho} lies outside the admissible interval of W")
    return one_minus


def log_det_term(rho: float, spectrum) -> float:
    """ln|I - rho W| = sum_i ln(1 - rho tau_i)."""
    spectrum = np.asarray(spectrum, dtype=float)
    return float(np.log(_check_rho(rho, spectrum)).sum())


def log_det_derivatives(rho: float, spectrum) -> tuple[float, float, float]:
    """Value, first and second rho-derivatives of ln|I - rho W|."""
    spectrum = np.asarray(spectrum, dtype=float)
    one_minus = _check_rho(rho, spectrum)
    ratio = spectrum / one_minus
    return float(np.log(one_minus).sum()), float(-ratio.sum()), float(-(ratio**2).sum())


class Likelihood:
    """Evaluation workspace bound to one dataset and model.

    All methods take the flat parameter vector in (beta, rho, lambda, gamma)
    order; see :meth:`ParameterVector.flatten`.
    """

    def __init__(self, data: Dataset, spec: ModelSpec):
        if data.q != spec.q:
            raise ValueError(f"model expects {spec.q} covariates, data has {data.q}")
        self.data = data
        self.spec = spec
        self.density = Density.for_spec(spec)
        self.spectrum = data.w.spectrum
        lo, hi = data.w.rho_interval
        self.rho_interval = (lo, hi)
        self.design = spec.design(data.x)
        self.n = data.n
        self.p = spec.n_params

    # -- building blocks -------------------------------------------------

    def _unpack(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.p,):
            raise ValueError(f"expected {self.p} parameters, got shape {flat.shape}")
        if not np.isfinite(flat).all():
            raise ValueError("parameters must be finite")
        return ParameterVector.unflatten(flat, self.spec)

    def _guard_rho(self, rho: float) -> None:
        lo, hi = self.rho_interval
        if not (lo * (1 - RHO_GUARD) < rho < hi * (1 - RHO_GUARD)):
            raise RhoOutOfBoundsError(f"rho={rho} outside the admissible interval ({lo:.6g}, {hi:.6g})")

    def _neurons(self, theta: ParameterVector):
        """Per-neuron (F, F', F'', dz/dgamma) with dz/dgamma as n x width."""
        bias = self.spec.neuron_bias
        x = self.data.x
        out = []
        for i in range(self.spec.h):
            row = theta.gamma[i]
            z, xe = neuron_inputs(x, row, bias)
            f0 = logistic(z)
            g0 = logistic(-z)
            f1 = f0 * g0
            f2 = f1 * (g0 - f0)
            if bias:
                dz = np.column_stack([np.full(self.n, -row[1]), xe])
            else:
                dz = xe
            out.append((f0, f1, f2, dz))
        return out

    def _residuals(self, theta, neurons) -> np.ndarray:
        eps = self.data.y - theta.rho * self.data.wy
        if self.spec.linear:
            eps = eps - self.design @ theta.beta
        for lam_i, (f0, *_rest) in zip(theta.lam, neurons):
            eps = eps - lam_i * f0
        return eps

    def _jacobian(self, theta, neurons) -> np.ndarray:
        """n x p matrix d eps_s / d theta."""
        spec = self.spec
        d = np.empty((self.n, self.p))
        nb = spec.n_beta
        d[:, :nb] = -self.design
        d[:, nb] = -self.data.wy
        lam_sl = spec.lambda_slice()
        for i, (f0, f1, _f2, dz) in enumerate(neurons):
            d[:, lam_sl.start + i] = -f0
            d[:, spec.gamma_slice(i)] = -(theta.lam[i] * f1)[:, None] * dz
        return d

    # -- public evaluation -----------------------------------------------

    def residuals(self, flat) -> np.ndarray:
        theta = self._unpack(flat)
        return self._residuals(theta, self._neurons(theta))

    def loglik(self, flat) -> float:
        theta = self._unpack(flat)
        self._guard_rho(theta.rho)
        eps = self._residuals(theta, self._neurons(theta))
        if not np.isfinite(eps).all():
            raise ValueError("non-finite residuals")
        return log_det_term(theta.rho, self.spectrum) + float(self.density.logpdf(eps).sum())

    def value_and_grad(self, flat) -> tuple[float, np.ndarray]:
        theta = self._unpack(flat)
        self._guard_rho(theta.rho)
        neurons = self._neurons(theta)
        eps = self._residuals(theta, neurons)
        if not np.isfinite(eps).all():
            raise ValueError("non-finite residuals")
        ld, ld1, _ = log_det_derivatives(theta.rho, self.spectrum)
        value = ld + float(self.density.logpdf(eps).sum())
        grad = self._jacobian(theta, neurons).T @ self.density.score(eps)
        grad[self.spec.rho_index] += ld1
        return value, grad

    def score(self, flat) -> np.ndarray:
        return self.value_and_grad(flat)[1]

    def per_location_scores(self, flat) -> np.ndarray:
        """n x p rows of d l_s / d theta with l_s = ln|I - rho W| / n + ln f(eps_s)."""
        theta = self._unpack(flat)
        self._guard_rho(theta.rho)
        neurons = self._neurons(theta)
        eps = self._residuals(theta, neurons)
        _, ld1, _ = log_det_derivatives(theta.rho, self.spectrum)
        g = self._jacobian(theta, neurons) * self.density.score(eps)[:, None]
        g[:, self.spec.rho_index] += ld1 / self.n
        return g

    def _second_order(self, theta, neurons, psi):
        """sum_s psi_s d^2 eps_s / d theta d theta' (the non-Gauss-Newton part)."""
        spec = self.spec
        h2 = np.zeros((self.p, self.p))
        lam_start = spec.lambda_slice().start
        for i, (_f0, f1, f2, dz) in enumerate(neurons):
            gs = spec.gamma_slice(i)
            li = lam_start + i
            cross = -(psi * f1) @ dz
            h2[li, gs] += cross
            h2[gs, li] += cross
            block = -theta.lam[i] * ((dz * (psi * f2)[:, None]).T @ dz)
            if spec.neuron_bias:
                # d^2 z / d c d gamma_1 = -1
                s = -theta.lam[i] * float(psi @ f1) * -1.0
                block[0, 1] += s
                block[1, 0] += s
            h2[gs, gs] += block
        return h2

    def hessian(self, flat) -> np.ndarray:
        if not self.density.has_curvature:
            raise UnsupportedFamilyError("Hessian unavailable for the Laplace family (not twice differentiable at 0)")
        theta = self._unpack(flat)
        self._guard_rho(theta.rho)
        neurons = self._neurons(theta)
        eps = self._residuals(theta, neurons)
        psi = self.density.score(eps)
        u = self.density.curvature(eps)
        _, _, ld2 = log_det_derivatives(theta.rho, self.spectrum)
        d = self._jacobian(theta, neurons)
        hess = (d * u[:, None]).T @ d + self._second_order(theta, neurons, psi)
        r = self.spec.rho_index
        hess[r, r] += ld2
        return 0.5 * (hess + hess.T)

    def per_location_hessians(self, flat) -> np.ndarray:
        """n x p x p second derivatives of each l_s (summing gives the Hessian)."""
        if not self.density.has_curvature:
            raise UnsupportedFamilyError("Hessian unavailable for the Laplace family (not twice differentiable at 0)")
        spec = self.spec
        theta = self._unpack(flat)
        self._guard_rho(theta.rho)
        neurons = self._neurons(theta)
        eps = self._residuals(theta, neurons)
        psi = self.density.score(eps)
        u = self.density.curvature(eps)
        _, _, ld2 = log_det_derivatives(theta.rho, self.spectrum)
        d = self._jacobian(theta, neurons)
        out = np.einsum("s,si,sj->sij", u, d, d)
        lam_start = spec.lambda_slice().start
        for i, (_f0, f1, f2, dz) in enumerate(neurons):
            gs = spec.gamma_slice(i)
            li = lam_start + i
            cross = -(psi * f1)[:, None] * dz
            out[:, li, gs] += cross
            out[:, gs, li] += cross
            out[:, gs, gs] += -theta.lam[i] * np.einsum("s,si,sj->sij", psi * f2, dz, dz)
            if spec.neuron_bias:
                s = theta.lam[i] * psi * f1
                out[:, gs.start, gs.start + 1] += s
                out[:, gs.start + 1, gs.start] += s
        r = spec.rho_index
        out[:, r, r] += ld2 / self.n
        return out


def log_likelihood(theta: ParameterVector, data: Dataset, spec: ModelSpec) -> float:
    return Likelihood(data, spec).loglik(theta.flatten())


def score_vector(theta: ParameterVector, data: Dataset, spec: ModelSpec) -> np.ndarray:
    return Likelihood(data, spec).score(theta.flatten())


def hessian_matrix(theta: ParameterVector, data: Dataset, spec: ModelSpec) -> np.ndarray:
    return Likelihood(data, spec).hessian(theta.flatten())
