"""
Maximum-likelihood fitting: a joint box-constrained solve over all of theta,
and the alternating scheme that switches between the linear block
(beta, rho) and the neural block (lambda, gamma) with fresh small random
starts for the neural block on every pass.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .lbfgsb import maximize_box_constrained, projected_gradient_norm
from .likelihood import Likelihood
from .model import CanonicalDiagnostics, Dataset, ModelSpec, ParameterVector, canonicalize

log = logging.getLogger(__name__)

RHO_MARGIN = 1e-3
SLOPE_FLOOR = 1e-6
INIT_HIGH = 0.05


class FitError(RuntimeError):
    pass


@dataclass
class FitOptions:
    max_iterations: int = 1000
    gtol: float = 1e-5
    ftol: float = 1e-8
    outer_tol: float = 1e-2
    max_outer: int = 50
    restarts: int = 5
    seed: int = 0
    mode: str = "joint"
    memory: int = 10

    def __post_init__(self):
        if self.mode not in ("joint", "alternating"):
            raise ValueError(f"mode must be 'joint' or 'alternating', got {self.mode!r}")
        for name in ("gtol", "ftol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.restarts < 1 or self.max_iterations < 1 or self.max_outer < 1:
            raise ValueError("restarts, max_iterations and max_outer must be >= 1")


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, x, strict: bool = False) -> bool:
        if strict:
            return bool(np.all((x > self.lower) | np.isinf(self.lower)) and np.all((x < self.upper) | np.isinf(self.upper)))
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def default_bounds(spec: ModelSpec, rho_interval) -> Bounds:
    """rho inside the spectral interval less a margin; leading slopes >= 1e-6."""
    lower = np.full(spec.n_params, -np.inf)
    upper = np.full(spec.n_params, np.inf)
    lo, hi = rho_interval
    lower[spec.rho_index] = lo + RHO_MARGIN if np.isfinite(lo) else -1.0 + RHO_MARGIN
    upper[spec.rho_index] = hi - RHO_MARGIN if np.isfinite(hi) else 1.0 - RHO_MARGIN
    for i in range(spec.h):
        lower[spec.slope_index(i)] = SLOPE_FLOOR
    return Bounds(lower, upper)


@dataclass
class FitResult:
    theta: ParameterVector
    loglik: float
    iterations: int
    converged: bool
    trace: list
    spec: ModelSpec
    options: FitOptions
    message: str = ""
    diagnostics: Optional[CanonicalDiagnostics] = None
    grad_norm: float = float("nan")

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def to_dict(self) -> dict:
        diag = self.diagnostics
        return {
            "theta": self.theta.to_dict(),
            "param_names": self.spec.param_names(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "grad_norm": self.grad_norm,
            "trace": list(self.trace),
            "model": self.spec.to_dict(),
            "options": asdict(self.options),
            "seed": self.options.seed,
            "diagnostics": None
            if diag is None
            else {"zero_lambda": list(diag.zero_lambda), "nonpositive_slope": list(diag.nonpositive_slope)},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        diag = d.get("diagnostics")
        return cls(
            theta=ParameterVector.from_dict(d["theta"]),
            loglik=float(d["loglik"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            trace=list(d.get("trace", [])),
            spec=ModelSpec.from_dict(d["model"]),
            options=FitOptions(**d.get("options", {})),
            message=d.get("message", ""),
            diagnostics=None
            if diag is None
            else CanonicalDiagnostics(tuple(diag["zero_lambda"]), tuple(diag["nonpositive_slope"])),
            grad_norm=float(d.get("grad_norm", float("nan"))),
        )

    @classmethod
    def from_json(cls, path) -> "FitResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _draw_neural(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Neural-block starting values, uniform on (0, 0.05)."""
    size = spec.h + spec.h * spec.neuron_width
    return rng.uniform(0.0, INIT_HIGH, size)


def starting_values(data: Dataset, spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Least-squares beta with rho = 0, small random neural weights."""
    start = np.zeros(spec.n_params)
    if spec.linear:
        X = spec.design(data.x)
        start[: spec.n_beta] = np.linalg.lstsq(X, data.y, rcond=None)[0]
    start[spec.n_beta + 1 :] = _draw_neural(spec, rng)
    return start


def _safe_objective(lik: Likelihood, base: np.ndarray, idx: Optional[np.ndarray]):
    """f(sub) -> (loglik, grad) over the coordinates ``idx`` of ``base``."""

    def fg(sub):
        full = base.copy()
        if idx is None:
            full = np.asarray(sub, dtype=float)
        else:
            full[idx] = sub
        try:
            v, g = lik.value_and_grad(full)
        except ValueError:
            return -np.inf, np.zeros(len(sub))
        if idx is not None:
            g = g[idx]
        return v, g

    return fg


def _validate(data: Dataset, spec: ModelSpec) -> None:
    if data.q != spec.q:
        raise ValueError(f"model expects {spec.q} covariates, data has {data.q}")
    if not (np.isfinite(data.y).all() and np.isfinite(data.x).all()):
        raise ValueError("data contain non-finite values")


def _solve(lik, base, idx, bounds, options):
    lo = bounds.lower if idx is None else bounds.lower[idx]
    hi = bounds.upper if idx is None else bounds.upper[idx]
    x0 = base if idx is None else base[idx]
    x0 = np.clip(x0, lo, hi)
    return maximize_box_constrained(
        _safe_objective(lik, base, idx),
        x0,
        lo,
        hi,
        memory=options.memory,
        pgtol=options.gtol,
        ftol=options.ftol,
        max_iter=options.max_iterations,
    )


def _accept(res, spec: ModelSpec) -> tuple[bool, str]:
    """Laplace log-likelihoods have kinks wherever a residual is zero; a
    steepest-ascent stall there is the expected way for the solve to end."""
    if not res.converged and spec.family == "laplace" and res.message == "line search failed":
        return True, "stalled at a nondifferentiable point (laplace)"
    return res.converged, res.message


def _finish(lik, spec, options, flat, loglik, iterations, converged, trace, message) -> FitResult:
    theta = ParameterVector.unflatten(flat, spec)
    theta, diag = canonicalize(theta, spec)
    bounds = default_bounds(spec, lik.rho_interval)
    grad = lik.score(flat)
    pg = projected_gradient_norm(flat, -grad, bounds.lower, bounds.upper)
    return FitResult(theta, loglik, iterations, converged, trace, spec, options, message, diag, pg)


def fit_joint(
    data: Dataset,
    spec: ModelSpec,
    options: Optional[FitOptions] = None,
    start: Optional[ParameterVector] = None,
) -> FitResult:
    """One box-constrained maximization over the full parameter vector.

    With a linear block present, small neural starts can drift toward the
    sign-flipped neuron and stop with its leading slope on the positivity
    bound; :func:`fit_alternating` is the more reliable choice there.
    """
    options = options or FitOptions()
    _validate(data, spec)
    lik = Likelihood(data, spec)
    bounds = default_bounds(spec, lik.rho_interval)
    rng = np.random.default_rng(options.seed)
    x0 = starting_values(data, spec, rng) if start is None else start.flatten()
    x0 = np.clip(x0, bounds.lower, bounds.upper)
    try:
        res = _solve(lik, x0, None, bounds, options)
    except ValueError as exc:
        raise FitError(f"optimization could not start: {exc}") from exc
    if not np.isfinite(res.fun):
        raise FitError("log-likelihood is not finite at the returned point")
    converged, message = _accept(res, spec)
    return _finish(lik, spec, options, res.x, res.fun, res.iterations, converged, [res.fun], message)


def fit_alternating(
    data: Dataset,
    spec: ModelSpec,
    options: Optional[FitOptions] = None,
    start: Optional[ParameterVector] = None,
) -> FitResult:
    """Alternate (beta, rho) and (lambda, gamma) solves until the outer
    log-likelihood changes by less than ``options.outer_tol``.

    Every neural-block solve is tried from ``options.restarts`` fresh draws
    on (0, 0.05) plus the incumbent; the best candidate is kept, so the
    outer trace never decreases.
    """
    options = options or FitOptions(mode="alternating")
    _validate(data, spec)
    lik = Likelihood(data, spec)
    bounds = default_bounds(spec, lik.rho_interval)
    rng = np.random.default_rng(options.seed)
    theta = starting_values(data, spec, rng) if start is None else start.flatten()
    theta = np.clip(theta, bounds.lower, bounds.upper)

    lin_idx = np.arange(spec.n_beta + 1)
    nl_idx = np.arange(spec.n_beta + 1, spec.n_params)
    trace: list[float] = []
    iterations = 0
    converged = False
    message = "outer iteration limit reached"
    current = lik.loglik(theta)

    for outer in range(options.max_outer):
        res = _solve(lik, theta, lin_idx, bounds, options)
        iterations += res.iterations
        if res.fun >= current:
            theta[lin_idx] = res.x
            current = res.fun
        step1 = current

        if nl_idx.size:
            best_val, best_x = current, theta[nl_idx].copy()
            candidates = [theta[nl_idx].copy()] + [_draw_neural(spec, rng) for _ in range(options.restarts)]
            for cand in candidates:
                trial = theta.copy()
                trial[nl_idx] = cand
                trial = np.clip(trial, bounds.lower, bounds.upper)
                try:
                    r = _solve(lik, trial, nl_idx, bounds, options)
                except ValueError:
                    continue
                iterations += r.iterations
                if np.isfinite(r.fun) and r.fun > best_val:
                    best_val, best_x = r.fun, r.x
            theta[nl_idx] = best_x
            current = best_val
        log.debug("outer %d: step1 %.6f step2 %.6f", outer, step1, current)

        previous = trace[-1] if trace else None
        trace.append(current)
        if previous is not None and current - previous < options.outer_tol:
            converged = True
            message = "outer log-likelihood change below threshold"
            break

    return _finish(lik, spec, options, theta, current, iterations, converged, trace, message)


def fit(data: Dataset, spec: ModelSpec, options: Optional[FitOptions] = None, start=None) -> FitResult:
    options = options or FitOptions()
    if options.mode == "alternating":
        return fit_alternating(data, spec, options, start)
    return fit_joint(data, spec, options, start)
