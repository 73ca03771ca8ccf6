"""Maximum-likelihood fitting of the image formation model.

Minimises the image negative log likelihood over the six sqrt
parameters with BFGS and a backtracking Armijo line search.  Both
derivatives are numeric (the objective runs through area clipping, a
discretised blur and a log-sum-exp, so analytic derivatives buy little
and cost much in surface area); the final Hessian is kept for the
uncertainty propagation downstream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .forward import PhotonImage
from .geometry import GeometricEllipse, SqrtParams
from .likelihood import negative_log_likelihood


class DegenerateSeedError(ValueError):
    """Initial vector encodes a zero-area ellipse."""


class NonFiniteProbeError(ValueError):
    """Objective returned NaN or infinity at a finite-difference probe."""


class SeedSource(enum.Enum):
    """How a fit's initial guess is produced (used by the front ends)."""

    DEF_POINTS = "def-points"
    USER = "user"
    TRUTH = "truth"


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    gradient_step: float = 1e-5
    hessian_step: float = 1e-4
    convergence_tol: float = 1e-9
    epsilon_sigma: float = 1e-4
    # optional multi-start: jittered restarts, best final value wins
    multi_start: int = 1
    multi_start_jitter: float = 0.05
    multi_start_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if min(self.gradient_step, self.hessian_step, self.convergence_tol) <= 0:
            raise ValueError("steps and tolerance must be positive")
        if self.epsilon_sigma <= 0:
            raise ValueError("epsilon_sigma must be positive")
        if self.multi_start < 1:
            raise ValueError("multi_start must be at least 1")


@dataclass(frozen=True)
class FitResult:
    params: SqrtParams
    xi: GeometricEllipse
    sigma_psf: float
    nll: float
    converged: bool
    iterations: int
    grad_norm: float
    hessian: np.ndarray


def numeric_gradient(func, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient; per-coordinate step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = func(xp), func(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteProbeError(f"objective non-finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def numeric_hessian(func, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Symmetrised second-order central-difference Hessian."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.array([step * max(1.0, abs(v)) for v in x])
    f0 = func(x)
    if not math.isfinite(f0):
        raise NonFiniteProbeError("objective non-finite at the expansion point")
    H = np.empty((n, n))

    def at(*shifts):
        probe = x.copy()
        for idx, mult in shifts:
            probe[idx] += mult * h[idx]
        val = func(probe)
        if not math.isfinite(val):
            raise NonFiniteProbeError("objective non-finite at a Hessian probe")
        return val

    for i in range(n):
        H[i, i] = (at((i, 1)) - 2.0 * f0 + at((i, -1))) / (h[i] * h[i])
        for j in range(i + 1, n):
            cross = (at((i, 1), (j, 1)) - at((i, 1), (j, -1))
                     - at((i, -1), (j, 1)) + at((i, -1), (j, -1)))
            H[i, j] = H[j, i] = cross / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


_ARMIJO_C1 = 1e-4
_MIN_STEP = 1e-12
_CURVATURE_GUARD = 1e-10


def _minimize(func, x0: np.ndarray, options: FitOptions):
    """BFGS with Armijo backtracking.

    Returns (x, f, converged, iterations, grad).  Convergence means the
    relative objective decrease fell below the tolerance or the gradient
    shrank to the finite-difference noise floor.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = func(x)
    if not math.isfinite(f):
        raise NonFiniteProbeError("objective non-finite at the initial point")
    g = numeric_gradient(func, x, options.gradient_step)
    h_inv = np.eye(x.size)
    converged = False
    iterations = 0

    def grad_small(grad, fval):
        return np.max(np.abs(grad)) <= 10.0 * options.gradient_step * max(1.0, abs(fval))

    for iterations in range(1, options.max_iterations + 1):
        if grad_small(g, f):
            converged = True
            iterations -= 1
            break
        direction = -h_inv @ g
        slope = float(direction @ g)
        if slope >= 0.0:  # curvature information went bad, restart steepest
            h_inv = np.eye(x.size)
            direction = -g
            slope = float(direction @ g)

        alpha = 1.0
        f_new = None
        while alpha >= _MIN_STEP:
            candidate = x + alpha * direction
            f_try = func(candidate)
            if math.isfinite(f_try) and f_try <= f + _ARMIJO_C1 * alpha * slope:
                f_new = f_try
                break
            alpha *= 0.5
        if f_new is None:
            # no acceptable step along this direction; declare success
            # only if the gradient is already at noise level
            converged = grad_small(g, f)
            break

        s = alpha * direction
        x_new = x + s
        g_new = numeric_gradient(func, x_new, options.gradient_step)
        y = g_new - g
        sy = float(s @ y)
        if sy > _CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            eye = np.eye(x.size)
            left = eye - rho * np.outer(s, y)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)

        rel_drop = (f - f_new) / max(1.0, abs(f))
        x, g, f = x_new, g_new, f_new
        if rel_drop < options.convergence_tol:
            converged = True
            break

    return x, f, converged, iterations, g


def fit(observed: PhotonImage, init: SqrtParams, c_background: float = 0.0,
        options: FitOptions | None = None) -> FitResult:
    """Maximum-likelihood estimate from one photon image.

    ``init`` seeds the optimiser; see :class:`SeedSource` for how the
    front ends build seeds.  Non-convergence is reported through the
    ``converged`` flag, not an exception, so callers can still inspect
    the best point found.
    """
    options = options or FitOptions()
    if init.sqrt_A == 0.0 or init.sqrt_B == 0.0:
        raise DegenerateSeedError(f"seed encodes a zero semi-axis: {init}")

    def objective(vec):
        return negative_log_likelihood(SqrtParams.from_array(vec), observed,
                                       c_background=c_background,
                                       sigma_floor=options.epsilon_sigma)

    starts = [init.as_array()]
    if options.multi_start > 1:
        rng = np.random.default_rng(np.random.SeedSequence(options.multi_start_seed))
        scale = options.multi_start_jitter * np.array([1.0, 1.0, 1.0, 1.0, 4.0, 1.0])
        for _ in range(options.multi_start - 1):
            starts.append(init.as_array() + rng.normal(0.0, scale))

    best = None
    for start in starts:
        x, f, converged, iterations, g = _minimize(objective, start, options)
        if best is None or f < best[1]:
            best = (x, f, converged, iterations, g)

    x, f, converged, iterations, g = best
    hessian = numeric_hessian(objective, x, options.hessian_step)
    params = SqrtParams.from_array(x)
    return FitResult(
        params=params,
        xi=params.to_geometric(),
        sigma_psf=params.sqrt_sigma**2 + options.epsilon_sigma,
        nll=f,
        converged=converged,
        iterations=iterations,
        grad_norm=float(np.max(np.abs(g))),
        hessian=hessian,
    )
