"""Uncertainty of the fitted ellipse, from curvature to confidence regions.

The observed-information route: the inverse of the numeric Hessian of
the negative log likelihood approximates the covariance of the sqrt
parameter vector.  Jacobians push that covariance to the geometric
parameters and on to the unit-normalised algebraic vector.  For a point
``x`` of the plane the squared normalised conic residual

    zbar(x) = (theta_hat . u(x))^2 / (u(x)^T Cov_theta u(x)),
    u(x) = (x^2, x y, y^2, x, y, 1)

is asymptotically chi-square with 5 degrees of freedom under the
hypothesis that the true locus passes through ``x``, which turns a
quantile into a confidence region for the whole ellipse locus.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainccinv

from .geometry import (
    GeometricEllipse,
    SqrtParams,
    geo_to_alg,
    geo_to_alg_jacobian,
    sqrt_params_jacobian,
    unit_normalize,
    unit_normalize_jacobian,
)

# Condition-number limit past which the Hessian inverse falls back to a
# pseudo-inverse.
COND_LIMIT = 1e12


class SingularHessianError(ValueError):
    """Hessian carries no usable curvature information."""


class ConditioningWarning(UserWarning):
    """Hessian inverted through a pseudo-inverse due to poor conditioning."""


def chi2_quantile(df: int, alpha: float) -> float:
    """Upper-tail chi-square quantile: P(X > q) = alpha for X ~ chi2(df)."""
    if not (isinstance(df, (int, np.integer)) and df >= 1):
        raise ValueError(f"degrees of freedom must be a positive integer, got {df}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return 2.0 * float(gammainccinv(df / 2.0, alpha))


def covariance_from_hessian(hessian: np.ndarray) -> np.ndarray:
    """Invert an observed-information matrix, defensively.

    Well-conditioned positive-definite input inverts exactly; indefinite
    or ill-conditioned input falls back to a pseudo-inverse over the
    positive eigenvalues with a :class:`ConditioningWarning`.  If no
    eigenvalue is meaningfully positive there is no information to
    invert and :class:`SingularHessianError` is raised.
    """
    H = np.asarray(hessian, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("Hessian contains non-finite entries")
    H = 0.5 * (H + H.T)
    eigvals, eigvecs = np.linalg.eigh(H)
    top = float(eigvals[-1])
    if top <= 0.0:
        raise SingularHessianError("no positive curvature directions")
    cutoff = top / COND_LIMIT
    if np.all(eigvals > cutoff):
        return eigvecs @ np.diag(1.0 / eigvals) @ eigvecs.T
    usable = eigvals > cutoff
    if not np.any(usable):
        raise SingularHessianError("Hessian is rank deficient beyond tolerance")
    warnings.warn(
        f"Hessian condition exceeds {COND_LIMIT:g}; using a pseudo-inverse over "
        f"{int(usable.sum())}/{eigvals.size} directions",
        ConditioningWarning,
        stacklevel=2,
    )
    inv = np.where(usable, 1.0 / np.where(usable, eigvals, 1.0), 0.0)
    return eigvecs @ np.diag(inv) @ eigvecs.T


def propagate_to_xi(cov_params: np.ndarray, params: SqrtParams) -> np.ndarray:
    """Covariance of the geometric parameters from the sqrt-vector covariance."""
    cov = np.asarray(cov_params, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError(f"expected 6x6 covariance, got {cov.shape}")
    J = sqrt_params_jacobian(params)
    out = J @ cov @ J.T
    return 0.5 * (out + out.T)


def propagate_to_theta(cov_xi: np.ndarray, xi: GeometricEllipse
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalised conic estimate and its covariance.

    Returns ``(theta_hat, cov_theta)``.  ``cov_theta`` is singular by
    construction (no variance along the scale direction ``theta_hat``).
    """
    cov = np.asarray(cov_xi, dtype=float)
    if cov.shape != (5, 5):
        raise ValueError(f"expected 5x5 covariance, got {cov.shape}")
    theta_raw = geo_to_alg(xi).as_array()
    theta_hat = unit_normalize(theta_raw)
    J = unit_normalize_jacobian(theta_raw) @ geo_to_alg_jacobian(xi)
    out = J @ cov @ J.T
    return theta_hat, 0.5 * (out + out.T)


@dataclass(frozen=True)
class CovarianceReport:
    """Covariances at the three parameterisation levels, one fit."""

    cov_params: np.ndarray  # 6x6, sqrt vector
    cov_xi: np.ndarray      # 5x5, geometric
    theta_hat: np.ndarray   # unit-norm algebraic estimate
    cov_theta: np.ndarray   # 6x6, algebraic (rank <= 5)
    pseudo_inverse: bool    # True when the Hessian needed the fallback


def covariance_report(fit_result) -> CovarianceReport:
    """Assemble all covariance levels from a finished fit."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConditioningWarning)
        cov_params = covariance_from_hessian(fit_result.hessian)
        degraded = any(issubclass(w.category, ConditioningWarning) for w in caught)
    for w in caught:
        if not issubclass(w.category, ConditioningWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    cov_xi = propagate_to_xi(cov_params, fit_result.params)
    theta_hat, cov_theta = propagate_to_theta(cov_xi, fit_result.xi)
    return CovarianceReport(cov_params, cov_xi, theta_hat, cov_theta, degraded)


# --- pointwise statistic and regions ---


def conic_design_vector(x, y) -> np.ndarray:
    """Monomial vector u(x, y); broadcasts over array inputs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def zbar(x: float, y: float, theta_hat: np.ndarray, cov_theta: np.ndarray) -> float:
    """Squared normalised conic residual at one point.

    Degenerate direction (zero predicted variance) maps to ``+inf``:
    such a point can never enter a confidence region.
    """
    u = conic_design_vector(float(x), float(y))
    num = float(np.dot(theta_hat, u)) ** 2
    den = float(u @ np.asarray(cov_theta) @ u)
    if den <= 0.0:
        return math.inf
    return num / den


def zbar_grid(theta_hat: np.ndarray, cov_theta: np.ndarray,
              resolution: int = 512) -> np.ndarray:
    """zbar sampled on a resolution^2 raster of the unit box.

    Image convention: row 0 holds y = 1, column 0 holds x = 0.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be at least 2, got {resolution}")
    coords = np.arange(resolution, dtype=float) / (resolution - 1)
    X, Y = np.meshgrid(coords, coords[::-1])
    U = conic_design_vector(X, Y)  # (6, res, res)
    num = np.einsum("i,ijk->jk", np.asarray(theta_hat, dtype=float), U) ** 2
    cov = np.asarray(cov_theta, dtype=float)
    den = np.einsum("ijk,il,ljk->jk", U, cov, U)
    out = np.full_like(num, np.inf)
    good = den > 0.0
    out[good] = num[good] / den[good]
    return out


@dataclass(frozen=True)
class ConfidenceRegionRaster:
    """Boolean confidence-region mask over the unit box.

    ``mask[i, j]`` covers the point ``(j / (res-1), 1 - i / (res-1))``,
    matching the image row convention (top row is y = 1).
    """

    resolution: int
    alpha: float
    threshold: float
    mask: np.ndarray

    def coverage_fraction(self) -> float:
        return float(self.mask.mean())


def confidence_region(theta_hat: np.ndarray, cov_theta: np.ndarray,
                      alpha: float = 0.05, resolution: int = 512
                      ) -> ConfidenceRegionRaster:
    """Region of plane points whose zbar stays under the chi-square quantile."""
    threshold = chi2_quantile(5, alpha)
    values = zbar_grid(theta_hat, cov_theta, resolution)
    return ConfidenceRegionRaster(resolution, alpha, threshold, values <= threshold)
