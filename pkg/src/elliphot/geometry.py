"""Ellipse parameterisations and conversions.

Two equivalent descriptions of an ellipse are used throughout:

* geometric: semi-axis lengths ``A >= B > 0``, centre ``(H, K)`` and
  counter-clockwise orientation ``tau`` of the major axis, ``tau`` in
  ``[0, pi)``;
* algebraic: coefficients ``(a, b, c, d, e, f)`` of the implicit conic
  ``a x^2 + b x y + c y^2 + d x + e y + f = 0`` with ``b^2 - 4ac < 0``.

The algebraic vector is scale free; estimators that work on it normalise
to unit Euclidean length.  The maximum-likelihood machinery optimises a
third, unconstrained vector (:class:`SqrtParams`) holding square roots
of the axis lengths and of the blur width, which keeps those quantities
positive without box constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateConicError(ValueError):
    """Algebraic coefficients do not describe a real ellipse."""


class ZeroVectorError(ValueError):
    """Vector has zero norm where a direction is required."""


# Relative threshold below which (a - c, b) is treated as exactly
# circular and the orientation is reported as 0.
_CIRCLE_TOL = 1e-12


@dataclass(frozen=True)
class GeometricEllipse:
    """Ellipse as semi-axes, centre and orientation, all in unit-box units.

    Parameters
    ----------
    A, B : float
        Semi-major and semi-minor axis lengths, ``A >= B > 0``.
    H, K : float
        Centre coordinates.
    tau : float
        Orientation of the major axis, radians in ``[0, pi)``.
    """

    A: float
    B: float
    H: float
    K: float
    tau: float

    def __post_init__(self):
        vals = (self.A, self.B, self.H, self.K, self.tau)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite ellipse parameters: {vals}")
        if not (self.A >= self.B > 0.0):
            raise ValueError(f"semi-axes must satisfy A >= B > 0, got A={self.A}, B={self.B}")
        if not (0.0 <= self.tau < math.pi):
            raise ValueError(f"tau must lie in [0, pi), got {self.tau}")

    def as_array(self) -> np.ndarray:
        return np.array([self.A, self.B, self.H, self.K, self.tau], dtype=float)


@dataclass(frozen=True)
class AlgebraicEllipse:
    """Implicit-conic coefficients with the ellipse discriminant condition."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite conic coefficients: {vals}")
        if self.b * self.b - 4.0 * self.a * self.c >= 0.0:
            raise DegenerateConicError(
                f"b^2 - 4ac = {self.b**2 - 4*self.a*self.c} >= 0: not an ellipse"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f], dtype=float)


@dataclass(frozen=True)
class SqrtParams:
    """Unconstrained optimisation vector.

    Fields hold square roots of the semi-axes and of the point-spread
    width, plus the centre and orientation unchanged:
    ``(sqrt_A, sqrt_B, H, K, tau, sqrt_sigma)``.  Squaring recovers
    ``A``, ``B`` and ``sigma_psf``; a small floor added to the squared
    blur width (see :func:`elliphot.fitting.fit`) keeps the PSF proper.
    ``tau`` is unconstrained here and only canonicalised on output.
    """

    sqrt_A: float
    sqrt_B: float
    H: float
    K: float
    tau: float
    sqrt_sigma: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.sqrt_A, self.sqrt_B, self.H, self.K, self.tau, self.sqrt_sigma],
            dtype=float,
        )

    @staticmethod
    def from_array(v) -> "SqrtParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (6,):
            raise ValueError(f"expected 6 entries, got shape {v.shape}")
        return SqrtParams(*(float(x) for x in v))

    @staticmethod
    def from_geometric(xi: GeometricEllipse, sigma_psf: float) -> "SqrtParams":
        if sigma_psf <= 0:
            raise ValueError(f"sigma_psf must be positive, got {sigma_psf}")
        return SqrtParams(
            math.sqrt(xi.A), math.sqrt(xi.B), xi.H, xi.K, xi.tau, math.sqrt(sigma_psf)
        )

    def to_geometric(self) -> GeometricEllipse:
        return canonical_geometric(
            self.sqrt_A**2, self.sqrt_B**2, self.H, self.K, self.tau
        )


def canonical_geometric(A: float, B: float, H: float, K: float, tau: float) -> GeometricEllipse:
    """Build a :class:`GeometricEllipse` from raw values.

    Restores the ``A >= B`` ordering (swapping axes rotates the major
    axis by ``pi/2``) and reduces ``tau`` modulo ``pi``.
    """
    if A < B:
        A, B = B, A
        tau += 0.5 * math.pi
    tau = tau % math.pi
    if tau == math.pi:  # fold the rounding edge case back to 0
        tau = 0.0
    return GeometricEllipse(A, B, H, K, tau)


# --- geometric -> algebraic ---


def geo_to_alg(xi: GeometricEllipse) -> AlgebraicEllipse:
    """Convert geometric parameters to implicit-conic coefficients.

    The returned vector is not normalised; its scale is fixed by the
    convention that the quadratic form evaluates to 1 on the ellipse
    before the constant is moved across (so ``f`` absorbs the centre
    terms minus one).
    """
    A, B, H, K, tau = xi.A, xi.B, xi.H, xi.K, xi.tau
    ct, st = math.cos(tau), math.sin(tau)
    iA2, iB2 = 1.0 / (A * A), 1.0 / (B * B)

    u = H * ct + K * st  # centre in the frame rotated by -tau
    w = H * st - K * ct

    a = ct * ct * iA2 + st * st * iB2
    b = (iA2 - iB2) * math.sin(2.0 * tau)
    c = ct * ct * iB2 + st * st * iA2
    d = -2.0 * (u * ct * iA2 + w * st * iB2)
    e = -2.0 * (u * st * iA2 - w * ct * iB2)
    f = u * u * iA2 + w * w * iB2 - 1.0
    return AlgebraicEllipse(a, b, c, d, e, f)


# --- algebraic -> geometric ---


def _orientation_from_coeffs(b: float, amc: float, major_is_plus: bool) -> float:
    """Orientation angle from conic coefficients.

    ``amc`` is ``a - c``; ``major_is_plus`` states whether the semi-axis
    derived from the smaller eigenvalue (the ``+`` branch) is the longer
    one.  For coefficients scaled so the quadratic form is positive
    definite, ``(b, a - c) = -s (sin 2 tau, cos 2 tau)`` with
    ``s = 1/B^2 - 1/A^2 > 0``, so ``tau = atan2(-b, c - a) / 2``; the
    opposite eigenvalue ordering selects the perpendicular eigenvector.
    The sign-case table over (b, a - c) and the axis order collapses to
    this single branch-free expression, boundary cases included.
    """
    tau = 0.5 * math.atan2(-b, -amc)
    if not major_is_plus:
        tau += 0.5 * math.pi
    return tau


def alg_to_geo(theta) -> GeometricEllipse:
    """Convert implicit-conic coefficients to geometric parameters.

    Accepts an :class:`AlgebraicEllipse` or any six-component coefficient
    sequence.  Invariant to rescaling of the coefficient vector (any
    non-zero scale).  Raises :class:`DegenerateConicError` when the
    coefficients do not describe a real, non-degenerate ellipse.
    """
    if not isinstance(theta, AlgebraicEllipse):
        theta = AlgebraicEllipse(*(float(v) for v in np.asarray(theta, dtype=float)))
    a, b, c, d, e, f = theta.a, theta.b, theta.c, theta.d, theta.e, theta.f

    disc = b * b - 4.0 * a * c
    if disc >= 0.0:
        raise DegenerateConicError(f"b^2 - 4ac = {disc} >= 0")

    root = math.hypot(b, a - c)
    lam_plus = 0.5 * (a + c - root)
    lam_minus = 0.5 * (a + c + root)

    psi = b * d * e - a * e * e - b * b * f + c * (4.0 * a * f - d * d)

    denom_p = lam_plus * disc
    denom_m = lam_minus * disc
    if denom_p == 0.0 or denom_m == 0.0 or psi / denom_p <= 0.0 or psi / denom_m <= 0.0:
        raise DegenerateConicError("conic has no real elliptical locus")

    v_plus = math.sqrt(psi / denom_p)
    v_minus = math.sqrt(psi / denom_m)

    H = (2.0 * c * d - b * e) / disc
    K = (2.0 * a * e - b * d) / disc

    A = max(v_plus, v_minus)
    B = min(v_plus, v_minus)

    # Near-circular coefficients leave the orientation unidentifiable;
    # report tau = 0 by convention.
    if (a - c) ** 2 + b * b < _CIRCLE_TOL * (a + c) ** 2:
        return GeometricEllipse(A, B, H, K, 0.0)

    tau = _orientation_from_coeffs(b, a - c, v_plus >= v_minus)
    return canonical_geometric(A, B, H, K, tau)


# --- unit normalisation ---


def unit_normalize(theta: np.ndarray) -> np.ndarray:
    """Scale a coefficient vector to unit Euclidean norm."""
    theta = np.asarray(theta, dtype=float)
    nrm = np.linalg.norm(theta)
    if nrm == 0.0:
        raise ZeroVectorError("cannot normalise a zero coefficient vector")
    return theta / nrm


# --- Jacobians ---


def sqrt_params_jacobian(eta: SqrtParams) -> np.ndarray:
    """Jacobian of geometric parameters w.r.t. the sqrt-parameter vector.

    Maps ``(sqrt_A, sqrt_B, H, K, tau, sqrt_sigma)`` to
    ``(A, B, H, K, tau)``; shape (5, 6).  The blur column is zero since
    the geometric parameters do not depend on it.
    """
    J = np.zeros((5, 6))
    J[0, 0] = 2.0 * eta.sqrt_A
    J[1, 1] = 2.0 * eta.sqrt_B
    J[2, 2] = 1.0
    J[3, 3] = 1.0
    J[4, 4] = 1.0
    return J


def geo_to_alg_jacobian(xi: GeometricEllipse) -> np.ndarray:
    """Jacobian of :func:`geo_to_alg` w.r.t. ``(A, B, H, K, tau)``; shape (6, 5)."""
    A, B, H, K, tau = xi.A, xi.B, xi.H, xi.K, xi.tau
    ct, st = math.cos(tau), math.sin(tau)
    c2t, s2t = math.cos(2.0 * tau), math.sin(2.0 * tau)
    iA2, iB2 = 1.0 / (A * A), 1.0 / (B * B)
    iA3, iB3 = iA2 / A, iB2 / B

    u = H * ct + K * st  # centre coordinates in the rotated frame
    w = H * st - K * ct  # (u, -w) = R(-tau) (H, K)

    J = np.empty((6, 5))
    # row a
    J[0] = [-2.0 * ct * ct * iA3, -2.0 * st * st * iB3, 0.0, 0.0, (iB2 - iA2) * s2t]
    # row b
    J[1] = [-2.0 * s2t * iA3, 2.0 * s2t * iB3, 0.0, 0.0, 2.0 * (iA2 - iB2) * c2t]
    # row c
    J[2] = [-2.0 * st * st * iA3, -2.0 * ct * ct * iB3, 0.0, 0.0, (iA2 - iB2) * s2t]
    # row d
    J[3] = [
        4.0 * u * ct * iA3,
        4.0 * w * st * iB3,
        -2.0 * (ct * ct * iA2 + st * st * iB2),
        (iB2 - iA2) * s2t,
        2.0 * (iB2 - iA2) * (K * c2t - H * s2t),
    ]
    # row e
    J[4] = [
        4.0 * u * st * iA3,
        -4.0 * w * ct * iB3,
        (iB2 - iA2) * s2t,
        -2.0 * (st * st * iA2 + ct * ct * iB2),
        2.0 * (iB2 - iA2) * (H * c2t + K * s2t),
    ]
    # row f
    J[5] = [
        -2.0 * u * u * iA3,
        -2.0 * w * w * iB3,
        2.0 * (u * ct * iA2 + w * st * iB2),
        2.0 * (u * st * iA2 - w * ct * iB2),
        2.0 * (iB2 - iA2) * u * w,
    ]
    return J


def unit_normalize_jacobian(theta: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`unit_normalize` at ``theta``; shape (6, 6)."""
    theta = np.asarray(theta, dtype=float)
    nrm = np.linalg.norm(theta)
    if nrm == 0.0:
        raise ZeroVectorError("cannot normalise a zero coefficient vector")
    outer = np.outer(theta, theta) / (nrm * nrm)
    return (np.eye(theta.size) - outer) / nrm
