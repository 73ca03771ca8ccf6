"""Count distribution of a quantised Poisson observation and the image NLL.

A photon count ``X ~ Poisson(lam)`` pushed through the mid-rise
quantiser is statistically modelled as ``N = X + U`` with ``U`` uniform
on the integers ``{-b, ..., b}``, independent of ``X``.  The resulting
pmf is an average of ``2b + 1`` neighbouring Poisson probabilities:

    P(N = n) = (2b + 1)^-1 * sum_{k = max(0, n-b)}^{n+b} e^-lam lam^k / k!

with support ``n >= -b`` (``b = 0`` recovers the plain Poisson).  Two
independent evaluation routes are provided: a direct truncated sum and
a regularised incomplete-gamma form; the log route used by the image
likelihood works entirely in log space through a shifted log-sum-exp,
so it stays finite for counts hundreds of standard deviations out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln

from .forward import PhotonImage, _validate_scale
from .geometry import SqrtParams
from .intersect import ellipse_rect_area_batch

# Rate floor inside the likelihood: keeps log(lam) finite where the
# model predicts an exactly dark pixel.
RATE_FLOOR = 1e-10

# Default floor added to the squared blur parameter so the PSF stays a
# proper Gaussian throughout optimisation.
DEFAULT_SIGMA_FLOOR = 1e-4


class EmptyInputError(ValueError):
    """An aggregate over zero elements was requested."""


class NonFiniteParametersError(ValueError):
    """Parameter vector contains NaN or infinity."""


def log_sum_exp(z) -> float:
    """log(sum(exp(z))) with the usual max shift; exact for one element.

    All ``-inf`` inputs give ``-inf``; any ``+inf`` gives ``+inf``.
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise EmptyInputError("log_sum_exp of an empty collection")
    a = float(np.max(z))
    if math.isinf(a):  # all -inf, or a genuine +inf dominates
        return a
    return a + math.log(float(np.sum(np.exp(z - a))))


@dataclass(frozen=True)
class QuantisedPoissonModel:
    """Distribution of ``X + U``, ``X ~ Poisson(lam)``, ``U ~ U{-b..b}``."""

    lam: float
    b: int

    def __post_init__(self):
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"rate must be finite and non-negative, got {self.lam}")
        if not (isinstance(self.b, (int, np.integer)) and self.b >= 0):
            raise ValueError(f"half-width must be a non-negative integer, got {self.b}")


def _check_integer(n) -> int:
    if isinstance(n, (bool, np.bool_)) or not isinstance(n, (int, np.integer)):
        raise ValueError(f"counts are integers, got {n!r}")
    return int(n)


def pmf(model: QuantisedPoissonModel, n: int) -> float:
    """Probability of observing ``n``, via regularised incomplete gammas.

    ``gammaincc(k + 1, lam)`` is the Poisson CDF at ``k``; the window sum
    is a CDF difference.  In the right tail both upper functions are
    close to 1 and their difference cancels, so the complementary lower
    form is used there instead; the switch is exact in real arithmetic.
    """
    n = _check_integer(n)
    lam, b = model.lam, model.b
    width = 2 * b + 1
    if n < -b:
        return 0.0
    if b == 0:
        # single-term window: the CDF difference cancels badly in the
        # deep left tail, so evaluate the Poisson term directly
        if lam == 0.0:
            return 1.0 if n == 0 else 0.0
        return math.exp(-lam + n * math.log(lam) - math.lgamma(n + 1))
    if n <= b:
        return float(gammaincc(n + b + 1, lam)) / width
    if gammaincc(n - b, lam) > 0.5:
        return max(0.0, float(gammainc(n - b, lam)) - float(gammainc(n + b + 1, lam))) / width
    return max(0.0, float(gammaincc(n + b + 1, lam)) - float(gammaincc(n - b, lam))) / width


def pmf_direct(model: QuantisedPoissonModel, n: int) -> float:
    """Probability of observing ``n`` by direct truncated summation.

    Independent route kept for cross-validation against :func:`pmf`;
    terms are evaluated in log space to survive large rates.
    """
    n = _check_integer(n)
    lam, b = model.lam, model.b
    if n < -b:
        return 0.0
    if lam == 0.0:
        return (1.0 / (2 * b + 1)) if n <= b else 0.0
    lo = max(0, n - b)
    log_lam = math.log(lam)
    total = 0.0
    for k in range(lo, n + b + 1):
        total += math.exp(-lam + k * log_lam - math.lgamma(k + 1))
    return total / (2 * b + 1)


def log_pmf(model: QuantisedPoissonModel, n: int) -> float:
    """log of :func:`pmf` evaluated stably through log-sum-exp.

    Returns ``-inf`` outside the support.  This is the route the image
    likelihood uses; it needs ``lam > 0``.
    """
    n = _check_integer(n)
    lam, b = model.lam, model.b
    if n < -b:
        return -math.inf
    if lam == 0.0:
        return -math.log(2 * b + 1) if n <= b else -math.inf
    lo = max(0, n - b)
    log_lam = math.log(lam)
    terms = [-lam + k * log_lam - math.lgamma(k + 1) for k in range(lo, n + b + 1)]
    return -math.log(2 * b + 1) + log_sum_exp(terms)


# --- image likelihood ---


def _raw_rate_image(params: SqrtParams, grid, c_background: float,
                    sigma_floor: float) -> np.ndarray:
    # Forward model evaluated at an unconstrained parameter vector: the
    # axes may come out in either order or collapse to zero; no
    # canonicalisation happens here because the objective must stay
    # smooth wherever the optimiser wanders.
    semi_x = params.sqrt_A * params.sqrt_A
    semi_y = params.sqrt_B * params.sqrt_B
    sigma = params.sqrt_sigma * params.sqrt_sigma + sigma_floor

    if semi_x > 0.0 and semi_y > 0.0:
        X, Y = np.meshgrid(grid.x_centers(), grid.y_centers())
        ct, st = math.cos(params.tau), math.sin(params.tau)
        dx, dy = X - params.H, Y - params.K
        xr = dx * ct + dy * st
        yr = -dx * st + dy * ct
        w, h = grid.pixel_width, grid.pixel_height
        ideal = ellipse_rect_area_batch(xr, yr, w, h, semi_x, semi_y) / (w * h)
        ideal = np.clip(ideal, 0.0, 1.0)
    else:
        ideal = np.zeros((grid.rows, grid.cols))

    x = grid.x_centers()
    y = grid.y_centers()
    inv = 1.0 / (2.0 * sigma * sigma)
    wx = np.exp(-((x[:, None] - x[None, :]) ** 2) * inv)
    wy = np.exp(-((y[:, None] - y[None, :]) ** 2) * inv)
    blurred = (wy @ ideal @ wx) / np.outer(wy.sum(axis=1), wx.sum(axis=0))
    return c_background + (1.0 - c_background) * blurred


def negative_log_likelihood(params: SqrtParams, observed: PhotonImage,
                            c_background: float = 0.0,
                            C: int | None = None, b: int | None = None,
                            sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> float:
    """Negative log likelihood of the observed counts under the model.

    ``C`` and ``b`` default to the values carried by the image; passing
    them explicitly allows evaluating under a different assumed scale.
    Pixel rates are floored at ``RATE_FLOOR`` so dark pixels cannot
    produce infinities.
    """
    vec = params.as_array()
    if not np.all(np.isfinite(vec)):
        raise NonFiniteParametersError(f"parameter vector not finite: {vec}")
    if not (0.0 <= c_background < 1.0):
        raise ValueError(f"c_background must be in [0, 1), got {c_background}")
    C = observed.C if C is None else C
    b = observed.b if b is None else b
    _validate_scale(C, b)

    prf = _raw_rate_image(params, observed.grid, c_background, sigma_floor)
    lam = np.maximum(C * prf, RATE_FLOOR).ravel()
    counts = observed.counts.ravel()

    # Window of Poisson terms per pixel: k = count + w, w in [-b, b],
    # keeping k >= 0.  gammaln on integers comes from one small lookup.
    w = np.arange(-b, b + 1)[:, None]
    k = counts[None, :] + w
    valid = k >= 0
    k_safe = np.where(valid, k, 0)
    lgamma_table = gammaln(np.arange(int(counts.max()) + b + 2, dtype=float))
    log_lam = np.log(lam)
    z = -lam[None, :] + k_safe * log_lam[None, :] - lgamma_table[k_safe + 1]
    z = np.where(valid, z, -np.inf)

    shift = z.max(axis=0)
    lse = shift + np.log(np.sum(np.exp(z - shift[None, :]), axis=0))
    total = float(np.sum(lse)) - counts.size * math.log(2 * b + 1)
    return -total
