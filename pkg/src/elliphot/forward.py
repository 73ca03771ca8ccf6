"""Forward model: from ellipse parameters to a quantised photon image.

The image lives on the unit box.  Pixel ``(m, n)`` (1-based row/column,
row 1 at the top) has centre ``x_n = (n-1)/(N-1)``, ``y_m = (M-m)/(M-1)``,
so centres span the box and each pixel is ``1/(N-1)`` wide and
``1/(M-1)`` tall.  Formation happens in four stages:

1. exact area sampling of the ideal ellipse indicator over each pixel;
2. discretised Gaussian blur with per-pixel renormalisation plus a
   constant background floor;
3. Poisson photon noise at rate ``C`` times the noise-free image;
4. mid-rise quantisation of the counts to ``G = C/(2b)`` grey levels.

Every stage is deterministic given the seed: pixel ``(m, n)`` draws from
its own counter-based RNG stream, so the sampled image does not depend
on pixel evaluation order or on how many random values other pixels
consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .geometry import GeometricEllipse
from .intersect import ellipse_rect_area_batch


@dataclass(frozen=True)
class PixelGrid:
    """Image dimensions; rows x cols, both at least 2."""

    rows: int
    cols: int

    def __post_init__(self):
        if not (isinstance(self.rows, int) and isinstance(self.cols, int)):
            raise ValueError("grid dimensions must be integers")
        if self.rows < 2 or self.cols < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")

    @property
    def pixel_width(self) -> float:
        return 1.0 / (self.cols - 1)

    @property
    def pixel_height(self) -> float:
        return 1.0 / (self.rows - 1)

    @property
    def pixel_area(self) -> float:
        return self.pixel_width * self.pixel_height

    def x_centers(self) -> np.ndarray:
        """Column centre abscissae, left to right: (n-1)/(N-1)."""
        return np.arange(self.cols, dtype=float) / (self.cols - 1)

    def y_centers(self) -> np.ndarray:
        """Row centre ordinates, top to bottom: (M-m)/(M-1), so index 0 is y=1."""
        return np.arange(self.rows - 1, -1, -1, dtype=float) / (self.rows - 1)


@dataclass(frozen=True)
class RealImage:
    """Real-valued image on a pixel grid, values finite."""

    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"values shape {v.shape} != grid {self.grid.rows}x{self.grid.cols}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PhotonImage:
    """Integer count image plus the acquisition scale ``C`` and half-width ``b``."""

    grid: PixelGrid
    counts: np.ndarray
    C: int
    b: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if not np.issubdtype(counts.dtype, np.integer):
            raise ValueError(f"counts must be integers, got dtype {counts.dtype}")
        if counts.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"counts shape {counts.shape} != grid {self.grid.rows}x{self.grid.cols}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        _validate_scale(self.C, self.b)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    def to_real(self) -> "RealImage":
        """Counts rescaled by the photon budget, for intensity-based fits."""
        return RealImage(self.grid, self.counts / self.C)


def _validate_scale(C: int, b: int) -> None:
    if not (isinstance(C, (int, np.integer)) and isinstance(b, (int, np.integer))):
        raise ValueError("C and b must be integers")
    if C < 1:
        raise ValueError(f"C must be positive, got {C}")
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    if b > 0:
        if C & (C - 1) or b & (b - 1):
            raise ValueError(f"quantised images need power-of-two C and b, got C={C}, b={b}")
        if 2 * b > C:
            raise ValueError(f"need at least one grey level: 2b <= C, got C={C}, b={b}")


@dataclass(frozen=True)
class ForwardConfig:
    """Everything needed to synthesise one photon image."""

    xi: GeometricEllipse
    grid: PixelGrid
    sigma_psf: float
    c_background: float
    C: int
    b: int
    seed: int

    def __post_init__(self):
        if not (self.sigma_psf > 0.0 and math.isfinite(self.sigma_psf)):
            raise ValueError(f"sigma_psf must be positive, got {self.sigma_psf}")
        if not (0.0 <= self.c_background < 1.0):
            raise ValueError(f"c_background must be in [0, 1), got {self.c_background}")
        _validate_scale(self.C, self.b)
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an integer in [0, 2^64), got {self.seed}")


# --- stage 1: exact pixel-area sampling ---


def averaged_ideal_image(xi: GeometricEllipse, grid: PixelGrid) -> RealImage:
    """Pixel-averaged ellipse indicator.

    Each pixel centre is rotated into the ellipse frame and an
    axis-aligned rectangle of the pixel's dimensions is intersected with
    the centred ellipse there; the value is the covered area fraction in
    [0, 1].  For an unrotated ellipse this equals the exact pixel
    integral; rotation moves the rectangle instead of rotating it, which
    is the model's (exactly computed) approximation.
    """
    X, Y = np.meshgrid(grid.x_centers(), grid.y_centers())
    ct, st = math.cos(xi.tau), math.sin(xi.tau)
    dx, dy = X - xi.H, Y - xi.K
    xr = dx * ct + dy * st
    yr = -dx * st + dy * ct
    w, h = grid.pixel_width, grid.pixel_height
    frac = ellipse_rect_area_batch(xr, yr, w, h, xi.A, xi.B) / (w * h)
    return RealImage(grid, np.clip(frac, 0.0, 1.0))


# --- stage 2: discretised PSF ---


def apply_psf(image: RealImage, sigma_psf: float, c_background: float) -> RealImage:
    """Blur with a pixel-sampled Gaussian and add a background floor.

    The kernel is renormalised per output pixel (weights over the grid
    sum to one), making the result a convex combination of inputs; with
    the floor, outputs lie in ``[c_background, 1]`` for inputs in [0, 1].
    The Gaussian is separable, so the double sum factors into a row and
    a column pass.
    """
    if not (sigma_psf > 0.0 and math.isfinite(sigma_psf)):
        raise ValueError(f"sigma_psf must be positive, got {sigma_psf}")
    if not (0.0 <= c_background < 1.0):
        raise ValueError(f"c_background must be in [0, 1), got {c_background}")
    x = image.grid.x_centers()
    y = image.grid.y_centers()
    inv = 1.0 / (2.0 * sigma_psf * sigma_psf)
    wx = np.exp(-((x[:, None] - x[None, :]) ** 2) * inv)  # (N, N) symmetric
    wy = np.exp(-((y[:, None] - y[None, :]) ** 2) * inv)  # (M, M) symmetric
    numer = wy @ image.values @ wx
    denom = np.outer(wy.sum(axis=1), wx.sum(axis=0))
    blurred = numer / denom
    out = c_background + (1.0 - c_background) * blurred
    return RealImage(image.grid, out)


def noise_free_image(xi: GeometricEllipse, grid: PixelGrid, sigma_psf: float,
                     c_background: float) -> RealImage:
    """Stages 1 and 2 composed: the Poisson rate image before scaling by C."""
    return apply_psf(averaged_ideal_image(xi, grid), sigma_psf, c_background)


def snr(prf: RealImage, C: int) -> float:
    """Peak signal-to-noise ratio sqrt(C * max value) of the rate image."""
    if C < 1:
        raise ValueError(f"C must be positive, got {C}")
    return math.sqrt(C * float(np.max(prf.values)))


# --- stage 3: photon noise ---


def pixel_stream(seed: int, pixel_index: int) -> Generator:
    """Independent RNG stream for one pixel.

    Streams are laid out 2^128 counter blocks apart in a single Philox
    cycle, so draws in one pixel can never run into another pixel's
    block range and results are independent of evaluation order.
    """
    return Generator(Philox(key=seed, counter=[0, 0, pixel_index, 0]))


def sample_poisson(lam: float, rng: Generator) -> int:
    """One Poisson draw via the product-of-uniforms method, in log space.

    Accumulates ``log U_i`` until the running sum drops below ``-lam``;
    the count of full steps before the crossing is the sample.  Runtime
    is O(lam) which is acceptable at photon-count scales.
    """
    if not (lam >= 0.0 and math.isfinite(lam)):
        raise ValueError(f"rate must be finite and non-negative, got {lam}")
    if lam == 0.0:
        return 0
    threshold = -lam
    k = 0
    acc = 0.0
    while True:
        k += 1
        u = rng.random()
        if u <= 0.0:
            return k - 1  # log(0+) crosses any threshold
        acc += math.log(u)
        if acc < threshold:
            return k - 1


def _sample_poisson_blocked(lam: float, rng: Generator) -> int:
    # Same draw as sample_poisson on the same stream (the crossing index
    # does not depend on how many uniforms are consumed past it), but
    # pulls uniforms in blocks for speed.
    if lam == 0.0:
        return 0
    threshold = -lam
    block = int(lam + 6.0 * math.sqrt(lam)) + 16
    consumed = 0
    carry = 0.0
    while True:
        with np.errstate(divide="ignore"):
            logs = np.log(rng.random(block))
        running = carry + np.cumsum(logs)
        crossed = running < threshold
        if crossed.any():
            return consumed + int(np.argmax(crossed))
        carry = float(running[-1])
        consumed += block


# --- stage 4: quantisation ---


def quantise(count: int, C: int, b: int) -> int:
    """Mid-rise quantiser: bin counts into ``G = C/(2b)`` levels of width ``2b``.

    Returns the bin midpoint ``2 b q - b``; the top bin absorbs all
    counts from ``2 b (G - 1)`` up (saturation).  ``b = 0`` disables
    quantisation and returns the count unchanged.
    """
    _validate_scale(C, b)
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if b == 0:
        return int(count)
    G = C // (2 * b)
    q = min(count // (2 * b) + 1, G)
    return 2 * b * q - b


def quantise_array(counts: np.ndarray, C: int, b: int) -> np.ndarray:
    """Vectorised :func:`quantise` over an integer array."""
    _validate_scale(C, b)
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    if b == 0:
        return counts.astype(np.int64)
    G = C // (2 * b)
    q = np.minimum(counts // (2 * b) + 1, G)
    return (2 * b * q - b).astype(np.int64)


# --- full pipeline ---


def synthesize(config: ForwardConfig) -> PhotonImage:
    """Draw one photon image from the forward model.

    Deterministic in ``config.seed``; each pixel uses its own RNG stream
    keyed by ``(seed, row-major pixel index)``.
    """
    prf = noise_free_image(config.xi, config.grid, config.sigma_psf, config.c_background)
    lam = config.C * prf.values
    raw = np.empty(lam.size, dtype=np.int64)
    flat = lam.ravel()
    for idx in range(flat.size):
        raw[idx] = _sample_poisson_blocked(float(flat[idx]), pixel_stream(config.seed, idx))
    counts = quantise_array(raw.reshape(lam.shape), config.C, config.b)
    return PhotonImage(config.grid, counts, config.C, config.b)
