"""Direct ellipse fits on image gradients, used as baselines and seeds.

Two non-iterative estimators of the algebraic conic vector:

* a point fit on thinned edge locations (constrained least squares with
  the ellipse-specific quadratic constraint built into a reduced
  eigenproblem), and
* a gradient fit that treats every strong-gradient pixel as a tangent
  line of the dual conic and recovers the point conic by adjugation.

Both consume a real-valued image on the unit-box grid and return a
six-component algebraic vector; they know nothing about photon noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forward import PixelGrid, RealImage
from .geometry import ZeroVectorError, unit_normalize


class TooFewEdgePointsError(ValueError):
    """Edge extraction produced fewer points than a conic fit needs."""


class DegenerateDataError(ValueError):
    """Input geometry does not determine a conic (rank collapse)."""


class NotAnEllipseError(ValueError):
    """The fitted conic exists but is not an ellipse."""


_MIN_POINTS = 6

_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]]) / 8.0
_SOBEL_Y = np.array([[1.0, 2.0, 1.0],
                     [0.0, 0.0, 0.0],
                     [-1.0, -2.0, -1.0]]) / 8.0


@dataclass(frozen=True)
class EdgePointSet:
    """Edge locations in unit-box coordinates with gradient data."""

    x: np.ndarray
    y: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("x", "y", "gx", "gy", "magnitude"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"field {name} has shape {arr.shape}, expected ({n},)")

    def __len__(self) -> int:
        return self.x.shape[0]


def _correlate3(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 correlation on interior pixels; border stays zero."""
    out = np.zeros_like(values)
    acc = np.zeros((values.shape[0] - 2, values.shape[1] - 2))
    for di in range(3):
        for dj in range(3):
            w = kernel[di, dj]
            if w != 0.0:
                acc += w * values[di:di + values.shape[0] - 2,
                                  dj:dj + values.shape[1] - 2]
    out[1:-1, 1:-1] = acc
    return out


def image_gradients(image: RealImage) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel intensity gradient in unit-box coordinates.

    Column steps advance x by 1/(N-1) and row steps move y down by
    1/(M-1), so the pixel-difference responses are rescaled (and the
    row axis flipped) to express d/dx and d/dy of the image intensity.
    """
    grid = image.grid
    gx = _correlate3(image.values, _SOBEL_X) * (grid.cols - 1)
    gy = _correlate3(image.values, _SOBEL_Y) * (grid.rows - 1)
    return gx, gy


def _threshold(image: RealImage, magnitude: np.ndarray, fraction: float) -> float:
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"threshold fraction must lie in (0, 1), got {fraction}")
    # kernel accumulation leaves O(eps * intensity / pixel) residue on
    # featureless images; a peak at that level means there are no edges
    floor = (64.0 * np.finfo(float).eps
             * (1.0 + float(np.abs(image.values).max()))
             * max(image.grid.rows - 1, image.grid.cols - 1))
    peak = float(magnitude.max())
    if peak <= floor:
        return math.inf
    return fraction * peak


def extract_edges(image: RealImage, threshold_fraction: float = 0.3) -> EdgePointSet:
    """Thinned edge points: gradient maxima along the gradient direction.

    A pixel survives when its gradient magnitude beats the fractional
    threshold and both neighbours along the (four-way quantised)
    gradient direction.  Border pixels never fire.
    """
    gx, gy = image_gradients(image)
    mag = np.hypot(gx, gy)
    cut = _threshold(image, mag, threshold_fraction)

    M, N = mag.shape
    keep = np.zeros((M, N), dtype=bool)
    # quantise the gradient direction to horizontal / vertical / the two
    # diagonals and compare against the two neighbours on that line
    angle = np.arctan2(gy, gx)
    sector = np.mod(np.rint(angle / (np.pi / 4.0)), 4).astype(int)
    # sector 0: x step; 1: row -1 col +1 (gradient up-right); 2: y step;
    # 3: row -1 col -1.  Row index decreases when y grows.
    offsets = {0: (0, 1), 1: (-1, 1), 2: (-1, 0), 3: (-1, -1)}
    interior = np.zeros_like(keep)
    interior[1:-1, 1:-1] = True
    candidates = interior & (mag > cut) & (mag > 0.0)
    rows, cols = np.nonzero(candidates)
    for r, c in zip(rows, cols):
        dr, dc = offsets[sector[r, c]]
        if mag[r, c] >= mag[r + dr, c + dc] and mag[r, c] >= mag[r - dr, c - dc]:
            keep[r, c] = True

    rows, cols = np.nonzero(keep)
    if rows.size < _MIN_POINTS:
        raise TooFewEdgePointsError(
            f"found {rows.size} edge points, need at least {_MIN_POINTS}")
    xs = image.grid.x_centers()[cols]
    ys = image.grid.y_centers()[rows]
    return EdgePointSet(xs, ys, gx[rows, cols], gy[rows, cols], mag[rows, cols])


def def_points(points: EdgePointSet) -> np.ndarray:
    """Ellipse-constrained direct least squares on edge locations.

    Minimises the algebraic residual over conics normalised by
    ``4ac - b^2 = 1``, which forces an ellipse whenever the reduced
    3x3 eigenproblem has its one feasible eigenvector.  Returns the
    unit-normalised algebraic vector.
    """
    if len(points) < _MIN_POINTS:
        raise DegenerateDataError(
            f"need at least {_MIN_POINTS} points, got {len(points)}")
    x, y = points.x, points.y
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1 = D1.T @ D1
    S2 = D1.T @ D2
    S3 = D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDataError("linear block is singular") from exc
    M = S1 + S2 @ T
    # premultiply by the inverse of the constraint matrix:
    # rows become (M3/2, -M2, M1/2)
    M = np.vstack([M[2] / 2.0, -M[1], M[0] / 2.0])
    eigvals, eigvecs = np.linalg.eig(M)
    # feasibility test 4ac - b^2 > 0 picks the ellipse solution
    cond = 4.0 * eigvecs[0] * eigvecs[2] - eigvecs[1] ** 2
    feasible = np.where(np.isreal(eigvals) & (np.real(cond) > 0.0))[0]
    if feasible.size == 0:
        raise DegenerateDataError("no ellipse-feasible eigenvector")
    top = np.real(eigvecs[:, feasible[0]])
    theta = np.concatenate([top, T @ top])
    try:
        return unit_normalize(theta)
    except ZeroVectorError as exc:
        raise DegenerateDataError("fit collapsed to the zero conic") from exc


def def_gradient(image: RealImage, threshold_fraction: float = 0.3) -> np.ndarray:
    """Dual-conic least squares on tangent lines from image gradients.

    Every pixel whose gradient magnitude clears the fractional
    threshold contributes the line through its centre perpendicular to
    the gradient.  The dual conic is the magnitude-weighted least
    squares fit to those lines; its adjugate is the point conic.
    Returns the unit-normalised algebraic vector.
    """
    gx, gy = image_gradients(image)
    mag = np.hypot(gx, gy)
    cut = _threshold(image, mag, threshold_fraction)
    rows, cols = np.nonzero(mag > cut)
    if rows.size < _MIN_POINTS:
        raise DegenerateDataError(
            f"found {rows.size} gradient pixels, need at least {_MIN_POINTS}")
    xs = image.grid.x_centers()[cols]
    ys = image.grid.y_centers()[rows]
    w = mag[rows, cols]
    nx = gx[rows, cols] / w
    ny = gy[rows, cols] / w

    # tangent line through (x, y) with unit normal (nx, ny)
    l1, l2 = nx, ny
    l3 = -(nx * xs + ny * ys)
    rows6 = np.column_stack([l1 * l1, l1 * l2, l2 * l2, l1 * l3, l2 * l3, l3 * l3])
    rows6 *= np.sqrt(w)[:, None]
    _, _, vt = np.linalg.svd(rows6, full_matrices=False)
    q = vt[-1]

    Q = np.array([[q[0], q[1] / 2.0, q[3] / 2.0],
                  [q[1] / 2.0, q[2], q[4] / 2.0],
                  [q[3] / 2.0, q[4] / 2.0, q[5]]])
    # adjugate maps the dual conic back to the point conic
    C = _adjugate3(Q)
    theta = np.array([C[0, 0], 2.0 * C[0, 1], C[1, 1],
                      2.0 * C[0, 2], 2.0 * C[1, 2], C[2, 2]])
    if theta[1] ** 2 - 4.0 * theta[0] * theta[2] >= 0.0:
        raise NotAnEllipseError("gradient fit produced a non-ellipse conic")
    try:
        return unit_normalize(theta)
    except ZeroVectorError as exc:
        raise DegenerateDataError("fit collapsed to the zero conic") from exc


def _adjugate3(Q: np.ndarray) -> np.ndarray:
    """Adjugate of a symmetric 3x3 matrix (cofactor transpose)."""
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(Q, i, axis=0), j, axis=1)
            out[j, i] = (-1.0) ** (i + j) * np.linalg.det(minor)
    return out


def algebraic_error(theta_hat: np.ndarray, theta_true: np.ndarray) -> float:
    """Scale-free distance between conic vectors.

    Both vectors are unit-normalised, then the estimate is projected
    off the truth direction; the residual norm is invariant to the sign
    and scale ambiguity of algebraic representations.
    """
    a = unit_normalize(np.asarray(theta_hat, dtype=float))
    b = unit_normalize(np.asarray(theta_true, dtype=float))
    return float(np.linalg.norm(a - np.dot(a, b) * b))
