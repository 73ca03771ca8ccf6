"""Exact area of intersection between an ellipse and an aligned rectangle.

The ellipse is centred at the origin with semi-axes ``A`` (along x) and
``B`` (along y); rectangles are axis aligned.  The rectangle is first
split at the coordinate axes into per-quadrant pieces, each piece is
reflected into the first quadrant, and the area contributed by a
first-quadrant rectangle ``[a, a+c] x [b, b+d]`` follows from a
closed-form circular-segment primitive evaluated at up to three of its
corners.  All areas are exact up to floating-point rounding; no
quadrature is involved.

Everything is written twice: a scalar reference (:func:`ellipse_rect_area`)
that mirrors the case analysis one branch at a time, and a vectorised
kernel (:func:`ellipse_rect_area_batch`) used by the image-formation
code.  The two are tested against each other and against a Monte-Carlo
oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AlignedRect:
    """Axis-aligned rectangle given by centre and full side lengths."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"rectangle sides must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError("rectangle parameters must be finite")


@dataclass(frozen=True)
class QuadrantRect:
    """First-quadrant rectangle ``[a, a+c] x [b, b+d]`` with a, b, c, d >= 0."""

    a: float
    b: float
    c: float
    d: float


# Reflections taking each quadrant piece into the first quadrant.
_SX = (1.0, -1.0, -1.0, 1.0)
_SY = (1.0, 1.0, -1.0, -1.0)


def split_to_quadrants(rect: AlignedRect) -> tuple[QuadrantRect, QuadrantRect, QuadrantRect, QuadrantRect]:
    """Split a rectangle at the coordinate axes into four first-quadrant pieces.

    Pieces that do not overlap a quadrant come back with zero width or
    height; the piece areas always sum to the rectangle area.
    """
    out = []
    for sx, sy in zip(_SX, _SY):
        x_lo = sx * rect.cx - 0.5 * rect.w
        x_hi = sx * rect.cx + 0.5 * rect.w
        y_lo = sy * rect.cy - 0.5 * rect.h
        y_hi = sy * rect.cy + 0.5 * rect.h
        a = max(0.0, x_lo)
        b = max(0.0, y_lo)
        c = max(0.0, x_hi - a)
        d = max(0.0, y_hi - b)
        out.append(QuadrantRect(a, b, c, d))
    return tuple(out)


def _segment_primitive(U: float, V: float) -> float:
    """Area primitive for the unit circle above ``(U, V)`` in the first quadrant.

    Twice the area of ``{(u, v): u >= U, v >= V, u^2 + v^2 <= 1}`` for
    ``U, V >= 0`` with ``(U, V)`` inside the circle.  The arcsin argument
    can drift past 1 by a few ulp at grazing corners, hence the clamp.
    """
    su = math.sqrt(max(0.0, 1.0 - U * U))
    sv = math.sqrt(max(0.0, 1.0 - V * V))
    arg = min(1.0, max(-1.0, su * sv - U * V))
    return math.asin(arg) - U * su - V * sv + 2.0 * U * V


def quadrant_intersection_area(q: QuadrantRect, A: float, B: float) -> float:
    """Intersection area of a first-quadrant rectangle with the ellipse.

    Case analysis on which rectangle corners fall inside the ellipse;
    points on the boundary count as outside.  The corner nearest the
    origin is ``v1 = (a, b)`` and the farthest is ``v3 = (a+c, b+d)``;
    ``v2``/``v4`` are the remaining top-left/bottom-right corners.
    """
    if A <= 0.0 or B <= 0.0:
        raise ValueError(f"semi-axes must be positive, got A={A}, B={B}")
    a, b, c, d = q.a, q.b, q.c, q.d
    if c <= 0.0 or d <= 0.0:
        return 0.0

    def inside(x, y):
        return (x / A) ** 2 + (y / B) ** 2 < 1.0

    v1_in = inside(a, b)
    if not v1_in:
        return 0.0  # Case I: nearest corner outside, no overlap
    v3_in = inside(a + c, b + d)
    if v3_in:
        return c * d  # Case VI: rectangle fully inside
    v2_in = inside(a, b + d)
    v4_in = inside(a + c, b)
    half_ab = 0.5 * A * B

    F1 = _segment_primitive(a / A, b / B)
    if v2_in and v4_in:
        # Case V: both edge corners inside, only v3 is cut off.  The
        # would-be inclusion-exclusion term at v3 vanishes because v3
        # lies outside the ellipse.
        return half_ab * (F1
                          - _segment_primitive((a + c) / A, b / B)
                          - _segment_primitive(a / A, (b + d) / B))
    if v4_in:
        # Case III: the ellipse exits through the top edge
        return half_ab * (F1 - _segment_primitive((a + c) / A, b / B))
    if v2_in:
        # Case IV: the ellipse exits through the right edge
        return half_ab * (F1 - _segment_primitive(a / A, (b + d) / B))
    # Case II: only v1 inside
    return half_ab * F1


def ellipse_rect_area(rect: AlignedRect, A: float, B: float) -> float:
    """Area of ``rect`` intersected with the origin-centred ellipse ``(A, B)``."""
    return sum(quadrant_intersection_area(q, A, B) for q in split_to_quadrants(rect))


def ellipse_rect_area_batch(cx, cy, w: float, h: float, A: float, B: float) -> np.ndarray:
    """Vectorised :func:`ellipse_rect_area` for many rectangle centres.

    ``cx`` and ``cy`` are broadcast-compatible arrays of rectangle
    centres; side lengths and semi-axes are scalars shared by the batch.
    Matches the scalar routine to rounding error.
    """
    if A <= 0.0 or B <= 0.0:
        raise ValueError(f"semi-axes must be positive, got A={A}, B={B}")
    if w <= 0.0 or h <= 0.0:
        raise ValueError(f"rectangle sides must be positive, got w={w}, h={h}")
    cx = np.asarray(cx, dtype=float)
    cy = np.asarray(cy, dtype=float)
    cx, cy = np.broadcast_arrays(cx, cy)
    total = np.zeros(cx.shape, dtype=float)
    half_ab = 0.5 * A * B

    for sx, sy in zip(_SX, _SY):
        x_lo = sx * cx - 0.5 * w
        x_hi = sx * cx + 0.5 * w
        y_lo = sy * cy - 0.5 * h
        y_hi = sy * cy + 0.5 * h
        a = np.maximum(0.0, x_lo)
        b = np.maximum(0.0, y_lo)
        c = np.maximum(0.0, x_hi - a)
        d = np.maximum(0.0, y_hi - b)

        ua, ub = a / A, b / B
        uc, ud = (a + c) / A, (b + d) / B
        v1_in = ua**2 + ub**2 < 1.0
        v2_in = ua**2 + ud**2 < 1.0
        v3_in = uc**2 + ud**2 < 1.0
        v4_in = uc**2 + ub**2 < 1.0

        F1 = _segment_primitive_arr(ua, ub)
        F_right = _segment_primitive_arr(uc, ub)
        F_top = _segment_primitive_arr(ua, ud)

        partial = half_ab * (F1 - np.where(v4_in, F_right, 0.0)
                             - np.where(v2_in, F_top, 0.0))
        area = np.where(v3_in, c * d, partial)
        area = np.where(v1_in & (c > 0.0) & (d > 0.0), area, 0.0)
        total += area
    return total


def _segment_primitive_arr(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    # Arguments past 1 correspond to corners outside the ellipse; those
    # lanes are masked out by the caller, the clip just keeps them finite.
    U = np.minimum(U, 1.0)
    V = np.minimum(V, 1.0)
    su = np.sqrt(1.0 - U * U)
    sv = np.sqrt(1.0 - V * V)
    arg = np.clip(su * sv - U * V, -1.0, 1.0)
    return np.arcsin(arg) - U * su - V * sv + 2.0 * U * V
