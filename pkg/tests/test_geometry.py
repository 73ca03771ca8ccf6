"""Geometric/algebraic conversions and their Jacobians."""

import math

import numpy as np
import pytest

from elliphot.geometry import (
    AlgebraicEllipse,
    DegenerateConicError,
    GeometricEllipse,
    SqrtParams,
    ZeroVectorError,
    alg_to_geo,
    canonical_geometric,
    geo_to_alg,
    geo_to_alg_jacobian,
    sqrt_params_jacobian,
    unit_normalize,
    unit_normalize_jacobian,
)


def random_ellipse(rng, min_axis_ratio=1.02):
    """Random well-conditioned ellipse inside the unit box.

    The axis ratio is kept away from 1 because the orientation of a
    near-circle is ill-conditioned by nature.
    """
    A = rng.uniform(0.08, 0.45)
    B = rng.uniform(0.02, A / min_axis_ratio)
    H = rng.uniform(0.2, 0.8)
    K = rng.uniform(0.2, 0.8)
    tau = rng.uniform(0.0, math.pi)
    return GeometricEllipse(A, B, H, K, tau % math.pi)


def _fd_jacobian(func, x, step=1e-6):
    """Central-difference Jacobian of a vector-valued func at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(func(xp)) - np.asarray(func(xm))) / (2.0 * h)
    return J


def tau_distance(t1, t2):
    """Distance between orientations modulo pi."""
    d = abs(t1 - t2) % math.pi
    return min(d, math.pi - d)


# --- constructors ---


def test_geometric_validation():
    with pytest.raises(ValueError):
        GeometricEllipse(0.1, 0.2, 0.5, 0.5, 0.0)  # B > A
    with pytest.raises(ValueError):
        GeometricEllipse(0.2, 0.0, 0.5, 0.5, 0.0)  # B = 0
    with pytest.raises(ValueError):
        GeometricEllipse(0.2, 0.1, 0.5, 0.5, math.pi)  # tau out of range
    with pytest.raises(ValueError):
        GeometricEllipse(0.2, 0.1, math.nan, 0.5, 0.0)


def test_algebraic_validation():
    with pytest.raises(DegenerateConicError):
        AlgebraicEllipse(1.0, 0.0, -1.0, 0.0, 0.0, -1.0)  # hyperbola
    with pytest.raises(DegenerateConicError):
        AlgebraicEllipse(1.0, 2.0, 1.0, 0.0, 0.0, -1.0)  # parabola


def test_canonical_geometric_swaps_axes():
    e = canonical_geometric(0.1, 0.3, 0.5, 0.5, 0.2)
    assert e.A == 0.3 and e.B == 0.1
    assert abs(e.tau - (0.2 + math.pi / 2)) < 1e-15
    e2 = canonical_geometric(0.3, 0.1, 0.5, 0.5, 0.2 + 3 * math.pi)
    assert abs(e2.tau - 0.2) < 1e-12


# --- geo_to_alg known values ---


def test_geo_to_alg_axis_aligned():
    th = geo_to_alg(GeometricEllipse(2.0, 1.0, 0.0, 0.0, 0.0))
    np.testing.assert_allclose(th.as_array(), [0.25, 0.0, 1.0, 0.0, 0.0, -1.0], atol=1e-15)


def test_geo_to_alg_circle():
    r, H, K = 0.3, 0.4, 0.6
    th = geo_to_alg(GeometricEllipse(r, r, H, K, 0.0))
    expected = [1 / r**2, 0.0, 1 / r**2, -2 * H / r**2, -2 * K / r**2,
                (H**2 + K**2) / r**2 - 1.0]
    np.testing.assert_allclose(th.as_array(), expected, rtol=1e-14, atol=1e-14)


def test_geo_to_alg_locus():
    # Points parameterised on the ellipse must satisfy the implicit equation.
    rng = np.random.default_rng(7)
    for _ in range(50):
        e = random_ellipse(rng)
        th = geo_to_alg(e)
        t = rng.uniform(0, 2 * math.pi, size=16)
        ct, st = math.cos(e.tau), math.sin(e.tau)
        x = e.H + e.A * np.cos(t) * ct - e.B * np.sin(t) * st
        y = e.K + e.A * np.cos(t) * st + e.B * np.sin(t) * ct
        a, b, c, d, ee, f = th.as_array()
        resid = a * x**2 + b * x * y + c * y**2 + d * x + ee * y + f
        np.testing.assert_allclose(resid, 0.0, atol=1e-10)


# --- alg_to_geo ---


def test_alg_to_geo_known():
    g = alg_to_geo(AlgebraicEllipse(0.25, 0.0, 1.0, 0.0, 0.0, -1.0))
    np.testing.assert_allclose(g.as_array(), [2.0, 1.0, 0.0, 0.0, 0.0], atol=1e-14)


def test_alg_to_geo_scale_invariance():
    rng = np.random.default_rng(11)
    for _ in range(100):
        e = random_ellipse(rng)
        th = geo_to_alg(e).as_array()
        s = rng.choice([-1.0, 1.0]) * 10.0 ** rng.uniform(-3, 3)
        g = alg_to_geo(AlgebraicEllipse(*(s * th)))
        np.testing.assert_allclose(g.as_array()[:4], e.as_array()[:4], rtol=1e-9, atol=1e-9)
        assert tau_distance(g.tau, e.tau) < 1e-9


def test_alg_to_geo_circle_convention():
    g = alg_to_geo(AlgebraicEllipse(4.0, 0.0, 4.0, -4.0, -4.0, 1.0))
    # circle radius 0.5 centred (0.5, 0.5)
    np.testing.assert_allclose(g.as_array(), [0.5, 0.5, 0.5, 0.5, 0.0], atol=1e-14)
    assert g.tau == 0.0


def test_alg_to_geo_degenerate():
    with pytest.raises(DegenerateConicError):
        alg_to_geo(AlgebraicEllipse(1.0, 0.0, 1.0, 0.0, 0.0, 1.0))  # imaginary
    with pytest.raises(DegenerateConicError):
        alg_to_geo(AlgebraicEllipse(1.0, 0.0, 1.0, 0.0, 0.0, 0.0))  # point


@pytest.mark.parametrize("tau", [0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8,
                                 math.pi / 2, 5 * math.pi / 8, 3 * math.pi / 4,
                                 7 * math.pi / 8])
@pytest.mark.parametrize("scale", [1.0, -1.0, 3.5, -0.2])
def test_round_trip_orientation_cases(tau, scale):
    # Each tau lands in a different sign pattern of (b, a - c); negative
    # scales exercise the swapped-axis branch of the orientation table.
    e = GeometricEllipse(0.3, 0.12, 0.45, 0.55, tau)
    th = scale * geo_to_alg(e).as_array()
    g = alg_to_geo(AlgebraicEllipse(*th))
    np.testing.assert_allclose(g.as_array()[:4], e.as_array()[:4], rtol=1e-11, atol=1e-11)
    assert tau_distance(g.tau, e.tau) < 1e-11


def test_round_trip_property():
    # Mirrors the acceptance round-trip bound on a separate seed.
    rng = np.random.default_rng(23)
    for _ in range(1000):
        e = random_ellipse(rng)
        g = alg_to_geo(geo_to_alg(e))
        err = np.max(np.abs(g.as_array()[:4] - e.as_array()[:4]))
        assert err <= 1e-9
        assert tau_distance(g.tau, e.tau) <= 1e-9


# --- unit normalisation ---


def test_unit_normalize():
    v = unit_normalize([3.0, 0.0, 4.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(v, [0.6, 0.0, 0.8, 0.0, 0.0, 0.0])
    with pytest.raises(ZeroVectorError):
        unit_normalize(np.zeros(6))


# --- Jacobians ---


def test_sqrt_params_jacobian_structure():
    eta = SqrtParams(0.5, 0.3, 0.5, 0.5, 0.1, 0.2)
    J = sqrt_params_jacobian(eta)
    assert J.shape == (5, 6)
    expected = np.zeros((5, 6))
    expected[0, 0] = 1.0
    expected[1, 1] = 0.6
    expected[2, 2] = expected[3, 3] = expected[4, 4] = 1.0
    np.testing.assert_allclose(J, expected)
    assert np.all(J[:, 5] == 0.0)


def test_sqrt_params_jacobian_fd():
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = np.array([rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.6),
                      rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                      rng.uniform(0.0, math.pi), rng.uniform(0.1, 0.5)])
        J = sqrt_params_jacobian(SqrtParams.from_array(v))
        Jfd = _fd_jacobian(lambda u: [u[0] ** 2, u[1] ** 2, u[2], u[3], u[4]], v)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - Jfd)) / scale < 1e-5


def test_geo_to_alg_jacobian_fd():
    rng = np.random.default_rng(5)
    for _ in range(100):
        e = random_ellipse(rng)
        # keep tau away from the domain edges so FD probes stay valid
        e = GeometricEllipse(e.A, e.B, e.H, e.K, rng.uniform(0.01, math.pi - 0.01))
        J = geo_to_alg_jacobian(e)
        assert J.shape == (6, 5)
        # B <= A/1.02 in the sampler, so FD probes never flip the axis order.
        Jfd = _fd_jacobian(lambda v: geo_to_alg(GeometricEllipse(*v)).as_array(),
                           e.as_array())
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - Jfd)) / scale < 1e-5


def test_unit_normalize_jacobian_fd():
    rng = np.random.default_rng(13)
    for _ in range(100):
        th = rng.uniform(-2, 2, size=6)
        if np.linalg.norm(th) < 0.1:
            continue
        J = unit_normalize_jacobian(th)
        Jfd = _fd_jacobian(lambda v: v / np.linalg.norm(v), th)
        scale = max(1.0, np.max(np.abs(J)))
        assert np.max(np.abs(J - Jfd)) / scale < 1e-5
        # Radial directions are annihilated.
        np.testing.assert_allclose(J @ th, np.zeros(6), atol=1e-12)


def test_unit_normalize_jacobian_zero():
    with pytest.raises(ZeroVectorError):
        unit_normalize_jacobian(np.zeros(6))
