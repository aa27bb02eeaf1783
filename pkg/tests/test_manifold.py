import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexflow.errors import NonUniqueGeodesicError, OutOfRangeError, UnsupportedRepresentationError
from convexflow.manifold import ModelManifold

S2 = ModelManifold.sphere2()
H2 = ModelManifold.poincare_disk()
F2 = ModelManifold.flat(2)
NORTH = np.array([0.0, 0.0, 1.0])

coord = st.floats(-1.0, 1.0, allow_nan=False)


def sphere_point(a, b):
    # points in the northern cap, well away from the antipode of NORTH
    v = np.array([a, b, 0.0]) * 1.2
    return S2.exp(NORTH, v)


def disk_point(a, b):
    return np.array([a, b]) * 0.7


# -- worked examples --------------------------------------------------------


def test_sphere_quarter_arc():
    q = S2.exp(NORTH, (math.pi / 2) * np.array([1.0, 0, 0]))
    np.testing.assert_allclose(q, [1, 0, 0], atol=1e-15)


def test_flat_exp_is_addition():
    np.testing.assert_allclose(F2.exp([1.0, 2.0], [3.0, -1.0]), [4, 1])


def test_poincare_exp_from_origin():
    # dist(0, x) = 2 artanh |x| inverts to |x| = tanh(t/2)
    q = H2.exp(np.zeros(2), np.array([1.0986, 0.0]))
    np.testing.assert_allclose(q, [0.5, 0.0], atol=1e-4)
    assert q[0] == pytest.approx(math.tanh(1.0986 / 2), abs=1e-15)


def test_poincare_exp_matches_geodesic_ode():
    # integrate x'' = -Gamma(x)(x', x') in the chart from the origin
    from scipy.integrate import solve_ivp

    def rhs(_, y):
        x, v = y[:2], y[2:]
        g = H2.christoffel(x)
        return np.concatenate([v, -np.einsum("abc,b,c->a", g, v, v)])

    # frame speed 1.0986 at the origin is chart speed 1.0986 / lambda(0) = 1.0986 / 2
    sol = solve_ivp(rhs, (0, 1), [0, 0, 1.0986 / 2, 0], rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(sol.y[:2, -1], H2.exp(np.zeros(2), np.array([1.0986, 0.0])), atol=1e-8)


def test_sphere_log_quarter():
    v = S2.log(NORTH, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(v, [0, math.pi / 2, 0], atol=1e-15)


def test_sphere_antipodal_log_raises():
    with pytest.raises(NonUniqueGeodesicError):
        S2.log(NORTH, -NORTH)


def test_exp_beyond_injectivity_raises():
    with pytest.raises(OutOfRangeError):
        S2.exp(NORTH, np.array([4.0, 0.0, 0.0]))


def test_exp_rejects_non_tangent():
    with pytest.raises(ValueError):
        S2.exp(NORTH, np.array([0.0, 0.0, 0.1]))


def test_christoffel_unsupported_on_sphere():
    with pytest.raises(UnsupportedRepresentationError):
        S2.christoffel(NORTH)


def test_christoffel_flat_is_zero():
    assert not np.any(F2.christoffel(np.array([0.3, -0.2])))


def test_radii():
    assert S2.convexity_radius == pytest.approx(math.pi / 2)
    assert S2.focal_radius_bound == pytest.approx(math.pi / 2)
    assert math.isinf(F2.convexity_radius) and math.isinf(H2.focal_radius_bound)


def test_poincare_christoffel_against_metric_derivative():
    # Gamma^a_bc = 1/2 g^ad (d_b g_dc + d_c g_db - d_d g_bc) with g = lambda^2 I, by finite differences
    x = np.array([0.3, -0.4])
    g = lambda p: H2.conformal_factor(p) ** 2
    eps = 1e-6
    dg = np.array([(g(x + eps * e) - g(x - eps * e)) / (2 * eps) for e in np.eye(2)])
    want = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            for c in range(2):
                want[a, b, c] = 0.5 / g(x) * ((a == c) * dg[b] + (a == b) * dg[c] - (b == c) * dg[a])
    np.testing.assert_allclose(H2.christoffel(x), want, atol=1e-7)


# -- properties ---------------------------------------------------------------


@given(coord, coord, coord, coord)
def test_sphere_exp_log_roundtrip(a, b, c, d):
    p, q = sphere_point(a, b), sphere_point(c, d)
    np.testing.assert_allclose(S2.exp(p, S2.log(p, q)), q, atol=1e-12)
    assert np.linalg.norm(S2.exp(p, S2.log(p, q))) == pytest.approx(1.0, abs=1e-14)


@given(coord, coord, coord, coord)
def test_poincare_exp_log_roundtrip(a, b, c, d):
    p, q = disk_point(a, b), disk_point(c, d)
    np.testing.assert_allclose(H2.exp(p, H2.log(p, q)), q, atol=1e-12)


@given(coord, coord, coord, coord)
def test_log_norm_is_distance(a, b, c, d):
    for M, p, q in ((S2, sphere_point(a, b), sphere_point(c, d)), (H2, disk_point(a, b), disk_point(c, d))):
        assert M.norm(p, M.log(p, q)) == pytest.approx(M.dist(p, q), abs=1e-12)


@given(coord, coord, coord, coord, coord, coord)
def test_triangle_inequality(a, b, c, d, e, f):
    for M, mk in ((S2, sphere_point), (H2, disk_point)):
        p, q, r = mk(a, b), mk(c, d), mk(e, f)
        assert M.dist(p, r) <= M.dist(p, q) + M.dist(q, r) + 1e-12


@given(coord, coord, coord, coord)
def test_poincare_distance_independent_formula(a, b, c, d):
    # cosh d = 1 + 2|p-q|^2 / ((1-|p|^2)(1-|q|^2))
    p, q = disk_point(a, b), disk_point(c, d)
    want = math.acosh(1 + 2 * np.sum((p - q) ** 2) / ((1 - p @ p) * (1 - q @ q)))
    assert H2.dist(p, q) == pytest.approx(want, abs=1e-7)


@given(coord, coord, st.floats(0.0, 1.0))
def test_geodesic_velocity_matches_difference_quotient(a, b, s):
    for M, p, v in (
        (S2, sphere_point(0.1, -0.2), S2.log(sphere_point(0.1, -0.2), sphere_point(a, b))),
        (H2, disk_point(0.2, 0.1), H2.log(disk_point(0.2, 0.1), disk_point(a, b))),
    ):
        eps = 1e-6
        fd = (M.exp(p, (s + eps) * v) - M.exp(p, (s - eps) * v)) / (2 * eps)
        q = M.exp(p, s * v)
        np.testing.assert_allclose(M.to_chart(q, M.geodesic_velocity(p, v, s)), fd, atol=1e-7)


@given(coord, coord)
def test_frame_norm_is_riemannian_norm(a, b):
    p = disk_point(a, b)
    chart = np.array([0.3, -0.7])
    lam = 2 / (1 - p @ p)
    assert H2.norm(p, H2.to_frame(p, chart)) == pytest.approx(lam * np.linalg.norm(chart))


def test_random_unit_tangent(manifold, rng):
    p = np.array([0.6, 0.0, 0.8]) if manifold.kind == "sphere2" else np.full(manifold.ambient_dim, 0.2)
    for _ in range(10):
        w = manifold.random_unit_tangent(p, rng)
        assert manifold.norm(p, w) == pytest.approx(1.0)
        manifold.check_tangent(p, w)


def test_geodesic_endpoints(manifold):
    if manifold.kind == "sphere2":
        p, q = NORTH, np.array([0.6, 0.0, 0.8])
    else:
        p, q = np.zeros(2), np.array([0.3, 0.4])
    np.testing.assert_allclose(manifold.geodesic(p, q, 0.0), p, atol=1e-15)
    np.testing.assert_allclose(manifold.geodesic(p, q, 1.0), q, atol=1e-12)
    mid = manifold.geodesic(p, q, 0.5)
    assert manifold.dist(p, mid) == pytest.approx(manifold.dist(p, q) / 2, abs=1e-12)


def test_check_point_rejects_off_manifold():
    with pytest.raises(ValueError):
        S2.check_point(np.array([0.0, 0.0, 1.1]))
    with pytest.raises(ValueError):
        H2.check_point(np.array([1.0, 0.0]))
