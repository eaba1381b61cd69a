import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from atlasgan.geometry import (
    DomainError,
    GeoConsts,
    ResourceError,
    build_covering,
    gamma_cutoff,
    gamma_cutoff_deriv,
    global_glue,
    local_glue,
    psi,
    psi_inverse,
    smooth_step_down,
)

GEO = GeoConsts.from_K(2.0)


def ball_points(rng, n, d, radius):
    g = rng.normal(size=(n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1.0 / d))[:, None]


# -- constants -------------------------------------------------------------------


def test_default_constants():
    assert GEO.tau == 1.0 / 16.0
    assert GEO.eps_gamma == GEO.tau ** 2 / 8
    assert GEO.plateau_end == pytest.approx(GEO.tau * (1 + 4 * GEO.tau), rel=1e-15)
    with pytest.raises(ValueError):
        GeoConsts.from_K(1.0, tau=0.1, eps_gamma=0.1 ** 2 / 4)


# -- Psi ----------------------------------------------------------------------------


def test_psi_examples():
    assert np.all(psi(np.zeros(2), 0.25) == 0)
    np.testing.assert_allclose(psi(np.array([0.1, 0.0]), 0.25), [0.1 / 0.0525, 0.0], rtol=1e-15)
    assert psi(np.array([0.1, 0.0]), 0.25)[0] == pytest.approx(1.904762, abs=5e-7)
    with pytest.raises(DomainError):
        psi(np.array([0.25, 0.0]), 0.25)


def test_psi_inverse_examples():
    assert np.all(psi_inverse(np.zeros(2), 0.25) == 0)
    np.testing.assert_allclose(psi_inverse(np.array([0.1 / 0.0525, 0.0]), 0.25), [0.1, 0.0], atol=1e-9)
    # the six-digit rounded input lands within the rounding error, not 1e-9
    np.testing.assert_allclose(psi_inverse(np.array([1.904762, 0.0]), 0.25), [0.1, 0.0], atol=1e-8)


def test_psi_monotone_along_rays():
    r = np.linspace(0, 0.25 * (1 - 1e-9), 200)
    norms = np.linalg.norm(psi(np.stack([r * 0.6, r * 0.8], 1), 0.25), axis=1)
    assert np.all(np.diff(norms) > 0)
    assert norms[-1] > 1e7


def test_psi_round_trip_1000():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3, 5):
        tau = 0.25
        u = ball_points(rng, 1000, d, 0.99 * tau)
        assert np.max(np.abs(psi_inverse(psi(u, tau), tau) - u)) <= 1e-10


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(1e-3, 10))
def test_psi_inverse_lands_in_ball(a, b, tau):
    y = np.array([a, b])
    u = psi_inverse(y, tau)
    assert np.linalg.norm(u) < tau
    if np.linalg.norm(u) < 0.999 * tau:
        np.testing.assert_allclose(psi(u, tau), y, rtol=1e-8, atol=1e-12)


# -- Gamma ------------------------------------------------------------------------


def test_gamma_values():
    g = GEO
    assert gamma_cutoff(0.0, g) == 1.0
    assert gamma_cutoff(g.plateau_end, g) == 1.0
    assert gamma_cutoff(g.plateau_end + g.eps_gamma, g) == 0.0
    assert gamma_cutoff(g.plateau_end + g.eps_gamma + 1, g) == 0.0
    assert gamma_cutoff(g.plateau_end + g.eps_gamma / 2, g) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        gamma_cutoff(-1e-9, g)


def test_gamma_plateau_exact_on_grid():
    g = GEO
    t = np.linspace(0, g.plateau_end, 1001)
    assert np.all(gamma_cutoff(t, g) == 1.0)
    t = np.linspace(g.plateau_end + g.eps_gamma, 10, 1001)
    assert np.all(gamma_cutoff(t, g) == 0.0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_gamma_nonincreasing(a, b):
    g = GeoConsts(1.0, 1.0, 0.2)
    t1, t2 = sorted((a * 4, b * 4))
    assert gamma_cutoff(t1, g) >= gamma_cutoff(t2, g)


def test_gamma_flat_at_knots():
    g = GeoConsts(1.0, 1.0, 0.2)
    h = 1e-3
    for knot in (g.plateau_end, g.plateau_end + g.eps_gamma):
        for side in (-1, 1):
            t = knot + side * h
            d1 = (gamma_cutoff(t + h, g) - gamma_cutoff(t - h, g)) / (2 * h)
            d2 = (gamma_cutoff(t + h, g) - 2 * gamma_cutoff(t, g) + gamma_cutoff(t - h, g)) / h ** 2
            assert abs(d1) <= 1e-4 and abs(d2) <= 1e-4


def test_gamma_derivative_matches_fd():
    g = GeoConsts(1.0, 1.0, 0.2)
    t = np.linspace(g.plateau_end + 0.01, g.plateau_end + 0.19, 30)
    h = 1e-6
    num = (gamma_cutoff(t + h, g) - gamma_cutoff(t - h, g)) / (2 * h)
    np.testing.assert_allclose(gamma_cutoff_deriv(t, g), num, rtol=1e-6, atol=1e-8)


def test_bridge_symmetry():
    s = np.linspace(0, 1, 101)
    np.testing.assert_allclose(smooth_step_down(s) + smooth_step_down(1 - s), 1.0, atol=1e-15)


# -- gluing -----------------------------------------------------------------------


def north(u):
    u = np.atleast_2d(u)
    return np.column_stack([u, np.sqrt(1 - np.sum(u * u, axis=1))])


def south(u):
    u = np.atleast_2d(u)
    return np.column_stack([u, -np.sqrt(1 - np.sum(u * u, axis=1))])


def flat(x):
    return np.atleast_2d(x)[:, :2]


def test_local_glue_identity_outside_cutoff():
    g = GeoConsts(0.1, 1.0, 0.001)
    x = np.array([[5.0, 1.0, 2.0], [0.0, 0.0, -1.0]])
    out = local_glue(x, north, lambda X: np.full((len(X), 2), 0.3), g)
    assert np.array_equal(out, x)


def test_local_glue_projects_inside_plateau():
    g = GeoConsts(0.3, 1.0, 0.01)
    x = np.array([[0.05, -0.02, 0.95], [0.0, 0.1, 1.1]])
    center = north(np.zeros((1, 2)))[0]
    assert np.all(gamma_cutoff(np.linalg.norm(x - center, axis=1), g) == 1)
    out = local_glue(x, north, flat, g)
    assert np.array_equal(out, north(flat(x)))


def test_local_glue_exact_inverse_fixes_surface():
    g = GeoConsts(0.3, 1.0, 0.01)
    x = north(np.array([[0.1, 0.05], [0.0, -0.2]]))
    np.testing.assert_allclose(local_glue(x, north, flat, g), x, atol=1e-15)


def test_global_glue_fixes_surface():
    g = GeoConsts(0.3, 1.0, 0.02)
    model = SimpleNamespace(geo=g, glue_maps=lambda: ([north, south], [flat, flat]))
    rng = np.random.default_rng(0)
    u = ball_points(rng, 500, 2, 0.9)
    on = np.concatenate([north(u), south(u)])
    assert np.max(np.abs(global_glue(on, model) - on)) <= 1e-8


def test_global_glue_single_chart_far():
    g = GeoConsts(0.1, 1.0, 0.001)
    model = SimpleNamespace(geo=g, glue_maps=lambda: ([north], [flat]))
    x = np.array([3.0, 3.0, 3.0])
    assert np.array_equal(global_glue(x, model), x)


def test_global_glue_order_matters():
    g = GeoConsts(0.5, 1.0, 0.05)

    def c1(u):
        return np.column_stack([np.atleast_2d(u), np.zeros(len(np.atleast_2d(u)))])

    def c2(u):
        u = np.atleast_2d(u)
        return np.column_stack([u, 0.2 * np.ones(len(u))])

    x = np.array([[0.05, 0.05, 0.1]])
    a = global_glue(x, SimpleNamespace(geo=g, glue_maps=lambda: ([c1, c2], [flat, flat])))
    b = global_glue(x, SimpleNamespace(geo=g, glue_maps=lambda: ([c2, c1], [flat, flat])))
    assert not np.allclose(a, b)


# -- coverings --------------------------------------------------------------------


def test_covering_examples():
    c = build_covering(1.0, 1.0, 1)
    assert sorted(c.points[:, 0].tolist()) == [-1.0, 0.0, 1.0]
    c = build_covering(0.0, 0.3, 2)
    assert c.points.tolist() == [[0.0, 0.0]]


@pytest.mark.parametrize("dim,radius,eps", [(1, 1.0, 0.3), (2, 1.0, 0.17), (3, 0.5, 0.11), (2, 0.0625, 0.00049)])
def test_covering_certificate(dim, radius, eps):
    c = build_covering(radius, eps, dim)
    pts = ball_points(np.random.default_rng(dim), 1000, dim, radius)
    dists = np.min(np.linalg.norm(pts[:, None, :] - c.points[None, :, :], axis=-1), axis=1)
    assert np.all(dists <= c.certificate * (1 + 1e-12))
    assert c.certificate == pytest.approx(eps * math.sqrt(dim) / 2)


def test_covering_resource_limit():
    with pytest.raises(ResourceError, match="raise eps"):
        build_covering(1.0, 1e-4, 2)
