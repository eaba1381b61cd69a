import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from atlasgan.funcspace import (
    BumpFamily,
    FilterError,
    FormatError,
    ScalingTable,
    ShapeError,
    WaveletFamily,
    cascade,
    daubechies_filter,
    eval_bump,
    eval_wavelet,
    family_from_bytes,
    family_from_json,
    family_to_bytes,
    family_to_json,
    grad_bump_input,
    grad_bump_params,
    project_constraints,
)
from atlasgan.gradcheck import central_difference


def naive_eval(f, x):
    """Triple loop straight from the family definition."""
    out = np.zeros(f.out_dim)
    for c in range(f.out_dim):
        for j in range(f.L1):
            for i in range(f.L2):
                s = float(np.dot(f.A[c, j, i], x - f.b[c, j, i]))
                out[c] += f.alpha[c, j, i] * math.exp(-s * s)
    return out


def single(k, A, b, alpha):
    f = BumpFamily.zeros(k, 1, 1, 1)
    f.A[0, 0, 0] = A
    f.b[0, 0, 0] = b
    f.alpha[0, 0, 0] = alpha
    return f


def fd_rel(a, n):
    return np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)


# -- evaluation -----------------------------------------------------------------


def test_constant_bump():
    f = single(2, 0.0, [3.0, -1.0], 0.5)
    x = np.random.default_rng(0).normal(size=(7, 2))
    assert np.all(eval_bump(f, x) == 0.5)


def test_unit_bump_value():
    f = single(1, 1.0, 0.0, 1.0)
    assert eval_bump(f, np.array([[1.0]]))[0, 0] == pytest.approx(0.367879441171, abs=1e-12)


def test_two_constant_bumps_add():
    f = BumpFamily.zeros(3, 1, 1, 2)
    f.alpha[0, 0] = [0.2, -0.7]
    x = np.random.default_rng(1).normal(size=(5, 3))
    np.testing.assert_allclose(eval_bump(f, x), -0.5, atol=1e-15)


def test_shape_error():
    f = BumpFamily.zeros(2, 1, 1, 1)
    with pytest.raises(ShapeError):
        eval_bump(f, np.zeros((4, 3)))


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31))
def test_eval_matches_naive(k, out, L1, L2, seed):
    rng = np.random.default_rng(seed)
    f = BumpFamily.init_random(k, out, L1, L2, rng, alpha_scale=1.0)
    x = rng.normal(size=(3, k))
    got = f(x)
    for r in range(3):
        np.testing.assert_allclose(got[r], naive_eval(f, x[r]), rtol=1e-12, atol=1e-14)


def test_eval_deterministic(rng):
    f = BumpFamily.init_random(3, 2, 3, 20, rng)
    x = rng.normal(size=(50, 3))
    assert np.array_equal(f(x), f(x.copy()))


# -- gradients ------------------------------------------------------------------


def test_zero_direction_has_zero_jacobian():
    f = single(2, 0.0, [0.3, 0.1], 0.4)
    assert np.all(grad_bump_input(f, np.ones((2, 2))) == 0)


def test_even_bump_flat_at_peak():
    f = single(1, 1.0, 0.0, 1.0)
    assert grad_bump_input(f, np.zeros((1, 1)))[0, 0, 0] == 0.0


@pytest.mark.parametrize("k", [1, 2, 3, 10])
def test_input_gradient_matches_fd(k):
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng(1000 * k + s)
        f = BumpFamily.init_random(k, 2, 2, 3, rng, alpha_scale=1.0)
        x = rng.normal(size=(1, k))
        J = grad_bump_input(f, x)[0]
        num = np.stack([central_difference(lambda: f(x)[0, c], x) [0] for c in range(2)])
        worst = max(worst, fd_rel(J, num))
    assert worst <= 1e-6


@pytest.mark.parametrize("k", [1, 2, 3, 10])
def test_param_gradient_matches_fd(k):
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng(7 + 1000 * k + s)
        f = BumpFamily.init_random(k, 2, 2, 2, rng, alpha_scale=1.0)
        x = rng.normal(size=(3, k))
        up = rng.normal(size=(3, 2))
        g = grad_bump_params(f, x, up)
        for arr, ga in zip(f.arrays(), g.arrays()):
            num = central_difference(lambda: float(np.sum(up * f(x))), arr)
            worst = max(worst, fd_rel(ga, num))
    assert worst <= 1e-6


def test_zero_upstream_gives_zero_gradient(rng):
    f = BumpFamily.init_random(2, 3, 2, 4, rng)
    g = grad_bump_params(f, rng.normal(size=(5, 2)), np.zeros((5, 3)))
    assert all(np.all(a == 0) for a in g.arrays())


def test_alpha_gradient_is_bump_value(rng):
    f = BumpFamily.init_random(2, 2, 2, 3, rng)
    x = rng.normal(size=(1, 2))
    up = np.array([[0.0, 2.5]])
    g = grad_bump_params(f, x, up)
    s = np.einsum("jik,k->ji", f.A[1], x[0]) - np.einsum("jik,jik->ji", f.A[1], f.b[1])
    np.testing.assert_allclose(g.alpha[1], 2.5 * np.exp(-s ** 2), rtol=1e-13)
    assert np.all(g.alpha[0] == 0)


# -- projection -------------------------------------------------------------------


def test_projection_examples():
    f = BumpFamily.zeros(2, 1, 2, 1)
    f.alpha[0, 0, 0] = 5.0
    f.A[0, 1, 0] = [8.0 * 0.6, 8.0 * 0.8]
    p = project_constraints(f)
    assert p.alpha[0, 0, 0] == 0.5
    np.testing.assert_allclose(p.A[0, 1, 0], [4 * 0.6, 4 * 0.8], rtol=1e-15)
    assert f.alpha[0, 0, 0] == 5.0  # the input is not modified


def test_feasible_unchanged(rng):
    f = BumpFamily.init_random(3, 2, 3, 10, rng)
    assert f.is_feasible()
    p = project_constraints(f)
    for a, b in zip(f.arrays(), p.arrays()):
        assert np.array_equal(a, b)


@given(st.integers(0, 2**31), st.floats(0.1, 50))
def test_projection_idempotent_nonexpansive(seed, scale):
    rng = np.random.default_rng(seed)
    f = BumpFamily.init_random(2, 2, 3, 4, rng)
    g = f.copy()
    for a in (f.A, f.alpha, g.A, g.alpha):
        a *= scale
    g.alpha += rng.normal(size=g.alpha.shape)
    pf, pg = project_constraints(f), project_constraints(g)
    assert pf.is_feasible()
    ppf = project_constraints(pf)
    for a, b in zip(pf.arrays(), ppf.arrays()):
        assert np.array_equal(a, b)
    assert np.max(np.abs(pf.alpha - pg.alpha)) <= np.max(np.abs(f.alpha - g.alpha)) + 1e-15


# -- serialization ------------------------------------------------------------------


def test_bump_record_round_trip(rng):
    f = BumpFamily.init_random(3, 2, 2, 5, rng)
    g = family_from_bytes(family_to_bytes(f))
    for a, b in zip(f.arrays(), g.arrays()):
        assert np.array_equal(a, b)
    h = family_from_json(family_to_json(f))
    for a, b in zip(f.arrays(), h.arrays()):
        assert np.array_equal(a, b)


def test_truncated_record_rejected(rng):
    data = family_to_bytes(BumpFamily.init_random(2, 1, 2, 3, rng))
    with pytest.raises(FormatError):
        family_from_bytes(data[:-5])
    with pytest.raises(FormatError):
        family_from_bytes(data + b"\x00")
    with pytest.raises(FormatError):
        family_from_bytes(b"XXXX" + data[4:])


# -- wavelets ---------------------------------------------------------------------


HAAR = np.array([1.0, 1.0]) / math.sqrt(2.0)


def test_haar_cascade_is_box():
    x, phi = cascade(HAAR, 6)
    np.testing.assert_array_equal(phi[x < 1], 1.0)
    assert np.all(phi[x >= 1] == 0)
    t = ScalingTable.build(HAAR, 6)
    assert t.scaling(np.array([0.5]))[0] == 1.0
    assert t.scaling(np.array([1.5]))[0] == 0.0


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_daubechies_filter_orthonormal(order):
    h = daubechies_filter(order)
    assert len(h) == 2 * order
    assert h.sum() == pytest.approx(math.sqrt(2), abs=1e-12)
    for s in range(order):
        assert np.dot(h[: len(h) - 2 * s], h[2 * s:]) == pytest.approx(1.0 if s == 0 else 0.0, abs=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_partition_of_unity(order):
    h = daubechies_filter(order)
    x, phi = cascade(h, 8)
    step = 256
    S = len(h) - 1
    phi = np.concatenate([phi, np.zeros(S * step - len(phi))])  # the grid stops just short of S
    total = np.zeros(step)
    for w in range(S):
        total += phi[w * step:(w + 1) * step]
    np.testing.assert_allclose(total, 1.0, atol=1e-4)


def test_db4_support():
    h = daubechies_filter(2)
    x, phi = cascade(h, 8)
    assert x[-1] <= 3.0
    t = ScalingTable.build(h, 8)
    assert t.support == 3
    assert np.all(t.scaling(np.array([-0.5, 3.0, 3.5, 10.0])) == 0)


def test_inadmissible_filter():
    with pytest.raises(FilterError):
        cascade(np.array([1.0, 1.0]), 4)
    with pytest.raises(FilterError):
        cascade(HAAR, 0)


def test_wavelet_zero_and_haar_indicator():
    t = ScalingTable.build(HAAR, 6)
    f = WaveletFamily.zeros(2, 1.0, 0.5, 2.0, t)
    pts = np.random.default_rng(3).uniform(-3, 3, (50, 2))
    assert np.all(eval_wavelet(f, pts) == 0)
    w = np.array([1, -1])
    idx = int(np.flatnonzero(np.all(f.shifts(0) == w, axis=1))[0])
    f.coeffs[0][2 ** 2 - 1, idx] = 1.0
    inside = w + np.random.default_rng(4).uniform(0.01, 0.99, (30, 2))
    outside = np.array([[0.5, 0.5], [2.5, -0.5], [1.2, 0.2], [-0.5, -0.5]])
    np.testing.assert_allclose(eval_wavelet(f, inside), 1.0, atol=1e-12)
    np.testing.assert_allclose(eval_wavelet(f, outside), 0.0, atol=1e-12)


def test_wavelet_decay_bound():
    t = ScalingTable.build(daubechies_filter(2), 10)
    f = WaveletFamily.zeros(1, 1.0, 0.25, 1.0, t)
    for j in range(f.J + 1):
        f.coeffs[j][:] = f.coeff_bound(j)[None, :]
    f.project()
    for j in range(f.J + 1):
        assert np.all(np.abs(f.coeffs[j]) <= f.coeff_bound(j)[None, :] * (1 + 1e-12))
    rng = np.random.default_rng(0)
    sup_phi = np.max(np.abs(t.phi))
    sup_psi = np.max(np.abs(t.psi))
    for pt in rng.uniform(-1.5, 1.5, (40, 1)):
        bound = 0.0
        for j, l, w in f.active_terms(pt):
            col = 0
            for wi in w:
                col = col * (2 * f.W(j) + 1) + (wi + f.W(j))
            s = sup_phi if l == 2 ** f.k else sup_psi
            bound += abs(f.coeffs[j][l - 1, col]) * 2 ** (j * f.k / 2) * s ** f.k
        assert abs(eval_wavelet(f, pt[None, :])[0]) <= bound + 1e-12
