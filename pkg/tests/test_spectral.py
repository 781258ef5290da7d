import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imlab import spectral as sp
from conftest import direct_eval, uniform_points

TWO_PI = 2 * np.pi


def brute_modes(d, N):
    K = int(np.floor(np.sqrt(N)))
    return sorted(m for m in itertools.product(range(-K, K + 1), repeat=d) if 0 < sum(c * c for c in m) <= N)


@pytest.mark.parametrize("d,N", [(1, 4), (2, 1), (2, 2), (2, 5), (3, 3)])
def test_mode_set_matches_enumeration(d, N):
    b = sp.torus_basis(d, N)
    assert [tuple(m) for m in b.modes.tolist()] == brute_modes(d, N)
    assert np.all(b.modes[b.neg] == -b.modes)
    assert b.positive.sum() * 2 == b.nmodes
    assert b.K == int(np.floor(np.sqrt(N)))


def test_basis_rejects_bad_arguments():
    with pytest.raises(ValueError):
        sp.torus_basis(4, 2)
    with pytest.raises(ValueError):
        sp.torus_basis(2, 0)


def test_coefficients_are_read_only(rng):
    u = sp.random_field("scalar", sp.torus_basis(2, 4), rng)
    with pytest.raises(ValueError):
        u.coeffs[0] = 1.0


def test_shape_mismatch_raises():
    b = sp.torus_basis(2, 4)
    with pytest.raises(sp.ShapeError):
        sp.SpectralField("scalar", b, np.zeros(b.nmodes + 1))
    with pytest.raises(sp.ShapeError):
        sp.SpectralField("shell", b, np.zeros(b.nmodes))


@pytest.mark.parametrize("kind,d,N", [("scalar", 1, 9), ("scalar", 2, 8), ("vector", 2, 5), ("vector", 3, 3)])
def test_parseval_against_direct_quadrature(kind, d, N, rng):
    u = sp.random_field(kind, sp.torus_basis(d, N), rng)
    K = u.basis.K
    M = 2 * K + 2
    x = uniform_points(d, M)
    vals = direct_eval(u, x)
    assert np.max(np.abs(vals.imag)) < 1e-12
    quad = np.sum(np.abs(vals) ** 2) * (TWO_PI / M) ** d
    assert sp.l2_sq(u) == pytest.approx(quad, rel=1e-12)


def test_grid_transform_matches_direct_sum(rng):
    u = sp.random_field("scalar", sp.torus_basis(2, 5), rng)
    M = 8
    grid = sp.to_grid(u.basis, u.coeffs, M)
    ref = direct_eval(u, uniform_points(2, M)).reshape(M, M)
    assert np.allclose(grid, ref.real, atol=1e-12)
    back = sp.from_grid(u.basis, grid, M)
    assert np.allclose(back, u.coeffs, atol=1e-13)


def test_cos_fourth_power_integral():
    u = sp.from_modes("scalar", sp.torus_basis(2, 4), {(1, 0): 0.5})
    val = sp.w_norm_power(u, 0, 4)
    assert val == pytest.approx(TWO_PI**2 * 3 / 8, rel=1e-13)


@pytest.mark.parametrize("s", [0.0, 1.0, 2.5])
def test_hs_norm_of_single_mode(s):
    u = sp.from_modes("scalar", sp.torus_basis(2, 4), {(2, 0): 0.5})
    assert sp.hs_norm_sq(u, s) == pytest.approx(TWO_PI**2 / 2 * 4.0**s, rel=1e-13)


def test_sup_norm_of_cosine():
    u = sp.from_modes("scalar", sp.torus_basis(2, 2), {(1, 0): 0.5})
    assert float(sp.sup_norm(u)) == pytest.approx(1.0, abs=1e-12)


def convolution_oracle(u, v):
    b = u.basis
    out = np.zeros(b.nmodes, complex)
    idx = {tuple(m): i for i, m in enumerate(b.modes.tolist())}
    for i, m in enumerate(b.modes.tolist()):
        for j, n in enumerate(b.modes.tolist()):
            k = tuple(a + c for a, c in zip(m, n))
            if k in idx:
                out[idx[k]] += u.coeffs[i] * v.coeffs[j]
    return out


@pytest.mark.parametrize("d,N", [(1, 9), (2, 4), (2, 8), (3, 2)])
def test_projected_product_matches_convolution(d, N, rng):
    b = sp.torus_basis(d, N)
    u, v = sp.random_field("scalar", b, rng), sp.random_field("scalar", b, rng)
    w = sp.quadratic_product(u, v)
    assert np.allclose(w.coeffs, convolution_oracle(u, v), atol=1e-13)


def test_leray_projection_example():
    b = sp.torus_basis(2, 2)
    c = np.zeros((2, b.nmodes), complex)
    i, j = b.index_of((1, 0)), b.index_of((-1, 0))
    c[:, i] = [1.0, 1.0]
    c[:, j] = [1.0, 1.0]
    p = sp.leray_project(sp.SpectralField("vector", b, c))
    assert np.allclose(p.coeffs[:, i], [0.0, 1.0])
    assert np.allclose(sp.divergence(p), 0.0)


def test_leray_idempotent_and_self_adjoint(rng):
    b = sp.torus_basis(3, 3)
    raw = lambda: sp.enforce_reality(sp.SpectralField(
        "vector", b, rng.standard_normal((3, b.nmodes)) + 1j * rng.standard_normal((3, b.nmodes))))
    u, v = raw(), raw()
    pu, pv = sp.leray_project(u), sp.leray_project(v)
    assert np.allclose(sp.leray_project(pu).coeffs, pu.coeffs, atol=1e-14)
    assert sp.inner_product(pu, v) == pytest.approx(sp.inner_product(u, pv), rel=1e-12)
    assert np.max(np.abs(sp.divergence(pu))) < 1e-13


def test_projection_and_embedding(rng):
    u = sp.random_field("scalar", sp.torus_basis(2, 8), rng)
    small = sp.galerkin_project(u, 4)
    assert small.basis.N == 4
    assert np.allclose(sp.galerkin_project(sp.embed(small, 8), 4).coeffs, small.coeffs)
    with pytest.raises(sp.TruncationError):
        sp.galerkin_project(small, 8)
    with pytest.raises(sp.TruncationError):
        sp.embed(u, 4)


def test_w_norm_rejects_odd_exponent_and_shells(rng):
    with pytest.raises(ValueError):
        sp.W(1, 3)
    u = sp.random_field("shell", sp.shell_basis(6), rng)
    with pytest.raises(sp.UnsupportedNormError):
        sp.w_norm_power(u, 1, 4)


def test_laplacian_w_norm_of_cosine():
    # Delta cos(2 x1) = -4 cos(2 x1); int (4 cos)^2 = 16 * 2 pi^2
    u = sp.from_modes("scalar", sp.torus_basis(2, 4), {(2, 0): 0.5})
    val = sp.w_norm_power(u, 2, 2, "laplacian")
    assert val == pytest.approx(16 * 2 * np.pi**2, rel=1e-13)


def test_shell_inner_product_is_plain_sum(rng):
    b = sp.shell_basis(5)
    u, v = sp.random_field("shell", b, rng), sp.random_field("shell", b, rng)
    assert sp.inner_product(u, v) == pytest.approx(np.sum(np.real(u.coeffs * np.conj(v.coeffs))))
    assert np.allclose(b.k, 0.5 * 2.0 ** np.arange(1, 6))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(1, 10), a=st.floats(-3, 3), c=st.floats(-3, 3))
def test_inner_product_bilinear_symmetric(seed, N, a, c):
    r = np.random.default_rng(seed)
    b = sp.torus_basis(2, N)
    u, v, w = (sp.random_field("scalar", b, r) for _ in range(3))
    lhs = sp.inner_product(u * a + v * c, w)
    rhs = a * sp.inner_product(u, w) + c * sp.inner_product(v, w)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
    assert sp.inner_product(u, v) == pytest.approx(sp.inner_product(v, u), rel=1e-12)
    assert sp.inner_product(u, u) == pytest.approx(sp.l2_sq(u), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(1, 9))
def test_random_fields_are_real_and_projected_products_real(seed, N):
    r = np.random.default_rng(seed)
    b = sp.torus_basis(2, N)
    u, v = sp.random_field("scalar", b, r), sp.random_field("scalar", b, r)
    assert sp.reality_defect(u) == 0.0
    assert sp.reality_defect(sp.quadratic_product(u, v)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s1=st.floats(0, 3), s2=st.floats(0, 3))
def test_sobolev_norms_monotone_in_s(seed, s1, s2):
    u = sp.random_field("scalar", sp.torus_basis(2, 6), np.random.default_rng(seed))
    lo, hi = sorted((s1, s2))
    # all retained |m| >= 1, so the norm is nondecreasing in s
    assert sp.norm(u, sp.H(lo)) <= sp.norm(u, sp.H(hi)) * (1 + 1e-12)
