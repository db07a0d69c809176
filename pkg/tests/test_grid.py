import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from aeroplate import grid
from aeroplate.errors import DomainMismatch, SpectralUnavailable
from aeroplate.grid import Domain
from fields import clamped_modes, coeff_lists, random_clamped, scalars, small_domains

PI = math.pi


def sine_field(d, i=1, j=1):
    return d.sample(lambda X, Y: np.sin(i * PI * X / d.x_extent) * np.sin(j * PI * Y / d.y_extent))


def rate(errors):
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


# ---------------------------------------------------------------------------
# Domain and Field
# ---------------------------------------------------------------------------

def test_domain_spacing_and_nodes():
    d = Domain(2.0, 1.0, 9, 19)
    assert d.hx == pytest.approx(0.2) and d.hy == pytest.approx(0.05)
    x, y = d.coords()
    assert x[0] == pytest.approx(0.2) and x[-1] == pytest.approx(1.8)
    assert d.refined().hx == pytest.approx(0.1)


@pytest.mark.parametrize("args", [(0, 1, 8, 8), (1, -1, 8, 8), (1, 1, 7, 8)])
def test_domain_rejects_bad_input(args):
    with pytest.raises(ValueError):
        Domain(*args)


def test_field_is_immutable_and_checks_domains():
    d = Domain(1, 1, 8, 8)
    f = d.zeros()
    with pytest.raises(AttributeError):
        f.values = None
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(DomainMismatch):
        f + Domain(1, 1, 9, 8).zeros()
    with pytest.raises(ValueError):
        d.field(np.full(d.shape, np.nan))


# ---------------------------------------------------------------------------
# Laplacian
# ---------------------------------------------------------------------------

def test_laplacian_of_zero():
    d = Domain(1, 1, 10, 12)
    assert not np.any(grid.apply_laplacian(d.zeros()).values)


def test_laplacian_of_sine_mode_is_second_order():
    errs = []
    for n in (15, 31, 63):
        d = Domain(1.5, 0.8, n, n)
        f = sine_field(d)
        exact = -PI**2 * (1 / d.x_extent**2 + 1 / d.y_extent**2) * f.values
        errs.append(np.abs(grid.apply_laplacian(f).values - exact).max())
    assert all(1.8 <= r <= 2.2 for r in rate(errs))


def test_laplacian_of_nonclamped_profile_matches_dense_matrix():
    d = Domain(1.0, 1.3, 11, 9)
    f = d.sample(lambda X, Y: X**2 * Y)
    A = oracles.dense_laplacian(d.nx, d.ny, d.x_extent, d.y_extent)
    np.testing.assert_allclose(grid.apply_laplacian(f).flat, A @ f.flat, rtol=1e-13, atol=1e-12)


@given(small_domains, coeff_lists, coeff_lists)
def test_laplacian_self_adjoint(d, a, b):
    f, g = clamped_modes(d, a), clamped_modes(d, b)
    lhs = grid.inner(grid.apply_laplacian(f), g)
    rhs = grid.inner(f, grid.apply_laplacian(g))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


# ---------------------------------------------------------------------------
# biharmonic
# ---------------------------------------------------------------------------

def test_biharmonic_of_zero():
    d = Domain(1, 1, 10, 10)
    assert not np.any(grid.apply_biharmonic(d.zeros()).values)


def test_biharmonic_matches_dense_ghost_assembly(rng):
    d = Domain(1.2, 0.7, 11, 13)
    B = oracles.dense_biharmonic(d.nx, d.ny, d.x_extent, d.y_extent)
    f = d.field(rng.standard_normal(d.shape))
    out = grid.apply_biharmonic(f).flat
    np.testing.assert_allclose(out, B @ f.flat, rtol=0, atol=1e-13 * np.abs(B @ f.flat).max())
    np.testing.assert_allclose(grid.biharmonic_matrix(d).toarray(), B, rtol=0, atol=1e-13 * np.abs(B).max())


def test_biharmonic_is_composition_of_clamped_laplacians(rng):
    d = Domain(1, 1, 12, 12)
    f = d.field(rng.standard_normal(d.shape))
    composed = grid.lap_of_extended(grid.laplacian_extended(f), d.hx, d.hy)
    assert np.array_equal(grid.apply_biharmonic(f).values, composed)
    # composing the Dirichlet Laplacian twice drops the ghost term, 2 u / h^4 on edge rows
    plain = grid.apply_laplacian(grid.apply_laplacian(f)).values
    diff = grid.apply_biharmonic(f).values - plain
    expect = np.zeros(d.shape)
    expect[[0, -1], :] += 2 * f.values[[0, -1], :] / d.hx**4
    expect[:, [0, -1]] += 2 * f.values[:, [0, -1]] / d.hy**4
    np.testing.assert_allclose(diff, expect, rtol=1e-10, atol=1e-8)


def test_biharmonic_truncation_error_second_order():
    def f(X, Y):
        return np.sin(PI * X) ** 2 * np.sin(PI * Y) ** 2

    def bih_exact(X, Y):
        # Lap^2 of sin^2(pi x) sin^2(pi y), expanded by hand
        cx, cy = np.cos(2 * PI * X), np.cos(2 * PI * Y)
        sx, sy = (1 - cx) / 2, (1 - cy) / 2
        return 8 * PI**4 * (-cx * sy - sx * cy) + 8 * PI**4 * cx * cy
    errs = []
    for n in (15, 31, 63):
        d = Domain(1, 1, n, n)
        X, Y = d.mesh()
        errs.append(np.abs(grid.apply_biharmonic(d.sample(f)).values - bih_exact(X, Y)).max())
    assert all(1.8 <= r <= 2.2 for r in rate(errs)), errs


def test_laplacian_sq_norm_equals_quadratic_form(rng):
    d = Domain(1.1, 0.9, 10, 14)
    f = d.field(rng.standard_normal(d.shape))
    q = grid.inner(grid.apply_biharmonic(f), f)
    assert grid.laplacian_sq_norm(f) == pytest.approx(q, rel=1e-12)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def test_solve_biharmonic_zero_rhs():
    d = Domain(1, 1, 10, 10)
    assert not np.any(grid.solve_biharmonic(d.zeros()).values)


@given(small_domains, coeff_lists)
def test_solve_biharmonic_roundtrip(d, a):
    g = clamped_modes(d, a)
    rhs = grid.apply_biharmonic(g)
    back = grid.solve_biharmonic(rhs, tol=1e-10)
    res = np.linalg.norm(grid.apply_biharmonic(back).values - rhs.values)
    assert res <= 1e-10 * max(np.linalg.norm(rhs.values), 1e-300)


def test_solve_biharmonic_constant_load_center_value():
    d = Domain(1, 1, 63, 63)   # odd count puts a node at the center
    B = oracles.dense_biharmonic(d.nx, d.ny, 1, 1)
    ref = oracles.dense_solve(B, np.ones(d.size)).reshape(d.shape)
    u = grid.solve_biharmonic(d.sample(lambda X, Y: np.ones_like(X)), tol=1e-12)
    c = d.nx // 2
    assert u.values[c, c] == pytest.approx(ref[c, c], rel=1e-8)


def test_solve_biharmonic_at_64x64_nodes():
    d = Domain(1, 1, 64, 64)
    u = grid.solve_biharmonic(d.sample(lambda X, Y: np.ones_like(X)), tol=1e-12)
    # center value of the clamped square plate under unit load, 0.00126532 D^-1 (series solution)
    assert u.values[31:33, 31:33].max() == pytest.approx(0.00126532, rel=5e-3)


def test_pcg_and_direct_agree(rng):
    d = Domain(1, 1, 24, 24)
    rhs = d.field(rng.standard_normal(d.shape))
    a = grid.solve_biharmonic(rhs, 1e-11, method="direct").values
    b = grid.solve_biharmonic(rhs, 1e-11, method="pcg").values
    assert np.abs(a - b).max() <= 1e-8 * np.abs(a).max()


def test_solve_laplacian_dirichlet():
    d = Domain(1, 1, 10, 10)
    assert not np.any(grid.solve_laplacian_dirichlet(d.zeros()).values)
    errs = []
    for n in (15, 31, 63):
        d = Domain(1, 1, n, n)
        f = sine_field(d)
        w = grid.solve_laplacian_dirichlet(f * (2 * PI**2))
        errs.append(np.abs(w.values - f.values).max())
    assert all(1.8 <= r <= 2.2 for r in rate(errs))


@given(small_domains, coeff_lists)
def test_solve_laplacian_roundtrip(d, a):
    g = clamped_modes(d, a)
    back = grid.solve_laplacian_dirichlet(-grid.apply_laplacian(g))
    assert np.abs(back.values - g.values).max() <= 1e-9 * max(np.abs(g.values).max(), 1e-300)


def test_solver_rejects_bad_tolerance():
    d = Domain(1, 1, 8, 8)
    with pytest.raises(ValueError):
        grid.solve_biharmonic(d.zeros(), tol=0)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("s", [-1, -0.5, 0, 0.5, 1, 1.5, 2])
def test_norms_of_zero(s):
    assert grid.sobolev_norm(Domain(1, 1, 10, 10).zeros(), s) == 0.0


def test_l2_norm_of_sine_mode():
    errs = []
    for n in (15, 31, 63):
        errs.append(abs(grid.sobolev_norm(sine_field(Domain(1, 1, n, n)), 0) - 0.5))
    # the node sum of sin^2 is exact, so only the O(h^2) grid effect could show
    assert errs[-1] < 1e-12 or all(r >= 1.8 for r in rate(errs))


def test_negative_norm_of_eigenfunction():
    errs = []
    for n in (15, 31, 63):
        f = sine_field(Domain(1, 1, n, n))
        target = grid.sobolev_norm(f, 0) / math.sqrt(2 * PI**2)
        errs.append(abs(grid.sobolev_norm(f, -1) - target))
    assert all(1.8 <= r <= 2.2 for r in rate(errs))
    assert errs[-1] < 1e-4


@given(small_domains, coeff_lists, scalars, st.sampled_from([-1, -0.5, 0, 0.3, 1, 1.5, 2]))
def test_norm_homogeneity(d, a, lam, s):
    f = clamped_modes(d, a)
    assert grid.sobolev_norm(f * lam, s) == pytest.approx(abs(lam) * grid.sobolev_norm(f, s),
                                                          rel=1e-12, abs=1e-300)


def test_fractional_norm_interpolates_between_integer_orders(rng):
    d = Domain(1, 1, 20, 20)
    f = random_clamped(d, rng)
    vals = [grid.sobolev_norm(f, s) for s in (0, 0.5, 1.5)]
    assert vals[0] < vals[1] < vals[2]


def test_fractional_norm_cap():
    d = Domain(1, 1, 20, 20)
    with pytest.raises(SpectralUnavailable):
        grid.sobolev_norm(sine_field(d), 1.5, spectral_cap=100)
    with pytest.raises(ValueError):
        grid.sobolev_norm(d.zeros(), 2.5)


# ---------------------------------------------------------------------------
# zero extension
# ---------------------------------------------------------------------------

def test_extension_by_zero(rng):
    d = Domain(2, 1, 9, 9)
    f = d.field(rng.standard_normal(d.shape))
    e = grid.extend_by_zero(f)
    assert np.all(e(np.array([-0.1, 2.5, 1.0, 1.0]), np.array([0.5, 0.5, -1e-9, 1.2])) == 0)
    X, Y = d.mesh()
    assert np.array_equal(e(X, Y), f.values)
    i, j = 3, 4
    mid = e((i + 1.5) * d.hx, (j + 1.5) * d.hy)
    assert mid == pytest.approx(f.values[i:i + 2, j:j + 2].mean(), rel=1e-14)


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

@given(small_domains, coeff_lists)
def test_field_file_roundtrip_is_bit_exact(tmp_path_factory, d, a):
    f = clamped_modes(d, a)
    path = tmp_path_factory.mktemp("f") / "u.txt"
    grid.write_field(path, f)
    g = grid.read_field(path)
    assert g.domain == d and np.array_equal(g.values, f.values)


def test_field_parse_rejects_bad_input():
    with pytest.raises(ValueError):
        grid.parse_field("garbage\n1 2 3\n")
    with pytest.raises(ValueError):
        grid.parse_field(f"{grid.FIELD_MAGIC} nx=8 ny=8 Lx=1.0 Ly=1.0\n1 2 3\n")
