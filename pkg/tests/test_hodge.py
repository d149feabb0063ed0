import numpy as np
import pytest
import scipy.sparse as sp

from jforms import hodge, oracles
from jforms.errors import SpectralGapError
from jforms.grid import (FormField, Grid, MetricField, band_limited, d_matrix, ext_d, frame_matrix,
                         inner, ncomp, norm, pointwise)
from jforms.suite import _partner_defects


def diag_metric(grid, seed=0, amp=0.3):
    m = band_limited(grid, 4, np.random.default_rng(seed), kmax=1)
    g = np.zeros(grid.shape + (4, 4))
    for i in range(4):
        g[..., i, i] = np.exp(amp * m[i])
    return MetricField(grid, g)


CONST_G = np.array([[2.0, 0.3, 0.0, 0.1],
                    [0.3, 1.0, 0.2, 0.0],
                    [0.0, 0.2, 1.5, -0.4],
                    [0.1, 0.0, -0.4, 1.2]])


def random_form(grid, k, seed):
    return FormField(grid, k, np.random.default_rng(seed).standard_normal((ncomp(k),) + grid.shape))


def chiral(grid, g, seed, sign):
    sd, asd = hodge.self_dual_parts(grid, g, np.random.default_rng(seed).standard_normal((1, 6) + grid.shape))
    return FormField(grid, 2, (sd if sign > 0 else asd)[0])


# Laplacian ------------------------------------------------------------------

def test_laplacian_kills_constants():
    grid = Grid.cube(5)
    g = MetricField.flat(grid)
    c = FormField.constant(grid, 2, np.arange(6.0))
    assert hodge.laplacian(grid, g, c).max_abs() < 1e-12


def test_laplacian_single_mode_eigenvalue():
    grid = Grid((5, 7, 3, 5), (1.0, 2.0, 1.5, 1.0))
    g = MetricField.flat(grid)
    k = (1, 2, 1, 0)
    X = grid.coords()
    f = np.cos(sum(2 * np.pi * k[i] * X[i] / grid.L[i] for i in range(4)))
    lam = sum((np.sin(2 * np.pi * k[i] / grid.n[i]) / grid.h[i]) ** 2 for i in range(4))
    out = hodge.laplacian(grid, g, FormField(grid, 0, f[None]))
    assert np.allclose(out.data[0], lam * f, atol=1e-10 * lam)


@pytest.mark.parametrize("k", range(5))
def test_laplacian_psd_and_symmetric(k):
    grid = Grid.cube(3)
    g = diag_metric(grid, 1)
    a, b = random_form(grid, k, 10 + k), random_form(grid, k, 20 + k)
    La, Lb = hodge.laplacian(grid, g, a), hodge.laplacian(grid, g, b)
    assert inner(grid, g, a, La) >= 0
    assert np.isclose(inner(grid, g, a, Lb), inner(grid, g, La, b), rtol=1e-10)


# harmonic forms and Betti numbers -------------------------------------------

@pytest.mark.parametrize("k,dim", [(0, 1), (1, 4), (2, 6)])
def test_harmonic_basis_flat(k, dim):
    grid = Grid.cube(5)
    g = MetricField.flat(grid)
    hb = hodge.harmonic_basis(grid, g, k)
    assert hb.dim == dim
    assert hb.gap_ratio <= 1e-4
    # members are constant and orthonormal
    X = hb.array()
    assert np.allclose(X, X.mean(axis=(2, 3, 4, 5), keepdims=True), atol=1e-8)
    G = np.array([[inner(grid, g, a, b) for b in hb.forms] for a in hb.forms])
    assert np.allclose(G, np.eye(dim), atol=1e-10)
    assert set(hb.to_dict()) >= {"degree", "dims", "eigenvalues", "gap"}


def test_harmonic_basis_without_room_fails_loudly():
    grid = Grid.cube(3)
    with pytest.raises(SpectralGapError) as exc:
        hodge.harmonic_basis(grid, MetricField.flat(grid), 2, dim_budget=6)
    assert "eigenvalues" in exc.value.details


def test_betti_flat_matches_dense_count():
    grid = Grid.cube(3)
    bn = hodge.betti_numbers(grid, MetricField.flat(grid))
    assert bn.b == [1, 4, 6, 4, 1] == oracles.dense_betti(grid)
    assert (bn.bplus, bn.bminus) == (3, 3)


def test_betti_non_uniform_metric():
    grid = Grid.cube(3)
    bn = hodge.betti_numbers(grid, diag_metric(grid, 2))
    assert bn.b == bn.b[::-1]
    assert bn.bplus + bn.bminus == bn.b[2]
    assert bn.b == [1, 4, 6, 4, 1] and bn.bplus == 3


# decomposition --------------------------------------------------------------

def _check_against_dense(grid, g, k, seed, tol):
    a = random_form(grid, k, seed)
    dec = hodge.hodge_decompose(grid, g, a)
    harm, ex, co = oracles.dense_hodge_parts(grid, g, k, a.data)
    scale = a.max_abs()
    assert np.abs(dec.harmonic.data - harm).max() <= tol * scale
    assert np.abs(dec.exact.data - ex).max() <= tol * scale
    assert np.abs(dec.coexact.data - co).max() <= tol * scale
    assert dec.residual <= 1e-8 and dec.orthogonality <= 1e-8


@pytest.mark.parametrize("k", [1, 2, 3])
def test_decomposition_matches_dense_projection_with_metric(k):
    grid = Grid.cube(3)
    _check_against_dense(grid, diag_metric(grid, 3), k, 30 + k, 1e-8)


@pytest.mark.slow
def test_decomposition_matches_dense_projection_flat_5():
    grid = Grid.cube(5)
    _check_against_dense(grid, MetricField.flat(grid), 2, 7, 1e-8)


def test_decompose_exact_input():
    grid = Grid.cube(5)
    g = diag_metric(grid, 4)
    a = ext_d(grid, random_form(grid, 1, 5))
    dec = hodge.hodge_decompose(grid, g, a)
    assert norm(grid, g, dec.harmonic) <= 1e-8 * norm(grid, g, a)
    assert norm(grid, g, dec.coexact) <= 1e-8 * norm(grid, g, a)
    assert dec.residual <= 1e-8


def test_decompose_harmonic_input():
    grid = Grid.cube(5)
    g = MetricField.flat(grid)
    a = FormField.constant(grid, 2, [1, 0, 2, 0, -1, 3])
    dec = hodge.hodge_decompose(grid, g, a)
    assert np.allclose(dec.harmonic.data, a.data, atol=1e-12)
    assert dec.exact.max_abs() < 1e-12 and dec.coexact.max_abs() < 1e-12


@pytest.mark.parametrize("metric", ["flat", "constant", "diagonal"])
def test_alpha2_recovers_coexact_part(metric):
    grid = Grid.cube(3)
    g = {"flat": MetricField.flat(grid), "constant": MetricField(grid, CONST_G),
         "diagonal": diag_metric(grid, 5)}[metric]
    dec = hodge.hodge_decompose(grid, g, random_form(grid, 2, 6))
    star_da2 = pointwise(g.star2_matrix, ext_d(grid, dec.alpha2()).data[None])[0]
    assert np.allclose(star_da2, dec.coexact.data, atol=1e-9)


def test_alpha2_needs_two_forms():
    grid = Grid.cube(3)
    dec = hodge.hodge_decompose(grid, MetricField.flat(grid), random_form(grid, 1, 0))
    with pytest.raises(ValueError):
        dec.alpha2()


# partners -------------------------------------------------------------------

def test_partner_of_harmonic_self_dual_is_zero():
    grid = Grid.cube(5)
    g = MetricField.flat(grid)
    a = FormField.constant(grid, 2, [1, 0, 0, 0, 0, 1])
    beta = hodge.asd_partner(grid, g, a)
    assert beta.max_abs() < 1e-12


def test_partner_of_modulated_kahler_form():
    grid = Grid.cube(7)
    g = MetricField.flat(grid)
    x1 = grid.coords()[0]
    a = FormField(grid, 2, np.cos(2 * np.pi * x1) * np.array([1, 0, 0, 0, 0, 1.0]).reshape(6, 1, 1, 1, 1))
    beta = hodge.asd_partner(grid, g, a)
    dd, chir = _partner_defects(grid, g, a, beta, -1)
    assert dd <= 1e-8 and chir <= 1e-6


@pytest.mark.parametrize("metric", ["flat", "constant"])
@pytest.mark.parametrize("sign", [1, -1])
def test_partners_random(metric, sign):
    grid = Grid.cube(7)
    g = MetricField.flat(grid) if metric == "flat" else MetricField(grid, CONST_G)
    for seed in range(3):
        a = chiral(grid, g, seed, sign)
        beta = (hodge.asd_partner if sign > 0 else hodge.sd_partner)(grid, g, a)
        dd, chir = _partner_defects(grid, g, a, beta, -sign)
        assert dd <= 1e-8 and chir <= 1e-6


def test_partner_against_least_squares_over_opposite_chirality():
    grid = Grid.cube(3)
    g = MetricField.flat(grid)
    a = chiral(grid, g, 11, 1)
    beta = hodge.asd_partner(grid, g, a)
    # frame of anti-self-dual 2-forms at every point
    S = g.star2_matrix
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    asd = V[:, w < 0].T
    E = frame_matrix(np.broadcast_to(asd, grid.shape + asd.shape))
    D = d_matrix(grid, 2)
    M = (D @ E).toarray()
    da = D @ a.data.ravel()
    c, *_ = np.linalg.lstsq(M, da, rcond=1e-10)
    assert np.linalg.norm(M @ c - da) <= 1e-8 * np.linalg.norm(da)
    db = D @ beta.data.ravel()
    assert np.linalg.norm(db - M @ c) <= 1e-8 * np.linalg.norm(da)
    # beta itself lies in the span of the frame
    coef, *_ = np.linalg.lstsq(E.toarray(), beta.data.ravel(), rcond=None)
    assert np.linalg.norm(E @ coef - beta.data.ravel()) <= 1e-8 * np.linalg.norm(beta.data)
    assert sp.issparse(E)


def test_partner_rejects_wrong_chirality():
    grid = Grid.cube(3)
    g = MetricField.flat(grid)
    with pytest.raises(ValueError, match="not self-dual"):
        hodge.asd_partner(grid, g, chiral(grid, g, 0, -1))
    with pytest.raises(ValueError, match="not anti-self-dual"):
        hodge.sd_partner(grid, g, chiral(grid, g, 0, 1))
    with pytest.raises(ValueError, match="2-form"):
        hodge.asd_partner(grid, g, random_form(grid, 1, 0))
