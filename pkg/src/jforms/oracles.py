"""Independent dense reference computations for small grids.

These deliberately avoid the matrix-free code paths: operators are assembled
as sparse matrices, densified, and handled with SVDs or least squares.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from . import fiber
from .grid import Grid, MetricField, d_matrix, ncomp
from .linalg import decide_rank

# Hodge star in an oriented orthonormal coframe, written out by hand
_FLAT_STAR2 = np.array([
    # 12  13  14  23  24  34
    [0, 0, 0, 0, 0, 1],    # *dx34 -> dx12 coefficient
    [0, 0, 0, 0, -1, 0],
    [0, 0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0, 0],
    [0, -1, 0, 0, 0, 0],
    [1, 0, 0, 0, 0, 0],
], dtype=float)


def star2_orthonormal(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Hodge star of a single 2-form via an oriented g-orthonormal frame."""
    L = np.linalg.cholesky(g)
    A = np.linalg.inv(L).T          # columns: orthonormal frame, A^T g A = I
    if np.linalg.det(A) < 0:
        A[:, 0] *= -1
    M = fiber.vec_to_mat(a)
    framed = fiber.mat_to_vec(A.T @ M @ A)
    starred = fiber.vec_to_mat(_FLAT_STAR2 @ framed)
    Ainv = np.linalg.inv(A)
    return fiber.mat_to_vec(Ainv.T @ starred @ Ainv)


def _weights_dense(g: MetricField, k: int) -> np.ndarray:
    """Block matrix of the pointwise form metric (component-major layout)."""
    N = g.grid.npoints
    C = ncomp(k)
    W = g.weight(k)
    out = np.zeros((C * N, C * N))
    for p in range(C):
        for q in range(C):
            w = W[p, q] if W.ndim > 2 else np.full(g.grid.shape, W[p, q])
            out[p * N:(p + 1) * N, q * N:(q + 1) * N] = np.diag(np.broadcast_to(w, g.grid.shape).ravel())
    return out


def _projector(A: np.ndarray, W: np.ndarray) -> np.ndarray:
    """W-orthogonal projector onto range(A) through an SVD of ``W^1/2 A``."""
    w = np.diag(W)
    if np.count_nonzero(W - np.diag(w)) == 0:
        Wh, Whi = np.diag(np.sqrt(w)), np.diag(1.0 / np.sqrt(w))
    else:
        lam, V = np.linalg.eigh(W)
        Wh = (V * np.sqrt(lam)) @ V.T
        Whi = (V / np.sqrt(lam)) @ V.T
    U, s, _ = np.linalg.svd(Wh @ A, full_matrices=False)
    r = decide_rank(s, what="projector range").rank
    Ur = U[:, :r]
    return Whi @ (Ur @ (Ur.T @ Wh))


def dense_hodge_parts(grid: Grid, g: MetricField, k: int, a: np.ndarray):
    """(harmonic, exact, coexact) parts of field data ``a`` via dense projectors."""
    N = grid.npoints
    x = a.ravel()
    W = _weights_dense(g, k)
    parts = []
    if k > 0:
        parts.append(_projector(d_matrix(grid, k - 1).toarray(), W) @ x)
    else:
        parts.append(np.zeros_like(x))
    if k < 4:
        Wn = _weights_dense(g, k + 1)
        co = np.linalg.solve(W, d_matrix(grid, k).toarray().T @ Wn)
        parts.append(_projector(co, W) @ x)
    else:
        parts.append(np.zeros_like(x))
    exact, coexact = parts
    harmonic = x - exact - coexact
    shape = (ncomp(k),) + grid.shape
    return harmonic.reshape(shape), exact.reshape(shape), coexact.reshape(shape)


def dense_betti(grid: Grid) -> list[int]:
    """``dim ker d_k - rank d_{k-1}`` from dense singular values."""
    ranks = [0]
    for k in range(4):
        s = np.linalg.svd(d_matrix(grid, k).toarray(), compute_uv=False)
        ranks.append(decide_rank(s, size=ncomp(k) * grid.npoints).rank)
    ranks.append(0)
    return [ncomp(k) * grid.npoints - ranks[k + 1] - ranks[k] for k in range(5)]


def dense_affine_projection(D: np.ndarray, rhs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Least-norm correction onto ``{D x = rhs}`` via the pseudoinverse."""
    corr, *_ = np.linalg.lstsq(D, D @ x - rhs, rcond=1e-10)
    return x - corr


def soc_projection_1d(f: float, b: np.ndarray, eps: float = 0.0) -> tuple[float, np.ndarray]:
    """Projection onto ``{f >= |b| + eps}`` by scalar minimization.

    The nearest point lies in the half-plane spanned by the apex direction
    and ``b``; it is either the input or on the boundary ray
    ``(eps + t, t * b/|b|)``.
    """
    b = np.asarray(b, dtype=float)
    nb = float(np.linalg.norm(b))
    if f >= nb + eps:
        return f, b.copy()
    u = b / nb if nb > 0 else np.zeros_like(b)

    def dist(t):
        return (eps + t - f) ** 2 + (t - nb) ** 2

    hi = abs(f) + nb + 1.0
    res = minimize_scalar(dist, bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-14})
    t = float(res.x) if dist(res.x) < dist(0.0) else 0.0
    return eps + t, t * u


def min_scale_scan(J: np.ndarray, theta: np.ndarray, omega: np.ndarray,
                   iters: int = 200) -> float:
    """Smallest ``n`` with ``n omega + theta`` J-positive, by per-point bisection."""
    lo = np.zeros(theta.shape[:-1])
    hi = np.ones(theta.shape[:-1])
    while True:
        bad = fiber.positivity_margin(J, hi[..., None] * omega + theta) <= 0
        if not bad.any():
            break
        hi = np.where(bad, 2 * hi, hi)
    ok0 = fiber.positivity_margin(J, theta) > 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = fiber.positivity_margin(J, mid[..., None] * omega + theta) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return float(np.max(np.where(ok0, 0.0, hi)))
