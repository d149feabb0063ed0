"""Pointwise exterior algebra on a single tangent space of R^4.

Every function here is vectorized: 2-forms are arrays of shape ``(..., 6)``,
endomorphisms and metrics are ``(..., 4, 4)``.  Leading axes are batch axes
(usually the grid points), so the same code serves a single fiber and a
whole field.

Conventions
-----------
* k-form coefficients are stored in lexicographic order of increasing index
  tuples.  For 2-forms that is ``dx12, dx13, dx14, dx23, dx24, dx34``.
* The orientation is ``dx1 ^ dx2 ^ dx3 ^ dx4``.
* A 2-form ``a`` is identified with the antisymmetric matrix
  ``A[i, j] = a(e_i, e_j)``.
* An endomorphism ``J`` acts on column vectors, ``J e_j = sum_i J[i, j] e_i``.
* The pointwise inner product on k-forms is induced by the metric, so that
  ``|dx12|^2 = 1`` for the Euclidean metric and ``a ^ *b = <a, b> vol``.
"""
from __future__ import annotations

from itertools import combinations
from typing import NamedTuple

import numpy as np

BASIS = {k: tuple(combinations(range(4), k)) for k in range(5)}
PAIRS = BASIS[2]
LABELS = {k: tuple("dx" + "".join(str(i + 1) for i in idx) if idx else "1"
                   for idx in BASIS[k]) for k in range(5)}

J0 = np.array([[0.0, -1.0, 0.0, 0.0],
               [1.0, 0.0, 0.0, 0.0],
               [0.0, 0.0, 0.0, -1.0],
               [0.0, 0.0, 1.0, 0.0]])
"""Standard structure: ``e1 -> e2``, ``e3 -> e4``."""

OMEGA0 = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
"""Fundamental form ``dx12 + dx34`` of ``(J0, identity)``."""

EXACT_TOL = 1e-12
FRAME_TOL = 1e-10


class SocCoordinates(NamedTuple):
    """Coordinates of a J-invariant 2-form in an adapted frame.

    The form equals ``f * omega_g + sum_i b[..., i] * asd_i`` and is
    J-positive exactly when ``f > |b|``.
    """

    f: np.ndarray
    b: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        return self.f - np.linalg.norm(self.b, axis=-1)


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _pairing(k: int) -> np.ndarray:
    basis_k, basis_c = BASIS[k], BASIS[4 - k]
    E = np.zeros((len(basis_k), len(basis_c)))
    for i, I in enumerate(basis_k):
        for j, K in enumerate(basis_c):
            if not set(I) & set(K):
                E[i, j] = _perm_sign(I + K)
    return E


WEDGE = {k: _pairing(k) for k in range(5)}
"""``WEDGE[k][I, K]``: coefficient of the volume form in ``dx^I ^ dx^K``."""


def compound(M: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix (all k-by-k minors) of a batch of 4x4 matrices.

    With ``C = compound(M, k)``, a k-form with coefficients ``a`` pulled back
    along ``M`` has coefficients ``C.T @ a``.
    """
    M = np.asarray(M, dtype=float)
    batch = M.shape[:-2]
    if k == 0:
        return np.ones(batch + (1, 1))
    idx = np.array(BASIS[k])
    rows = idx[:, None, :, None]
    cols = idx[None, :, None, :]
    sub = M[..., rows, cols]
    return np.linalg.det(sub)


def vec_to_mat(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    A = np.zeros(a.shape[:-1] + (4, 4))
    for c, (i, j) in enumerate(PAIRS):
        A[..., i, j] = a[..., c]
        A[..., j, i] = -a[..., c]
    return A


def mat_to_vec(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return np.stack([0.5 * (A[..., i, j] - A[..., j, i]) for i, j in PAIRS], axis=-1)


def check_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] != (4, 4):
        raise ValueError(f"metric must have trailing shape (4, 4), got {g.shape}")
    asym = np.max(np.abs(g - np.swapaxes(g, -1, -2)), initial=0.0)
    if asym > EXACT_TOL * max(1.0, np.max(np.abs(g))):
        raise ValueError(f"metric is not symmetric (defect {asym:.3e})")
    lam = np.linalg.eigvalsh(g)[..., 0]
    if np.any(lam <= 0):
        raise ValueError(f"metric is not positive definite (smallest eigenvalue {lam.min():.3e})")
    return g


def check_j(J: np.ndarray, tol: float = EXACT_TOL) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape[-2:] != (4, 4):
        raise ValueError(f"J must have trailing shape (4, 4), got {J.shape}")
    defect = np.max(np.abs(J @ J + np.eye(4)), initial=0.0)
    if defect > tol * max(1.0, np.max(np.abs(J)) ** 2):
        raise ValueError(f"J^2 = -I violated (defect {defect:.3e})")
    return J


def wedge2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coefficient of ``dx1234`` in ``a ^ b``."""
    return np.einsum("...i,ij,...j->...", a, WEDGE[2], b)


def form_metric(g: np.ndarray, k: int) -> np.ndarray:
    """Gram matrix of the induced inner product on k-forms."""
    return compound(np.linalg.inv(g), k)


def star_matrix(g: np.ndarray, k: int) -> np.ndarray:
    """Matrix of the Hodge star on k-forms, characterized by ``a ^ *b = <a,b> vol``."""
    g = np.asarray(g, dtype=float)
    vol = np.sqrt(np.linalg.det(g))[..., None, None]
    return vol * (WEDGE[k].T @ form_metric(g, k))


def inner2(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", a, form_metric(g, 2), b)


def star2(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    g = check_metric(g)
    return np.einsum("...ij,...j->...i", star_matrix(g, 2), a)


def j_matrix2(J: np.ndarray) -> np.ndarray:
    """Matrix of ``a -> a(J., J.)`` on 2-form coefficients."""
    return np.swapaxes(compound(J, 2), -1, -2)


def j_act2(J: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", j_matrix2(J), a)


def proj_j(J: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``a`` into its J-invariant and J-anti-invariant parts."""
    a = np.asarray(a, dtype=float)
    ja = j_act2(J, a)
    return 0.5 * (a + ja), 0.5 * (a - ja)


def proj_g(g: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``a`` into its self-dual and anti-self-dual parts."""
    a = np.asarray(a, dtype=float)
    sa = star2(g, a)
    return 0.5 * (a + sa), 0.5 * (a - sa)


def taming_form(J: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Symmetric part of the bilinear form ``(X, Y) -> w(X, JY)``."""
    S = vec_to_mat(w) @ J
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def positivity_margin(J: np.ndarray, w: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """Smallest eigenvalue of ``sym w(., J.)``.

    Without ``g`` the eigenvalue is taken in the coordinate basis.  With
    ``g`` it is the generalized eigenvalue relative to ``g``, i.e. measured
    in a g-orthonormal frame; the sign is the same either way.
    """
    S = taming_form(J, w)
    if g is None:
        return np.linalg.eigvalsh(S)[..., 0]
    Linv = np.linalg.inv(np.linalg.cholesky(g))
    return np.linalg.eigvalsh(Linv @ S @ np.swapaxes(Linv, -1, -2))[..., 0]


def compatible_metric(J: np.ndarray, g0: np.ndarray) -> np.ndarray:
    """Average ``g0`` over J: ``(g0 + g0(J., J.)) / 2``."""
    return 0.5 * (g0 + np.swapaxes(J, -1, -2) @ g0 @ J)


def fundamental_form(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``omega(X, Y) = g(JX, Y)`` as 2-form coefficients."""
    return mat_to_vec(np.swapaxes(J, -1, -2) @ g)


def adapted_frame(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """g-orthonormal, positively oriented frame ``(e1, J e1, e3, J e3)``.

    Returns the frame vectors as columns.  ``g`` must be J-compatible.
    Raises ValueError when ``J`` induces the opposite orientation.
    """
    J = np.asarray(J, dtype=float)
    g = np.asarray(g, dtype=float)
    batch = np.broadcast_shapes(J.shape[:-2], g.shape[:-2])
    J = np.broadcast_to(J, batch + (4, 4))
    g = np.broadcast_to(g, batch + (4, 4))

    def ip(u, v):
        return np.einsum("...i,...ij,...j->...", u, g, v)

    e1 = np.broadcast_to(np.eye(4)[0], batch + (4,))
    e1 = e1 / np.sqrt(ip(e1, e1))[..., None]
    e2 = np.einsum("...ij,...j->...i", J, e1)
    best = None
    best_norm = None
    for c in range(1, 4):
        v = np.broadcast_to(np.eye(4)[c], batch + (4,))
        v = v - ip(v, e1)[..., None] * e1 - ip(v, e2)[..., None] * e2
        nv = np.sqrt(ip(v, v))
        if best is None:
            best, best_norm = v, nv
        else:
            take = (nv > best_norm)[..., None]
            best = np.where(take, v, best)
            best_norm = np.maximum(nv, best_norm)
    e3 = best / best_norm[..., None]
    e4 = np.einsum("...ij,...j->...i", J, e3)
    E = np.stack([e1, e2, e3, e4], axis=-1)
    if np.any(np.linalg.det(E) <= 0):
        raise ValueError("J induces the opposite orientation to dx1234")
    return E


def _frame_forms(E: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Coordinate coefficients of frame 2-forms ``F`` (shape (m, 6)) in coframe of ``E``."""
    Theta = np.linalg.inv(E)
    Fm = vec_to_mat(F)  # (m, 4, 4)
    A = np.einsum("...ki,mkl,...lj->...mij", Theta, Fm, Theta)
    return mat_to_vec(A)


# frame coefficients of omega, the anti-self-dual frame and the anti-invariant frame
_STD_INVARIANT = np.array([[1.0, 0, 0, 0, 0, 1.0],
                           [1.0, 0, 0, 0, 0, -1.0],
                           [0, 1.0, 0, 0, 1.0, 0],
                           [0, 0, 1.0, -1.0, 0, 0]])
_STD_ANTI = np.array([[0, 1.0, 0, 0, -1.0, 0],
                      [0, 0, 1.0, 1.0, 0, 0]])


def invariant_frame(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Rows ``omega_g, asd_1, asd_2, asd_3`` spanning the J-invariant 2-forms.

    The last three rows are g-anti-self-dual, pairwise orthogonal, and have
    the same norm as ``omega_g`` (``|.|^2 = 2``), so that positivity of
    ``f omega_g + sum b_i asd_i`` is the second-order cone ``f > |b|``.
    """
    return _frame_forms(adapted_frame(J, g), _STD_INVARIANT)


def anti_invariant_frame(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Two orthogonal rows spanning the J-anti-invariant 2-forms (``|.|^2 = 2``)."""
    return _frame_forms(adapted_frame(J, g), _STD_ANTI)


def soc_coordinates(J: np.ndarray, g_J: np.ndarray, w_plus: np.ndarray,
                    tol: float = FRAME_TOL) -> SocCoordinates:
    """Decompose a J-invariant form as ``f omega_g + sum b_i asd_i``."""
    w_plus = np.asarray(w_plus, dtype=float)
    resid = np.max(np.abs(j_act2(J, w_plus) - w_plus), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(w_plus), initial=0.0)))
    if resid > tol * scale:
        raise ValueError(f"form is not J-invariant (residual {resid:.3e})")
    frame = invariant_frame(J, g_J)
    coeffs = 0.5 * np.einsum("...mi,...ij,...j->...m", frame, form_metric(g_J, 2), w_plus)
    return SocCoordinates(coeffs[..., 0], coeffs[..., 1:])


def from_soc(J: np.ndarray, g_J: np.ndarray, f: np.ndarray, b: np.ndarray) -> np.ndarray:
    frame = invariant_frame(J, g_J)
    coeffs = np.concatenate([np.asarray(f)[..., None], np.asarray(b)], axis=-1)
    return np.einsum("...m,...mi->...i", coeffs, frame)


def debug_dump(J: np.ndarray, g0: np.ndarray, w: np.ndarray) -> dict:
    """JSON-ready record of every fiber quantity derived from ``(J, g0, w)``."""
    g_J = compatible_metric(J, g0)
    plus, minus = proj_j(J, w)
    sd, asd = proj_g(g_J, w)
    soc = soc_coordinates(J, g_J, plus)
    return {
        "basis": list(LABELS[2]),
        "inputs": {"J": np.asarray(J).tolist(), "g0": np.asarray(g0).tolist(),
                   "w": np.asarray(w).tolist()},
        "outputs": {
            "g_J": g_J.tolist(),
            "omega_g": fundamental_form(J, g_J).tolist(),
            "star_w": star2(g_J, w).tolist(),
            "j_plus": plus.tolist(),
            "j_minus": minus.tolist(),
            "self_dual": sd.tolist(),
            "anti_self_dual": asd.tolist(),
            "soc": {"f": float(soc.f), "b": soc.b.tolist()},
            "positivity_margin": float(positivity_margin(J, w)),
            "positivity_margin_g_J": float(positivity_margin(J, w, g_J)),
        },
    }
