"""Almost complex structures on the grid and the invariants they define.

Rank and kernel statements are decided from singular values with
:func:`jforms.linalg.decide_rank`: a relative threshold with a mandatory
gap, so that an ambiguous spectrum raises instead of yielding a wrong
integer.  Dense SVDs are used up to ``DENSE_LIMIT`` grid points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fiber, linalg
from .errors import SpectralGapError
from .grid import (FormField, Grid, MetricField, band_limited, d_matrix, d_raw, dT_raw,
                   frame_matrix, pointwise, to_pointwise)
from .hodge import betti_numbers, self_dual_parts

DENSE_LIMIT = 625


class JField:
    """Pointwise almost complex structure ``J(x)`` with ``J^2 = -I``."""

    def __init__(self, grid: Grid, matrix: np.ndarray, recipe: dict | None = None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape == (4, 4):
            matrix = np.broadcast_to(matrix, grid.shape + (4, 4)).copy()
        if matrix.shape != grid.shape + (4, 4):
            raise ValueError(f"J field shape {matrix.shape} does not match grid {grid.shape}")
        fiber.check_j(matrix)
        self.grid = grid
        self.matrix = matrix
        self.recipe = recipe or {"type": "custom"}

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.matrix == self.matrix[(0,) * 4]))


def make_constant_J(grid: Grid, J: np.ndarray = fiber.J0) -> JField:
    return JField(grid, J, {"type": "constant"})


def make_conjugated_J(grid: Grid, P: np.ndarray, recipe: dict | None = None) -> JField:
    """``J = P J0 P^-1`` pointwise; ``P`` has shape ``(n1..n4, 4, 4)``."""
    P = np.broadcast_to(np.asarray(P, dtype=float), grid.shape + (4, 4))
    cond = np.linalg.cond(P)
    worst = np.unravel_index(np.argmax(cond), grid.shape)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
        raise ValueError(f"conjugating field is singular; worst conditioning {cond[worst]:.3e} "
                         f"at grid index {tuple(int(i) for i in worst)}")
    det = np.linalg.det(P)
    if np.any(det <= 0):
        bad = np.unravel_index(np.argmin(det), grid.shape)
        raise ValueError(f"conjugating field reverses orientation at grid index "
                         f"{tuple(int(i) for i in bad)}")
    J = P @ fiber.J0 @ np.linalg.inv(P)
    recipe = dict(recipe or {"type": "conjugated"})
    recipe["max_condition"] = float(cond.max())
    return JField(grid, J, recipe)


def conjugation_field(grid: Grid, amplitude: float, modes: int = 1, seed: int = 0) -> np.ndarray:
    """``I + amplitude * M(x)`` with band-limited entries drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    M = band_limited(grid, 16, rng, kmax=modes)
    return np.eye(4) + amplitude * np.moveaxis(M, 0, -1).reshape(grid.shape + (4, 4))


def make_recipe_J(grid: Grid, recipe: dict) -> JField:
    kind = recipe.get("type", "constant")
    if kind == "constant":
        return make_constant_J(grid)
    if kind == "conjugated":
        P = conjugation_field(grid, recipe["amplitude"], recipe.get("modes", 1), recipe.get("seed", 0))
        return make_conjugated_J(grid, P, dict(recipe))
    raise ValueError(f"unknown J recipe {kind!r}")


@dataclass
class TameConfigCache:
    """Compatible metric, fundamental form and adapted frames for ``(J, g0)``."""

    grid: Grid
    J: JField
    g0: MetricField
    g_J: MetricField
    omega: FormField
    invariant_frame: np.ndarray = field(repr=False)   # (n.., 4, 6): omega_g, asd_1..3
    anti_frame: np.ndarray = field(repr=False)        # (n.., 2, 6)


def compatible_pair(grid: Grid, J: JField, g0: MetricField) -> TameConfigCache:
    gJ = fiber.compatible_metric(J.matrix, g0.full())
    defect = np.max(np.abs(np.swapaxes(J.matrix, -1, -2) @ gJ @ J.matrix - gJ))
    if defect > fiber.EXACT_TOL * max(1.0, np.max(np.abs(gJ))):
        raise ValueError(f"averaged metric is not J-compatible (defect {defect:.3e})")
    if J.is_constant and g0.uniform:
        gJ = gJ[(0,) * 4]
    g_J = MetricField(grid, gJ)
    Jm = J.matrix
    gfull = g_J.full()
    omega = fiber.fundamental_form(Jm, gfull)
    inv_frame = fiber.invariant_frame(Jm, gfull)
    anti = fiber.anti_invariant_frame(Jm, gfull)
    margin = fiber.positivity_margin(Jm, omega)
    if np.any(margin <= 0):
        raise ValueError("fundamental form is not J-positive")
    return TameConfigCache(grid, J, g0, g_J, FormField.from_fiber(grid, omega), inv_frame, anti)


def proj_field_j(J: JField, a: FormField) -> tuple[FormField, FormField]:
    plus, minus = fiber.proj_j(J.matrix, a.fiber)
    return FormField.from_fiber(a.grid, plus), FormField.from_fiber(a.grid, minus)


def proj_field_g(g: MetricField, a: FormField) -> tuple[FormField, FormField]:
    sd, asd = self_dual_parts(a.grid, g, a.data[None])
    return FormField(a.grid, 2, sd[0]), FormField(a.grid, 2, asd[0])


def d_j_ops(grid: Grid, J: JField, a: FormField) -> tuple[FormField, FormField]:
    """``(d_J^+ a, d_J^- a)``: J-invariant and anti-invariant parts of ``d a``."""
    if a.degree != 1:
        raise ValueError("d_J^+- act on 1-forms")
    da = FormField(grid, 2, d_raw(a.data[None], 1, grid.h)[0])
    return proj_field_j(J, da)


def frame_field(cache: TameConfigCache, space: str) -> np.ndarray:
    """Pointwise frame (``(n.., m, 6)``) spanning a subbundle of 2-forms."""
    if space == "J+":
        return cache.invariant_frame
    if space == "J-":
        return cache.anti_frame
    if space == "g-":
        return cache.invariant_frame[..., 1:, :]
    if space == "g+":
        return np.concatenate([cache.invariant_frame[..., :1, :], cache.anti_frame], axis=-2)
    raise ValueError(f"unknown subspace {space!r}")


def d_norm_bound(grid: Grid) -> float:
    return float(np.sqrt(sum(1.0 / h ** 2 for h in grid.h)))


class DenseOps:
    """Dense restricted operators and memoized spectra on a small grid."""

    def __init__(self, cache: TameConfigCache, limit: int = DENSE_LIMIT):
        grid = cache.grid
        if grid.npoints > limit:
            raise ValueError(f"dense rank computations are limited to {limit} points "
                             f"(grid has {grid.npoints})")
        self.cache = cache
        self.grid = grid
        self.scale = d_norm_bound(grid)
        self._svals: dict[str, np.ndarray] = {}
        self._mats: dict[str, np.ndarray] = {}
        self._range: dict[str, np.ndarray] = {}
        self._ranks: dict[str, linalg.RankReport] = {}

    def d(self, k: int) -> sp.csr_matrix:
        return d_matrix(self.grid, k)

    def embed(self, space: str) -> sp.csr_matrix:
        return frame_matrix(frame_field(self.cache, space))

    def reduce(self, space: str) -> sp.csr_matrix:
        """Coefficients of the orthogonal projection onto a J-subbundle, in its frame."""
        F = frame_field(self.cache, space)
        W2 = fiber.form_metric(self.cache.g_J.full(), 2)
        R = 0.5 * np.einsum("...mi,...ij->...mj", F, W2)
        return frame_matrix(R).T.tocsr()

    def restricted(self, space: str) -> np.ndarray:
        """Dense matrix of ``d`` on 2-form fields valued in ``space`` (or ``all``)."""
        key = f"d2|{space}"
        if key not in self._mats:
            D2 = self.d(2)
            self._mats[key] = (D2 if space == "all" else D2 @ self.embed(space)).toarray()
        return self._mats[key]

    def svals(self, key: str, A: np.ndarray) -> np.ndarray:
        if key not in self._svals:
            self._svals[key] = np.linalg.svd(A, compute_uv=False)
        return self._svals[key]

    def rank(self, key: str, A: np.ndarray | None = None) -> linalg.RankReport:
        if key not in self._ranks:
            if A is None:
                A = self.restricted(key[3:]) if key.startswith("d2|") else self.d(int(key[1:])).toarray()
            s = self.svals(key, A)
            self._ranks[key] = _decide(s, A.shape[1], self.scale, key)
        return self._ranks[key]

    def restricted_rank(self, space: str) -> linalg.RankReport:
        return self.rank(f"d2|{space}")

    def range_basis(self, space: str) -> np.ndarray:
        key = f"d2|{space}"
        if key not in self._range:
            A = self.restricted(space)
            U, s, _ = np.linalg.svd(A, full_matrices=False)
            self._svals.setdefault(key, s)
            r = self.rank(key, A).rank
            self._range[key] = U[:, :r]
        return self._range[key]

    def kernel_basis(self, key: str, A: np.ndarray) -> tuple[np.ndarray, linalg.RankReport]:
        _, s, Vt = np.linalg.svd(A, full_matrices=True)
        self._svals.setdefault(key, s)
        rep = _decide(s, A.shape[1], self.scale, key)
        self._ranks.setdefault(key, rep)
        return Vt[rep.rank:].T, rep


def _decide(s: np.ndarray, size: int, scale: float, what: str) -> linalg.RankReport:
    """Rank decision with the threshold anchored at ``max(sigma_max, scale)``.

    Restricted operators can be identically zero; anchoring at the norm of
    the unrestricted ``d`` keeps roundoff from being counted.
    """
    s = np.asarray(s, dtype=float)
    anchor = max(float(s.max(initial=0.0)), scale)
    rep = linalg.decide_rank(np.r_[anchor, s], size=size + 1, what=what)
    rep.rank -= 1
    rep.size = size
    rep.sigma_max = float(s.max(initial=0.0))
    return rep


# h_J^- ----------------------------------------------------------------------

@dataclass
class HMinus:
    value: int
    method: str
    evidence: dict


def _anti_operator(cache: TameConfigCache):
    grid = cache.grid
    F = to_pointwise(np.swapaxes(cache.anti_frame, -1, -2))   # (6, 2, n..)
    Ft = to_pointwise(cache.anti_frame)                         # (2, 6, n..)

    def apply(x):
        return pointwise(Ft, dT_raw(d_raw(pointwise(F, x), 2, grid.h), 2, grid.h))
    return apply


def h_j_minus(grid: Grid, J: JField, g0: MetricField | None = None, dense: bool | None = None,
              seed: int = 0) -> HMinus:
    """Dimension of closed J-anti-invariant 2-form fields.

    Counts the near-zero singular values of ``d`` restricted to Omega_J^-.
    """
    cache = compatible_pair(grid, J, g0 or MetricField.flat(grid))
    dense = grid.npoints <= DENSE_LIMIT if dense is None else dense
    scale = d_norm_bound(grid)
    if dense:
        ops = DenseOps(cache, limit=max(DENSE_LIMIT, grid.npoints))
        rep = ops.restricted_rank("J-")
        return HMinus(rep.nullity, "dense-svd", rep.to_dict())
    apply = _anti_operator(cache)
    rng = np.random.default_rng(seed)
    m = 6
    X0 = rng.standard_normal((m, 2) + grid.shape)
    lam_max = linalg.power_max(apply, X0)
    anchor = max(np.sqrt(lam_max), scale)
    cutoff = (linalg.RANK_RTOL * anchor) ** 2

    def converged(theta, res):
        r = int(np.sum(theta < cutoff))
        if r >= len(theta):
            return False
        return bool(np.all(res[:r] <= 1e-10 * lam_max) and res[r] <= 1e-2 * theta[r])

    out = linalg.lowest_eigenpairs(apply, X0, shift=1e-2 * lam_max, converged=converged,
                                   maxiter=300, cg_maxiter=20 * X0[0].size)
    s = np.sqrt(np.maximum(out.eigenvalues, 0.0))
    rep = linalg.decide_rank(np.r_[anchor, s], size=m + 1, what="d on Omega_J^-")
    nullity = m + 1 - rep.rank
    if nullity >= m:
        raise SpectralGapError("closed anti-invariant forms exceed the block size", rep.to_dict())
    evidence = rep.to_dict() | {"smallest_singular_values": s.tolist(),
                                "iterations": out.iterations}
    return HMinus(nullity, "subspace-iteration", evidence)


# invariants -----------------------------------------------------------------

@dataclass
class InvariantReport:
    h_minus: int
    h_plus: int
    b_plus: int
    b_minus: int
    b2: int
    dim_T_g: int
    dim_T_g_direct: int
    inequalities: dict
    evidence: dict = field(repr=False)
    betti: object = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"h_minus": self.h_minus, "h_plus": self.h_plus, "b_plus": self.b_plus,
                "b_minus": self.b_minus, "b2": self.b2, "dim_T_g": self.dim_T_g,
                "dim_T_g_direct": self.dim_T_g_direct, "inequalities": self.inequalities,
                "evidence": self.evidence}


def pairing_functions(cache: TameConfigCache, forms: np.ndarray) -> np.ndarray:
    """``<omega_g, a>_g`` as scalar fields for a batch of 2-forms."""
    W = cache.g_J.weight(2) / cache.g_J.volume_density
    w = pointwise(W, cache.omega.data[None])[0]
    return np.sum(forms * w[None], axis=1)


def invariant_report(grid: Grid, J: JField, g0: MetricField | None = None,
                     seed: int = 0) -> InvariantReport:
    g0 = g0 or MetricField.flat(grid)
    cache = compatible_pair(grid, J, g0)
    hm = h_j_minus(grid, J, g0, seed=seed)
    betti = betti_numbers(grid, cache.g_J, seed=seed)
    b2 = betti.b[2]
    h_plus = b2 - hm.value
    dim_T = betti.bplus - hm.value
    # independent count: rank of the pairing functions of harmonic self-dual forms
    H2 = betti.bases[2].array() if b2 else np.zeros((0, 6) + grid.shape)
    sd, _ = self_dual_parts(grid, cache.g_J, H2)
    funcs = pairing_functions(cache, sd)
    if funcs.shape[0]:
        vol = cache.g_J.volume_density * grid.cell_volume * np.ones(grid.shape)
        F = funcs.reshape(funcs.shape[0], -1)
        G = (F * vol.ravel()) @ F.T
        s = np.sqrt(np.maximum(np.linalg.eigvalsh(0.5 * (G + G.T)), 0.0))
        tg = linalg.decide_rank(s, what="pairing functions").rank
    else:
        tg = 0
    ineq = {"h_minus_le_bplus": hm.value <= betti.bplus,
            "h_plus_ge_bminus": h_plus >= betti.bminus,
            "h_minus_lt_bplus": hm.value < betti.bplus,
            "h_plus_gt_bminus": h_plus > betti.bminus}
    evidence = {"h_minus": {"method": hm.method} | hm.evidence, "betti": betti.to_dict()}
    return InvariantReport(hm.value, h_plus, betti.bplus, betti.bminus, b2, dim_T, tg, ineq,
                           evidence, betti)


# modified complexes -----------------------------------------------------------

@dataclass
class ComplexCohomology:
    which: str
    levels: list[str]
    dims: list[int]
    extras: dict
    evidence: dict = field(repr=False)

    def to_dict(self) -> dict:
        return {"which": self.which, "levels": self.levels, "dims": self.dims,
                "extras": self.extras, "evidence": self.evidence}


def modified_complex_cohomology(grid: Grid, J: JField, which: str,
                                g0: MetricField | None = None,
                                ops: DenseOps | None = None) -> ComplexCohomology:
    """Cohomology dimensions of the J-modified de Rham complexes.

    ``which="plus"``:  Omega0 -> Ker(d_J^-) -> Omega_J^+ -> Omega3 -> Omega4
    ``which="minus"``: Omega0 -> Ker(d_J^+) -> Omega_J^- -> Omega3 -> Omega4
    """
    if which not in ("plus", "minus"):
        raise ValueError("which must be 'plus' or 'minus'")
    if ops is None:
        ops = DenseOps(compatible_pair(grid, J, g0 or MetricField.flat(grid)))
    N = grid.npoints
    middle, other = ("J+", "J-") if which == "plus" else ("J-", "J+")
    r0 = ops.rank("d0")
    r3 = ops.rank("d3")
    r1 = ops.rank("d1")
    z1 = 4 * N - r1.rank
    z3 = 4 * N - r3.rank
    # Ker(d_J^-+) as the kernel of the projected derivative, in frame coefficients
    proj = (ops.reduce(other) @ ops.d(1)).toarray()
    K, krep = ops.kernel_basis(f"d_J{'-' if which == 'plus' else '+'}", proj)
    dK = ops.d(1).toarray() @ K
    second = _decide(np.linalg.svd(dK, compute_uv=False), dK.shape[1], ops.scale, "d on Ker")
    mid = ops.restricted_rank(middle)
    dims = [N - r0.rank,
            second.nullity - r0.rank,
            mid.nullity - second.rank,
            z3 - mid.rank,
            N - r3.rank]
    tag = "-" if which == "plus" else "+"
    levels = ["Omega0", f"Ker(d_J^{tag})", f"Omega_J^{'+' if which == 'plus' else '-'}",
              "Omega3", "Omega4"]
    extras = {"dim_Ker_dJ": K.shape[1], "dim_Z1": z1, "dim_Z3": z3,
              "kernel_equals_Z1": K.shape[1] == z1,
              "rank_second_differential": second.rank,
              "second_differential_zero": second.rank == 0}
    evidence = {"d0": r0.to_dict(), "d1": r1.to_dict(), "d3": r3.to_dict(),
                "kernel": krep.to_dict(), "second": second.to_dict(), "middle": mid.to_dict()}
    return ComplexCohomology(which, levels, dims, extras, evidence)


# rank identity for d on subbundles ------------------------------------------

def _distance(U: np.ndarray, v: np.ndarray) -> float:
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    return float(np.linalg.norm(v - U @ (U.T @ v)) / nv)


def rank_identity(grid: Grid, J: JField, g0: MetricField | None = None,
                         seed: int = 0, samples: int = 3,
                         report: InvariantReport | None = None,
                         ops: DenseOps | None = None) -> dict:
    """Rank identities relating d on Omega^2, Omega_J^+-, Omega_g^+.

    Also samples the membership criterion: ``d beta`` lies in
    ``d Omega_J^-`` iff ``beta`` is harmonic self-dual plus anti-invariant.
    """
    g0 = g0 or MetricField.flat(grid)
    cache = ops.cache if ops is not None else compatible_pair(grid, J, g0)
    ops = ops or DenseOps(cache)
    report = report or invariant_report(grid, J, g0, seed=seed)
    N = grid.npoints
    r_all = ops.restricted_rank("all")
    r_jp = ops.restricted_rank("J+")
    r_jm = ops.restricted_rank("J-")
    r_gp = ops.restricted_rank("g+")
    r_gm = ops.restricted_rank("g-")
    U = ops.range_basis("J-")
    D2 = ops.d(2)
    rng = np.random.default_rng(seed)

    # T_g: span of pairing functions of harmonic self-dual forms
    H2 = _harmonic_sd(grid, cache, report.betti.bases[2])
    T = pairing_functions(cache, H2)
    vol = cache.g_J.volume_density * grid.cell_volume * np.ones(grid.shape)
    Tq = _orthonormal_functions(T, vol)
    outside, inside, harmonic_plus = [], [], []
    for _ in range(samples):
        f = band_limited(grid, 1, rng, kmax=2)[0]
        for q in Tq:
            f = f - np.sum(f * q * vol) * q
        beta = f[None] * cache.omega.data
        outside.append(_distance(U, D2 @ beta.ravel()))
        c = band_limited(grid, 2, rng, kmax=2)
        gamma = np.einsum("m...,...mi->i...", c, cache.anti_frame)
        inside.append(_distance(U, D2 @ gamma.ravel()))
        if H2.shape[0]:
            w = rng.standard_normal(H2.shape[0])
            h = np.tensordot(w, H2, axes=(0, 0))
            harmonic_plus.append(_distance(U, D2 @ (h + gamma).ravel()))
    identity_lhs = r_gp.rank - r_jm.rank
    identity_rhs = N - report.dim_T_g
    checks = {
        "d_all_eq_d_Jplus": r_jp.rank == r_all.rank,
        "d_all_eq_d_gplus": r_gp.rank == r_all.rank,
        "d_all_eq_d_gminus": r_gm.rank == r_all.rank,
        "d_Jminus_strictly_smaller": r_jm.rank < r_gp.rank,
        "rank_identity": identity_lhs == identity_rhs,
        "membership_outside": bool(min(outside) > 1e-3),
        "membership_inside": bool(max(inside + harmonic_plus) < 1e-10),
    }
    return {
        "ranks": {"all": r_all.rank, "J+": r_jp.rank, "J-": r_jm.rank, "g+": r_gp.rank,
                  "g-": r_gm.rank},
        "N_points": N, "dim_T_g": report.dim_T_g, "rank_difference": identity_lhs,
        "expected_difference": identity_rhs,
        "membership": {"outside_T_g": outside, "anti_invariant": inside,
                       "harmonic_plus_anti_invariant": harmonic_plus},
        "checks": checks, "passed": all(checks.values()),
        "evidence": {k: r.to_dict() for k, r in
                     (("all", r_all), ("J+", r_jp), ("J-", r_jm), ("g+", r_gp), ("g-", r_gm))},
        "b_plus": report.b_plus,
    }


def _harmonic_sd(grid: Grid, cache: TameConfigCache, hb) -> np.ndarray:
    """Orthonormal basis of the self-dual parts of harmonic 2-forms."""
    if not hb.dim:
        return np.zeros((0, 6) + grid.shape)
    sd, _ = self_dual_parts(grid, cache.g_J, hb.array())
    G = linalg.gram(sd, sd, lambda x: pointwise(cache.g_J.weight(2), x))
    lam, V = np.linalg.eigh(0.5 * (G + G.T))
    keep = lam > 1e-12 * lam.max()
    T = V[:, keep] / np.sqrt(lam[keep])
    return np.tensordot(T.T, sd, axes=(1, 0))


def _orthonormal_functions(T: np.ndarray, vol: np.ndarray) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    scale = max(float(np.max(np.abs(T), initial=0.0)), 1e-300)
    for t in T:
        for q in out:
            t = t - np.sum(t * q * vol) * q
        nt = np.sqrt(np.sum(t * t * vol))
        if nt > 1e-8 * scale:
            out.append(t / nt)
    return out
