"""Hodge Laplacians, harmonic forms, Betti numbers and the Hodge decomposition.

The decomposition ``a = harmonic + d(alpha1) + codiff(Gamma)`` stores the
coexact potential as a (k+1)-form ``Gamma``.  For 2-forms the 1-form
potential with ``*d(alpha2) = codiff(Gamma)`` is available as
:meth:`HodgeDecomposition.alpha2`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DiscretizationError, SpectralGapError
from .grid import (FormField, Grid, MetricField, codiff_raw, d_raw, inner, inner_raw,
                   ncomp, norm, pointwise)

HARMONIC_RTOL = 1e-8      # eigenvalue cutoff relative to the largest eigenvalue
HARMONIC_GAP = 1e-4       # largest retained / smallest discarded
CG_RTOL = 1e-12


def laplacian_raw(g: MetricField, k: int, x: np.ndarray) -> np.ndarray:
    h = g.grid.h
    out = np.zeros_like(x)
    if k < 4:
        out += codiff_raw(g, k + 1, d_raw(x, k, h))
    if k > 0:
        out += d_raw(codiff_raw(g, k, x), k - 1, h)
    return out


def laplacian(grid: Grid, g: MetricField, a: FormField) -> FormField:
    """``d codiff + codiff d`` applied to ``a``."""
    return FormField(grid, a.degree, laplacian_raw(g, a.degree, a.data[None])[0])


def _weigh(g: MetricField, k: int):
    vol = g.grid.cell_volume
    if g.is_identity:
        return lambda x: x * vol
    W = g.weight(k)
    return lambda x: pointwise(W, x) * vol


@dataclass
class HarmonicBasis:
    """Orthonormal basis of the discrete harmonic k-forms."""

    degree: int
    forms: list[FormField]
    eigenvalues: np.ndarray
    gap_ratio: float
    lambda_max: float
    residuals: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def dim(self) -> int:
        return len(self.forms)

    def array(self) -> np.ndarray:
        """Members stacked along a leading batch axis."""
        return np.stack([f.data for f in self.forms])

    def to_dict(self) -> dict:
        return {"degree": self.degree, "dims": self.dim,
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "gap": self.gap_ratio, "lambda_max": self.lambda_max,
                "residuals": [float(v) for v in self.residuals],
                "iterations": self.iterations}


def _constant_basis(grid: Grid, g: MetricField, k: int) -> np.ndarray:
    """Constant k-forms, orthonormalized; harmonic for any uniform metric."""
    C = ncomp(k)
    X = np.zeros((C, C) + grid.shape)
    for i in range(C):
        X[i, i] = 1.0
    return linalg.orthonormalize(X, _weigh(g, k))


def harmonic_basis(grid: Grid, g: MetricField, k: int, dim_budget: int | None = None,
                   seed: int = 0, maxiter: int = 300) -> HarmonicBasis:
    """Near-kernel of the k-form Laplacian by inverse subspace iteration.

    ``dim_budget`` is the block size; it must exceed the harmonic dimension,
    otherwise no spectral gap can be seen and SpectralGapError is raised.
    """
    if not 0 <= k <= 4:
        raise ValueError(f"degree must be in 0..4, got {k}")
    m = dim_budget or ncomp(k) + 4
    weigh = _weigh(g, k)
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((m, ncomp(k)) + grid.shape)

    def apply(x):
        return laplacian_raw(g, k, x)

    lam_max = linalg.power_max(apply, X0, weigh)
    cutoff = HARMONIC_RTOL * lam_max
    res_tol = max(1e-9, 1e-12 * lam_max)

    def converged(theta, res):
        r = int(np.sum(theta < cutoff))
        if r >= len(theta):
            return False
        return bool(np.all(res[:r] <= res_tol) and res[r] <= 1e-2 * theta[r])

    out = linalg.lowest_eigenpairs(apply, X0, weigh=weigh, shift=1e-2 * lam_max,
                                   converged=converged, maxiter=maxiter,
                                   cg_maxiter=20 * X0[0].size)
    theta = out.eigenvalues
    r = int(np.sum(theta < cutoff))
    evidence = {"degree": k, "eigenvalues": theta.tolist(), "residuals": out.residuals.tolist(),
                "lambda_max": lam_max, "iterations": out.iterations}
    if r >= m:
        raise SpectralGapError(f"no spectral gap within block of {m} for degree {k}", evidence)
    gap = float(theta[r - 1] / theta[r]) if r else 0.0
    if gap > HARMONIC_GAP or not converged(theta, out.residuals):
        raise SpectralGapError(f"harmonic {k}-forms: gap ratio {gap:.3e} not clean", evidence)
    forms = [FormField(grid, k, out.vectors[i]) for i in range(r)]
    for f in forms:
        if norm(grid, g, laplacian(grid, g, f)) > 1e-8 * norm(grid, g, f):
            raise DiscretizationError("harmonic basis member fails the Laplacian residual", evidence)
    return HarmonicBasis(k, forms, theta, gap, lam_max, out.residuals, out.iterations)


@dataclass
class BettiNumbers:
    b: list[int]
    bplus: int
    bminus: int
    bases: dict = field(repr=False, default_factory=dict)
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"b": self.b, "bplus": self.bplus, "bminus": self.bminus,
                "evidence": self.evidence}


def self_dual_parts(grid: Grid, g: MetricField, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise self-dual / anti-self-dual split of batched 2-form data."""
    sx = pointwise(g.star2_matrix, x)
    return 0.5 * (x + sx), 0.5 * (x - sx)


def _span_rank(grid: Grid, g: MetricField, x: np.ndarray, what: str) -> linalg.RankReport:
    if x.shape[0] == 0:
        return linalg.RankReport(0, 0, 0.0, 0.0, 0.0, 0.0, np.inf, [])
    G = linalg.gram(x, x, _weigh(g, 2))
    s = np.sqrt(np.maximum(np.linalg.eigvalsh(0.5 * (G + G.T)), 0.0))
    return linalg.decide_rank(s, what=what)


def betti_numbers(grid: Grid, g: MetricField, dim_budget: int | None = None,
                  seed: int = 0) -> BettiNumbers:
    bases = {k: harmonic_basis(grid, g, k, dim_budget, seed=seed + k) for k in range(5)}
    b = [bases[k].dim for k in range(5)]
    H2 = np.stack([f.data for f in bases[2].forms]) if b[2] else np.zeros((0, 6) + grid.shape)
    sd, asd = self_dual_parts(grid, g, H2)
    rp = _span_rank(grid, g, sd, "self-dual harmonic part")
    rm = _span_rank(grid, g, asd, "anti-self-dual harmonic part")
    evidence = {f"degree_{k}": bases[k].to_dict() for k in range(5)}
    evidence["bplus_rank"] = rp.to_dict()
    evidence["bminus_rank"] = rm.to_dict()
    return BettiNumbers(b, rp.rank, rm.rank, bases, evidence)


@dataclass
class HodgeDecomposition:
    """``input = harmonic + exact + coexact`` with potentials."""

    grid: Grid
    metric: MetricField = field(repr=False)
    harmonic: FormField
    exact: FormField
    coexact: FormField
    exact_potential: FormField | None
    coexact_potential: FormField | None
    residual: float
    orthogonality: float
    iterations: dict = field(default_factory=dict)

    def alpha2(self) -> FormField:
        """1-form potential with ``*d(alpha2)`` equal to the coexact part (2-forms only)."""
        if self.harmonic.degree != 2 or self.coexact_potential is None:
            raise ValueError("alpha2 is defined for 2-form decompositions")
        star3 = self.metric.star_matrix(3)
        return FormField(self.grid, 1, -pointwise(star3, self.coexact_potential.data[None])[0])


def _project_out(grid: Grid, g: MetricField, k: int, x: np.ndarray) -> np.ndarray:
    if g.uniform:
        Q = _constant_basis(grid, g, k)
    else:
        cache = g.__dict__.setdefault("_harmonic_cache", {})
        if k not in cache:
            hb = harmonic_basis(grid, g, k)
            cache[k] = (np.stack([f.data for f in hb.forms]) if hb.dim
                        else np.zeros((0, ncomp(k)) + grid.shape))
        Q = cache[k]
    if Q.shape[0] == 0:
        return x
    coef = linalg.gram(x, Q, _weigh(g, k))
    return x - np.tensordot(coef, Q, axes=(1, 0))


def _potential(grid: Grid, g: MetricField, k: int, rhs: np.ndarray, rtol: float,
               maxiter: int, name: str, atol: float = 0.0):
    x, info = linalg.cg(lambda v: laplacian_raw(g, k, v), rhs, weigh=_weigh(g, k),
                        rtol=rtol, atol=atol, maxiter=maxiter, name=name)
    return _project_out(grid, g, k, x), info


def hodge_decompose(grid: Grid, g: MetricField, a: FormField, rtol: float = CG_RTOL,
                    maxiter: int | None = None) -> HodgeDecomposition:
    k = a.degree
    maxiter = maxiter or 20 * grid.npoints
    x = a.data[None]
    zero = np.zeros_like(x)
    iters = {}
    exact, coexact = zero, zero
    alpha1 = gamma = None
    # right-hand sides at roundoff level relative to |d| |a| count as zero
    dnorm = float(np.sqrt(sum(1.0 / h ** 2 for h in grid.h)))
    atol = rtol * dnorm * norm(grid, g, a)
    if k > 0:
        rhs = codiff_raw(g, k, x)
        pot, info = _potential(grid, g, k - 1, rhs, rtol, maxiter, "exact potential", atol)
        exact = d_raw(pot, k - 1, grid.h)
        alpha1 = FormField(grid, k - 1, pot[0])
        iters["exact_potential"] = info.iterations
    if k < 4:
        rhs = d_raw(x, k, grid.h)
        pot, info = _potential(grid, g, k + 1, rhs, rtol, maxiter, "coexact potential", atol)
        coexact = codiff_raw(g, k + 1, pot)
        gamma = FormField(grid, k + 1, pot[0])
        iters["coexact_potential"] = info.iterations
    harmonic = x - exact - coexact
    parts = [FormField(grid, k, p[0]) for p in (harmonic, exact, coexact)]
    anorm2 = max(inner(grid, g, a, a), 1e-300)
    recon = parts[0] + parts[1] + parts[2] - a
    residual = norm(grid, g, recon) / np.sqrt(anorm2)
    # harmonic part must also be closed and coclosed, i.e. orthogonal to both images
    orth = max(abs(inner(grid, g, parts[i], parts[j])) for i, j in ((0, 1), (0, 2), (1, 2))) / anorm2
    return HodgeDecomposition(grid, g, parts[0], parts[1], parts[2], alpha1, gamma,
                              float(residual), float(orth), iters)


def _partner(grid: Grid, g: MetricField, a: FormField, source: str) -> FormField:
    if a.degree != 2:
        raise ValueError("partner construction needs a 2-form")
    sd, asd = self_dual_parts(grid, g, a.data[None])
    wrong = asd if source == "self-dual" else sd
    anorm = norm(grid, g, a)
    wrong_norm = float(np.sqrt(inner_raw(g, 2, wrong, wrong)[0]))
    if wrong_norm > 1e-8 * anorm:
        raise ValueError(f"input is not {source} (relative defect {wrong_norm / max(anorm, 1e-300):.3e})")
    dec = hodge_decompose(grid, g, a)
    beta = dec.coexact - dec.exact
    da = d_raw(a.data[None], 2, grid.h)
    db = d_raw(beta.data[None], 2, grid.h)
    w3 = _weigh(g, 3)
    da_norm = float(np.sqrt(linalg.dots(da, da, w3)[0]))
    ddef = float(np.sqrt(linalg.dots(db - da, db - da, w3)[0]))
    sdb, asdb = self_dual_parts(grid, g, beta.data[None])
    wrong_b = sdb if source == "self-dual" else asdb
    bnorm = norm(grid, g, beta)
    chir = float(np.sqrt(inner_raw(g, 2, wrong_b, wrong_b)[0]))
    details = {"d_defect": ddef, "d_norm": da_norm, "chirality_defect": chir, "beta_norm": bnorm}
    if ddef > 1e-8 * max(da_norm, 1e-300) and ddef > 1e-14 * max(anorm, 1.0):
        raise DiscretizationError("partner fails d(beta) = d(a)", details)
    if chir > 1e-6 * bnorm:
        raise DiscretizationError("partner has the wrong chirality", details)
    return beta


def asd_partner(grid: Grid, g: MetricField, a: FormField) -> FormField:
    """Anti-self-dual ``beta`` with ``d beta = d a`` for a self-dual ``a``."""
    return _partner(grid, g, a, "self-dual")


def sd_partner(grid: Grid, g: MetricField, a: FormField) -> FormField:
    """Self-dual ``beta`` with ``d beta = d a`` for an anti-self-dual ``a``."""
    return _partner(grid, g, a, "anti-self-dual")
