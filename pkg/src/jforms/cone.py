"""Closed J-positive forms by conic feasibility.

A J-invariant 2-form is written pointwise as ``f omega_g + sum_i b_i asd_i``
in the adapted invariant frame; J-positivity (relative to the compatible
metric) is then exactly ``f > |b|``.  Finding a closed form with prescribed
anti-invariant part ``alpha`` becomes: find ``x = (f, b)`` with
``d(B x) = -d alpha`` and ``f >= |b| + eps`` at every point.

The affine set and the cone product are combined by over-relaxed ADMM.
Results are accepted only after validation with the 4x4 eigenvalue test,
which does not rely on the frame parametrization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fiber
from .errors import ConvergenceError, SolverError
from .grid import FormField, band_limited, d_raw, dT_raw, pointwise, to_pointwise
from .jfield import TameConfigCache, proj_field_j
from .linalg import cg

FEASIBLE = "Feasible"
UNDETERMINED = "Undetermined"

CLOSED_TOL = 1e-6
ANTI_TOL = 1e-10
AFFINE_RTOL = 1e-10
AFFINE_ATOL = 1e-12


@dataclass
class SolverOptions:
    budget: int = 10_000
    relaxation: float = 1.6
    penalty: float = 1.0
    affine_rtol: float = AFFINE_RTOL
    cg_maxiter: int | None = None


class ConeProblem:
    """Feasibility data for ``d(omega_plus) = -d alpha`` over the shifted cone."""

    def __init__(self, cache: TameConfigCache, alpha: FormField, epsilon: float):
        if not epsilon > 0:
            raise ValueError("margin epsilon must be positive")
        if alpha.degree != 2:
            raise ValueError("prescribed part must be a 2-form")
        if not np.all(np.isfinite(alpha.data)):
            raise SolverError("prescribed part contains non-finite values")
        self.cache = cache
        self.grid = cache.grid
        self.alpha = alpha
        self.epsilon = float(epsilon)
        frame = cache.invariant_frame                      # (n.., 4, 6)
        if np.all(frame == frame[(0,) * 4]):
            frame = frame[(0,) * 4]
        self.synth_matrix = to_pointwise(np.swapaxes(frame, -1, -2))   # (6, 4[, n..])
        self.coef_matrix = to_pointwise(frame)                          # (4, 6[, n..])
        self.rhs = -d_raw(alpha.data[None], 2, self.grid.h)[0]
        closed = np.linalg.norm(d_raw(self.rhs[None], 3, self.grid.h))
        scale = np.linalg.norm(self.rhs) * max(1.0 / h for h in self.grid.h)
        if closed > 1e-10 * scale + 1e-12:
            raise SolverError("right-hand side is not closed", {"d_rhs": float(closed)})

    def synth(self, x: np.ndarray) -> np.ndarray:
        """2-form data of ``B x`` for a batch of ``(4, n..)`` coordinates."""
        return pointwise(self.synth_matrix, x)

    def apply_D(self, x: np.ndarray) -> np.ndarray:
        return d_raw(self.synth(x), 2, self.grid.h)

    def apply_DT(self, y: np.ndarray) -> np.ndarray:
        return pointwise(self.coef_matrix, dT_raw(y, 2, self.grid.h))

    def omega_plus(self, x: np.ndarray) -> FormField:
        return FormField(self.grid, 2, self.synth(x[None])[0])


@dataclass
class FeasibilityResult:
    status: str
    omega: FormField | None
    omega_plus: FormField | None
    closedness: float
    min_margin: float
    soc_margin: float
    anti_invariant_error: float
    affine_residual: float
    iterations: int
    epsilon: float
    history: dict = field(repr=False, default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def to_dict(self, with_history: bool = True) -> dict:
        out = {"status": self.status, "closedness": self.closedness,
               "min_margin": self.min_margin, "soc_margin": self.soc_margin,
               "anti_invariant_error": self.anti_invariant_error,
               "affine_residual": self.affine_residual, "iterations": self.iterations,
               "epsilon": self.epsilon} | self.extras
        if with_history:
            out["history"] = self.history
        return out


# projections ------------------------------------------------------------------

def project_soc(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Euclidean projection of ``(f, b1, b2, b3)`` onto ``{f >= |b| + eps}``.

    ``x`` has the 4 coordinates on its first axis; all other axes are points.
    """
    x = np.asarray(x, dtype=float)
    f = x[0] - eps
    b = x[1:]
    nb = np.sqrt(np.sum(b * b, axis=0))
    out = x.copy()
    polar = nb <= -f
    middle = ~polar & (nb > f)
    out[0] = np.where(polar, eps, out[0])
    out[1:] = np.where(polar, 0.0, out[1:])
    t = 0.5 * (f + nb)
    scale = np.where(middle, t / np.where(nb > 0, nb, 1.0), 1.0)
    out[0] = np.where(middle, t + eps, out[0])
    out[1:] = np.where(middle, b * scale, out[1:])
    return out


def soc_margin(x: np.ndarray) -> np.ndarray:
    return x[0] - np.sqrt(np.sum(x[1:] ** 2, axis=0))


def _affine_tol(problem: ConeProblem, dv: np.ndarray, rtol: float) -> float:
    return rtol * max(np.linalg.norm(problem.rhs), np.linalg.norm(dv)) + AFFINE_ATOL


def project_affine(problem: ConeProblem, x: np.ndarray, y0: np.ndarray | None = None,
                   rtol: float = AFFINE_RTOL, maxiter: int | None = None
                   ) -> tuple[np.ndarray, np.ndarray | None]:
    """Least-norm correction of ``x`` onto ``{D x = rhs}``.

    Solves ``D D^T y = D x - rhs`` by CG and returns ``(x - D^T y, y)``;
    ``y`` can warm-start the next call.
    """
    dx = problem.apply_D(x[None])
    r = dx - problem.rhs[None]
    tol = _affine_tol(problem, dx, rtol)
    if np.linalg.norm(r) <= tol:
        return x.copy(), y0
    maxiter = maxiter or 20 * r.size
    try:
        y, _ = cg(lambda v: problem.apply_D(problem.apply_DT(v)), r, x0=y0,
                  rtol=0.0, atol=0.1 * tol, maxiter=maxiter, name="affine projection")
    except ConvergenceError as exc:
        raise SolverError(f"affine projection stagnated: {exc}", exc.details) from exc
    return x - problem.apply_DT(y)[0], y


# solver -------------------------------------------------------------------------

def _relative_closedness(omega: FormField) -> float:
    dw = d_raw(omega.data[None], 2, omega.grid.h)
    nw = np.linalg.norm(omega.data)
    return float(np.linalg.norm(dw) / nw) if nw > 0 else 0.0


def eigen_margin(cache: TameConfigCache, omega: FormField) -> np.ndarray:
    """Pointwise taming margin from the 4x4 generalized eigenproblem."""
    return fiber.positivity_margin(cache.J.matrix, omega.fiber, cache.g_J.full())


def validate(problem: ConeProblem, x: np.ndarray) -> dict:
    """Independent checks on a candidate: closedness, prescribed part, eigen-margin."""
    cache = problem.cache
    wplus = problem.omega_plus(x)
    omega = wplus + problem.alpha
    closed = _relative_closedness(omega)
    _, minus = proj_field_j(cache.J, omega)
    anti_err = (minus - problem.alpha).max_abs() / max(1.0, problem.alpha.max_abs())
    margins = eigen_margin(cache, omega)
    dx = problem.apply_D(x[None])
    affine = float(np.linalg.norm(dx - problem.rhs[None]))
    ok = (closed <= CLOSED_TOL and anti_err <= ANTI_TOL
          and bool(np.all(margins >= 0.5 * problem.epsilon)))
    return {"ok": ok, "omega": omega, "omega_plus": wplus, "closedness": closed,
            "anti_invariant_error": float(anti_err), "min_margin": float(margins.min()),
            "fraction_ok": float(np.mean(margins >= 0.5 * problem.epsilon)),
            "affine_residual": affine}


def solve_feasibility(problem: ConeProblem, options: SolverOptions | None = None,
                      x0: np.ndarray | None = None) -> FeasibilityResult:
    """Over-relaxed ADMM between the affine constraint and the cone product.

    Starts from ``omega_g`` (``f = 1, b = 0``).  Each iterate ``x`` satisfies
    the affine constraint to CG accuracy, so the run stops as soon as ``x``
    clears half the margin and passes validation.
    """
    opts = options or SolverOptions()
    eps = problem.epsilon
    shape = (4,) + problem.grid.shape
    if x0 is None:
        x0 = np.zeros(shape)
        x0[0] = 1.0
    z = project_soc(x0, eps)
    u = np.zeros(shape)
    y = None
    hist = {"soc_margin": [], "cone_gap": [], "affine_residual": []}
    x = z
    last: dict = {}
    for it in range(1, opts.budget + 1):
        x, y = project_affine(problem, z - u, y, opts.affine_rtol, opts.cg_maxiter)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite iterate", {"iteration": it})
        m = float(soc_margin(x).min())
        hist["soc_margin"].append(m)
        hist["cone_gap"].append(float(np.linalg.norm(x - z) / np.sqrt(x[0].size)))
        if m >= 0.5 * eps:
            last = validate(problem, x)
            hist["affine_residual"].append(last["affine_residual"])
            if last["ok"]:
                return _result(FEASIBLE, problem, x, last, it, hist)
        xh = opts.relaxation * x + (1.0 - opts.relaxation) * z
        z = project_soc(xh + u, eps)
        u = u + xh - z
        if not np.all(np.isfinite(u)) or np.abs(u).max() > 1e12:
            raise SolverError("ADMM iterates diverged", {"iteration": it})
    last = validate(problem, x)
    return _result(UNDETERMINED, problem, x, last, opts.budget, hist)


def _result(status, problem, x, checks, it, hist) -> FeasibilityResult:
    feasible = status == FEASIBLE
    return FeasibilityResult(
        status, checks["omega"] if feasible else None, checks["omega_plus"] if feasible else None,
        checks["closedness"], checks["min_margin"], float(soc_margin(x).min()),
        checks["anti_invariant_error"], checks["affine_residual"], it, problem.epsilon, hist,
        {"fraction_margin_ok": checks["fraction_ok"]})


# high-level operations ----------------------------------------------------------

def _check_anti_invariant(cache: TameConfigCache, alpha: FormField):
    plus, _ = proj_field_j(cache.J, alpha)
    err = plus.max_abs() / max(1.0, alpha.max_abs())
    if err > ANTI_TOL:
        raise ValueError(f"prescribed part is not J-anti-invariant (invariant part {err:.3e})")


def tame(cache: TameConfigCache, alpha: FormField, epsilon: float = 1e-3,
         options: SolverOptions | None = None) -> FeasibilityResult:
    """Closed J-tamed form whose anti-invariant part is ``alpha``."""
    _check_anti_invariant(cache, alpha)
    return solve_feasibility(ConeProblem(cache, alpha, epsilon), options)


def compat(cache: TameConfigCache, epsilon: float = 1e-3,
           options: SolverOptions | None = None) -> FeasibilityResult:
    """Closed J-compatible form; reports the margin after unit-average scaling."""
    res = tame(cache, FormField.zeros(cache.grid, 2), epsilon, options)
    if res.feasible:
        x = fiber.soc_coordinates(cache.J.matrix, cache.g_J.full(), res.omega.fiber)
        vol = cache.g_J.volume_density * np.ones(cache.grid.shape)
        mean_f = float(np.sum(x.f * vol) / np.sum(vol))
        res.extras["normalization"] = mean_f
        res.extras["normalized_margin"] = res.min_margin / mean_f
    return res


def tamed_to_compatible(cache: TameConfigCache, omega_tamed: FormField, epsilon: float = 1e-3,
                        options: SolverOptions | None = None) -> FeasibilityResult:
    """Replace the anti-invariant part of a tamed form by a J-positive correction.

    With ``omega_tamed = w_plus + w_minus`` this finds a J-positive ``w~`` with
    ``d w~ = d w_minus`` and returns ``w_plus + w~``.
    """
    closed = _relative_closedness(omega_tamed)
    margins = eigen_margin(cache, omega_tamed)
    if closed > CLOSED_TOL or margins.min() <= 0:
        raise ValueError(f"input is not a closed tamed form (closedness {closed:.3e}, "
                         f"min margin {margins.min():.3e})")
    plus, minus = proj_field_j(cache.J, omega_tamed)
    problem = ConeProblem(cache, -minus, epsilon)
    res = solve_feasibility(problem, options)
    if not res.feasible:
        return res
    omega = plus + res.omega_plus
    _, anti = proj_field_j(cache.J, omega)
    final = eigen_margin(cache, omega)
    res.omega = omega
    res.closedness = _relative_closedness(omega)
    res.anti_invariant_error = anti.max_abs() / max(1.0, omega.max_abs())
    res.min_margin = float(final.min())
    ok = (res.closedness <= CLOSED_TOL and res.anti_invariant_error <= ANTI_TOL
          and res.min_margin > 0)
    res.extras["correction_margin"] = float(eigen_margin(cache, res.omega_plus).min())
    if not ok:
        raise SolverError("compatible form failed validation", res.to_dict(with_history=False))
    return res


def scale_shift(J: np.ndarray, theta: FormField, omega: FormField,
                g: np.ndarray | None = None) -> float:
    """Smallest ``n >= 0`` (0.5% overshoot) making ``n omega + theta`` J-positive."""
    S_w = fiber.taming_form(J, omega.fiber)
    S_t = fiber.taming_form(J, theta.fiber)
    lam_w = np.linalg.eigvalsh(S_w)[..., 0]
    if np.any(lam_w <= 0):
        raise ValueError("omega is not J-positive at every point")
    Linv = np.linalg.inv(np.linalg.cholesky(S_w))
    lam = np.linalg.eigvalsh(Linv @ S_t @ np.swapaxes(Linv, -1, -2))[..., 0]
    need = float(np.max(-lam))
    return 0.0 if need <= 0 else 1.005 * need


# fixtures -----------------------------------------------------------------------

def constant_anti_invariant(cache: TameConfigCache, direction: int, amplitude: float) -> FormField:
    """``amplitude`` times one of the two anti-invariant frame forms."""
    data = amplitude * np.moveaxis(cache.anti_frame[..., direction, :], -1, 0)
    return FormField(cache.grid, 2, np.ascontiguousarray(data))


def random_anti_invariant(cache: TameConfigCache, amplitude: float, seed: int,
                          kmax: int = 1) -> FormField:
    """Band-limited anti-invariant field; ``amplitude`` bounds the frame coefficient norm."""
    rng = np.random.default_rng(seed)
    c = band_limited(cache.grid, 2, rng, kmax=kmax)
    peak = np.sqrt(np.sum(c * c, axis=0)).max()
    c *= amplitude / peak
    data = np.einsum("m...,...mi->i...", c, cache.anti_frame)
    return FormField(cache.grid, 2, data)
