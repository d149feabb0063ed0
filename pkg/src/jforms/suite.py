"""The acceptance battery: twelve seeded checks with measured values.

Each check records its status, the measured quantities and the tolerances
they were held to.  Wall-clock times live in a separate ``timing`` section
so that reports from identical runs compare equal.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, cone, fiber, hodge, jfield, oracles
from .config import ExperimentConfig
from .errors import JFormsError
from .grid import FormField, Grid, MetricField, d_raw, ncomp, pointwise

PASS, FAIL, SKIP = "pass", "fail", "skip"

CRITERIA = [
    (1, "chain-complex exactness", "d o d = 0"),
    (2, "Betti numbers of the flat torus", "harmonic forms represent cohomology"),
    (3, "Hodge decomposition", "harmonic + exact + coexact splitting"),
    (4, "partner of opposite chirality", "coexact minus exact part has the same derivative"),
    (5, "rank identity for d on J-subbundles", "d Omega_J^+ = d Omega^2 and the T_g quotient"),
    (6, "invariants h_J^+-", "h^- <= b^+, h^+ >= b^-, strict when tamed"),
    (7, "modified complexes", "J-modified de Rham complexes"),
    (8, "cone solver validity", "a posteriori certificate of feasible results"),
    (9, "tamed forms with prescribed anti-invariant part", "tamed form with given J-anti-invariant part"),
    (10, "tamed to compatible chain", "tame(alpha) implies tame(-alpha) and compatible"),
    (11, "SOC and eigenvalue positivity agree", "positivity as a second-order cone"),
    (12, "determinism", "seeded reruns are identical"),
]


@dataclass
class Check:
    id: int
    name: str
    anchor: str
    status: str
    values: dict
    tolerances: dict

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "anchor": self.anchor, "status": self.status,
                "values": self.values, "tolerances": self.tolerances}


@dataclass
class SuiteReport:
    checks: list[Check]
    config_hash: str
    seed: int
    version: str = __version__
    timing: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    @property
    def failing(self) -> list[int]:
        return [c.id for c in self.checks if c.status == FAIL]

    def to_dict(self, with_timing: bool = True) -> dict:
        out = {"tool": "jforms", "version": self.version, "config_hash": self.config_hash,
               "seed": self.seed, "passed": self.passed, "failing": self.failing,
               "checks": [c.to_dict() for c in self.checks]}
        if with_timing:
            out["timing"] = self.timing
        return out


def _clean(obj):
    """JSON-ready copy with numpy scalars converted."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


class _Context:
    """Shared, lazily built objects for one suite run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.seed = cfg.seed
        self.L = tuple(cfg.grid.L)
        self._dense = {}
        self._reports = {}
        self.cone_results: list[tuple[str, cone.FeasibilityResult, cone.ConeProblem | None]] = []
        self.tame_pairs: list = []

    def grid(self, n: int) -> Grid:
        return Grid((n,) * 4, self.L)

    def flat_j0(self) -> bool:
        return self.cfg.J.type == "constant" and self.cfg.metric.type == "flat"

    def setup(self, n: int):
        grid = self.grid(n)
        g0 = self.cfg.metric.build(grid)
        J = jfield.make_recipe_J(grid, self.cfg.J.recipe())
        return grid, g0, J

    def dense(self, n: int) -> jfield.DenseOps:
        if n not in self._dense:
            grid, g0, J = self.setup(n)
            self._dense[n] = jfield.DenseOps(jfield.compatible_pair(grid, J, g0))
        return self._dense[n]

    def report(self, n: int) -> jfield.InvariantReport:
        if n not in self._reports:
            grid, g0, J = self.setup(n)
            self._reports[n] = jfield.invariant_report(grid, J, g0, seed=self.seed)
        return self._reports[n]


# individual checks ----------------------------------------------------------------

def _c1(ctx: _Context):
    rng = np.random.default_rng(ctx.seed + 1)
    worst = {}
    for n in (5, 7):
        grid = ctx.grid(n)
        for k in range(3):
            x = rng.standard_normal((1, ncomp(k)) + grid.shape)
            dd = d_raw(d_raw(x, k, grid.h), k + 1, grid.h)
            worst[f"{n}^4 degree {k}"] = float(np.abs(dd).max() / np.abs(x).max())
    tol = 1e-13
    return max(worst.values()) <= tol, {"relative_dd_max": worst}, {"relative_dd_max": tol}


def _c2(ctx: _Context):
    values, ok = {}, True
    for n in (5, 7, 9):
        grid = ctx.grid(n)
        b = hodge.betti_numbers(grid, MetricField.flat(grid), seed=ctx.seed)
        gaps = {f"degree_{k}": b.bases[k].gap_ratio for k in range(5)}
        nxt = {f"degree_{k}": float(b.bases[k].eigenvalues[b.b[k]]) for k in range(5)}
        values[f"{n}^4"] = {"b": b.b, "bplus": b.bplus, "bminus": b.bminus,
                            "gap_ratio": gaps, "first_nonzero_eigenvalue": nxt}
        ok &= b.b == [1, 4, 6, 4, 1] and b.bplus == 3 and b.bminus == 3
    return ok, values, {"expected": {"b": [1, 4, 6, 4, 1], "bplus": 3, "bminus": 3},
                        "eigenvalue_cutoff_rel": hodge.HARMONIC_RTOL,
                        "max_gap_ratio": hodge.HARMONIC_GAP}


def _c3(ctx: _Context):
    n, samples = 7, 100
    grid, g0, _ = ctx.setup(n)
    rng = np.random.default_rng(ctx.seed + 3)
    res, orth = [], []
    for _ in range(samples):
        a = FormField(grid, 2, rng.standard_normal((6,) + grid.shape))
        dec = hodge.hodge_decompose(grid, g0, a)
        res.append(dec.residual)
        orth.append(dec.orthogonality)
    small, g_small, _ = ctx.setup(3)
    agree = []
    for _ in range(3):
        a = FormField(small, 2, rng.standard_normal((6,) + small.shape))
        dec = hodge.hodge_decompose(small, g_small, a)
        ref = oracles.dense_hodge_parts(small, g_small, 2, a.data)
        scale = np.abs(a.data).max()
        agree.append(max(float(np.abs(p.data - q).max() / scale)
                         for p, q in zip((dec.harmonic, dec.exact, dec.coexact), ref)))
    tol = 1e-8
    ok = max(res) <= tol and max(orth) <= tol and max(agree) <= tol
    return ok, {"grid": f"{n}^4", "samples": samples, "max_reconstruction": max(res),
                "max_orthogonality": max(orth), "dense_agreement_3^4": max(agree)}, \
        {"reconstruction": tol, "orthogonality": tol, "dense_agreement": tol}


def _partner_defects(grid, g, a: FormField, beta: FormField, target_sign: int):
    da = d_raw(a.data[None], 2, grid.h)
    db = d_raw(beta.data[None], 2, grid.h)
    w = hodge._weigh(g, 3)
    dnorm = np.sqrt(np.sum(da * w(da)))
    ddef = np.sqrt(np.sum((db - da) * w(db - da)))
    sb = pointwise(g.star2_matrix, beta.data[None])[0]
    chir = np.linalg.norm((sb - target_sign * beta.data).ravel()) / max(np.linalg.norm(beta.data), 1e-300)
    return float(ddef / max(dnorm, 1e-300)), float(chir)


def _c4(ctx: _Context):
    n, samples = 7, 50
    grid, g0, _ = ctx.setup(n)
    rng = np.random.default_rng(ctx.seed + 4)
    out = {}
    for label, fn, sign in (("self-dual input", hodge.asd_partner, -1),
                            ("anti-self-dual input", hodge.sd_partner, 1)):
        dd, ch = [], []
        for _ in range(samples):
            sd, asd = hodge.self_dual_parts(grid, g0, rng.standard_normal((1, 6) + grid.shape))
            a = FormField(grid, 2, (sd if sign < 0 else asd)[0])
            beta = fn(grid, g0, a)
            x, y = _partner_defects(grid, g0, a, beta, sign)
            dd.append(x)
            ch.append(y)
        out[label] = {"max_d_defect": max(dd), "max_chirality_defect": max(ch)}
    ok = all(v["max_d_defect"] <= 1e-8 and v["max_chirality_defect"] <= 1e-6 for v in out.values())
    return ok, {"grid": f"{n}^4", "samples": samples} | out, \
        {"d_defect_rel": 1e-8, "chirality_defect_rel": 1e-6}


def _c5(ctx: _Context):
    n = 5
    grid, g0, J = ctx.setup(n)
    rep = jfield.rank_identity(grid, J, g0, seed=ctx.seed, report=ctx.report(n),
                                      ops=ctx.dense(n))
    ok = rep["passed"]
    expected = {}
    if ctx.flat_j0():
        expected = {"dim_T_g": 1, "rank_difference": 624}
        ok &= rep["dim_T_g"] == 1 and rep["rank_difference"] == 624
    values = {k: rep[k] for k in ("ranks", "N_points", "dim_T_g", "rank_difference",
                                  "expected_difference", "checks", "membership")}
    values["gap_evidence"] = {k: {"gap_ratio": v["gap_ratio"], "threshold": v["threshold"]}
                              for k, v in rep["evidence"].items()}
    return ok, values, {"rank_rtol": 1e-6, "min_gap": 1e2, "membership_inside": 1e-10,
                        "membership_outside_min": 1e-3} | expected


def _c6(ctx: _Context):
    rep = ctx.report(5)
    ok = (rep.h_plus + rep.h_minus == rep.b2 and rep.dim_T_g == rep.dim_T_g_direct
          and rep.inequalities["h_minus_le_bplus"] and rep.inequalities["h_plus_ge_bminus"])
    expected = {}
    if ctx.flat_j0():
        expected = {"h_minus": 2, "h_plus": 4, "b2": 6}
        ok &= (rep.h_minus, rep.h_plus, rep.b2) == (2, 4, 6)
        ok &= rep.inequalities["h_minus_lt_bplus"] and rep.inequalities["h_plus_gt_bminus"]
    values = {k: getattr(rep, k) for k in ("h_minus", "h_plus", "b_plus", "b_minus", "b2",
                                            "dim_T_g", "dim_T_g_direct", "inequalities")}
    values["h_minus_evidence"] = rep.evidence["h_minus"]
    return ok, values, expected | {"sum_rule": "h_plus + h_minus = b2"}


def _c7(ctx: _Context):
    values, ok = {}, True
    omega3 = []
    for n in (3, 5):
        grid, g0, J = ctx.setup(n)
        ops = ctx.dense(n)
        plus = jfield.modified_complex_cohomology(grid, J, "plus", ops=ops)
        minus = jfield.modified_complex_cohomology(grid, J, "minus", ops=ops)
        rep = ctx.report(n)
        ok &= plus.dims == [1, 4, rep.h_plus, 4, 1]
        ok &= minus.dims[:3] == [1, 4, rep.h_minus] and minus.dims[4] == 1
        ok &= minus.extras["kernel_equals_Z1"] and minus.extras["second_differential_zero"]
        ok &= minus.dims[3] > 4
        omega3.append(minus.dims[3])
        values[f"{n}^4"] = {"plus": plus.dims, "minus": minus.dims,
                            "dim_Ker_dJplus": minus.extras["dim_Ker_dJ"],
                            "dim_Z1": minus.extras["dim_Z1"],
                            "second_differential_rank": minus.extras["rank_second_differential"]}
    ok &= omega3[1] > omega3[0]
    values["omega3_level_increasing"] = omega3[1] > omega3[0]
    return ok, values, {"plus": "(1, 4, h_plus, 4, 1)", "minus": "(1, 4, h_minus, >4, 1)",
                        "rank_rtol": 1e-6, "min_gap": 1e2}


def _solver_options(cfg: ExperimentConfig) -> cone.SolverOptions:
    s = cfg.solver
    return cone.SolverOptions(budget=s.budget, relaxation=s.relaxation, penalty=s.penalty,
                              affine_rtol=s.affine_rtol)


def _cone_runs(ctx: _Context):
    """Runs shared by the tame/compatible checks on the 7^4 grid."""
    if ctx.tame_pairs:
        return
    grid, g0, J = ctx.setup(7)
    cache = jfield.compatible_pair(grid, J, g0)
    eps = ctx.cfg.solver.epsilon
    opts = _solver_options(ctx.cfg)
    cases = [("zero", FormField.zeros(grid, 2), True),
             ("constant direction 0", cone.constant_anti_invariant(cache, 0, 0.5), True),
             ("constant direction 1", cone.constant_anti_invariant(cache, 1, 0.5), True)]
    for i in range(20):
        cases.append((f"random seed {ctx.seed * 100 + i}",
                      cone.random_anti_invariant(cache, 0.2, ctx.seed * 100 + i), False))
    for label, alpha, required in cases:
        res = cone.tame(cache, alpha, eps, opts)
        ctx.cone_results.append((f"tame {label}", res, alpha))
        ctx.tame_pairs.append((label, alpha, res, required))
    ctx.cache7 = cache
    ctx.compat7 = cone.compat(cache, eps, opts)
    ctx.cone_results.append(("compat", ctx.compat7, FormField.zeros(grid, 2)))


def _c9(ctx: _Context):
    _cone_runs(ctx)
    required = {lab: r.status for lab, _, r, req in ctx.tame_pairs if req}
    random_ok = sum(r.feasible for _, _, r, req in ctx.tame_pairs if not req)
    c = ctx.compat7
    norm_margin = c.extras.get("normalized_margin", float("nan"))
    ok = (all(s == cone.FEASIBLE for s in required.values()) and random_ok >= 18
          and c.feasible and norm_margin >= 0.9)
    values = {"grid": "7^4", "epsilon": ctx.cfg.solver.epsilon, "required": required,
              "random_feasible": random_ok, "random_total": 20,
              "random_min_margin": min(r.min_margin for _, _, r, req in ctx.tame_pairs if not req),
              "iterations": {lab: r.iterations for lab, _, r, _ in ctx.tame_pairs},
              "compat": {"status": c.status, "normalized_margin": norm_margin}}
    return ok, values, {"random_feasible_min": 18, "compat_normalized_margin": 0.9}


def _c10(ctx: _Context):
    _cone_runs(ctx)
    cache = ctx.cache7
    eps = ctx.cfg.solver.epsilon
    opts = _solver_options(ctx.cfg)
    rows, ok = {}, True
    for label, alpha, res, _ in ctx.tame_pairs:
        if not res.feasible:
            continue
        mirror = cone.tame(cache, alpha * -1.0, eps, opts)
        ctx.cone_results.append((f"tame -({label})", mirror, alpha * -1.0))
        try:
            comp = cone.tamed_to_compatible(cache, res.omega, eps, opts)
            status = comp.status
            ctx.cone_results.append((f"compatible from {label}", comp, FormField.zeros(cache.grid, 2)))
            margin = comp.min_margin
        except (JFormsError, ValueError) as exc:
            status, margin = f"error: {exc}", float("nan")
        good = mirror.feasible and status == cone.FEASIBLE
        ok &= good
        rows[label] = {"mirror": mirror.status, "compatible": status, "compatible_margin": margin}
    return ok, {"pairs": rows, "count": len(rows)}, {"all_feasible": True}


def _c8(ctx: _Context):
    _cone_runs(ctx)
    _ensure_c10(ctx)
    cache = ctx.cache7
    eps = ctx.cfg.solver.epsilon
    rows, ok = [], True
    for label, res, alpha in ctx.cone_results:
        if not res.feasible:
            continue
        omega = res.omega
        dw = d_raw(omega.data[None], 2, omega.grid.h)
        closed = float(np.linalg.norm(dw) / np.linalg.norm(omega.data))
        _, minus = fiber.proj_j(cache.J.matrix, omega.fiber)
        anti = float(np.abs(minus - alpha.fiber).max() / max(1.0, alpha.max_abs()))
        margins = fiber.positivity_margin(cache.J.matrix, omega.fiber, cache.g_J.full())
        frac = float(np.mean(margins >= 0.5 * eps))
        good = closed <= 1e-6 and anti <= 1e-10 and frac == 1.0
        ok &= good
        rows.append({"run": label, "closedness": closed, "anti_invariant_error": anti,
                     "min_margin": float(margins.min()), "fraction_points_ok": frac})
    worst = {"closedness": max(r["closedness"] for r in rows),
             "anti_invariant_error": max(r["anti_invariant_error"] for r in rows),
             "min_margin": min(r["min_margin"] for r in rows)}
    return ok and bool(rows), {"validated": len(rows), "worst": worst, "runs": rows}, \
        {"closedness": 1e-6, "anti_invariant": 1e-10, "margin_min": 0.5 * eps,
         "fraction_points": 1.0}


def _ensure_c10(ctx: _Context):
    if not getattr(ctx, "_c10_done", False):
        ctx._c10_result = _c10(ctx)
        ctx._c10_done = True
    return ctx._c10_result


def random_invariant_fibers(count: int, seed: int):
    """Random (J, g_J, J-invariant form) triples for the positivity comparison."""
    rng = np.random.default_rng(seed)
    # P = U diag(s) V with log-normal s keeps the conditioning moderate
    U, _ = np.linalg.qr(rng.standard_normal((count, 4, 4)))
    V, _ = np.linalg.qr(rng.standard_normal((count, 4, 4)))
    s = np.exp(0.5 * rng.standard_normal((count, 1, 4)))
    P = (U * s) @ V
    flip = np.linalg.det(P) < 0
    P[flip, :, 0] *= -1
    J = P @ fiber.J0 @ np.linalg.inv(P)
    A = rng.standard_normal((count, 4, 4))
    g0 = A @ np.swapaxes(A, -1, -2) + 0.5 * np.eye(4)
    gJ = fiber.compatible_metric(J, g0)
    w, _ = fiber.proj_j(J, rng.standard_normal((count, 6)))
    w = w + rng.uniform(0, 3, (count, 1)) * fiber.fundamental_form(J, gJ)
    return J, gJ, w


def _c11(ctx: _Context):
    count = 100_000
    J, gJ, w = random_invariant_fibers(count, ctx.seed + 11)
    soc = fiber.soc_coordinates(J, gJ, w).margin
    eig = fiber.positivity_margin(J, w, gJ)
    sign_ok = bool(np.all(np.sign(soc) == np.sign(eig)))
    diff = float(np.abs(soc - eig).max())
    return sign_ok and diff <= 1e-10, \
        {"fibers": count, "sign_agreement": sign_ok, "max_value_difference": diff,
         "positive_fraction": float(np.mean(eig > 0))}, {"value": 1e-10}


def _c12(ctx: _Context):
    """Reruns a seeded subset twice and compares canonical JSON digests."""
    digests = []
    for _ in range(2):
        sub = _Context(ctx.cfg)
        parts = [_clean(_c1(sub)), _clean(_c11(sub))]
        grid, g0, J = sub.setup(5)
        cache = jfield.compatible_pair(grid, J, g0)
        res = cone.tame(cache, cone.random_anti_invariant(cache, 0.2, ctx.seed), 1e-3,
                        _solver_options(ctx.cfg))
        parts.append(_clean(res.to_dict()))
        parts.append(_clean(jfield.h_j_minus(grid, J, g0, seed=ctx.seed).evidence))
        digests.append(hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest())
    return digests[0] == digests[1], {"digests": digests}, {"identical": True}


CHECKS = {1: _c1, 2: _c2, 3: _c3, 4: _c4, 5: _c5, 6: _c6, 7: _c7, 8: _c8, 9: _c9,
          10: _ensure_c10, 11: _c11, 12: _c12}


def verify_suite(cfg: ExperimentConfig, only: list[int] | None = None,
                 progress=None) -> SuiteReport:
    """Run the battery (or the ``only`` subset) in id order."""
    ctx = _Context(cfg)
    checks, timing = [], {}
    for cid, name, anchor in CRITERIA:
        if only is not None and cid not in only:
            checks.append(Check(cid, name, anchor, SKIP, {}, {}))
            continue
        t0 = time.perf_counter()
        try:
            ok, values, tol = CHECKS[cid](ctx)
            status = PASS if ok else FAIL
        except (JFormsError, ValueError, np.linalg.LinAlgError) as exc:
            status, tol = FAIL, {}
            values = {"error": type(exc).__name__, "message": str(exc),
                      "details": getattr(exc, "details", {})}
        timing[str(cid)] = round(time.perf_counter() - t0, 3)
        check = Check(cid, name, anchor, status, _clean(values), _clean(tol))
        checks.append(check)
        if progress is not None:
            progress(check, timing[str(cid)])
    return SuiteReport(checks, cfg.digest(), cfg.seed, timing=timing)
