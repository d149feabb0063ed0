"""Command-line front end.

    jforms <command> --config <path> [--out <dir>] [--seed <n>]

Every command writes ``report.json`` into the output directory; sweeps add
``tables/*.csv`` and form-valued results are stored as ``.jff`` containers.
Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 solver budget exhausted without a certified answer.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, cone, fiber, formio, hodge, jfield
from .config import ConfigError, ExperimentConfig, load_config
from .errors import JFormsError
from .grid import FormField, Grid, ncomp
from .suite import _clean, _partner_defects, _solver_options, verify_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNDETERMINED = 0, 1, 2, 3

COMMANDS = ("betti", "hodge-decompose", "asd-partner", "invariants", "complexes",
            "rank-identity", "tame", "compat", "tamed-to-compatible", "verify-suite")


class Session:
    """Everything a command needs: config, built objects, output location."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.grid = cfg.grid.build()
        self.g0 = cfg.metric.build(self.grid)
        self.files: list[str] = []
        self.tables: list[str] = []
        self._J = None

    @property
    def J(self) -> jfield.JField:
        if self._J is None:
            self._J = jfield.make_recipe_J(self.grid, self.cfg.J.recipe())
        return self._J

    def at(self, n: int):
        grid = Grid((n,) * 4, self.grid.L)
        return grid, self.cfg.metric.build(grid), jfield.make_recipe_J(grid, self.cfg.J.recipe())

    def save_form(self, name: str, a: FormField):
        if self.cfg.output.save_forms:
            formio.save(self.out / f"{name}.jff", a)
            self.files.append(f"{name}.jff")

    def table(self, name: str, header: list[str], rows: list[list]):
        path = self.out / "tables"
        path.mkdir(parents=True, exist_ok=True)
        with open(path / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.tables.append(f"tables/{name}.csv")

    def input_form(self, degree: int) -> FormField | None:
        if self.cfg.options.input is None:
            return None
        a = formio.load(self.cfg.options.input)
        if a.grid != self.grid:
            raise ConfigError(f"input form grid {a.grid.n} does not match config grid {self.grid.n}")
        if a.degree != degree:
            raise ConfigError(f"input form has degree {a.degree}, expected {degree}")
        return a

    def alpha(self, cache: jfield.TameConfigCache) -> FormField:
        spec = self.cfg.options.alpha
        if spec.type == "zero":
            return FormField.zeros(self.grid, 2)
        if spec.type == "constant":
            return cone.constant_anti_invariant(cache, spec.direction, spec.amplitude)
        return cone.random_anti_invariant(cache, spec.amplitude, spec.seed, spec.kmax)


# commands ---------------------------------------------------------------------------

def cmd_betti(s: Session):
    sizes = s.cfg.options.sizes or [s.grid.n[0]]
    if s.cfg.options.sizes:
        rows, results = [], {}
        for n in sizes:
            grid, g0, _ = s.at(n)
            b = hodge.betti_numbers(grid, g0, seed=s.cfg.seed)
            results[f"{n}^4"] = b.to_dict()
            rows.append([n, *b.b, b.bplus, b.bminus])
        s.table("betti", ["n", "b0", "b1", "b2", "b3", "b4", "bplus", "bminus"], rows)
        return EXIT_OK, {"sweep": results}
    b = hodge.betti_numbers(s.grid, s.g0, seed=s.cfg.seed)
    return EXIT_OK, b.to_dict()


def _random_form(s: Session, degree: int) -> FormField:
    rng = np.random.default_rng(s.cfg.seed)
    return FormField(s.grid, degree, rng.standard_normal((ncomp(degree),) + s.grid.shape))


def cmd_hodge(s: Session):
    degree = s.cfg.options.degree
    a = s.input_form(degree)
    if a is None:
        a = _random_form(s, degree)
    dec = hodge.hodge_decompose(s.grid, s.g0, a)
    for name in ("harmonic", "exact", "coexact"):
        s.save_form(name, getattr(dec, name))
    ok = dec.residual <= 1e-8 and dec.orthogonality <= 1e-8
    return (EXIT_OK if ok else EXIT_FAIL), {
        "degree": degree, "reconstruction_residual": dec.residual,
        "orthogonality": dec.orthogonality, "cg_iterations": dec.iterations,
        "tolerance": 1e-8}


def cmd_partner(s: Session):
    a = s.input_form(2)
    if a is None:
        rng = np.random.default_rng(s.cfg.seed)
        sd, _ = hodge.self_dual_parts(s.grid, s.g0, rng.standard_normal((1, 6) + s.grid.shape))
        a = FormField(s.grid, 2, sd[0])
    sd, asd = hodge.self_dual_parts(s.grid, s.g0, a.data[None])
    self_dual = np.linalg.norm(asd) <= np.linalg.norm(sd)
    beta = (hodge.asd_partner if self_dual else hodge.sd_partner)(s.grid, s.g0, a)
    d_def, chir = _partner_defects(s.grid, s.g0, a, beta, -1 if self_dual else 1)
    s.save_form("input", a)
    s.save_form("partner", beta)
    ok = d_def <= 1e-8 and chir <= 1e-6
    return (EXIT_OK if ok else EXIT_FAIL), {
        "input_chirality": "self-dual" if self_dual else "anti-self-dual",
        "d_defect_rel": d_def, "chirality_defect_rel": chir}


def cmd_invariants(s: Session):
    def one(grid, g0, J):
        rep = jfield.invariant_report(grid, J, g0, seed=s.cfg.seed)
        ok = (rep.h_plus + rep.h_minus == rep.b2 and rep.inequalities["h_minus_le_bplus"]
              and rep.inequalities["h_plus_ge_bminus"])
        return ok, rep.to_dict()

    if s.cfg.options.sizes:
        rows, results, ok = [], {}, True
        for n in s.cfg.options.sizes:
            good, rep = one(*s.at(n))
            ok &= good
            results[f"{n}^4"] = rep
            rows.append([n, rep["h_minus"], rep["h_plus"], rep["b_plus"], rep["b_minus"],
                         rep["b2"], rep["dim_T_g"]])
        s.table("invariants", ["n", "h_minus", "h_plus", "b_plus", "b_minus", "b2", "dim_T_g"], rows)
        return (EXIT_OK if ok else EXIT_FAIL), {"sweep": results}
    ok, rep = one(s.grid, s.g0, s.J)
    return (EXIT_OK if ok else EXIT_FAIL), rep


def _dense_sizes(s: Session) -> list[int]:
    sizes = s.cfg.options.sizes or [s.grid.n[0]]
    if not s.cfg.options.sizes and len(set(s.grid.n)) != 1:
        raise ConfigError("dense rank commands need a cubic grid")
    big = [n for n in sizes if n ** 4 > jfield.DENSE_LIMIT]
    if big:
        raise ConfigError(f"dense rank computations are limited to {jfield.DENSE_LIMIT} points; "
                          f"sizes {big} are too large")
    return sizes


def cmd_complexes(s: Session):
    rows, results, ok = [], {}, True
    for n in _dense_sizes(s):
        grid, g0, J = s.at(n)
        ops = jfield.DenseOps(jfield.compatible_pair(grid, J, g0))
        plus = jfield.modified_complex_cohomology(grid, J, "plus", ops=ops)
        minus = jfield.modified_complex_cohomology(grid, J, "minus", ops=ops)
        ok &= minus.extras["kernel_equals_Z1"] and minus.extras["second_differential_zero"]
        results[f"{n}^4"] = {"plus": plus.to_dict(), "minus": minus.to_dict()}
        rows.append([n, "plus", *plus.dims])
        rows.append([n, "minus", *minus.dims])
    s.table("complexes", ["n", "complex", "level0", "level1", "level2", "level3", "level4"], rows)
    return (EXIT_OK if ok else EXIT_FAIL), results


def cmd_rank_identity(s: Session):
    results, ok = {}, True
    for n in _dense_sizes(s):
        grid, g0, J = s.at(n)
        rep = jfield.rank_identity(grid, J, g0, seed=s.cfg.seed,
                                          samples=s.cfg.options.samples)
        ok &= rep["passed"]
        results[f"{n}^4"] = rep
    return (EXIT_OK if ok else EXIT_FAIL), results


def _feasibility_exit(res: cone.FeasibilityResult) -> int:
    return EXIT_OK if res.feasible else EXIT_UNDETERMINED


def cmd_tame(s: Session):
    cache = jfield.compatible_pair(s.grid, s.J, s.g0)
    alpha = s.alpha(cache)
    res = cone.tame(cache, alpha, s.cfg.solver.epsilon, _solver_options(s.cfg))
    if res.feasible:
        s.save_form("omega", res.omega)
    return _feasibility_exit(res), res.to_dict() | {"alpha": s.cfg.options.alpha.model_dump()}


def cmd_compat(s: Session):
    cache = jfield.compatible_pair(s.grid, s.J, s.g0)
    res = cone.compat(cache, s.cfg.solver.epsilon, _solver_options(s.cfg))
    if res.feasible:
        s.save_form("omega", res.omega)
    return _feasibility_exit(res), res.to_dict()


def cmd_tamed_to_compatible(s: Session):
    cache = jfield.compatible_pair(s.grid, s.J, s.g0)
    opts = _solver_options(s.cfg)
    tamed = s.input_form(2)
    source = "input"
    if tamed is None:
        first = cone.tame(cache, s.alpha(cache), s.cfg.solver.epsilon, opts)
        if not first.feasible:
            return EXIT_UNDETERMINED, {"stage": "tame", "tame": first.to_dict()}
        tamed = first.omega
        source = "tame"
        s.save_form("tamed", tamed)
    res = cone.tamed_to_compatible(cache, tamed, s.cfg.solver.epsilon, opts)
    if res.feasible:
        s.save_form("omega", res.omega)
    return _feasibility_exit(res), res.to_dict() | {"tamed_source": source}


def cmd_verify_suite(s: Session):
    def progress(check, seconds):
        print(f"criterion {check.id:2d} {check.status:4s} {check.name} ({seconds:.1f}s)",
              file=sys.stderr)

    rep = verify_suite(s.cfg, progress=progress)
    body = rep.to_dict(with_timing=False)
    if not rep.passed:
        print(f"failing criteria: {rep.failing}", file=sys.stderr)
    return (EXIT_OK if rep.passed else EXIT_FAIL), body, rep.timing


HANDLERS = {"betti": cmd_betti, "hodge-decompose": cmd_hodge, "asd-partner": cmd_partner,
            "invariants": cmd_invariants, "complexes": cmd_complexes,
            "rank-identity": cmd_rank_identity, "tame": cmd_tame, "compat": cmd_compat,
            "tamed-to-compatible": cmd_tamed_to_compatible, "verify-suite": cmd_verify_suite}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jforms", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--debug-fiber", action="store_true",
                   help="also write fiber_debug.json for the first grid point")
    p.add_argument("--version", action="version", version=f"jforms {__version__}")
    return p


def _fiber_debug(s: Session) -> dict:
    cache = jfield.compatible_pair(s.grid, s.J, s.g0)
    idx = (0,) * 4
    return _clean(fiber.debug_dump(s.J.matrix[idx], s.g0.full()[idx], cache.omega.fiber[idx]))


def run(command: str, cfg: ExperimentConfig, out: Path, debug_fiber: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    timing: dict = {}
    try:
        s = Session(cfg, out)
        outcome = HANDLERS[command](s)
        code, result = outcome[0], outcome[1]
        if len(outcome) > 2:
            timing["checks"] = outcome[2]
        if debug_fiber:
            (out / "fiber_debug.json").write_text(json.dumps(_fiber_debug(s), indent=2))
            s.files.append("fiber_debug.json")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JFormsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, result, s = EXIT_FAIL, {"error": type(exc).__name__, "message": str(exc),
                                      "details": exc.details}, None
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    timing["total_seconds"] = round(time.perf_counter() - t0, 3)
    report = {"tool": "jforms", "version": __version__, "command": command,
              "config_hash": cfg.digest(), "seed": cfg.seed, "config": cfg.model_dump(),
              "exit_code": code, "result": result,
              "files": s.files if s else [], "tables": s.tables if s else [],
              "timing": timing}
    (out / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.model_copy(update={"seed": args.seed})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output.dir)
    return run(args.command, cfg, out, args.debug_fiber)


if __name__ == "__main__":
    sys.exit(main())
