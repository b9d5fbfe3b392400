"""Command-line front end.

Exit codes: 0 success / all checks passed, 1 a check failed (reports are
still written), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cf
from . import expressions as ex
from . import gamma_lab as gl
from . import integrands as ig
from . import sobolev as sb
from . import vector_fields as vf
from .errors import XfgError
from .functionals import FunctionalSpec, evaluate_functional

log = logging.getLogger("xfg")

SUBCOMMANDS = ("lic-scan", "project", "lift", "lower", "check-compat", "check-class", "eval", "norms",
               "mollify-check", "affine-residual", "minimize", "gamma-study", "version")


def fmt(v) -> str:
    return f"{float(v):.16e}"


class UsageError(XfgError):
    pass


# -- argument parsing ---------------------------------------------------------

def _globals() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="JSON config file; flags override its keys")
    g.add_argument("--out", type=Path, help="output directory for CSV/plot files")
    g.add_argument("--seed", type=int, help="64-bit seed for randomized sampling")
    g.add_argument("--tol", type=float, help="check tolerance")
    g.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    return p


def _family_args(p):
    p.add_argument("--family", help="euclidean | grushin | heisenberg | custom")
    p.add_argument("--n", type=int, help="ambient dimension (euclidean/custom)")
    p.add_argument("--lo", help="domain lower corner, comma separated")
    p.add_argument("--hi", help="domain upper corner, comma separated")
    p.add_argument("--coeff", help="custom coefficient rows as JSON, e.g. '[[\"1\",\"0\"],[\"0\",\"x1\"]]'")


def _integrand_args(p, euclidean=False):
    if euclidean:
        p.add_argument("--fe", help="Euclidean integrand expression over x1..xn, xi1..xin")
    else:
        p.add_argument("--f", help="integrand expression over x1..xn, eta1..etam")
        p.add_argument("--a", help="quadratic coefficient matrix as JSON rows of expressions")
    p.add_argument("--p", type=float, help="growth exponent")
    p.add_argument("--c0", type=float)
    p.add_argument("--c1", type=float)


def _grid_args(p):
    p.add_argument("--grid", help="cells per axis (int) or node counts 'n1,n2,...'")


def build_parser() -> argparse.ArgumentParser:
    common = _globals()
    parser = argparse.ArgumentParser(prog="xfg", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("lic-scan", parents=[common], help="rank scan of C(x) over a lattice")
    _family_args(p)
    _grid_args(p)

    p = sub.add_parser("project", parents=[common], help="horizontal projection at a point")
    _family_args(p)
    p.add_argument("--x", help="point")
    p.add_argument("--xi", help="optional vector to project")

    p = sub.add_parser("lift", parents=[common], help="f_e(x, xi) = f(x, C(x) xi)")
    _family_args(p)
    _integrand_args(p)
    p.add_argument("--x")
    p.add_argument("--xi")

    p = sub.add_parser("lower", parents=[common], help="f(x, eta) = f_e(x, L^-1(x) eta)")
    _family_args(p)
    _integrand_args(p, euclidean=True)
    p.add_argument("--x")
    p.add_argument("--eta")

    p = sub.add_parser("check-compat", parents=[common], help="f_e(x, xi) = f_e(x, Pi_x xi) on samples")
    _family_args(p)
    _integrand_args(p, euclidean=True)
    p.add_argument("--x", action="append", help="sample point (repeatable); default lattice")
    p.add_argument("--xi", action="append", help="sample vector (repeatable); default set")

    p = sub.add_parser("check-class", parents=[common], help="growth bounds and convexity on samples")
    _family_args(p)
    _integrand_args(p)

    p = sub.add_parser("eval", parents=[common], help="F(u, A) by midpoint quadrature")
    _family_args(p)
    _integrand_args(p)
    _grid_args(p)
    p.add_argument("--u", help="expression for u over x1..xn")
    p.add_argument("--A-lo", dest="A_lo")
    p.add_argument("--A-hi", dest="A_hi")

    p = sub.add_parser("norms", parents=[common], help="discrete W^{1,p}_X norm of u")
    _family_args(p)
    _grid_args(p)
    p.add_argument("--u")
    p.add_argument("--p", type=float)

    p = sub.add_parser("mollify-check", parents=[common], help="mollifier approximation errors")
    _family_args(p)
    _grid_args(p)
    p.add_argument("--u")
    p.add_argument("--p", type=float)
    p.add_argument("--eps", help="decreasing radii, comma separated")
    p.add_argument("--interior-lo", dest="interior_lo")
    p.add_argument("--interior-hi", dest="interior_hi")

    p = sub.add_parser("affine-residual", parents=[common], help="distance of Xu from constants")
    _family_args(p)
    _grid_args(p)
    p.add_argument("--u")
    p.add_argument("--p", type=float)

    p = sub.add_parser("minimize", parents=[common], help="minimize F + tether with Dirichlet data")
    _family_args(p)
    _integrand_args(p)
    _grid_args(p)
    p.add_argument("--dirichlet", help="boundary data expression over x1..xn")
    p.add_argument("--tether", type=float)
    p.add_argument("--target")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)

    sub.add_parser("gamma-study", parents=[common], help="convergence of minima along a sequence")
    sub.add_parser("version", parents=[common], help="print the version")
    return parser


# -- settings -----------------------------------------------------------------

class Settings:
    """Config file values overlaid with explicit flags."""

    def __init__(self, args):
        self.args = args
        self.cfg = cf.load_json(args.config) if args.config else {}

    def get(self, flag, key=None, default=None):
        v = getattr(self.args, flag, None)
        if v is not None:
            return v
        return self.cfg.get(key or flag, default)

    def require(self, flag, key=None):
        v = self.get(flag, key)
        if v is None:
            raise UsageError(f"missing --{flag.replace('_', '-')} (or config key {key or flag!r})")
        return v

    @property
    def seed(self):
        return int(self.get("seed", default=0))

    @property
    def tol(self):
        return float(self.get("tol", default=1e-10))

    def family(self) -> vf.VectorFieldFamily:
        a = self.args
        if getattr(a, "family", None):
            fcfg = dict(self.cfg.get("family", {})) if isinstance(self.cfg.get("family"), dict) else {}
            if fcfg.get("kind") != a.family:
                fcfg = {"kind": a.family}
        else:
            fcfg = self.cfg.get("family")
            if fcfg is None:
                raise UsageError("no family given (use --family or the config key 'family')")
            fcfg = dict(fcfg) if isinstance(fcfg, dict) else {"kind": fcfg}
        if getattr(a, "n", None) is not None:
            fcfg["n"] = a.n
        if getattr(a, "coeff", None):
            try:
                fcfg["coeff"] = json.loads(a.coeff)
            except json.JSONDecodeError as exc:
                raise UsageError(f"--coeff: malformed JSON at column {exc.colno}: {exc.msg}") from None
        lo, hi = getattr(a, "lo", None), getattr(a, "hi", None)
        if lo or hi:
            if not (lo and hi):
                raise UsageError("--lo and --hi go together")
            fcfg["domain"] = {"lo": ex.parse_vector(lo).tolist(), "hi": ex.parse_vector(hi).tolist()}
        return cf.parse_family(fcfg)

    def integrand(self, family, euclidean=False):
        key = "euclidean_integrand" if euclidean else "integrand"
        icfg = self.cfg.get(key)
        icfg = dict(icfg) if isinstance(icfg, dict) else ({"f": icfg} if icfg else {})
        flag = "fe" if euclidean else "f"
        if getattr(self.args, flag, None):
            icfg.pop("a", None)
            icfg["f"] = getattr(self.args, flag)
        if not euclidean and getattr(self.args, "a", None):
            icfg.pop("f", None)
            try:
                icfg["a"] = json.loads(self.args.a)
            except json.JSONDecodeError as exc:
                raise UsageError(f"--a: malformed JSON at column {exc.colno}: {exc.msg}") from None
        for k in ("p", "c0", "c1"):
            if getattr(self.args, k, None) is not None:
                icfg[k] = getattr(self.args, k)
        if "f" not in icfg and "a" not in icfg:
            raise UsageError(f"no integrand given (use --{flag} or the config key {key!r})")
        return cf.parse_integrand(icfg, family, euclidean)

    def grid(self, box: vf.Box) -> sb.Grid:
        g = getattr(self.args, "grid", None)
        if g is not None:
            parts = [int(t) for t in g.split(",")]
            g = parts[0] if len(parts) == 1 else parts
        else:
            g = self.cfg.get("grid", 32)
        return cf.parse_grid(g, box)

    def point(self, flag, dim):
        v = self.get(flag)
        if v is None:
            return None
        if isinstance(v, list):
            return np.asarray(v, dtype=float)
        return ex.parse_vector(v, dim)

    def box_pair(self, lo_flag, hi_flag, key, n):
        lo, hi = getattr(self.args, lo_flag, None), getattr(self.args, hi_flag, None)
        if lo or hi:
            if not (lo and hi):
                raise UsageError(f"--{lo_flag.replace('_', '-')} and --{hi_flag.replace('_', '-')} go together")
            return sb.Subdomain.of(ex.parse_vector(lo, n), ex.parse_vector(hi, n))
        if key in self.cfg:
            return cf.parse_subdomain(self.cfg[key], n)
        return None

    def out_dir(self) -> Path | None:
        out = self.get("out")
        if out is None:
            return None
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def threads(self) -> int:
        t = int(self.get("threads", default=1) or 0)
        return (os.cpu_count() or 1) if t == 0 else t


def _write_csv(rows, header, path=None, stream=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    if stream is not None:
        stream.write(text)
    return text


def _matrix_lines(M):
    return "\n".join(",".join(fmt(v) for v in row) for row in np.atleast_2d(M))


# -- commands -----------------------------------------------------------------

def cmd_version(s, out):
    out.write(f"{__version__}\n")
    return 0


def cmd_lic_scan(s, out):
    fam = s.family()
    grid = s.grid(fam.domain)
    rep = vf.lic_scan(fam, grid, s.get("tol", default=vf.DEFAULT_TOL))
    out.write(rep.summary() + "\n")
    d = s.out_dir()
    if d is not None:
        _write_csv([[fmt(v) for v in p] for p in rep.degenerate_locations],
                   [f"x{i + 1}" for i in range(fam.n)], d / "degenerate_points.csv")
    return 1 if rep.degenerate_samples == rep.total_samples else 0


def cmd_project(s, out):
    fam = s.family()
    x = s.point("x", fam.n)
    if x is None:
        raise UsageError("missing --x")
    P = vf.horizontal_projection(fam, x, s.get("tol", default=vf.DEFAULT_TOL))
    out.write(_matrix_lines(P) + "\n")
    xi = s.point("xi", fam.n)
    if xi is not None:
        out.write("Pi(xi)=" + ",".join(fmt(v) for v in P @ xi) + "\n")
    return 0


def cmd_lift(s, out):
    fam = s.family()
    f = s.integrand(fam)
    fe = ig.lift_to_euclidean(f, fam)
    out.write(f"kind={fe.kind}\n")
    if fe.symbolic is not None:
        out.write(f"f_e={fe.symbolic}\n")
    x = s.point("x", fam.n)
    if x is not None:
        if fe.a is not None:
            out.write("a_e(x)=\n" + _matrix_lines(fe.a(x)) + "\n")
        xi = s.point("xi", fam.n)
        if xi is not None:
            vf.coefficient_matrix(fam, x)
            out.write(f"value={fmt(ig.evaluate(fe, x, xi))}\n")
    return 0


def cmd_lower(s, out):
    fam = s.family()
    fe = s.integrand(fam, euclidean=True)
    f = ig.lower_to_x(fe, fam, vf.DEFAULT_TOL)
    out.write(f"kind={f.kind}\n")
    x = s.point("x", fam.n)
    if x is not None:
        vf.coefficient_matrix(fam, x)
        if fe.a is not None:
            mask, _ = vf.degenerate_mask(vf.coefficient_matrix(fam, x))
            if not mask:
                out.write("a(x)=\n" + _matrix_lines(ig.quadratic_pushforward(fe.a, fam, x)) + "\n")
        eta = s.point("eta", fam.m)
        if eta is not None:
            out.write(f"value={fmt(ig.evaluate(f, x, eta))}\n")
    return 0


def _explicit_samples(s, flag, dim):
    vals = getattr(s.args, flag, None) or s.cfg.get(flag)
    if not vals:
        return None
    return np.array([ex.parse_vector(v, dim) if isinstance(v, str) else np.asarray(v, float) for v in vals])


def cmd_check_compat(s, out):
    fam = s.family()
    fe = s.integrand(fam, euclidean=True)
    pts = _explicit_samples(s, "x", fam.n)
    xis = _explicit_samples(s, "xi", fam.n)
    default = ig.default_samples(fam.domain, fam.n, s.seed)
    samples = ig.SampleSpec(pts if pts is not None else default.points,
                            xis if xis is not None else default.args)
    rep = ig.compatibility_check(fe, fam, samples, s.tol)
    out.write(rep.summary() + "\n")
    return 0 if rep.passed else 1


def cmd_check_class(s, out):
    fam = s.family()
    f = s.integrand(fam)
    samples = ig.default_samples(fam.domain, f.arity, s.seed)
    ok = True
    for rep in (ig.class_bounds_check(f, samples, s.tol), ig.convexity_check(f, samples, s.tol, s.seed)):
        out.write(rep.summary() + "\n")
        ok &= rep.passed
    return 0 if ok else 1


def _field(s, fam, grid, key="u"):
    text = s.require(key)
    return grid.sample(cf.scalar_function(text, fam.n))


def cmd_eval(s, out):
    fam = s.family()
    f = s.integrand(fam)
    grid = s.grid(fam.domain)
    u = _field(s, fam, grid)
    A = s.box_pair("A_lo", "A_hi", "A", fam.n) or sb.whole(grid)
    value = evaluate_functional(FunctionalSpec(f, fam, f.p), u, A)
    cells = int(A.cell_mask(grid).sum())
    _write_csv([[value, cells, float(grid.spacing.max()), f.name, fam.name]],
               ["value", "cells", "h", "integrand", "family"], stream=out)
    return 0


def cmd_norms(s, out):
    fam = s.family()
    grid = s.grid(fam.domain)
    u = _field(s, fam, grid)
    p = float(s.get("p", default=2.0))
    xu = sb.x_gradient(u, fam).values
    lp = sb.lp_norm_cells(u.cell_average(), grid, p)
    comps = [sb.lp_norm_cells(xu[..., j], grid, p) for j in range(fam.m)]
    header = ["lp_norm"] + [f"x{j + 1}_norm" for j in range(fam.m)] + ["sobolev_x_norm"]
    _write_csv([[lp, *comps, lp + sum(comps)]], header, stream=out)
    return 0


def cmd_mollify_check(s, out):
    fam = s.family()
    grid = s.grid(fam.domain)
    u = _field(s, fam, grid)
    p = float(s.get("p", default=2.0))
    eps = s.require("eps")
    eps = [float(e) for e in (eps.split(",") if isinstance(eps, str) else eps)]
    interior = s.box_pair("interior_lo", "interior_hi", "interior", fam.n)
    if interior is None:
        raise UsageError("missing --interior-lo/--interior-hi (or config key 'interior')")
    rep = sb.mollifier_approx_check(u, fam, eps, interior, p)
    rows = [[e, err] for e, err in rep.rows()]
    _write_csv(rows, ["eps", "error"], stream=out)
    d = s.out_dir()
    if d is not None:
        _write_csv(rows, ["eps", "error"], d / "mollify_check.csv")
    out.write(f"monotone={rep.monotone} reduction={fmt(rep.reduction)}\n")
    return 0 if rep.monotone else 1


def cmd_affine_residual(s, out):
    fam = s.family()
    grid = s.grid(fam.domain)
    u = _field(s, fam, grid)
    p = float(s.get("p", default=2.0))
    c, r = sb.x_affine_residual(u, fam, p)
    _write_csv([[*c, r]], [f"c{j + 1}" for j in range(fam.m)] + ["residual"], stream=out)
    return 0


def cmd_minimize(s, out):
    fam = s.family()
    f = s.integrand(fam)
    grid = s.grid(fam.domain)
    pcfg = dict(s.cfg.get("problem", {}))
    for flag in ("dirichlet", "tether", "target"):
        if getattr(s.args, flag, None) is not None:
            pcfg[flag] = getattr(s.args, flag)
    prob = cf.parse_problem(pcfg, FunctionalSpec(f, fam, f.p), grid)
    res = gl.minimize(prob, max_iters=int(s.get("max_iters", default=20000)),
                      grad_tol=float(s.get("grad_tol", default=1e-10)), seed=s.get("seed"))
    wx = sb.sobolev_x_norm(res.u, fam, f.p, prob.A)
    _write_csv([[res.energy, res.iterations, wx, res.status, res.path]],
               ["energy", "iterations", "wx_norm", "status", "path"], stream=out)
    if prob.flat_directions_possible:
        out.write("warning: degenerate family without tether; the minimizer may not be unique\n")
    d = s.out_dir()
    if d is not None:
        sb.save_field(res.u, d / "minimizer.csv")
    return 0 if res.converged else 1


def cmd_gamma_study(s, out):
    cfg = s.cfg
    if not cfg:
        raise UsageError("gamma-study needs --config with an experiment file")
    fam = cf.parse_family(cf._require(cfg, "family"))
    h_list = cf._require(cfg, "h_list")
    if not isinstance(h_list, list) or not all(isinstance(h, int) and h > 0 for h in h_list):
        raise UsageError("h_list must be a list of positive integers")
    seq = cf.parse_sequence(cf._require(cfg, "sequence"), fam, h_list)
    rule = cfg.get("grid_rule", {"cells": 64})
    if isinstance(rule, dict) and "cells_per_period" in rule:
        cpp = int(rule["cells_per_period"])
        floor_cells = int(rule.get("min_cells", 8))
        box = fam.domain
        grid_rule = lambda h: sb.Grid.uniform(box, max(floor_cells, int(np.ceil(cpp * h * max(
            np.subtract(box.hi, box.lo))))))
    else:
        grid_rule = cf.parse_grid(rule, fam.domain)
    first = seq.member(h_list[0])
    grid0 = grid_rule(h_list[0]) if callable(grid_rule) else grid_rule
    template = cf.parse_problem(cfg.get("problem", {}), FunctionalSpec(first, fam, first.p), grid0)
    threshold = float(cfg.get("threshold", 0.02))
    rep = gl.gamma_min_study(seq, template, grid_rule, threshold=threshold, workers=s.threads(),
                             minimize_opts={"seed": s.get("seed")} if s.get("seed") is not None else None)
    rows = [[r["h"], r["cells"], r["min_energy"], r["wx_norm"], r["gap"], r["iterations"]] for r in rep.rows]
    text = _write_csv(rows, list(gl.GammaStudyReport.columns))
    out.write(text)
    out.write(f"reference={fmt(rep.reference)} kind={rep.reference_kind} verdict={'PASS' if rep.verdict else 'FAIL'}\n")
    for note in rep.notes:
        out.write(f"note: {note}\n")
    d = s.out_dir() or Path(".")
    (d / "gamma_study.csv").write_text(text)
    (d / "gamma_study_plot.dat").write_text(
        "# h min_energy\n" + "".join(f"{r['h']} {fmt(r['min_energy'])}\n" for r in rep.rows))
    return 0 if rep.verdict else 1


COMMANDS = {
    "version": cmd_version,
    "lic-scan": cmd_lic_scan,
    "project": cmd_project,
    "lift": cmd_lift,
    "lower": cmd_lower,
    "check-compat": cmd_check_compat,
    "check-class": cmd_check_class,
    "eval": cmd_eval,
    "norms": cmd_norms,
    "mollify-check": cmd_mollify_check,
    "affine-residual": cmd_affine_residual,
    "minimize": cmd_minimize,
    "gamma-study": cmd_gamma_study,
}


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        settings = Settings(args)
        return COMMANDS[args.command](settings, out)
    except (XfgError, ValueError) as exc:
        err.write(f"xfg {args.command}: error: {exc}\n")
        return 2


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
