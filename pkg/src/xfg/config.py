"""Build library objects from JSON config dictionaries."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import sympy as sp

from . import expressions as ex
from . import vector_fields as vf
from .errors import ArgumentError, ConfigError
from .gamma_lab import EnergyProblem, SequenceSpec, homogenization_oracle_1d
from .functionals import FunctionalSpec
from .integrands import Integrand, from_expression, from_sympy
from .sobolev import MAX_DIM, Grid, Subdomain

FAMILY_KINDS = ("euclidean", "grushin", "heisenberg", "custom")


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1:1: top-level JSON value must be an object")
    return data


def _require(cfg, key, what="config"):
    if key not in cfg:
        raise ConfigError(f"{what}: missing required key {key!r}")
    return cfg[key]


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}")
    return float(value)


def parse_box(cfg, n=None) -> vf.Box:
    if not isinstance(cfg, dict):
        raise ConfigError("box must be an object with 'lo' and 'hi'")
    lo, hi = _require(cfg, "lo", "box"), _require(cfg, "hi", "box")
    if not isinstance(lo, list) or not isinstance(hi, list):
        raise ConfigError("box 'lo' and 'hi' must be lists")
    try:
        box = vf.Box(tuple(_number(v, "lo") for v in lo), tuple(_number(v, "hi") for v in hi))
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None
    if n is not None and box.dim != n:
        raise ConfigError(f"box has dimension {box.dim}, expected {n}")
    return box


def parse_family(cfg) -> vf.VectorFieldFamily:
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    if not isinstance(cfg, dict):
        raise ConfigError("family must be an object or a kind name")
    kind = _require(cfg, "kind", "family")
    if kind not in FAMILY_KINDS:
        raise ConfigError(f"family kind must be one of {FAMILY_KINDS}, got {kind!r}")
    fixed = {"grushin": (2, 2), "heisenberg": (2, 3)}
    if kind in fixed:
        m, n = fixed[kind]
        for key, want in (("m", m), ("n", n)):
            if key in cfg and cfg[key] != want:
                raise ConfigError(f"{kind} family has {key}={want}, config says {cfg[key]}")
    else:
        n = cfg.get("n")
        if kind == "custom" and n is None:
            coeff = _require(cfg, "coeff", "custom family")
            n = len(coeff[0]) if isinstance(coeff, list) and coeff and isinstance(coeff[0], list) else None
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ConfigError(f"{kind} family needs a positive integer 'n'")
    if n > MAX_DIM:
        raise ConfigError(f"n={n} exceeds the supported maximum {MAX_DIM}")
    box = parse_box(cfg["domain"], n) if "domain" in cfg else vf.Box.cube(n)
    try:
        if kind == "euclidean":
            fam = vf.euclidean(n, box)
        elif kind == "grushin":
            fam = vf.grushin(box)
        elif kind == "heisenberg":
            fam = vf.heisenberg(box)
        else:
            fam = vf.custom(_require(cfg, "coeff", "custom family"), n, box, cfg.get("name", "custom"))
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None
    if "m" in cfg and cfg["m"] != fam.m:
        raise ConfigError(f"family declares m={cfg['m']} but has {fam.m} rows")
    return fam


def parse_integrand(cfg, family: vf.VectorFieldFamily, euclidean=False, extra_symbols=None) -> Integrand:
    """Integrand config {"kind", "p", "c0", "c1", "a" | "f"}."""
    if isinstance(cfg, str):
        cfg = {"f": cfg}
    if not isinstance(cfg, dict):
        raise ConfigError("integrand must be an object or an expression string")
    arity = family.n if euclidean else family.m
    p = _number(cfg.get("p", 2.0), "p")
    c0 = _number(cfg.get("c0", 0.0), "c0")
    c1 = _number(cfg.get("c1", float("inf")), "c1") if "c1" in cfg else float("inf")
    kind = cfg.get("kind")
    xs = ex.symbols("x", family.n)
    vs = ex.symbols("xi" if euclidean else "eta", arity)
    allowed = {str(s): s for s in xs + vs}
    allowed.update(extra_symbols or {})
    try:
        if "a" in cfg:
            if kind not in (None, "quadratic"):
                raise ConfigError(f"coefficient matrix 'a' given for kind {kind!r}")
            mat = ex.parse_matrix(cfg["a"], allowed, (arity, arity))
            if mat != mat.T:
                raise ConfigError("quadratic coefficient matrix must be symmetric")
            expr = sp.expand((sp.Matrix(vs).T * mat * sp.Matrix(vs))[0, 0])
            f = from_sympy(expr, xs, vs, euclidean, 2.0, c0, c1, name=cfg.get("name", "quadratic"))
        else:
            text = _require(cfg, "f", "integrand")
            f = from_expression(text, arity, family.n, euclidean, p, c0, c1, name=cfg.get("name"),
                                extra_symbols=extra_symbols)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None
    if kind is not None:
        if kind not in ("quadratic", "autonomous", "general"):
            raise ConfigError(f"unknown integrand kind {kind!r}")
        if kind == "autonomous" and f.kind != "autonomous":
            raise ConfigError("integrand declared autonomous depends on x")
        if kind == "quadratic" and f.a is None:
            raise ConfigError("integrand declared quadratic is not a quadratic form in its argument")
    if f.kind == "quadratic" and p != 2.0:
        raise ConfigError("quadratic integrands have p = 2")
    return f


def parse_grid(cfg, box: vf.Box) -> Grid:
    """Grid from an int (cells per axis), a list of node counts, or {"resolution", "box"}."""
    if isinstance(cfg, dict):
        if "box" in cfg:
            box = parse_box(cfg["box"], box.dim)
        if "cells" in cfg:
            cfg = int(cfg["cells"])
        else:
            cfg = _require(cfg, "resolution", "grid")
    try:
        if isinstance(cfg, int) and not isinstance(cfg, bool):
            return Grid.uniform(box, cfg)
        if isinstance(cfg, list) and all(isinstance(r, int) for r in cfg):
            return Grid(box, tuple(cfg))
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"cannot interpret grid {cfg!r}")


def parse_subdomain(cfg, n) -> Subdomain:
    return Subdomain(parse_box(cfg, n))


def scalar_function(text, n, name="u"):
    """Callable of node coordinates from an expression over x1..xn."""
    xs = ex.symbols("x", n)
    expr = ex.parse(text, {str(s): s for s in xs}) if not isinstance(text, (int, float)) else sp.Float(text)
    fn = ex.compile_scalar(expr, xs)

    def f(points):
        points = np.asarray(points, dtype=float)
        return fn(*(points[..., i] for i in range(n)))

    f.expr = expr
    return f


def parse_sequence(cfg, family: vf.VectorFieldFamily, h_list) -> SequenceSpec:
    kind = _require(cfg, "kind", "sequence")
    if kind == "oscillating_quadratic":
        if "laminate" in cfg:
            lam = cfg["laminate"]
            axis = int(lam.get("axis", 1)) - 1
            seq = SequenceSpec.laminate(_number(_require(lam, "alpha", "laminate"), "alpha"),
                                        _number(_require(lam, "beta", "laminate"), "beta"),
                                        _number(lam.get("theta", 0.5), "theta"),
                                        h_list, n=family.m, axis=axis)
        else:
            ys = ex.symbols("y", family.n)
            mat = ex.parse_matrix(_require(cfg, "a", "sequence"), {str(s): s for s in ys}, (family.m, family.m))
            if mat != mat.T:
                raise ConfigError("periodic coefficient matrix must be symmetric")
            base = ex.compile_matrix(mat, ys)
            seq = SequenceSpec("oscillating_quadratic", list(h_list), base=base, arity=family.m,
                               c0=_number(cfg.get("c0", 0.0), "c0"),
                               c1=_number(cfg.get("c1", float("inf")), "c1") if "c1" in cfg else float("inf"))
    elif kind == "autonomous_sequence":
        h = sp.Symbol("h", positive=True)
        member_cfg = {k: cfg[k] for k in ("f", "p", "c0", "c1") if k in cfg}
        member_cfg["f"] = _require(cfg, "f", "sequence")
        member_cfg["kind"] = "autonomous"
        template = parse_integrand(member_cfg, family, extra_symbols={"h": h})
        expr = template.symbolic
        xs = ex.symbols("x", family.n)
        vs = ex.symbols("eta", family.m)

        def rule(hv, expr=expr):
            return from_sympy(expr.subs(h, hv), xs, vs, False, template.p, template.c0, template.c1,
                              name=f"{member_cfg['f']}|h={hv}")

        limit_cfg = dict(member_cfg, f=_require(cfg, "limit", "sequence"))
        limit = parse_integrand(limit_cfg, family)
        seq = SequenceSpec("autonomous_sequence", list(h_list), rule=rule, limit=limit, arity=family.m,
                           c0=template.c0, c1=template.c1)
    else:
        raise ConfigError(f"unknown sequence kind {kind!r}")
    oracle = cfg.get("oracle")
    if oracle == "harmonic_mean":
        lam = cfg.get("laminate")
        if lam is None or family.n != 1:
            raise ConfigError("the harmonic-mean oracle applies to one-dimensional laminates")
        seq.oracle = homogenization_oracle_1d(lam["alpha"], lam["beta"], lam.get("theta", 0.5))
    elif oracle is not None:
        seq.oracle = _number(oracle, "oracle")
    return seq


def parse_problem(cfg, spec: FunctionalSpec, grid: Grid) -> EnergyProblem:
    n = spec.family.n
    dirichlet = scalar_function(cfg.get("dirichlet", 0.0), n)
    target = scalar_function(cfg["target"], n) if "target" in cfg else None
    A = parse_subdomain(cfg["A"], n) if "A" in cfg else None
    tether = _number(cfg["tether"], "tether") if "tether" in cfg else None
    try:
        return EnergyProblem(spec, grid, dirichlet, A, tether, target)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from None
