"""Integrands f(x, eta) in the X-frame and f_e(x, xi) in the Euclidean frame.

The two frames are linked by f_e(x, xi) = f(x, C(x) xi) (lifting) and
f(x, eta) = f_e(x, L^{-1}(x) eta) (lowering).  All callables broadcast:
``x`` has shape (..., n) and the argument (..., k) with k the arity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import sympy as sp

from . import expressions as ex
from .errors import ArgumentError
from .vector_fields import (DEFAULT_TOL, Box, VectorFieldFamily, coefficient_matrix,
                            degenerate_mask, gram_inverse, horizontal_projection,
                            masked_pseudo_inverse)

KINDS = ("quadratic", "autonomous", "general")


def _quad(a, v):
    return np.einsum("...ij,...i,...j->...", a, v, v)


@dataclass(frozen=True)
class Integrand:
    """An integrand of arity ``arity`` with growth exponent p and bounds (c0, c1).

    ``fn(x, arg)`` evaluates the integrand; ``a(x)`` is set for quadratic
    integrands (and for autonomous ones that happen to be quadratic forms).
    """

    arity: int
    fn: Callable = field(repr=False)
    kind: str = "general"
    p: float = 2.0
    c0: float = 0.0
    c1: float = float("inf")
    a: Callable | None = field(default=None, repr=False)
    grad: Callable | None = field(default=None, repr=False)
    name: str = "f"
    symbolic: sp.Expr | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown integrand kind {self.kind!r}")
        if self.arity < 1:
            raise ArgumentError("arity must be positive")
        if not self.p > 1:
            raise ArgumentError("growth exponent p must exceed 1")
        if not 0 <= self.c0 <= self.c1:
            raise ArgumentError(f"need 0 <= c0 <= c1, got c0={self.c0}, c1={self.c1}")
        if self.kind == "quadratic" and self.a is None:
            raise ArgumentError("quadratic integrands need a coefficient field")

    frame = "x"

    def __call__(self, x, arg):
        return self.fn(np.asarray(x, dtype=float), np.asarray(arg, dtype=float))

    def gradient(self, x, arg, step=1e-6):
        """Derivative in the argument; central differences when no formula is known."""
        x = np.asarray(x, dtype=float)
        arg = np.asarray(arg, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x, arg), dtype=float)
        if self.a is not None:
            A = self.a(x)
            return np.einsum("...ij,...j->...i", A + np.swapaxes(A, -1, -2), arg)
        out = np.empty(np.broadcast_shapes(x.shape[:-1], arg.shape[:-1]) + (self.arity,))
        for k in range(self.arity):
            e = np.zeros(self.arity)
            e[k] = step
            out[..., k] = (self.fn(x, arg + e) - self.fn(x, arg - e)) / (2 * step)
        return out

    def scaled(self, factor: float) -> "Integrand":
        """factor * f, keeping the kind."""
        if factor < 0:
            raise ArgumentError("scale factor must be nonnegative")
        fn, a, grad = self.fn, self.a, self.grad
        return replace(
            self,
            fn=lambda x, v: factor * fn(x, v),
            a=None if a is None else (lambda x: factor * a(x)),
            grad=None if grad is None else (lambda x, v: factor * grad(x, v)),
            c0=self.c0 * factor,
            c1=self.c1 * factor,
            name=f"{factor:g}*{self.name}",
            symbolic=None if self.symbolic is None else factor * self.symbolic,
        )


@dataclass(frozen=True)
class EuclideanIntegrand(Integrand):
    """f_e(x, xi) on Omega x R^n.

    The bounds (c0, c1) are read against |C(x) xi| as for lifted integrands.
    """

    family: VectorFieldFamily | None = field(default=None, repr=False, compare=False)
    source: Integrand | None = field(default=None, repr=False, compare=False)

    frame = "euclidean"


# -- constructors -------------------------------------------------------------

def _const_field(mat):
    mat = np.asarray(mat, dtype=float)

    def a(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(mat, x.shape[:-1] + mat.shape)

    return a


def quadratic(a, arity: int | None = None, c0=0.0, c1=float("inf"), name="quadratic",
              cls=Integrand, **extra) -> Integrand:
    """<a(x) eta, eta> with ``a`` a constant matrix or a field x -> (..., m, m)."""
    if not callable(a):
        mat = np.asarray(a, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ArgumentError("quadratic coefficient must be a square matrix")
        if not np.allclose(mat, mat.T, rtol=0, atol=1e-14 * max(1.0, np.abs(mat).max())):
            raise ArgumentError("quadratic coefficient must be symmetric")
        arity = mat.shape[0]
        a = _const_field(mat)
    if arity is None:
        raise ArgumentError("arity required for a coefficient field")
    return cls(arity=arity, fn=lambda x, v: _quad(a(x), v), kind="quadratic", p=2.0,
               c0=c0, c1=c1, a=a, name=name, **extra)


def autonomous(fn, arity: int, p=2.0, c0=0.0, c1=float("inf"), grad=None, name="autonomous",
               a=None, cls=Integrand, **extra) -> Integrand:
    """x-independent integrand f(eta)."""
    g = None if grad is None else (lambda x, v: grad(v))
    if a is not None and not callable(a):
        a = _const_field(a)
    return cls(arity=arity, fn=lambda x, v: fn(v) + 0.0 * x[..., :1].sum(-1), kind="autonomous",
               p=p, c0=c0, c1=c1, grad=g, a=a, name=name, **extra)


def general(fn, arity: int, p=2.0, c0=0.0, c1=float("inf"), grad=None, name="general",
            cls=Integrand, **extra) -> Integrand:
    return cls(arity=arity, fn=fn, kind="general", p=p, c0=c0, c1=c1, grad=grad, name=name, **extra)


def power(arity: int, p: float = 2.0, scale: float = 1.0) -> Integrand:
    """scale * |eta|^p, with bounds c0 = c1 = scale."""

    def fn(v):
        return scale * np.linalg.norm(v, axis=-1) ** p

    def grad(v):
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = scale * p * np.where(r > 0, r ** (p - 2), 0.0) * v
        return g

    a = scale * np.eye(arity) if p == 2 else None
    return autonomous(fn, arity, p, scale, scale, grad=grad, a=a, name=f"{scale:g}|eta|^{p:g}")


def from_expression(text, arity: int, n: int, euclidean: bool = False, p=2.0, c0=0.0,
                    c1=float("inf"), name=None, extra_symbols=None, **extra) -> Integrand:
    """Integrand from an expression over x1..xn and eta1..etam (xi1..xin when euclidean).

    Homogeneous quadratic polynomials in the argument become quadratic kind;
    expressions free of x become autonomous.
    """
    xs = ex.symbols("x", n)
    vs = ex.symbols("xi" if euclidean else "eta", arity)
    allowed = {str(s): s for s in xs + vs}
    allowed.update(extra_symbols or {})
    expr = ex.parse(text, allowed) if not isinstance(text, sp.Expr) else text
    return from_sympy(expr, xs, vs, euclidean, p, c0, c1, name or str(text), **extra)


def _quadratic_matrix(expr, vs):
    poly = sp.Poly(expr, *vs) if expr.free_symbols & set(vs) else None
    if poly is None or not poly.is_homogeneous or poly.total_degree() != 2:
        return None
    H = sp.hessian(expr, vs) / 2
    return sp.Matrix(H.applyfunc(sp.simplify))


def from_sympy(expr, xs, vs, euclidean=False, p=2.0, c0=0.0, c1=float("inf"), name="f", **extra):
    cls = EuclideanIntegrand if euclidean else Integrand
    arity = len(vs)
    f_num = ex.compile_scalar(expr, xs + vs)
    grads = [ex.compile_scalar(sp.diff(expr, v), xs + vs) for v in vs]

    def fn(x, v):
        return f_num(*(x[..., i] for i in range(x.shape[-1])), *(v[..., k] for k in range(arity)))

    def grad(x, v):
        comps = [x[..., i] for i in range(x.shape[-1])] + [v[..., k] for k in range(arity)]
        return np.stack([g(*comps) for g in grads], axis=-1)

    autonomous_ = not (expr.free_symbols & set(xs))
    try:
        A = _quadratic_matrix(expr, vs)
    except sp.PolynomialError:
        A = None
    a = ex.compile_matrix(A, xs) if A is not None else None
    if A is not None and not autonomous_:
        kind = "quadratic"
    else:
        kind = "autonomous" if autonomous_ else "general"
    if kind == "quadratic":
        p = 2.0
    return cls(arity=arity, fn=fn, kind=kind, p=p, c0=c0, c1=c1, a=a, grad=grad, name=name,
               symbolic=expr, **extra)


# -- evaluation ---------------------------------------------------------------

def evaluate(f: Integrand, x, arg) -> np.ndarray | float:
    """Value of f at (x, arg), checked to be finite and nonnegative."""
    arg = np.asarray(arg, dtype=float)
    if arg.shape[-1:] != (f.arity,):
        raise ArgumentError(f"argument has dimension {arg.shape[-1:]}, integrand arity is {f.arity}")
    val = f(x, arg)
    if not np.all(np.isfinite(val)):
        raise ArgumentError("integrand value is not finite")
    if np.any(val < 0):
        raise ArgumentError("integrand value is negative")
    return float(val) if np.ndim(val) == 0 else val


# -- frame changes ------------------------------------------------------------

def lift_to_euclidean(f: Integrand, family: VectorFieldFamily) -> EuclideanIntegrand:
    """f_e(x, xi) = f(x, C(x) xi)."""
    if f.arity != family.m:
        raise ArgumentError(f"integrand arity {f.arity} differs from the number of fields {family.m}")
    Cf = family.matrices

    def fn(x, xi):
        return f(x, np.einsum("...ij,...j->...i", Cf(x), xi))

    def grad(x, xi):
        C = Cf(x)
        return np.einsum("...ji,...j->...i", C, f.gradient(x, np.einsum("...ij,...j->...i", C, xi)))

    a = None
    if f.a is not None:
        def a(x):
            C = Cf(x)
            return np.swapaxes(C, -1, -2) @ f.a(x) @ C

    symbolic = None
    if f.symbolic is not None and family.symbolic is not None:
        xis = ex.symbols("xi", family.n)
        etas = ex.symbols("eta", family.m)
        image = family.symbolic * sp.Matrix(xis)
        symbolic = sp.expand(f.symbolic.subs(dict(zip(etas, image)), simultaneous=True))
    if a is not None:
        kind = "quadratic"
    elif f.kind == "autonomous" and family.kind == "euclidean":
        kind = "autonomous"
    else:
        kind = "general"
    return EuclideanIntegrand(arity=family.n, fn=fn, kind=kind, p=f.p, c0=f.c0, c1=f.c1, a=a,
                              grad=grad, name=f"lift({f.name})", symbolic=symbolic,
                              family=family, source=f)


def lower_to_x(fe: Integrand, family: VectorFieldFamily, tol: float = DEFAULT_TOL) -> Integrand:
    """f(x, eta) = f_e(x, L^{-1}(x) eta) off the degenerate set, 0 on it."""
    if fe.arity != family.n:
        raise ArgumentError(f"Euclidean integrand arity {fe.arity} differs from n={family.n}")

    def fn(x, eta):
        Linv, _, mask = masked_pseudo_inverse(family, x, tol)
        val = fe(x, np.einsum("...ij,...j->...i", Linv, eta))
        return np.where(np.broadcast_to(mask, np.shape(val)), 0.0, val)

    def grad(x, eta):
        Linv, _, mask = masked_pseudo_inverse(family, x, tol)
        g = np.einsum("...ji,...j->...i", Linv, fe.gradient(x, np.einsum("...ij,...j->...i", Linv, eta)))
        return np.where(mask[..., None], 0.0, g)

    a = None
    if fe.a is not None:
        def a(x):
            Linv, _, _ = masked_pseudo_inverse(family, x, tol)
            return np.swapaxes(Linv, -1, -2) @ fe.a(x) @ Linv

    if a is not None:
        kind = "quadratic"
    else:
        kind = fe.kind if family.kind == "euclidean" else "general"
    return Integrand(arity=family.m, fn=fn, kind=kind, p=fe.p, c0=fe.c0, c1=fe.c1, a=a, grad=grad,
                     name=f"lower({fe.name})")


def quadratic_pushforward(a_e, family: VectorFieldFamily, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """a(x) = (B^{-1})^T C a_e C^T B^{-1} at a non-degenerate point."""
    x = np.asarray(x, dtype=float)
    C = coefficient_matrix(family, x)
    Binv = gram_inverse(family, x, tol)
    A = np.asarray(a_e(x) if callable(a_e) else a_e, dtype=float)
    return np.swapaxes(Binv, -1, -2) @ C @ A @ np.swapaxes(C, -1, -2) @ Binv


# -- sampling and reports -----------------------------------------------------

@dataclass
class SampleSpec:
    points: np.ndarray  # (K, n)
    args: np.ndarray  # (J, d)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.args = np.atleast_2d(np.asarray(self.args, dtype=float))


def lattice(box: Box, per_axis: int = 17) -> np.ndarray:
    axes = [np.linspace(a, b, per_axis) for a, b in zip(box.lo, box.hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, box.dim)


def default_arguments(dim: int, seed: int = 0, directions: int = 64,
                      scales=(0.5, 1.0, 2.0)) -> np.ndarray:
    """Canonical basis, pairwise sums, and seeded random directions at a few scales."""
    eye = np.eye(dim)
    sums = [eye[i] + eye[j] for i in range(dim) for j in range(i + 1, dim)]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scaled = np.concatenate([s * dirs for s in scales])
    parts = [eye] + ([np.array(sums)] if sums else []) + [scaled]
    return np.concatenate(parts)


def default_samples(domain: Box, dim: int, seed: int = 0, per_axis: int = 17) -> SampleSpec:
    return SampleSpec(lattice(domain, per_axis), default_arguments(dim, seed))


@dataclass
class CheckReport:
    name: str
    samples_tested: int
    violations: int
    worst_residual: float
    worst_witness: tuple | None
    tol: float
    warnings: list[str] = field(default_factory=list)
    skipped: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = (f"{self.name}: {status} samples={self.samples_tested} violations={self.violations} "
                f"worst_residual={self.worst_residual:.16e}")
        if self.worst_witness is not None:
            x, v = self.worst_witness
            line += f" witness x={_fmt(x)} arg={_fmt(v)}"
        if self.skipped:
            line += f" skipped={self.skipped}"
        for w in self.warnings:
            line += f"\n  warning: {w}"
        return line


def _fmt(v):
    return "(" + ",".join(f"{float(t):.16e}" for t in np.ravel(v)) + ")"


def build_report(name, residual, allowed, points, args, tol, warnings=(), skipped=0) -> CheckReport:
    """Reduce a (K, J) residual table; worst by value then lexicographic witness."""
    residual = np.asarray(residual, dtype=float)
    allowed = np.broadcast_to(allowed, residual.shape)
    bad = residual > allowed
    worst, witness = 0.0, None
    if residual.size:
        worst = float(residual.max())
        ks, js = np.nonzero(residual == worst)
        cands = sorted(zip(ks, js), key=lambda kj: (tuple(points[kj[0]]), tuple(args[kj[1]])))
        k, j = cands[0]
        witness = (points[k].copy(), args[j].copy())
    return CheckReport(name, int(residual.size), int(bad.sum()), worst, witness, tol,
                       list(warnings), skipped)


def _nondegenerate(family, points, tol):
    C = np.asarray(family.matrices(points))
    mask, _ = degenerate_mask(C, tol)
    return points[~mask], int(mask.sum())


def compatibility_check(fe: Integrand, family: VectorFieldFamily, samples: SampleSpec | None = None,
                        tol: float = 1e-10, seed: int = 0, degeneracy_tol: float = DEFAULT_TOL) -> CheckReport:
    """Residual |f_e(x, xi) - f_e(x, Pi_x xi)| over the samples."""
    samples = samples or default_samples(family.domain, family.n, seed)
    pts, skipped = _nondegenerate(family, samples.points, degeneracy_tol)
    xi = samples.args
    P = horizontal_projection(family, pts, degeneracy_tol) if len(pts) else np.zeros((0, family.n, family.n))
    X = pts[:, None, :]
    v = fe(X, xi[None, :, :])
    vp = fe(X, np.einsum("kij,lj->kli", P, xi))
    return build_report("compatibility", np.abs(v - vp), tol * (1 + np.abs(v)), pts, xi, tol,
                        skipped=skipped)


def class_bounds_check(f: Integrand, samples: SampleSpec, tol: float = 1e-10,
                       family: VectorFieldFamily | None = None) -> CheckReport:
    """c0|eta|^p <= f(x, eta) <= c1(|eta|^p + 1); for Euclidean integrands eta = C(x) xi."""
    pts, args = samples.points, samples.args
    X = pts[:, None, :]
    v = f(X, args[None, :, :])
    if isinstance(f, EuclideanIntegrand):
        fam = family or f.family
        if fam is None:
            raise ArgumentError("a family is needed to bound a Euclidean integrand")
        r = np.linalg.norm(np.einsum("kij,lj->kli", np.asarray(fam.matrices(pts)), args), axis=-1)
    else:
        r = np.broadcast_to(np.linalg.norm(args, axis=-1)[None, :], v.shape)
    rp = r ** f.p
    low = f.c0 * rp - v
    high = v - f.c1 * (rp + 1) if np.isfinite(f.c1) else np.full_like(v, -np.inf)
    resid = np.maximum(np.maximum(low, high), 0.0)
    return build_report("class_bounds", resid, tol * (1 + np.abs(v)), pts, args, tol)


def convexity_check(f: Integrand, samples: SampleSpec, tol: float = 1e-10, seed: int = 0) -> CheckReport:
    """Midpoint convexity over argument pairs; quadratic kinds also test a(x) >= 0."""
    pts, args = samples.points, samples.args
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(args))
    zero = np.zeros_like(args)
    firsts = np.concatenate([args, args, args])
    seconds = np.concatenate([-args, zero, args[perm]])
    X = pts[:, None, :]
    fa = f(X, firsts[None])
    fb = f(X, seconds[None])
    fm = f(X, 0.5 * (firsts + seconds)[None])
    avg = 0.5 * (fa + fb)
    resid = np.maximum(fm - avg, 0.0)
    report = build_report("convexity", resid, tol * (1 + np.abs(avg)), pts, firsts, tol)
    if f.kind == "quadratic" and f.a is not None:
        A = np.asarray(f.a(pts))
        lam = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))[:, 0]
        neg = lam < -tol
        if np.any(neg):
            k = int(np.argmin(lam))
            report.violations += int(neg.sum())
            if -lam[k] > report.worst_residual:
                report.worst_residual = float(-lam[k])
                report.worst_witness = (pts[k].copy(), np.linalg.eigh(A[k])[1][:, 0])
            report.warnings.append(f"coefficient matrix has eigenvalue {lam[k]:.6e} at x={_fmt(pts[k])}")
    return report


def representation_uniqueness_check(f: Integrand, g: Integrand, family: VectorFieldFamily,
                                    samples: SampleSpec | None = None, tol: float = 1e-10,
                                    seed: int = 0, degeneracy_tol: float = DEFAULT_TOL,
                                    lic_warning_fraction: float = 0.5) -> CheckReport:
    """Compare f(x, C xi) with g(x, C xi); warn when LIC fails on most samples."""
    if f.arity != g.arity:
        raise ArgumentError("integrands must share their arity")
    if f.arity != family.m:
        raise ArgumentError("integrand arity must equal the number of vector fields")
    samples = samples or default_samples(family.domain, family.n, seed)
    pts, xi = samples.points, samples.args
    C = np.asarray(family.matrices(pts))
    mask, _ = degenerate_mask(C, degeneracy_tol)
    eta = np.einsum("kij,lj->kli", C, xi)
    X = pts[:, None, :]
    fv, gv = f(X, eta), g(X, eta)
    warnings = []
    frac = float(mask.mean()) if mask.size else 0.0
    if frac > lic_warning_fraction:
        warnings.append(f"linear independence fails on {frac:.1%} of sampled points; "
                        "agreement on the range of C(x) does not determine the integrand")
    return build_report("uniqueness", np.abs(fv - gv), tol * (1 + np.abs(fv)), pts, xi, tol, warnings)


def pushforward_consistency(a_e, family: VectorFieldFamily, points, tol: float = DEFAULT_TOL):
    """Max relative gap |d|/(1+|value|) between the closed-form pushforward and lowering on basis vectors and pair sums."""
    fe = quadratic(a_e, arity=family.n, cls=EuclideanIntegrand) if not isinstance(a_e, Integrand) else a_e
    low = lower_to_x(fe, family, tol)
    m = family.m
    eye = np.eye(m)
    probes = [eye[i] for i in range(m)] + [eye[i] + eye[j] for i in range(m) for j in range(i + 1, m)]
    worst = 0.0
    for x in np.atleast_2d(points):
        A = quadratic_pushforward(fe.a, family, x, tol)
        for v in probes:
            want = float(v @ A @ v)
            worst = max(worst, abs(float(low(x, v)) - want) / (1 + abs(want)))
    return worst
