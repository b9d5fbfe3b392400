"""Discrete energy minimization and convergence-of-minima experiments.

``minimize`` solves one Dirichlet problem; ``gamma_min_study`` runs it along
a sequence of integrands f_h and compares the minimum values with a limit
(an oracle, the minimum for a known limit integrand, or an extrapolation).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps

from .errors import ArgumentError, IndefiniteSystemError, NonConvexityError, ResolutionError
from .functionals import FunctionalSpec, evaluate_functional, quadrature
from .integrands import (CheckReport, Integrand, SampleSpec, build_report, power, quadratic,
                         quadratic_pushforward)
from .sobolev import (Grid, ScalarField, Subdomain, cell_average_operator, cell_coefficients,
                      gradient_operators, sobolev_x_norm, whole)
from .vector_fields import DEFAULT_TOL, VectorFieldFamily, degenerate_mask, horizontal_projection

log = logging.getLogger(__name__)

DEGENERATE_TETHER = 1e-6


def _nodal(values, grid: Grid) -> np.ndarray:
    if callable(values):
        return np.asarray(values(grid.nodes()), dtype=float).reshape(grid.resolution)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.resolution, float(arr))
    return arr.reshape(grid.resolution)


@dataclass
class EnergyProblem:
    """Minimize F(u, A) + tether * int_A |u - target|^p with u = dirichlet on the boundary of A.

    ``dirichlet`` and ``target`` are callables of node coordinates (so the
    problem can be rebuilt on other grids) or nodal arrays.  A ``tether`` of
    None picks 0, or a tiny pinning weight when the family degenerates on
    the grid.
    """

    spec: FunctionalSpec
    grid: Grid
    dirichlet: Callable | np.ndarray | float
    A: Subdomain | None = None
    tether: float | None = None
    target: Callable | np.ndarray | float | None = None

    def __post_init__(self):
        self.A = self.A or whole(self.grid)
        g = _nodal(self.dirichlet, self.grid)
        if not np.all(np.isfinite(g[self.boundary_nodes()])):
            raise ArgumentError("Dirichlet data must be finite on the boundary")
        if self.tether is None:
            self.tether = DEGENERATE_TETHER if self.degenerate_on_grid() else 0.0
        if self.tether < 0:
            raise ArgumentError("tether weight must be nonnegative")

    def degenerate_on_grid(self) -> bool:
        C = cell_coefficients(self.grid, self.spec.family)
        mask, _ = degenerate_mask(C.reshape(-1, *C.shape[-2:]))
        nodes = np.asarray(self.spec.family.matrices(self.grid.nodes().reshape(-1, self.grid.dim)))
        nmask, _ = degenerate_mask(nodes)
        return bool(mask.any() or nmask.any())

    @property
    def flat_directions_possible(self) -> bool:
        return self.tether == 0 and self.degenerate_on_grid()

    def node_slices(self):
        return tuple(slice(s.start, s.stop + 1) for s in self.A.cell_slices(self.grid))

    def free_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.resolution, dtype=bool)
        mask[tuple(slice(s.start + 1, s.stop - 1) for s in self.node_slices())] = True
        return mask

    def boundary_nodes(self) -> np.ndarray:
        closed = np.zeros(self.grid.resolution, dtype=bool)
        closed[self.node_slices()] = True
        return closed & ~self.free_mask()

    def data(self) -> np.ndarray:
        return _nodal(self.dirichlet, self.grid)

    def target_values(self) -> np.ndarray:
        return _nodal(self.target if self.target is not None else self.dirichlet, self.grid)

    def with_integrand(self, f: Integrand, grid: Grid | None = None) -> "EnergyProblem":
        spec = FunctionalSpec(f, self.spec.family, f.p)
        return replace(self, spec=spec, grid=grid or self.grid,
                       A=self.A if grid is None else Subdomain(self.A.box))


def tether_energy(problem: EnergyProblem, u: ScalarField) -> float:
    if problem.tether == 0:
        return 0.0
    tgt = ScalarField(problem.grid, problem.target_values()).cell_average()
    vals = problem.tether * np.abs(u.cell_average() - tgt) ** problem.spec.p
    return quadrature(vals, problem.grid, problem.A)


def total_energy(problem: EnergyProblem, u: ScalarField) -> float:
    return evaluate_functional(problem.spec, u, problem.A) + tether_energy(problem, u)


@dataclass
class Minimum:
    u: ScalarField
    energy: float
    iterations: int
    status: str
    residual: float
    history: list[float] = field(default_factory=list, repr=False)
    path: str = "quadratic"

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "stalled")

    def __iter__(self):
        return iter((self.u, self.energy, self.iterations))


class _Operators:
    """Sparse X-gradient rows restricted to the cells of A, with cell weights."""

    def __init__(self, problem: EnergyProblem):
        grid = problem.grid
        family = problem.spec.family
        C = cell_coefficients(grid, family).reshape(-1, family.m, family.n)
        D = gradient_operators(grid)
        self.cells_in_A = problem.A.cell_mask(grid).ravel()
        self.weights = grid.cell_volume * self.cells_in_A
        self.X = [sum(sps.diags(C[:, j, i]) @ D[i] for i in range(family.n)).tocsr()
                  for j in range(family.m)]
        self.avg = cell_average_operator(grid)
        self.centers = grid.cell_centers().reshape(-1, grid.dim)

    def xgrad(self, u_flat):
        return np.stack([Xj @ u_flat for Xj in self.X], axis=-1)


def conjugate_gradient(A, b, x0, rtol=1e-10, max_iters=None):
    """Jacobi-preconditioned CG; raises on a non-positive curvature direction."""
    n = b.size
    max_iters = max_iters or 10 * n + 100
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise IndefiniteSystemError("assembled matrix has a non-positive diagonal entry")
    minv = 1.0 / diag
    x = x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b) or 1.0
    z = minv * r
    d = z.copy()
    rz = r @ z
    it = 0
    while np.linalg.norm(r) > rtol * bnorm and it < max_iters:
        Ad = A @ d
        curv = d @ Ad
        if curv <= 0:
            raise IndefiniteSystemError(f"non-positive curvature {curv:.3e} in conjugate gradient")
        alpha = rz / curv
        x += alpha * d
        r -= alpha * Ad
        z = minv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
        it += 1
    return x, it, float(np.linalg.norm(r) / bnorm)


def _minimize_quadratic(problem, ops, u0, grad_tol, max_iters):
    f = problem.spec.integrand
    grid = problem.grid
    A = np.asarray(f.a(ops.centers))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    m = problem.spec.family.m
    K = sps.csr_matrix((grid.node_count, grid.node_count))
    for j in range(m):
        for k in range(m):
            wjk = ops.weights * A[:, j, k]
            if np.any(wjk):
                K = K + ops.X[j].T @ sps.diags(wjk) @ ops.X[k]
    b = np.zeros(grid.node_count)
    if problem.tether:
        lw = problem.tether * ops.weights
        K = K + ops.avg.T @ sps.diags(lw) @ ops.avg
        tgt = ops.avg @ problem.target_values().ravel()
        b = ops.avg.T @ (lw * tgt)
    K = K.tocsr()
    free = problem.free_mask().ravel()
    fixed_vals = u0.copy()
    fixed_vals[free] = 0.0
    Kff = K[free][:, free]
    rhs = b[free] - K[free] @ fixed_vals
    x, its, rel = conjugate_gradient(Kff, rhs, u0[free], rtol=grad_tol, max_iters=max_iters)
    u = u0.copy()
    u[free] = x
    if rel > grad_tol:
        log.warning("conjugate gradient stopped at relative residual %.3e", rel)
    return u, its, rel, rel <= grad_tol


def _energy_and_grad(problem, ops, u_flat):
    f = problem.spec.integrand
    w = ops.xgrad(u_flat)
    vals = f(ops.centers, w)
    energy = float(np.sum(ops.weights * vals))
    g = np.asarray(f.gradient(ops.centers, w))
    grad = sum(ops.X[j].T @ (ops.weights * g[:, j]) for j in range(len(ops.X)))
    if problem.tether:
        p = problem.spec.p
        diff = ops.avg @ u_flat - ops.avg @ problem.target_values().ravel()
        energy += float(np.sum(problem.tether * ops.weights * np.abs(diff) ** p))
        grad = grad + ops.avg.T @ (problem.tether * ops.weights * p * np.abs(diff) ** (p - 1) * np.sign(diff))
    return energy, grad


def _minimize_descent(problem, ops, u0, grad_tol, max_iters):
    """Polak-Ribiere conjugate directions with Armijo backtracking (factor 1e-4, halving).

    Stops with status "stalled" once a step can no longer change the energy
    in floating point.
    """
    free = problem.free_mask().ravel()
    u = u0.copy()
    E, g = _energy_and_grad(problem, ops, u)
    g[~free] = 0.0
    d = -g
    history = [E]
    step = 1.0 / max(1.0, np.abs(g).max())
    it = 0
    status = "converged" if np.abs(g).max() <= grad_tol * (1 + abs(E)) else "running"
    while status == "running" and it < max_iters:
        slope = g @ d
        if slope >= 0:
            d, slope = -g, -(g @ g)
        t = step
        while True:
            E_new, g_new = _energy_and_grad(problem, ops, u + t * d)
            if E_new <= E + 1e-4 * t * slope:
                break
            if abs(t * slope) <= 1e-15 * (1 + abs(E)):
                status = "stalled"
                break
            t *= 0.5
        if status == "stalled":
            break
        E_mid, _ = _energy_and_grad(problem, ops, u + 0.5 * t * d)
        if E_mid > 0.5 * (E + E_new) + 1e-10 * (1 + abs(E)):
            raise NonConvexityError(f"energy is not convex along the search line at iteration {it}")
        if E_new > E:
            raise NonConvexityError("accepted step increased the energy")
        g_new[~free] = 0.0
        beta = max(0.0, g_new @ (g_new - g) / (g @ g)) if g @ g > 0 else 0.0
        u = u + t * d
        d = -g_new + beta * d
        g, E = g_new, E_new
        history.append(E)
        step = 2.0 * t
        it += 1
        if np.abs(g).max() <= grad_tol * (1 + abs(E)):
            status = "converged"
    if status == "running":
        status = "max_iters"
    return u, it, float(np.abs(g).max()), status, history


def minimize(problem: EnergyProblem, max_iters: int = 20000, grad_tol: float = 1e-10,
             seed: int | None = None, perturb: float = 0.1) -> Minimum:
    """Minimize the discrete energy over the free nodes of A.

    Quadratic integrands (``a`` set) with p = 2 assemble and solve the linear
    system; other integrands use first-order descent.  ``seed`` starts from
    the data plus seeded noise of size ``perturb`` on the free nodes.
    """
    f = problem.spec.integrand
    grid = problem.grid
    u0 = problem.data().ravel().copy()
    free = problem.free_mask().ravel()
    if seed is not None:
        rng = np.random.default_rng(seed)
        u0[free] += perturb * rng.standard_normal(int(free.sum()))
    ops = _Operators(problem)
    if f.a is not None and problem.spec.p == 2:
        u, its, res, ok = _minimize_quadratic(problem, ops, u0, grad_tol, max_iters)
        status = "converged" if ok else "max_iters"
        history, path = [], "quadratic"
    else:
        if f.kind == "quadratic":
            raise ArgumentError("quadratic integrands need p = 2")
        u, its, res, status, history = _minimize_descent(problem, ops, u0, grad_tol, max_iters)
        path = "descent"
    field_ = ScalarField(grid, u)
    return Minimum(field_, total_energy(problem, field_), its, status, res, history, path)


# -- sequences and studies ----------------------------------------------------

def homogenization_oracle_1d(alpha: float, beta: float, theta: float) -> float:
    """Harmonic mean (theta/alpha + (1-theta)/beta)^{-1} of a two-phase laminate."""
    if alpha <= 0 or beta <= 0:
        raise ArgumentError("phase coefficients must be positive")
    if not 0 < theta < 1:
        raise ArgumentError("volume fraction must lie in (0, 1)")
    return 1.0 / (theta / alpha + (1 - theta) / beta)


@dataclass
class SequenceSpec:
    """A sequence (f_h) either as a periodic matrix field rescaled by h or as a rule h -> f_h.

    ``base`` maps points y (..., n) to symmetric matrices (..., m, m) with
    period 1 in every coordinate; member h uses a_h(x) = base(h x).
    """

    kind: str
    h_list: Sequence[int]
    base: Callable | None = None
    rule: Callable[[int], Integrand] | None = None
    limit: Integrand | None = None
    arity: int | None = None
    c0: float = 0.0
    c1: float = float("inf")
    oracle: float | None = None

    def __post_init__(self):
        if self.kind not in ("oscillating_quadratic", "autonomous_sequence"):
            raise ArgumentError(f"unknown sequence kind {self.kind!r}")
        hs = list(self.h_list)
        if not hs or any(b <= a for a, b in zip(hs, hs[1:])):
            raise ArgumentError("h_list must be strictly increasing")
        if self.kind == "oscillating_quadratic" and (self.base is None or self.arity is None):
            raise ArgumentError("oscillating sequences need a base matrix field and arity")
        if self.kind == "autonomous_sequence" and self.rule is None:
            raise ArgumentError("autonomous sequences need a member rule")

    def member(self, h) -> Integrand:
        if self.kind == "oscillating_quadratic":
            base = self.base
            return quadratic(lambda x: base(h * np.asarray(x)), arity=self.arity, c0=self.c0,
                             c1=self.c1, name=f"a({h}x)")
        return self.rule(h)

    @classmethod
    def laminate(cls, alpha, beta, theta, h_list, n=1, axis=0, oracle=False):
        """Layered medium: coefficient alpha on frac(y_axis) < theta, beta elsewhere.

        ``oracle=True`` (n = 1 only) attaches the harmonic mean, which is the
        limit minimum for data u(0) = 0, u(1) = 1 on (0, 1).
        """

        def base(y):
            y = np.asarray(y, dtype=float)
            phase = np.where(np.mod(y[..., axis], 1.0) < theta, alpha, beta)
            return phase[..., None, None] * np.eye(n)

        if oracle and n != 1:
            raise ArgumentError("the harmonic-mean oracle is one-dimensional")
        oracle = homogenization_oracle_1d(alpha, beta, theta) if oracle else None
        return cls("oscillating_quadratic", list(h_list), base=base, arity=n,
                   c0=min(alpha, beta), c1=max(alpha, beta), oracle=oracle)

    @classmethod
    def scaled_power(cls, arity, h_list, p=2.0):
        """f_h(eta) = (1 + 1/h)|eta|^p with limit |eta|^p."""

        def member(h, s=None):
            s = 1.0 + 1.0 / h if s is None else s
            f = power(arity, p, s)
            return replace(f, c0=1.0, c1=2.0, name=f"(1+1/{h})|eta|^{p:g}")

        limit = member("inf", 1.0)
        return cls("autonomous_sequence", list(h_list), rule=member, limit=limit, arity=arity,
                   c0=1.0, c1=2.0)


@dataclass
class GammaStudyReport:
    rows: list[dict]
    reference: float
    reference_kind: str
    verdict: bool
    threshold: float
    notes: list[str] = field(default_factory=list)

    columns = ("h", "cells", "min_energy", "wx_norm", "gap", "iterations")

    def energies(self) -> np.ndarray:
        return np.array([r["min_energy"] for r in self.rows])

    def gaps(self) -> np.ndarray:
        return np.array([r["gap"] for r in self.rows])


def aitken_tail(values: Sequence[float]) -> float:
    """Extrapolated limit from the last three entries of a convergent sequence."""
    if len(values) < 3:
        return float(values[-1])
    e1, e2, e3 = values[-3:]
    denom = (e3 - e2) - (e2 - e1)
    if abs(denom) <= 1e-14 * max(1.0, abs(e3)):
        return float(e3)
    return float(e3 - (e3 - e2) ** 2 / denom)


def check_resolution(seq: SequenceSpec, grid: Grid, h, cells_per_period: int = 8):
    if seq.kind != "oscillating_quadratic":
        return
    per_period = (1.0 / h) / grid.spacing
    if np.any(per_period < cells_per_period - 1e-9):
        raise ResolutionError(f"grid resolves h={h} with only {per_period.min():.2f} cells per period; "
                              f"need at least {cells_per_period}")


def gamma_min_study(seq: SequenceSpec, template: EnergyProblem, grid_rule=None, threshold: float = 0.02,
                    workers: int = 1, minimize_opts: dict | None = None) -> GammaStudyReport:
    """Minimum energies of the problems built from each f_h, and their gaps to the limit."""
    opts = dict(minimize_opts or {})
    hs = list(seq.h_list)

    def grid_for(h):
        if grid_rule is None:
            return template.grid
        return grid_rule(h) if callable(grid_rule) else grid_rule

    for h in hs:
        check_resolution(seq, grid_for(h), h)

    def solve(h):
        prob = template.with_integrand(seq.member(h), grid_for(h))
        res = minimize(prob, **opts)
        norm = sobolev_x_norm(res.u, prob.spec.family, prob.spec.p, prob.A)
        return prob, res, norm

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, hs))
    else:
        results = [solve(h) for h in hs]

    energies = [r[1].energy for r in results]
    notes = []
    if any(prob.flat_directions_possible for prob, _, _ in results):
        notes.append("degenerate family without tether: minima may have flat directions")
    if seq.oracle is not None:
        ref, kind = float(seq.oracle), "oracle"
    elif seq.limit is not None:
        prob = template.with_integrand(seq.limit, grid_for(hs[-1]))
        ref, kind = minimize(prob, **opts).energy, "limit"
    else:
        ref, kind = aitken_tail(energies), "extrapolated"

    rows = []
    for h, (prob, res, norm) in zip(hs, results):
        rows.append({"h": h, "cells": int(np.prod(prob.grid.cell_shape)), "min_energy": res.energy,
                     "wx_norm": norm, "gap": abs(res.energy - ref), "iterations": res.iterations})
    gaps = [r["gap"] for r in rows]
    floor = 1e-9 * (1 + abs(ref))
    decreasing = all(b <= a + floor for a, b in zip(gaps, gaps[1:]))
    final_ok = gaps[-1] <= threshold * max(abs(ref), 1e-300) or gaps[-1] <= floor
    return GammaStudyReport(rows, ref, kind, bool(decreasing and final_ok), threshold, notes)


def pointwise_limit_functional_check(members: Sequence[tuple], limit: Integrand, family: VectorFieldFamily,
                                     u: ScalarField, A: Subdomain | None = None, tol: float = 1e-8) -> CheckReport:
    """Gaps |F*_h(u, A) - F*(u, A)| for autonomous f_h -> f; monotone from the third on, last <= tol."""
    for _, f in list(members) + [(None, limit)]:
        if f.kind != "autonomous":
            raise ArgumentError("pointwise limit check needs autonomous integrands")
    F = evaluate_functional(FunctionalSpec(limit, family, limit.p), u, A)
    hs, gaps = [], []
    for h, f in members:
        hs.append(h)
        gaps.append(abs(evaluate_functional(FunctionalSpec(f, family, f.p), u, A) - F))
    gaps = np.array(gaps)
    floor = 1e-14 * (1 + abs(F))
    tail = gaps[2:] if len(gaps) > 2 else gaps
    monotone = bool(np.all(np.diff(tail) <= floor))
    bad = int(not monotone) + int(gaps[-1] > tol)
    report = CheckReport("pointwise_limit", len(gaps), bad, float(gaps.max()) if gaps.size else 0.0,
                         None, tol)
    report.details = {"h": hs, "gaps": gaps.tolist(), "limit_value": F, "monotone": monotone}
    return report


def quadratic_limit_pushforward_check(a_e, family: VectorFieldFamily, samples: SampleSpec,
                                      tol: float = 1e-10, degeneracy_tol: float = DEFAULT_TOL) -> CheckReport:
    """<a_e Pi xi, Pi xi> = <a C xi, C xi> with a the pushed-forward coefficient; a symmetric."""
    pts = samples.points
    C = np.asarray(family.matrices(pts))
    mask, _ = degenerate_mask(C, degeneracy_tol)
    good = pts[~mask]
    xi = samples.args
    if len(good) == 0:
        return CheckReport("quadratic_limit_pushforward", 0, 0, 0.0, None, tol, skipped=int(mask.sum()))
    Ae = np.asarray(a_e(good) if callable(a_e) else np.broadcast_to(a_e, (len(good),) + np.shape(a_e)))
    a = np.stack([quadratic_pushforward(Ae[k], family, good[k], degeneracy_tol) for k in range(len(good))])
    P = horizontal_projection(family, good, degeneracy_tol)
    Pxi = np.einsum("kij,lj->kli", P, xi)
    Cxi = np.einsum("kij,lj->kli", C[~mask], xi)
    lhs = np.einsum("klj,kij,kli->kl", Pxi, Ae, Pxi)
    rhs = np.einsum("klj,kij,kli->kl", Cxi, a, Cxi)
    resid = np.abs(lhs - rhs)
    asym = np.abs(a - np.swapaxes(a, -1, -2)).max()
    report = build_report("quadratic_limit_pushforward", resid, tol * (1 + np.abs(lhs)), good, xi, tol,
                          skipped=int(mask.sum()))
    if asym > tol:
        report.violations += 1
        report.warnings.append(f"pushed-forward matrix asymmetric by {asym:.3e}")
    return report
