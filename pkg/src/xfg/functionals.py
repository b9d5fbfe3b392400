"""Local integral functionals F(u, A) = int_A f(x, Xu) dx by midpoint quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .integrands import CheckReport, EuclideanIntegrand, Integrand, power
from .sobolev import (Grid, ScalarField, Subdomain, VectorSampleField, erosion, euclidean_gradient,
                      mollify_cells, whole, x_gradient)
from .vector_fields import VectorFieldFamily


@dataclass(frozen=True)
class FunctionalSpec:
    integrand: Integrand
    family: VectorFieldFamily
    p: float

    def __post_init__(self):
        if self.integrand.arity != self.family.m:
            raise ArgumentError(f"integrand arity {self.integrand.arity} != number of fields {self.family.m}")
        if self.integrand.p != self.p:
            raise ArgumentError(f"integrand exponent {self.integrand.p} != functional exponent {self.p}")


def quadrature(values: np.ndarray, grid: Grid, region: Subdomain | None = None) -> float:
    """Sum of cell values times the cell volume over ``region``."""
    region = region or whole(grid)
    return float(grid.cell_volume * np.sum(values[region.cell_slices(grid)]))


def integrand_on_cells(integrand: Integrand, grid: Grid, w: np.ndarray) -> np.ndarray:
    return np.asarray(integrand(grid.cell_centers(), w), dtype=float)


def evaluate_functional(spec: FunctionalSpec, u: ScalarField, A: Subdomain | None = None) -> float:
    xu = x_gradient(u, spec.family).values
    return quadrature(integrand_on_cells(spec.integrand, u.grid, xu), u.grid, A)


def evaluate_euclidean(fe: EuclideanIntegrand, u: ScalarField, A: Subdomain | None = None) -> float:
    """int_A f_e(x, Du) dx, the Euclidean-frame counterpart of evaluate_functional."""
    du = euclidean_gradient(u).values
    return quadrature(integrand_on_cells(fe, u.grid, du), u.grid, A)


def psi_p(u: ScalarField, family: VectorFieldFamily, p: float, A: Subdomain | None = None) -> float:
    """int_A |Xu|^p dx."""
    return evaluate_functional(FunctionalSpec(power(family.m, p), family, p), u, A)


def _cells(sub: Subdomain, grid: Grid) -> set:
    idx = np.argwhere(sub.cell_mask(grid))
    return set(map(tuple, idx))


def measure_property_check(spec: FunctionalSpec, u: ScalarField, partition: Sequence[Subdomain],
                           A: Subdomain | None = None, tol: float = 1e-10) -> CheckReport:
    """Additivity over a partition of A, monotonicity, and superadditivity of pairs."""
    grid = u.grid
    if not partition:
        raise ArgumentError("empty partition")
    cell_sets = [_cells(s, grid) for s in partition]
    union = set()
    for cs in cell_sets:
        if union & cs:
            raise ArgumentError("partition pieces overlap")
        union |= cs
    if A is None:
        lo = np.min([s.box.lo for s in partition], axis=0)
        hi = np.max([s.box.hi for s in partition], axis=0)
        A = Subdomain.of(lo, hi)
    if union != _cells(A, grid):
        raise ArgumentError("partition does not cover A at cell granularity")
    total = evaluate_functional(spec, u, A)
    parts = [evaluate_functional(spec, u, s) for s in partition]
    scale = tol * (1 + abs(total))
    residuals, notes = [], []
    residuals.append(abs(total - sum(parts)))
    # monotone and superadditive: every piece and every pair is dominated by A
    for i, v in enumerate(parts):
        residuals.append(max(v - total, 0.0))
        for j in range(i + 1, len(parts)):
            residuals.append(max(v + parts[j] - total, 0.0))
    residuals = np.array(residuals)
    bad = int(np.sum(residuals > scale))
    if residuals[0] > scale:
        notes.append(f"additivity gap {residuals[0]:.6e}")
    return CheckReport("measure_property", len(residuals), bad, float(residuals.max()), None, tol, notes)


def jensen_mollification_check(spec: FunctionalSpec, u: ScalarField, eps: float, inner: Subdomain,
                               outer: Subdomain, tol: float = 1e-8) -> CheckReport:
    """int_inner f(rho_eps * w) <= int_outer f(w) for w = Xu, f autonomous and convex.

    The report's worst residual is the excess of the left side over the right.
    """
    f = spec.integrand
    if f.kind != "autonomous":
        raise ArgumentError("the Jensen check needs an autonomous integrand")
    if erosion(outer.box, inner.box) < eps - 1e-12:
        raise ArgumentError(f"inner box must sit at least eps={eps} inside the outer box")
    w = x_gradient(u, spec.family)
    lhs, rhs = jensen_sides(f, w, eps, inner, outer)
    excess = lhs - rhs
    bad = int(excess > tol * (1 + abs(rhs)))
    return CheckReport("jensen_mollification", 1, bad, float(excess), None, tol)


def jensen_sides(f: Integrand, w: VectorSampleField, eps: float, inner: Subdomain,
                 outer: Subdomain) -> tuple[float, float]:
    smooth = mollify_cells(w, eps, support=outer)
    lhs = quadrature(integrand_on_cells(f, w.grid, smooth.values), w.grid, inner)
    rhs = quadrature(integrand_on_cells(f, w.grid, w.values), w.grid, outer)
    return lhs, rhs
