"""Grids, nodal fields, discrete X-gradients, W^{1,p}_X norms and mollification.

Nodal values live on a regular lattice; gradients are taken per cell by
corner-averaged differences, which makes them second order at the cell
centers where the midpoint quadrature samples.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.optimize as opt
import scipy.signal as sig
import scipy.sparse as sps

from .errors import ArgumentError, DomainError
from .vector_fields import Box, VectorFieldFamily

MAX_DIM = 3


@dataclass(frozen=True)
class Grid:
    box: Box
    resolution: tuple[int, ...]

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != self.box.dim:
            raise ArgumentError(f"resolution {res} does not match box dimension {self.box.dim}")
        if self.box.dim > MAX_DIM:
            raise ArgumentError(f"grids are limited to n <= {MAX_DIM}")
        if any(r < 2 for r in res):
            raise ArgumentError("need at least 2 nodes per axis")
        object.__setattr__(self, "resolution", res)

    @classmethod
    def uniform(cls, box: Box, cells_per_axis: int) -> "Grid":
        return cls(box, (cells_per_axis + 1,) * box.dim)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.box.hi) - np.array(self.box.lo)) / (np.array(self.resolution) - 1)

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(r - 1 for r in self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r) for a, b, r in zip(self.box.lo, self.box.hi, self.resolution)]

    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (a[1:] + a[:-1]) for a in self.axes()]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.resolution, dtype=bool)
        for i in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[i] = 0
            mask[tuple(idx)] = True
            idx[i] = -1
            mask[tuple(idx)] = True
        return mask

    def sample(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return ScalarField(self, np.asarray(fn(self.nodes()), dtype=float))


@dataclass(frozen=True)
class Subdomain:
    """Axis-aligned sub-box; snapped to cell boundaries of a grid on use."""

    box: Box

    @classmethod
    def of(cls, lo, hi) -> "Subdomain":
        return cls(Box(tuple(lo), tuple(hi)))

    def cell_slices(self, grid: Grid) -> tuple[slice, ...]:
        if not grid.box.contains_box(self.box, rtol=1e-9):
            raise DomainError(f"subdomain lo={self.box.lo} hi={self.box.hi} is not inside the grid box")
        h = grid.spacing
        glo = np.array(grid.box.lo)
        a = np.rint((np.array(self.box.lo) - glo) / h).astype(int)
        b = np.rint((np.array(self.box.hi) - glo) / h).astype(int)
        a = np.clip(a, 0, np.array(grid.cell_shape))
        b = np.clip(b, 0, np.array(grid.cell_shape))
        if np.any(b <= a):
            raise DomainError(f"subdomain lo={self.box.lo} hi={self.box.hi} contains no cells")
        return tuple(slice(int(i), int(j)) for i, j in zip(a, b))

    def cell_mask(self, grid: Grid) -> np.ndarray:
        mask = np.zeros(grid.cell_shape, dtype=bool)
        mask[self.cell_slices(grid)] = True
        return mask

    def measure(self, grid: Grid) -> float:
        return float(self.cell_mask(grid).sum()) * grid.cell_volume


def whole(grid: Grid) -> Subdomain:
    return Subdomain(grid.box)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.node_count:
            raise ArgumentError(f"{vals.size} values for {self.grid.node_count} nodes")
        vals = vals.reshape(self.grid.resolution)
        if not np.all(np.isfinite(vals)):
            raise ArgumentError("field values must be finite")
        self.values = vals

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ArgumentError("fields live on different grids")
            other = other.values
        return ScalarField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def cell_average(self) -> np.ndarray:
        v = self.values
        for i in range(v.ndim):
            v = 0.5 * (np.take(v, range(0, v.shape[i] - 1), axis=i) + np.take(v, range(1, v.shape[i]), axis=i))
        return v


@dataclass
class VectorSampleField:
    grid: Grid
    values: np.ndarray  # (*cell_shape, dim)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:-1] != self.grid.cell_shape:
            raise ArgumentError("vector field must have one vector per cell")
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("vector field values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


# -- discrete gradients -------------------------------------------------------

def _average_pairs(v: np.ndarray, axis: int) -> np.ndarray:
    lo = [slice(None)] * v.ndim
    hi = [slice(None)] * v.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (v[tuple(lo)] + v[tuple(hi)])


def euclidean_gradient(u: ScalarField) -> VectorSampleField:
    grid = u.grid
    comps = []
    for i, h in enumerate(grid.spacing):
        d = np.diff(u.values, axis=i) / h
        for j in range(grid.dim):
            if j != i:
                d = _average_pairs(d, j)
        comps.append(d)
    return VectorSampleField(grid, np.stack(comps, axis=-1))


def _check_family_grid(grid: Grid, family: VectorFieldFamily):
    if family.n != grid.dim:
        raise DomainError(f"family lives in R^{family.n}, grid in R^{grid.dim}")
    if not family.domain.contains_box(grid.box, rtol=1e-9):
        raise DomainError(f"grid box lo={grid.box.lo} hi={grid.box.hi} exceeds the family domain")


def cell_coefficients(grid: Grid, family: VectorFieldFamily) -> np.ndarray:
    """C at every cell center, shape (*cell_shape, m, n)."""
    _check_family_grid(grid, family)
    return np.asarray(family.matrices(grid.cell_centers()))


def x_gradient(u: ScalarField, family: VectorFieldFamily) -> VectorSampleField:
    """Xu = C(x_c) Du per cell."""
    C = cell_coefficients(u.grid, family)
    du = euclidean_gradient(u).values
    return VectorSampleField(u.grid, np.einsum("...ij,...j->...i", C, du))


def gradient_operators(grid: Grid) -> list[sps.csr_matrix]:
    """Sparse matrices D_i (cells x nodes) with (D_i u) = i-th component of Du."""
    diffs, avgs = [], []
    for r, h in zip(grid.resolution, grid.spacing):
        diffs.append(sps.diags([-np.ones(r - 1), np.ones(r - 1)], [0, 1], shape=(r - 1, r)) / h)
        avgs.append(sps.diags([0.5 * np.ones(r - 1), 0.5 * np.ones(r - 1)], [0, 1], shape=(r - 1, r)))
    ops = []
    for i in range(grid.dim):
        op = sps.identity(1, format="csr")
        for j in range(grid.dim):
            op = sps.kron(op, diffs[j] if j == i else avgs[j], format="csr")
        ops.append(op)
    return ops


def cell_average_operator(grid: Grid) -> sps.csr_matrix:
    op = sps.identity(1, format="csr")
    for r in grid.resolution:
        op = sps.kron(op, sps.diags([0.5 * np.ones(r - 1)] * 2, [0, 1], shape=(r - 1, r)), format="csr")
    return op


# -- norms --------------------------------------------------------------------

def _restrict(values: np.ndarray, grid: Grid, region: Subdomain | None) -> np.ndarray:
    if region is None:
        return values
    return values[region.cell_slices(grid)]


def lp_norm_cells(values: np.ndarray, grid: Grid, p: float, region: Subdomain | None = None) -> float:
    """(sum_c |c| |v_c|^p)^{1/p}; vector cells use the Euclidean length."""
    v = _restrict(values, grid, region)
    if v.ndim > grid.dim:
        v = np.linalg.norm(v, axis=-1)
    return float((grid.cell_volume * np.sum(np.abs(v) ** p)) ** (1.0 / p))


def sobolev_x_norm(u: ScalarField, family: VectorFieldFamily, p: float,
                   region: Subdomain | None = None) -> float:
    """||u||_{L^p} + sum_j ||X_j u||_{L^p} by midpoint quadrature."""
    if p < 1:
        raise ArgumentError("p must be >= 1")
    xu = x_gradient(u, family).values
    total = lp_norm_cells(u.cell_average(), u.grid, p, region)
    for j in range(family.m):
        total += lp_norm_cells(xu[..., j], u.grid, p, region)
    return total


# -- mollification ------------------------------------------------------------

def bump(t: np.ndarray) -> np.ndarray:
    """Standard smooth bump on [0, 1), zero from t = 1 on."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class Mollifier:
    epsilon: float
    profile: Callable[[np.ndarray], np.ndarray] = field(default=bump, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ArgumentError("mollifier radius must be positive")

    def weights(self, spacing: Sequence[float]) -> np.ndarray:
        """Discrete kernel on the lattice offsets, nonnegative with unit sum."""
        spacing = np.asarray(spacing, dtype=float)
        half = np.floor(self.epsilon / spacing).astype(int)
        offs = [np.arange(-k, k + 1) * h for k, h in zip(half, spacing)]
        r = np.sqrt(sum(o ** 2 for o in np.meshgrid(*offs, indexing="ij")))
        w = self.profile(r / self.epsilon)
        if np.count_nonzero(w) <= 1:
            warnings.warn(f"mollifier radius {self.epsilon} is below the grid spacing; "
                          "kernel reduces to the identity", RuntimeWarning, stacklevel=3)
            w = np.zeros_like(r)
            w[tuple(half)] = 1.0
        return w / w.sum()


def _convolve_zero(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # kernel is symmetric, so convolution equals correlation
    if kernel.size == 1:
        return values * kernel.flat[0]
    return sig.convolve(values, kernel, mode="same", method="auto")


def mollify(u: ScalarField, eps: float, mollifier: Mollifier | None = None) -> ScalarField:
    """Discrete convolution of the zero extension of u with rho_eps."""
    moll = mollifier or Mollifier(eps)
    kernel = moll.weights(u.grid.spacing)
    return ScalarField(u.grid, _convolve_zero(u.values, kernel))


def mollify_cells(w: VectorSampleField, eps: float, support: Subdomain | None = None) -> VectorSampleField:
    """Componentwise mollification of a cell field, zero outside ``support``."""
    kernel = Mollifier(eps).weights(w.grid.spacing)
    vals = w.values.copy()
    if support is not None:
        vals[~support.cell_mask(w.grid)] = 0.0
    out = np.stack([_convolve_zero(vals[..., k], kernel) for k in range(w.dim)], axis=-1)
    return VectorSampleField(w.grid, out)


def erosion(outer: Box, inner: Box) -> float:
    """Smallest gap between the faces of ``inner`` and ``outer``."""
    gaps = np.concatenate([np.subtract(inner.lo, outer.lo), np.subtract(outer.hi, inner.hi)])
    return float(gaps.min())


@dataclass
class MollifierReport:
    eps: list[float]
    errors: list[float]
    monotone: bool
    reduction: float
    noise: float = 0.05
    floor: float = 1e-12

    def rows(self):
        return list(zip(self.eps, self.errors))


def mollifier_approx_check(u: ScalarField, family: VectorFieldFamily, eps_list: Sequence[float],
                           interior: Subdomain, p: float = 2.0, noise: float = 0.05,
                           floor: float = 1e-12) -> MollifierReport:
    """W^{1,p}_X distance between u and its mollifications on an interior box.

    Errors below ``floor`` count as converged; otherwise each error may exceed
    its predecessor by at most the relative ``noise``.
    """
    eps = [float(e) for e in eps_list]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ArgumentError("eps_list must be strictly decreasing")
    if erosion(u.grid.box, interior.box) < max(eps) - 1e-12:
        raise ArgumentError(f"interior box must sit at least {max(eps)} inside the grid box")
    errors = [sobolev_x_norm(mollify(u, e) - u, family, p, interior) for e in eps]
    monotone = all(b <= (1 + noise) * a or b <= floor for a, b in zip(errors, errors[1:]))
    if errors[-1] <= floor:
        reduction = float("inf")
    else:
        reduction = errors[0] / errors[-1]
    return MollifierReport(eps, errors, monotone, reduction, noise, floor)


# -- X-affine residual --------------------------------------------------------

def x_affine_residual(u: ScalarField, family: VectorFieldFamily, p: float = 2.0,
                      region: Subdomain | None = None) -> tuple[np.ndarray, float]:
    """Best constant c in R^m for Xu in L^p, and the distance ||Xu - c||_{L^p}."""
    xu = _restrict(x_gradient(u, family).values, u.grid, region).reshape(-1, family.m)
    vol = u.grid.cell_volume
    c = xu.mean(axis=0)
    if p != 2:
        res = opt.minimize(lambda c_: np.sum(np.linalg.norm(xu - c_, axis=1) ** p), c,
                           method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
        if res.fun < np.sum(np.linalg.norm(xu - c, axis=1) ** p):
            c = res.x
    resid = float((vol * np.sum(np.linalg.norm(xu - c, axis=1) ** p)) ** (1.0 / p))
    return c, resid


# -- field I/O ----------------------------------------------------------------

def save_field(u: ScalarField, path) -> Path:
    """Write node values as CSV (one per line, C order) plus a JSON sidecar."""
    path = Path(path)
    np.savetxt(path, u.values.ravel(), fmt="%.17e")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"resolution": list(u.grid.resolution),
                                   "box": {"lo": list(u.grid.box.lo), "hi": list(u.grid.box.hi)}}, indent=2))
    return sidecar


def load_field(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(Box(tuple(meta["box"]["lo"]), tuple(meta["box"]["hi"])), tuple(meta["resolution"]))
    return ScalarField(grid, np.loadtxt(path, ndmin=1))
