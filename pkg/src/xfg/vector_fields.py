"""Pointwise linear algebra of a family of vector fields X = (X_1, ..., X_m).

A family is stored as its coefficient-matrix field x -> C(x) (m x n, rows are
the X_j).  Every operation here accepts either a single point of shape (n,)
or a batch of shape (..., n) and returns matching leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from . import expressions as ex
from .errors import ArgumentError, DomainError, SingularityError

DEFAULT_TOL = 1e-10
MAX_LOCATIONS = 1024


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ArgumentError("box bounds must be non-empty and of equal length")
        if any(not np.isfinite(a) or not np.isfinite(b) or b <= a for a, b in zip(lo, hi)):
            raise ArgumentError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, n, lo=-1.0, hi=1.0):
        return cls((lo,) * n, (hi,) * n)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points, rtol=1e-12) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        slack = rtol * np.maximum(1.0, np.abs(hi - lo))
        return np.all((pts >= lo - slack) & (pts <= hi + slack), axis=-1)

    def contains_box(self, other: "Box", rtol=1e-12) -> bool:
        return bool(self.contains(np.array(other.lo), rtol) and self.contains(np.array(other.hi), rtol))


@dataclass(frozen=True)
class VectorFieldFamily:
    m: int
    n: int
    domain: Box
    coeff: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    kind: str = "custom"
    lipschitz_hint: float | None = None
    symbolic: sp.Matrix | None = field(default=None, repr=False, compare=False)
    name: str = ""

    def __post_init__(self):
        if not (1 <= self.m <= self.n):
            raise ArgumentError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if self.domain.dim != self.n:
            raise ArgumentError("domain dimension does not match n")
        if self.lipschitz_hint is not None and self.lipschitz_hint < 0:
            raise ArgumentError("lipschitz_hint must be nonnegative")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def matrices(self, points) -> np.ndarray:
        """C at ``points`` (..., n) without the domain check."""
        pts = np.asarray(points, dtype=float)
        out = np.asarray(self.coeff(pts), dtype=float)
        return np.broadcast_to(out, pts.shape[:-1] + (self.m, self.n))

    def with_domain(self, domain: Box) -> "VectorFieldFamily":
        return VectorFieldFamily(self.m, self.n, domain, self.coeff, self.kind,
                                 self.lipschitz_hint, self.symbolic, self.name)


def _from_symbolic(mat: sp.Matrix, n: int, domain: Box, kind: str, name: str = "",
                   lipschitz_hint=None) -> VectorFieldFamily:
    xs = ex.symbols("x", n)
    return VectorFieldFamily(mat.shape[0], n, domain, ex.compile_matrix(mat, xs), kind,
                             lipschitz_hint, mat, name or kind)


def euclidean(n: int, domain: Box | None = None) -> VectorFieldFamily:
    return _from_symbolic(sp.eye(n), n, domain or Box.cube(n), "euclidean",
                          f"euclidean{n}", 0.0)


def grushin(domain: Box | None = None) -> VectorFieldFamily:
    x1, _ = ex.symbols("x", 2)
    mat = sp.Matrix([[1, 0], [0, x1]])
    return _from_symbolic(mat, 2, domain or Box.cube(2), "grushin", lipschitz_hint=1.0)


def heisenberg(domain: Box | None = None) -> VectorFieldFamily:
    x1, x2, _ = ex.symbols("x", 3)
    mat = sp.Matrix([[1, 0, -x2 / 2], [0, 1, x1 / 2]])
    return _from_symbolic(mat, 3, domain or Box.cube(3), "heisenberg", lipschitz_hint=0.5)


def custom(coeff_exprs, n: int, domain: Box | None = None, name: str = "custom") -> VectorFieldFamily:
    """Family whose entries are expressions over ``x1..xn`` (strings or numbers)."""
    xs = ex.symbols("x", n)
    allowed = {str(s): s for s in xs}
    mat = coeff_exprs if isinstance(coeff_exprs, sp.MatrixBase) else ex.parse_matrix(coeff_exprs, allowed)
    if mat.shape[1] != n:
        raise ArgumentError(f"coefficient rows must have {n} entries")
    return _from_symbolic(sp.Matrix(mat), n, domain or Box.cube(n), "custom", name)


def _check_points(family: VectorFieldFamily, x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1:] != (family.n,):
        raise ArgumentError(f"points must have trailing dimension {family.n}, got shape {pts.shape}")
    inside = family.domain.contains(pts)
    if not np.all(inside):
        bad = pts[~inside] if pts.ndim > 1 else pts
        raise DomainError(f"point {np.atleast_2d(bad)[0].tolist()} lies outside the family domain "
                          f"lo={family.domain.lo} hi={family.domain.hi}")
    return pts


def coefficient_matrix(family: VectorFieldFamily, x) -> np.ndarray:
    """C(x), the m x n matrix whose rows are the vector fields at ``x``."""
    pts = _check_points(family, x)
    return np.array(family.matrices(pts))


def gram_matrix(family: VectorFieldFamily, x) -> np.ndarray:
    C = coefficient_matrix(family, x)
    return C @ np.swapaxes(C, -1, -2)


def singular_values(C: np.ndarray) -> np.ndarray:
    return np.linalg.svd(C, compute_uv=False)


def degeneracy_threshold(C: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Scale-aware rank cutoff: tol * ||C||_inf (max row sum)."""
    return tol * np.max(np.sum(np.abs(C), axis=-1), axis=-1)


def degenerate_mask(C: np.ndarray, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Return (mask, sigma_min); mask is True where rank C < m at ``tol``."""
    sigma = singular_values(C)[..., -1]
    return sigma <= degeneracy_threshold(C, tol), sigma


def cramer_inverse(B: np.ndarray) -> np.ndarray:
    """Inverse of (a batch of) m x m matrices, m <= 3, by the adjugate formula."""
    B = np.asarray(B, dtype=float)
    m = B.shape[-1]
    if m == 1:
        return 1.0 / B
    if m == 2:
        a, b, c, d = B[..., 0, 0], B[..., 0, 1], B[..., 1, 0], B[..., 1, 1]
        det = a * d - b * c
        adj = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
        return adj / det[..., None, None]
    if m == 3:
        c0, c1, c2 = B[..., :, 0], B[..., :, 1], B[..., :, 2]
        r0, r1, r2 = np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)
        det = np.sum(c0 * r0, axis=-1)
        return np.stack([r0, r1, r2], -2) / det[..., None, None]
    raise ArgumentError("Cramer's rule is only used for m <= 3")


def elimination_inverse(B: np.ndarray) -> np.ndarray:
    """Inverse by LU with partial pivoting."""
    B = np.asarray(B, dtype=float)
    eye = np.broadcast_to(np.eye(B.shape[-1]), B.shape)
    return np.linalg.solve(B, eye)


def _raise_if_degenerate(pts, C, tol):
    mask, sigma = degenerate_mask(C, tol)
    if np.any(mask):
        k = int(np.flatnonzero(np.ravel(mask))[0])
        raise SingularityError(pts.reshape(-1, pts.shape[-1])[k], float(np.ravel(sigma)[k]))


def _invert(B, method):
    if method == "auto":
        method = "cramer" if B.shape[-1] <= 3 else "elimination"
    if method == "cramer":
        return cramer_inverse(B)
    if method == "elimination":
        return elimination_inverse(B)
    raise ArgumentError(f"unknown inversion method {method!r}")


def gram_inverse(family: VectorFieldFamily, x, tol: float = DEFAULT_TOL, method: str = "auto") -> np.ndarray:
    """B(x)^{-1}.  Raises SingularityError at degenerate points."""
    pts = _check_points(family, x)
    C = np.array(family.matrices(pts))
    _raise_if_degenerate(pts, C, tol)
    return _invert(C @ np.swapaxes(C, -1, -2), method)


def pseudo_inverse_map(family: VectorFieldFamily, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """L^{-1}(x) = C(x)^T B(x)^{-1}, an n x m right inverse of C(x)."""
    C = coefficient_matrix(family, x)
    return np.swapaxes(C, -1, -2) @ gram_inverse(family, x, tol)


def horizontal_projection(family: VectorFieldFamily, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthogonal projection Pi_x = C^T B^{-1} C of R^n onto the row space of C(x)."""
    C = coefficient_matrix(family, x)
    P = np.swapaxes(C, -1, -2) @ gram_inverse(family, x, tol) @ C
    # exact symmetry; the two triangles differ only by rounding
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def masked_pseudo_inverse(family: VectorFieldFamily, pts: np.ndarray, tol: float = DEFAULT_TOL):
    """L^{-1} on a batch with degenerate points zeroed; returns (L_inv, C, mask)."""
    C = np.array(family.matrices(pts))
    mask, _ = degenerate_mask(C, tol)
    B = C @ np.swapaxes(C, -1, -2)
    B[mask] = np.eye(family.m)
    Linv = np.swapaxes(C, -1, -2) @ _invert(B, "auto")
    Linv[mask] = 0.0
    return Linv, C, mask


@dataclass(frozen=True)
class HorizontalDecomposition:
    point: np.ndarray
    projection: np.ndarray
    pseudo_inverse: np.ndarray
    gram: np.ndarray
    horizontal_basis: np.ndarray
    null_basis: np.ndarray

    def split(self, xi):
        """(xi_N, xi_V) with xi = xi_N + xi_V."""
        xi_v = self.projection @ np.asarray(xi, dtype=float)
        return np.asarray(xi, dtype=float) - xi_v, xi_v


def decompose(family: VectorFieldFamily, x, tol: float = DEFAULT_TOL) -> HorizontalDecomposition:
    x = np.asarray(x, dtype=float)
    if x.shape != (family.n,):
        raise ArgumentError("decompose takes a single point")
    C = coefficient_matrix(family, x)
    Binv = gram_inverse(family, x, tol)
    _, _, vt = np.linalg.svd(C)
    P = C.T @ Binv @ C
    return HorizontalDecomposition(
        point=x,
        projection=0.5 * (P + P.T),
        pseudo_inverse=C.T @ Binv,
        gram=C @ C.T,
        horizontal_basis=C.copy(),
        null_basis=vt[family.m:].copy(),
    )


@dataclass
class LicReport:
    total_samples: int
    degenerate_samples: int
    degenerate_fraction: float
    min_singular_value: float
    degenerate_locations: np.ndarray
    tol: float = DEFAULT_TOL

    def summary(self) -> str:
        return (f"samples={self.total_samples} degenerate={self.degenerate_samples} "
                f"fraction={self.degenerate_fraction:.6e} min_sigma={self.min_singular_value:.6e}")


def lic_scan(family: VectorFieldFamily, sample_points, tol: float = DEFAULT_TOL) -> LicReport:
    """Classify sample points by the rank of C(x).

    ``sample_points`` is an array (..., n) of points or any object with a
    ``nodes()`` method (e.g. a Grid) returning one.
    """
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    pts = sample_points.nodes() if hasattr(sample_points, "nodes") else np.asarray(sample_points, float)
    pts = np.asarray(pts, dtype=float).reshape(-1, family.n)
    if pts.shape[0] == 0:
        raise ArgumentError("empty sample grid")
    _check_points(family, pts)
    C = np.array(family.matrices(pts))
    mask, sigma = degenerate_mask(C, tol)
    good = sigma[~mask]
    count = int(mask.sum())
    return LicReport(
        total_samples=pts.shape[0],
        degenerate_samples=count,
        degenerate_fraction=count / pts.shape[0],
        min_singular_value=float(good.min()) if good.size else float("nan"),
        degenerate_locations=pts[mask][:MAX_LOCATIONS].copy(),
        tol=tol,
    )
