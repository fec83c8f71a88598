"""Grids and finite-difference assembly.

All operators are assembled with a positivity preserving convection
treatment so that the negated matrix is an M-matrix (nonnegative
off-diagonal entries, row sums equal to the zeroth-order coefficient).
Two variants are available per axis for the drift ``beta`` against the
diffusion ``D``:

``"fitted"`` (default)
    exponentially fitted central scheme: the diffusion is replaced by
    ``D * Pe * coth(Pe)`` with cell Peclet number ``Pe = beta h / (2 D)``.
    Second order where the drift is resolved, never produces negative
    off-diagonals.
``"upwind"``
    plain first-order upwinding on the sign of ``beta``.

Both annihilate constants, so constant coefficient cell problems are exact.
"""
from __future__ import annotations

import itertools
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coeff_dsl import CoefficientSet

__all__ = [
    "BoxGrid", "TorusGrid", "GridFunction", "SparseOperator", "assemble_dirichlet",
    "assemble_periodic_cell", "assemble_adjoint_density", "assemble_forward_cell",
    "check_m_matrix", "CONVECTION_SCHEMES",
]

CONVECTION_SCHEMES = ("fitted", "upwind")


@dataclass(frozen=True)
class BoxGrid:
    """Uniform lattice on an axis-aligned box.

    ``n[k]`` is the number of cells along axis k; nodes are
    ``lo + i h`` for ``i = 0..n``, with ``i = 0`` and ``i = n`` on the boundary.
    """
    bounds: tuple
    n: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        n = tuple(int(k) for k in self.n)
        if len(bounds) != len(n):
            raise ValueError("bounds and n must have the same length")
        if any(k < 8 for k in n):
            raise ValueError("need at least 8 cells per axis")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError("empty box")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "n", n)

    @classmethod
    def uniform(cls, bounds, n: int) -> "BoxGrid":
        return cls(tuple(bounds), tuple(n for _ in bounds))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> np.ndarray:
        return np.array([(hi - lo) / k for (lo, hi), k in zip(self.bounds, self.n)])

    @property
    def shape(self) -> tuple:
        return tuple(k + 1 for k in self.n)

    @property
    def interior_shape(self) -> tuple:
        return tuple(k - 1 for k in self.n)

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds)))

    def axes(self) -> list:
        return [np.linspace(lo, hi, k + 1) for (lo, hi), k in zip(self.bounds, self.n)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(N,) + shape``."""
        return np.array(np.meshgrid(*self.axes(), indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def interior_coords(self) -> np.ndarray:
        """Interior node coordinates, shape ``(N, n_interior)`` in C order."""
        axes = [a[1:-1] for a in self.axes()]
        return np.array([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])

    def contains(self, x, strict: bool = True) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if strict:
            return all(lo < v < hi for v, (lo, hi) in zip(x, self.bounds))
        return all(lo <= v <= hi for v, (lo, hi) in zip(x, self.bounds))

    def nearest_node(self, x) -> tuple:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for v, (lo, hi), k in zip(x, self.bounds, self.n):
            i = int(round((v - lo) / (hi - lo) * k))
            idx.append(min(max(i, 0), k))
        return tuple(idx)


@dataclass(frozen=True)
class TorusGrid:
    """``n[k]`` nodes per axis on the unit torus, node ``i`` at ``i / n``."""
    n: tuple

    def __post_init__(self):
        n = tuple(int(k) for k in self.n)
        if any(k < 4 for k in n):
            raise ValueError("need at least 4 nodes per torus axis")
        object.__setattr__(self, "n", n)

    @classmethod
    def uniform(cls, dim: int, n: int) -> "TorusGrid":
        return cls(tuple(n for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> np.ndarray:
        return np.array([1.0 / k for k in self.n])

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def coords(self) -> np.ndarray:
        """Node coordinates flattened in C order, shape ``(N, size)``."""
        axes = [np.arange(k) / k for k in self.n]
        return np.array([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])

    def mean(self, values) -> float:
        """Periodic rectangle rule for the integral over the unit cell."""
        return float(np.mean(values))


@dataclass
class GridFunction:
    """Nodal values on a grid; ``values.shape == grid.shape``."""
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(self.grid.shape):
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")


@dataclass
class SparseOperator:
    """Assembled operator acting on the unknowns of ``grid``.

    For a :class:`BoxGrid` the unknowns are the interior nodes (Dirichlet
    rows eliminated); for a :class:`TorusGrid` every node is an unknown.
    ``zeroth`` holds the zeroth-order coefficient sampled per row.
    """
    matrix: sp.csr_matrix
    grid: object
    kind: str  # 'dirichlet', 'torus', 'torus-adjoint'
    zeroth: np.ndarray
    meta: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


# --------------------------------------------------------------------------
# Stencil helpers
# --------------------------------------------------------------------------

def _pe_coth(pe: np.ndarray) -> np.ndarray:
    """``pe * coth(pe)``, continuous at 0."""
    pe = np.abs(pe)
    out = np.empty_like(pe)
    small = pe < 1e-4
    out[small] = 1.0 + pe[small] ** 2 / 3.0
    big = ~small
    out[big] = pe[big] / np.tanh(pe[big])
    return out


def _axis_weights(diff: np.ndarray, drift: np.ndarray, h: float, scheme: str):
    """Coefficients of u[i+1], u[i-1] for ``diff u'' + drift u'``."""
    if scheme == "fitted":
        pe = drift * h / (2.0 * diff)
        dt = diff * _pe_coth(pe)
        plus = dt / h**2 + drift / (2.0 * h)
        minus = dt / h**2 - drift / (2.0 * h)
        # fitted weights are nonnegative analytically; clip roundoff
        return np.maximum(plus, 0.0), np.maximum(minus, 0.0)
    if scheme == "upwind":
        plus = diff / h**2 + np.maximum(drift, 0.0) / h
        minus = diff / h**2 + np.maximum(-drift, 0.0) / h
        return plus, minus
    raise ValueError(f"unknown convection scheme {scheme!r}")


def _assemble(shape, periodic: bool, h, diff, drift, zeroth, scheme: str):
    """Generic assembly on a lattice of unknowns with C-order numbering.

    ``diff`` has shape ``(N, N, M)`` (the full second-order coefficient),
    ``drift`` shape ``(N, M)``, ``zeroth`` shape ``(M,)``.
    Returns the CSR matrix and a flag telling whether cross terms were used.
    """
    dim = len(shape)
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    multi = np.array(np.unravel_index(np.arange(size), shape))
    rows, cols, vals = [], [], []
    diag = zeroth.astype(float).copy()

    def neighbor(offsets):
        tgt = multi + np.asarray(offsets).reshape(dim, 1)
        if periodic:
            tgt = np.mod(tgt, np.asarray(shape).reshape(dim, 1))
            return idx[tuple(tgt)], np.ones(size, dtype=bool)
        ok = np.all((tgt >= 0) & (tgt < np.asarray(shape).reshape(dim, 1)), axis=0)
        tgt = np.where(ok, tgt, 0)
        return idx[tuple(tgt)], ok

    for k in range(dim):
        plus, minus = _axis_weights(diff[k, k], drift[k], h[k], scheme)
        diag -= plus + minus
        for sign, w in ((1, plus), (-1, minus)):
            off = [0] * dim
            off[k] = sign
            j, ok = neighbor(off)
            rows.append(np.arange(size)[ok])
            cols.append(j[ok])
            vals.append(w[ok])

    cross = False
    for k, l in itertools.combinations(range(dim), 2):
        coef = diff[k, l] + diff[l, k]
        if not np.any(coef):
            continue
        cross = True
        w = coef / (4.0 * h[k] * h[l])
        for sk, sl in itertools.product((1, -1), repeat=2):
            off = [0] * dim
            off[k], off[l] = sk, sl
            j, ok = neighbor(off)
            rows.append(np.arange(size)[ok])
            cols.append(j[ok])
            vals.append((sk * sl * w)[ok])

    rows.append(np.arange(size))
    cols.append(np.arange(size))
    vals.append(diag)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    mat.sum_duplicates()
    return mat, cross


def check_m_matrix(op: SparseOperator, tol: float = 1e-12) -> bool:
    """True when off-diagonal entries are nonnegative (negated: M-matrix sign pattern)."""
    coo = op.matrix.tocoo()
    off = coo.row != coo.col
    scale = max(1.0, float(np.max(np.abs(coo.data))) if coo.nnz else 1.0)
    return bool(np.all(coo.data[off] >= -tol * scale))


def _sign_warning(op: SparseOperator):
    if not check_m_matrix(op):
        msg = "cross-derivative stencil breaks the M-matrix sign pattern"
        op.warnings.append(msg)
        _warnings.warn(msg, RuntimeWarning, stacklevel=3)


# --------------------------------------------------------------------------
# Public assemblers
# --------------------------------------------------------------------------

def assemble_dirichlet(coeffs: CoefficientSet, grid: BoxGrid, eps: float, alpha: float,
                       scheme: str = "fitted") -> SparseOperator:
    """Discretise ``eps^2 a u_xx + eps b u_x + c u`` with ``u = 0`` on the boundary.

    Coefficients are sampled pointwise at ``(x, x / eps^alpha)``.
    """
    if eps <= 0 or alpha <= 0:
        raise ValueError("eps and alpha must be positive")
    if coeffs.dim != grid.dim:
        raise ValueError("dimension mismatch between coefficients and grid")
    x = grid.interior_coords()
    y = x / eps**alpha
    a = coeffs.a_values(x, y)
    diff = eps**2 * 0.5 * (a + np.swapaxes(a, 0, 1))
    drift = eps * coeffs.b_values(x, y)
    c = coeffs.c_values(x, y)
    mat, cross = _assemble(grid.interior_shape, False, grid.h, diff, drift, c, scheme)
    op = SparseOperator(mat, grid, "dirichlet", c,
                        meta={"eps": eps, "alpha": alpha, "scheme": scheme,
                              "c_zero": coeffs.c_zero})
    if np.any(grid.h > eps**alpha / 4.0) and not coeffs.y_free:
        op.warnings.append(
            f"grid too coarse: h={grid.h.max():.3g} > eps^alpha/4={eps**alpha / 4:.3g}")
    if cross:
        _sign_warning(op)
    return op


def _frozen(coeffs: CoefficientSet, x0, grid: TorusGrid):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (coeffs.dim,):
        raise ValueError(f"x0 must have {coeffs.dim} components")
    y = grid.coords()
    x = [np.full(y.shape[1], v) for v in x0]
    return x, y


def assemble_periodic_cell(coeffs: CoefficientSet, x0, p, viscosity: float,
                           grid: TorusGrid, scheme: str = "fitted") -> SparseOperator:
    """Cell operator ``v^2 a D^2 + v (b - 2 a p).D + H(p, x0, y)`` on the torus.

    ``viscosity = 1`` is the resonant cell problem; smaller values give the
    vanishing-viscosity approximation of the inviscid cell problem.
    """
    if not 0.0 < viscosity <= 1.0:
        raise ValueError("viscosity must lie in (0, 1]")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (coeffs.dim,) or not np.all(np.isfinite(p)):
        raise ValueError("p must be a finite vector of the coefficient dimension")
    x, y = _frozen(coeffs, x0, grid)
    a = coeffs.a_values(x, y)
    a = 0.5 * (a + np.swapaxes(a, 0, 1))
    b = coeffs.b_values(x, y)
    ap = np.einsum("ijm,i->jm", a, p)
    drift = viscosity * (b - 2.0 * ap)
    ham = coeffs.hamiltonian(p, x, y)
    mat, cross = _assemble(grid.shape, True, grid.h, viscosity**2 * a, drift, ham, scheme)
    op = SparseOperator(mat, grid, "torus", ham,
                        meta={"x0": tuple(np.atleast_1d(x0)), "p": tuple(p),
                              "viscosity": viscosity, "scheme": scheme})
    if cross:
        _sign_warning(op)
    return op


def assemble_forward_cell(coeffs: CoefficientSet, x0, grid: TorusGrid, drift_scale: float,
                          scheme: str = "fitted") -> SparseOperator:
    """Forward operator ``a D^2 + s b.D`` (no zeroth order term) at frozen ``x0``."""
    if drift_scale < 0:
        raise ValueError("drift_scale must be >= 0")
    x, y = _frozen(coeffs, x0, grid)
    a = coeffs.a_values(x, y)
    a = 0.5 * (a + np.swapaxes(a, 0, 1))
    drift = drift_scale * coeffs.b_values(x, y)
    zero = np.zeros(grid.size)
    mat, cross = _assemble(grid.shape, True, grid.h, a, drift, zero, scheme)
    op = SparseOperator(mat, grid, "torus", zero,
                        meta={"x0": tuple(np.atleast_1d(x0)), "drift_scale": drift_scale,
                              "scheme": scheme})
    if cross:
        _sign_warning(op)
    return op


def assemble_adjoint_density(coeffs: CoefficientSet, x0, grid: TorusGrid, drift_scale: float,
                             scheme: str = "fitted") -> SparseOperator:
    """Adjoint ``D^2(a theta) - s D.(b theta)`` as the transpose of the forward operator.

    The forward operator kills constants, so every column of the result sums
    to zero (discrete mass conservation) and its positive kernel vector is the
    invariant density.
    """
    fwd = assemble_forward_cell(coeffs, x0, grid, drift_scale, scheme)
    mat = fwd.matrix.T.tocsr()
    return SparseOperator(mat, grid, "torus-adjoint", np.zeros(grid.size),
                          meta=dict(fwd.meta), warnings=list(fwd.warnings))
