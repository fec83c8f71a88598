"""Principal eigenpairs of assembled operators.

The operators produced by :mod:`ghz.discretization` have nonnegative
off-diagonal entries and are irreducible, so the eigenvalue of maximal real
part is real and simple with a positive eigenvector.  It is computed by
inverse iteration on ``s I - A``.  The shift ``s`` is always kept strictly
above the Collatz-Wielandt upper bound ``max_i (A u)_i / u_i`` of the current
positive iterate; this bound dominates the principal eigenvalue, hence
``s I - A`` stays a nonsingular M-matrix with a positive inverse and the
iterates stay positive.  As ``u`` converges the bound tightens and the shift
is moved towards the eigenvalue, which makes the iteration fast.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .discretization import BoxGrid, GridFunction, SparseOperator, TorusGrid

__all__ = [
    "EigenPair", "SpectralError", "ConvergenceError", "PositivityError", "EigenBoundViolation",
    "principal_eigenpair", "log_transform", "blowup_rescale", "simplicity_check",
    "bound_audit", "reset_bound_audit",
]

BOUND_TOL = 1e-8


class SpectralError(RuntimeError):
    pass


class ConvergenceError(SpectralError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class PositivityError(SpectralError):
    pass


class EigenBoundViolation(SpectralError):
    pass


_audit_lock = threading.Lock()
_audit = {"checked": 0, "violations": []}


def bound_audit() -> dict:
    """Counts of eigenvalue-bound checks performed in this process."""
    with _audit_lock:
        return {"checked": _audit["checked"], "violations": list(_audit["violations"])}


def reset_bound_audit():
    with _audit_lock:
        _audit["checked"] = 0
        _audit["violations"].clear()


@dataclass
class EigenPair:
    eigenvalue: float
    eigenfunction: GridFunction
    vector: np.ndarray
    residual: float
    iterations: int
    normalization: str
    bracket: tuple = (np.nan, np.nan)
    factorizations: int = 0
    notes: list = field(default_factory=list)


def _cw_bounds(A, u):
    r = (A @ u) / u
    return float(np.min(r)), float(np.max(r))


def _check_bounds(op: SparseOperator, lam: float):
    msgs = []
    if op.kind in ("torus", "torus-adjoint"):
        lo, hi = float(np.min(op.zeroth)), float(np.max(op.zeroth))
        if not (lo - BOUND_TOL <= lam <= hi + BOUND_TOL):
            msgs.append(f"periodic eigenvalue {lam:.12g} outside [min c, max c] = [{lo:.6g}, {hi:.6g}]")
    elif op.kind == "dirichlet":
        hi = float(np.max(op.zeroth))
        if lam > hi + BOUND_TOL:
            msgs.append(f"Dirichlet eigenvalue {lam:.12g} exceeds sup c = {hi:.6g}")
        if op.meta.get("c_zero") and not lam < 0.0:
            msgs.append(f"c == 0 but eigenvalue {lam:.12g} is not negative")
    with _audit_lock:
        _audit["checked"] += 1
        _audit["violations"].extend(msgs)
    if msgs:
        raise EigenBoundViolation("; ".join(msgs))


def _to_gridfunction(op: SparseOperator, vec: np.ndarray) -> GridFunction:
    grid = op.grid
    if isinstance(grid, BoxGrid):
        full = np.zeros(grid.shape)
        full[tuple(slice(1, -1) for _ in range(grid.dim))] = vec.reshape(grid.interior_shape)
        return GridFunction(grid, full)
    return GridFunction(grid, vec.reshape(grid.shape))


def _normalize(vec, normalization, at):
    if normalization == "max":
        return vec / np.max(vec)
    if normalization == "mean":
        return vec / np.mean(vec)
    if normalization == "point":
        if at is None:
            raise ValueError("normalization 'point' needs an unknown index 'at'")
        return vec / vec[at]
    raise ValueError(f"unknown normalization {normalization!r}")


def principal_eigenpair(op: SparseOperator, shift_hint: float | None = None, tol: float = 1e-10,
                        max_iters: int = 50_000, normalization: str = "max", at: int | None = None,
                        start: np.ndarray | None = None, check_bounds: bool = True) -> EigenPair:
    """Eigenvalue of maximal real part and its positive eigenvector.

    Parameters
    ----------
    shift_hint
        Optional initial shift; it is raised if it does not exceed the
        Collatz-Wielandt bound of the start vector.
    tol
        Relative tolerance for the eigenvalue increment and for the residual
        ``||A u - lam u||_inf <= tol ||u||_inf`` (floored at the roundoff level
        ``100 eps ||A||_inf``).
    start
        Positive start vector; defaults to all ones (deterministic).
    """
    A = sp.csr_matrix(op.matrix)
    n = A.shape[0]
    if n == 0:
        raise SpectralError("empty operator")
    u = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    if u.shape != (n,) or np.any(u <= 0):
        raise ValueError("start vector must be positive with one entry per unknown")
    u /= u.max()
    norm_a = float(abs(A).sum(axis=1).max())
    res_tol = max(tol, 100.0 * np.finfo(float).eps * norm_a)
    eye = sp.identity(n, format="csc")
    Acsc = A.tocsc()

    lo, hi = _cw_bounds(A, u)
    scale = max(1.0, abs(hi), abs(lo))

    def choose_shift(lo, hi):
        return hi + max(hi - lo, 1e-7 * scale)

    s = choose_shift(lo, hi)
    if shift_hint is not None and shift_hint > hi:
        s = float(shift_hint)
    lu = splu((s * eye - Acsc).tocsc())
    n_fact = 1

    lam_prev = np.inf
    res = np.inf
    for it in range(1, max_iters + 1):
        v = lu.solve(u)
        if not np.all(v > 0):
            raise PositivityError(
                f"inverse iterate lost positivity at iteration {it} "
                f"(min {v.min():.3g}); operator is not an irreducible M-matrix pattern")
        u = v / v.max()
        Au = A @ u
        lam = float(Au.sum() / u.sum())
        res = float(np.max(np.abs(Au - lam * u)))
        lo, hi = float(np.min(Au / u)), float(np.max(Au / u))
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)) and res <= res_tol:
            break
        lam_prev = lam
        target = choose_shift(lo, hi)
        # refactor only when the shift can move substantially closer
        if n_fact < 40 and (s - hi) > 8.0 * (target - hi):
            s = target
            lu = splu((s * eye - Acsc).tocsc())
            n_fact += 1
    else:
        raise ConvergenceError(
            f"no convergence after {max_iters} iterations (residual {res:.3g})",
            residual=res, iterations=max_iters)

    vec = _normalize(u, normalization, at)
    res_out = float(np.max(np.abs(A @ vec - lam * vec)))
    if check_bounds:
        _check_bounds(op, lam)
    return EigenPair(eigenvalue=lam, eigenfunction=_to_gridfunction(op, vec), vector=vec,
                     residual=res_out, iterations=it, normalization=normalization,
                     bracket=(lo, hi), factorizations=n_fact)


def simplicity_check(op: SparseOperator, pair: EigenPair, tol: float = 1e-10, seed: int = 0) -> dict:
    """Restart from a random positive vector and compare with ``pair``."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.1, 1.0, op.size)
    other = principal_eigenpair(op, tol=tol, normalization="max", start=start)
    ref = pair.vector / pair.vector.max()
    return {
        "eigenvalue_diff": abs(other.eigenvalue - pair.eigenvalue),
        "vector_diff": float(np.max(np.abs(other.vector - ref))),
    }


def log_transform(pair: EigenPair, eps: float) -> GridFunction:
    """``W = -eps log u`` nodewise; boundary nodes of a box map to ``+inf``."""
    if pair.normalization != "max" or not np.isclose(pair.vector.max(), 1.0, rtol=0, atol=1e-12):
        raise ValueError("log_transform needs an eigenfunction normalised by max u = 1")
    if np.any(pair.vector <= 0):
        raise PositivityError("eigenfunction has nonpositive entries")
    gf = pair.eigenfunction
    vals = np.full(gf.values.shape, np.inf)
    if isinstance(gf.grid, BoxGrid):
        inner = tuple(slice(1, -1) for _ in range(gf.grid.dim))
        vals[inner] = -eps * np.log(gf.values[inner])
    else:
        vals = -eps * np.log(gf.values)
    return GridFunction(gf.grid, vals)


def blowup_rescale(pair: EigenPair, center, eps: float, z_radius: float, n_z: int = 40) -> GridFunction:
    """``w(z) = u(center + sqrt(eps) z) / u(center)`` on a uniform z-grid.

    The z-grid is a :class:`BoxGrid` on ``[-z_radius, z_radius]^N`` with an
    even number of cells so that ``z = 0`` is a node and ``w(0) = 1``.
    """
    grid = pair.eigenfunction.grid
    if not isinstance(grid, BoxGrid):
        raise TypeError("blow-up rescaling needs a box eigenfunction")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    r = np.sqrt(eps) * z_radius
    for v, (lo, hi) in zip(center, grid.bounds):
        if not (lo < v - r and v + r < hi):
            raise ValueError(
                f"blow-up ball of radius {r:.4g} around {center.tolist()} leaves the domain")
    if n_z % 2:
        n_z += 1
    zgrid = BoxGrid.uniform([(-z_radius, z_radius)] * grid.dim, n_z)
    interp = RegularGridInterpolator(grid.axes(), pair.eigenfunction.values, method="linear")
    zc = zgrid.coords()
    pts = center.reshape((-1,) + (1,) * grid.dim) + np.sqrt(eps) * zc
    vals = interp(np.moveaxis(pts, 0, -1).reshape(-1, grid.dim)).reshape(zgrid.shape)
    u0 = float(interp(center.reshape(1, -1))[0])
    if u0 <= 0:
        raise PositivityError("eigenfunction vanishes at the blow-up centre")
    return GridFunction(zgrid, vals / u0)
