"""Effective (homogenised) quantities at a frozen slow variable ``x``.

Three regimes, keyed by the oscillation exponent ``alpha``:

* ``alpha > 1`` (supercritical): average of the cell Hamiltonian against the
  invariant density of the pure diffusion ``D^2(a theta) = 0``;
* ``alpha = 1`` (critical): principal eigenvalue of the cell operator
  ``a D^2 + (b - 2ap).D + H(p, x, y)``;
* ``alpha < 1`` (subcritical): the same operator with vanishing viscosity,
  extrapolated to zero viscosity.

The effective drift is ``bbar = int b theta*`` where ``theta*`` is the
invariant density of ``a D^2 + b.D``.
"""
from __future__ import annotations

import csv
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .coeff_dsl import CoefficientSet
from .discretization import (
    GridFunction, TorusGrid, assemble_adjoint_density, assemble_periodic_cell,
)
from .spectral import principal_eigenpair

__all__ = [
    "regime_of", "invariant_density_supercritical", "steady_density",
    "effective_H_supercritical", "effective_H_critical", "effective_H_subcritical",
    "effective_drift", "hessian_Q", "HamiltonianTable", "DriftField", "SubcriticalEstimate",
    "EffectiveError", "DEFAULT_SCHEDULE",
]

DEFAULT_N = 64
DEFAULT_SCHEDULE = (0.4, 0.2, 0.1)
EIG_TOL = 1e-12
QUAD_TOL = 1e-13


class EffectiveError(ArithmeticError):
    pass


def regime_of(alpha: float) -> str:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if alpha > 1:
        return "supercritical"
    if alpha == 1:
        return "critical"
    return "subcritical"


def _grid(coeffs, grid, n):
    return grid if grid is not None else TorusGrid.uniform(coeffs.dim, n)


def _vec(v, dim, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (dim,):
        raise ValueError(f"{name} must have {dim} components")
    return v


def _density(coeffs, x0, grid, drift_scale, scheme):
    op = assemble_adjoint_density(coeffs, x0, grid, drift_scale, scheme)
    pair = principal_eigenpair(op, tol=EIG_TOL, normalization="mean")
    theta = pair.vector
    if np.any(theta <= 0):
        raise EffectiveError("invariant density is not positive")
    if abs(theta.mean() - 1.0) > 1e-10:
        raise EffectiveError("invariant density normalisation failed")
    return GridFunction(grid, theta.reshape(grid.shape))


def invariant_density_supercritical(coeffs: CoefficientSet, x0, grid: TorusGrid | None = None,
                                    n: int = DEFAULT_N, scheme: str = "fitted") -> GridFunction:
    """Unit-mean positive solution of ``D^2(a theta) = 0`` on the torus."""
    return _density(coeffs, _vec(x0, coeffs.dim, "x0"), _grid(coeffs, grid, n), 0.0, scheme)


def steady_density(coeffs: CoefficientSet, x0, drift_scale: float = 1.0, grid: TorusGrid | None = None,
                   n: int = DEFAULT_N, scheme: str = "fitted") -> GridFunction:
    """Unit-mean positive kernel of ``D^2(a theta) - s D.(b theta)``."""
    if drift_scale < 0:
        raise ValueError("drift_scale must be >= 0")
    return _density(coeffs, _vec(x0, coeffs.dim, "x0"), _grid(coeffs, grid, n), drift_scale, scheme)


def _cell_hamiltonian(coeffs, p, x0, grid):
    y = grid.coords()
    x = [np.full(y.shape[1], v) for v in x0]
    return coeffs.hamiltonian(p, x, y)


def effective_H_supercritical(coeffs: CoefficientSet, p, x0, grid: TorusGrid | None = None,
                              n: int = DEFAULT_N, theta: GridFunction | None = None) -> float:
    """``int H(p, x0, y) theta(y) dy`` by the periodic rectangle rule."""
    p = _vec(p, coeffs.dim, "p")
    x0 = _vec(x0, coeffs.dim, "x0")
    grid = theta.grid if theta is not None else _grid(coeffs, grid, n)
    if theta is None:
        theta = invariant_density_supercritical(coeffs, x0, grid)
    return float(np.mean(_cell_hamiltonian(coeffs, p, x0, grid) * theta.values.ravel()))


def effective_H_critical(coeffs: CoefficientSet, p, x0, grid: TorusGrid | None = None,
                         n: int = DEFAULT_N, scheme: str = "fitted", tol: float = EIG_TOL) -> float:
    """Principal eigenvalue of the viscosity-one cell operator."""
    return _cell_eigenvalue(coeffs, p, x0, 1.0, _grid(coeffs, grid, n), scheme, tol)


def _cell_eigenvalue(coeffs, p, x0, viscosity, grid, scheme, tol):
    p = _vec(p, coeffs.dim, "p")
    x0 = _vec(x0, coeffs.dim, "x0")
    op = assemble_periodic_cell(coeffs, x0, p, viscosity, grid, scheme)
    return principal_eigenpair(op, tol=tol).eigenvalue


@dataclass
class SubcriticalEstimate:
    value: float
    schedule: tuple
    sequence: tuple
    flags: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)


def _neville_to_zero(ts, values):
    p = [float(v) for v in values]
    for k in range(1, len(ts)):
        p = [(ts[i + k] * p[i] - ts[i] * p[i + 1]) / (ts[i + k] - ts[i]) for i in range(len(p) - 1)]
    return p[0]


def effective_H_subcritical(coeffs: CoefficientSet, p, x0, viscosity_schedule=DEFAULT_SCHEDULE,
                            grid: TorusGrid | None = None, n: int = DEFAULT_N,
                            scheme: str = "fitted", tol: float = EIG_TOL,
                            monotone_tol: float = 1e-10) -> SubcriticalEstimate:
    """Vanishing-viscosity limit of the cell eigenvalue.

    ``mu(eta)`` is computed on the schedule and extrapolated to ``eta = 0``
    assuming an expansion in integer powers of ``eta`` (leading order
    ``O(eta)``; a heuristic, reported in ``flags``).
    """
    sched = tuple(float(v) for v in viscosity_schedule)
    if not sched:
        raise ValueError("empty viscosity schedule")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("viscosity schedule must be strictly decreasing")
    grid = _grid(coeffs, grid, n)
    mus = tuple(_cell_eigenvalue(coeffs, p, x0, v, grid, scheme, tol) for v in sched)
    flags = ["assumed O(eta) rate"]
    if len(sched) == 1:
        flags.append("no extrapolation")
        value = mus[0]
    else:
        value = _neville_to_zero(sched, mus)
        d = np.diff(mus)
        big = d[np.abs(d) > monotone_tol]
        if big.size and not (np.all(big > 0) or np.all(big < 0)):
            flags.append("non-monotone sequence")
            warnings.warn(f"non-monotone viscosity sequence {mus}", RuntimeWarning, stacklevel=2)
    return SubcriticalEstimate(value=float(value), schedule=sched, sequence=mus, flags=flags)


def effective_drift(coeffs: CoefficientSet, x0, drift_scale: float = 1.0,
                    grid: TorusGrid | None = None, n: int = DEFAULT_N,
                    theta: GridFunction | None = None) -> np.ndarray:
    """``int b(x0, y) theta*(y) dy``."""
    x0 = _vec(x0, coeffs.dim, "x0")
    if theta is None:
        theta = steady_density(coeffs, x0, drift_scale, grid, n)
    grid = theta.grid
    y = grid.coords()
    x = [np.full(y.shape[1], v) for v in x0]
    b = coeffs.b_values(x, y)
    return b @ theta.values.ravel() / grid.size


def hessian_Q(hbar, x0, dim: int, dp: float = 1e-3, tol_eval: float = QUAD_TOL) -> np.ndarray:
    """Half the central-difference momentum Hessian of ``hbar(p, x0)`` at ``p = 0``.

    ``tol_eval`` is the accuracy of one evaluation of ``hbar``; the Hessian
    must be positive definite with smallest eigenvalue above the noise floor
    ``4 tol_eval / dp^2``, otherwise :class:`EffectiveError` is raised.
    """
    if dp <= 0:
        raise ValueError("dp must be positive")
    eye = np.eye(dim)

    def f(v):
        return hbar(v, x0)

    H = np.empty((dim, dim))
    f0 = f(np.zeros(dim))
    for i in range(dim):
        H[i, i] = (f(dp * eye[i]) - 2 * f0 + f(-dp * eye[i])) / dp**2
        for j in range(i + 1, dim):
            e = dp * (eye[i] + eye[j])
            g = dp * (eye[i] - eye[j])
            H[i, j] = H[j, i] = (f(e) - f(g) - f(-g) + f(-e)) / (4 * dp**2)
    H = 0.5 * (H + H.T)
    lo = np.linalg.eigvalsh(H).min()
    floor = 4.0 * tol_eval / dp**2
    if not lo > floor:
        raise EffectiveError(
            f"momentum Hessian not positive definite above the noise floor "
            f"(min eigenvalue {lo:.3e}, floor {floor:.3e}); increase dp")
    return 0.5 * H


def _quantize(v):
    return tuple(int(k) for k in np.round(np.asarray(v, dtype=float) / 1e-12))


class HamiltonianTable:
    """Memoised evaluator of the effective Hamiltonian for one regime.

    ``hbar(p, x)`` evaluates one point; results are cached under keys
    quantised to 1e-12.  The cache is an insert-if-absent map guarded by a
    lock; concurrent duplicate solves of one key are harmless.
    """

    def __init__(self, coeffs: CoefficientSet, alpha: float = 1.0, n: int = DEFAULT_N,
                 viscosity_schedule=DEFAULT_SCHEDULE, scheme: str = "fitted"):
        self.coeffs = coeffs
        self.alpha = float(alpha)
        self.regime = regime_of(alpha)
        self.n = int(n)
        self.grid = TorusGrid.uniform(coeffs.dim, self.n)
        self.viscosity_schedule = tuple(viscosity_schedule)
        self.scheme = scheme
        self._memo = {}
        self._theta = {}
        self._lock = threading.Lock()
        self.flags = set()

    @property
    def dim(self) -> int:
        return self.coeffs.dim

    @property
    def eval_tol(self) -> float:
        """Accuracy of one evaluation (used for finite-difference noise floors)."""
        if self.coeffs.y_free or self.regime == "supercritical":
            return QUAD_TOL
        return 1e-11

    def _compute(self, p, x):
        c = self.coeffs
        if c.y_free:
            return float(c.hamiltonian(p, [np.array([v]) for v in x],
                                       [np.zeros(1) for _ in x])[0])
        if self.regime == "supercritical":
            key = _quantize(x)
            theta = self._theta.get(key)
            if theta is None:
                theta = invariant_density_supercritical(c, x, self.grid, scheme=self.scheme)
                with self._lock:
                    self._theta.setdefault(key, theta)
            return effective_H_supercritical(c, p, x, theta=theta)
        if self.regime == "critical":
            return effective_H_critical(c, p, x, self.grid, scheme=self.scheme)
        est = effective_H_subcritical(c, p, x, self.viscosity_schedule, self.grid, scheme=self.scheme)
        self.flags.update(est.flags)
        return est.value

    def __call__(self, p, x) -> float:
        p = _vec(p, self.dim, "p")
        x = _vec(x, self.dim, "x")
        key = (_quantize(p), _quantize(x))
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        val = self._compute(p, x)
        with self._lock:
            return self._memo.setdefault(key, val)

    def __len__(self):
        return len(self._memo)

    def items(self):
        with self._lock:
            return sorted(self._memo.items())

    def gradient_p(self, p, x, dp: float = 1e-3) -> np.ndarray:
        p = _vec(p, self.dim, "p")
        eye = np.eye(self.dim)
        return np.array([(self(p + dp * e, x) - self(p - dp * e, x)) / (2 * dp) for e in eye])

    def hessian_Q(self, x, dp: float = 1e-3) -> np.ndarray:
        if self.regime == "subcritical":
            raise EffectiveError("hessian_Q requires alpha >= 1")
        return hessian_Q(self, x, self.dim, dp, self.eval_tol)

    def to_csv(self, path):
        N = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"p{i + 1}" for i in range(N)] + [f"x{i + 1}" for i in range(N)] + ["Hbar"])
            for (pk, xk), v in self.items():
                w.writerow([f"{k * 1e-12:.12g}" for k in pk + xk] + [f"{v:.15g}"])

    def resolution_check(self, points, threshold: float = 1e-5) -> dict:
        """Compare with a table at doubled torus resolution on ``points``.

        ``points`` is an iterable of ``(p, x)``; returns the largest shift and
        whether it is below ``threshold``.
        """
        if self.coeffs.y_free:
            return {"n": self.n, "max_shift": 0.0, "trusted": True}
        fine = HamiltonianTable(self.coeffs, self.alpha, 2 * self.n, self.viscosity_schedule, self.scheme)
        shift = max(abs(self(p, x) - fine(p, x)) for p, x in points)
        return {"n": self.n, "max_shift": float(shift), "trusted": bool(shift < threshold)}

    def surrogate(self, box, p_radius: float, n_x: int = 17, n_p: int = 17):
        """Vectorised interpolant of ``hbar`` on ``box`` x ``[-p_radius, p_radius]^N``.

        Chebyshev (second kind points) in ``p``, multilinear in ``x``.  For
        y-free coefficients the closed form is returned instead.
        """
        if self.coeffs.y_free:
            return _ClosedForm(self.coeffs)
        return HamiltonianSurrogate(self, box, p_radius, n_x, n_p)


class _ClosedForm:
    """``H(p, x)`` for y-free coefficients, vectorised over leading axes."""

    exact = True

    def __init__(self, coeffs):
        self.coeffs = coeffs

    def __call__(self, p, x):
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(p.shape, x.shape)
        p = np.broadcast_to(p, shape).reshape(-1, shape[-1])
        x = np.broadcast_to(x, shape).reshape(-1, shape[-1])
        N = self.coeffs.dim
        xs = [x[:, i] for i in range(N)]
        ys = [np.zeros(len(x)) for _ in range(N)]
        a = np.broadcast_to(self.coeffs.a_values(xs, ys), (N, N, len(x)))
        b = np.broadcast_to(self.coeffs.b_values(xs, ys), (N, len(x)))
        c = np.broadcast_to(self.coeffs.c_values(xs, ys), (len(x),))
        val = np.einsum("ijm,mi,mj->m", a, p, p) - np.einsum("im,mi->m", b, p) + c
        return val.reshape(shape[:-1])


def _cheb_nodes(n):
    return np.cos(np.pi * np.arange(n) / (n - 1))


def _bary_weights(n):
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _bary_matrix(t, nodes, w):
    """Rows of barycentric interpolation weights for points ``t`` in [-1, 1]."""
    d = t[:, None] - nodes[None, :]
    exact = np.isclose(d, 0.0, atol=1e-15)
    d[exact] = 1.0
    m = w[None, :] / d
    m /= m.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    m[rows] = exact[rows].astype(float)
    return m


class HamiltonianSurrogate:
    exact = False

    def __init__(self, table: HamiltonianTable, box, p_radius: float, n_x: int, n_p: int):
        N = table.dim
        self.p_radius = float(p_radius)
        self.box = tuple((float(lo), float(hi)) for lo, hi in box)
        self.x_axes = [np.linspace(lo, hi, n_x) for lo, hi in self.box]
        self.nodes = _cheb_nodes(n_p)
        self.weights = _bary_weights(n_p)
        p_nodes = self.p_radius * self.nodes
        xs = np.stack(np.meshgrid(*self.x_axes, indexing="ij"), axis=-1).reshape(-1, N)
        ps = np.stack(np.meshgrid(*([p_nodes] * N), indexing="ij"), axis=-1).reshape(-1, N)
        vals = np.array([[table(p, x) for p in ps] for x in xs])
        self.values = vals.reshape((n_x,) * N + (n_p**N,))
        self._interp = RegularGridInterpolator(self.x_axes, self.values, method="linear",
                                               bounds_error=False, fill_value=None)
        self.dim = N
        self.n_p = n_p

    def __call__(self, p, x):
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(p.shape, x.shape)
        p = np.broadcast_to(p, shape).reshape(-1, self.dim)
        x = np.broadcast_to(x, shape).reshape(-1, self.dim)
        if np.any(np.abs(p) > self.p_radius * (1 + 1e-12)):
            raise ValueError("momentum outside the surrogate range")
        return self.many_p(p[:, None, :], x)[:, 0].reshape(shape[:-1])

    def many_p(self, P, X) -> np.ndarray:
        """Values at ``P[m, k]`` and ``X[m]``, shape ``(M, K)``; x is interpolated once per row."""
        P = np.asarray(P, dtype=float)
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        M, K, N = P.shape
        if np.any(np.abs(P) > self.p_radius * (1 + 1e-12)):
            raise ValueError("momentum outside the surrogate range")
        nodal = self._interp(X).reshape((M,) + (self.n_p,) * N)
        out = None
        for k in range(N):
            m = _bary_matrix(P[:, :, k].ravel() / self.p_radius, self.nodes, self.weights)
            m = m.reshape(M, K, self.n_p)
            if out is None:
                out = np.einsum("mkj,mj...->mk...", m, nodal)
            else:
                out = np.einsum("mkj,mkj...->mk...", m, out)
        return out


class DriftField:
    """Memoised ``x -> bbar(x)`` with the densities kept alongside."""

    def __init__(self, coeffs: CoefficientSet, drift_scale: float = 1.0, n: int = DEFAULT_N,
                 scheme: str = "fitted"):
        self.coeffs = coeffs
        self.drift_scale = float(drift_scale)
        self.grid = TorusGrid.uniform(coeffs.dim, n)
        self.scheme = scheme
        self._memo = {}
        self._lock = threading.Lock()

    def density(self, x) -> GridFunction:
        return self._entry(x)[1]

    def _entry(self, x):
        x = _vec(x, self.coeffs.dim, "x")
        key = _quantize(x)
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        if self.coeffs.y_free:
            theta = GridFunction(self.grid, np.ones(self.grid.shape))
            bbar = self.coeffs.b_values([np.array([v]) for v in x],
                                        [np.zeros(1) for _ in x])[:, 0].astype(float)
        else:
            theta = steady_density(self.coeffs, x, self.drift_scale, self.grid, scheme=self.scheme)
            bbar = effective_drift(self.coeffs, x, theta=theta)
        with self._lock:
            return self._memo.setdefault(key, (np.asarray(bbar, dtype=float), theta))

    def __call__(self, x) -> np.ndarray:
        return self._entry(x)[0].copy()

    def jacobian(self, x, step: float = 1e-4) -> np.ndarray:
        """Central-difference Jacobian ``J[j, i] = d bbar_j / d x_i``."""
        x = _vec(x, self.coeffs.dim, "x")
        N = len(x)
        J = np.empty((N, N))
        for i in range(N):
            e = np.zeros(N)
            e[i] = step
            J[:, i] = (self(x + e) - self(x - e)) / (2 * step)
        return J
