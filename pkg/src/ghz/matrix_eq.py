"""Small dense matrix equations attached to a hyperbolic fixed point.

Conventions: ``B[i, j] = d bbar_j / d x_i`` and the flow is ``z' = -B z``, so
eigenvalues of ``B`` with positive real part are the *stable* ones.  ``Q`` is
half the momentum Hessian of the effective Hamiltonian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "MatrixEquationError", "NonHyperbolicError", "SingularLyapunovError", "RouteDisagreementError",
    "ProjectorPair", "BernoulliSolution", "Barrier",
    "spectral_projectors", "solve_lyapunov", "lyapunov_pair", "riccati_delta",
    "bernoulli_max", "ou_sigma", "quadratic_barrier", "HYPER_TOL",
]

HYPER_TOL = 1e-8
DELTA_SCHEDULE = (1e-2, 1e-4, 1e-6)


class MatrixEquationError(ArithmeticError):
    pass


class NonHyperbolicError(MatrixEquationError):
    pass


class SingularLyapunovError(MatrixEquationError):
    def __init__(self, message, smallest_singular_value):
        self.smallest_singular_value = smallest_singular_value
        super().__init__(message)


class RouteDisagreementError(MatrixEquationError):
    pass


def _as_square(B) -> np.ndarray:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(B)):
        raise ValueError("matrix has non-finite entries")
    return B


def _check_hyperbolic(B, hyper_tol):
    ev = linalg.eigvals(B)
    gap = np.min(np.abs(ev.real))
    if gap < hyper_tol:
        raise NonHyperbolicError(
            f"eigenvalue {ev[np.argmin(np.abs(ev.real))]:.6g} within {hyper_tol:g} of the imaginary axis")
    return ev


def _ordered_schur(B, positive_first: bool):
    sort = "rhp" if positive_first else "lhp"
    T, U, k = linalg.schur(B, output="real", sort=sort)
    return T, U, k


@dataclass(frozen=True)
class ProjectorPair:
    stable: np.ndarray
    unstable: np.ndarray
    n_stable: int
    n_unstable: int
    basis_stable: np.ndarray
    block_stable: np.ndarray

    def identity_defects(self, B) -> dict:
        """Max-norm defects of the projector identities."""
        B = _as_square(B)
        Ps, Pu = self.stable, self.unstable
        eye = np.eye(Ps.shape[0])
        return {
            "sum": np.abs(Ps + Pu - eye).max(),
            "idempotent": np.abs(Ps @ Ps - Ps).max(),
            "orthogonal": np.abs(Ps @ Pu).max(),
            "commute": np.abs(B @ Ps - Ps @ B).max(),
        }


def spectral_projectors(B, hyper_tol: float = HYPER_TOL) -> ProjectorPair:
    """Projectors onto the invariant subspaces of ``B`` with Re > 0 (stable) and Re < 0.

    Ordered real Schur form ``B = U T U^T`` followed by one Sylvester solve
    that decouples the two diagonal blocks.
    """
    B = _as_square(B)
    _check_hyperbolic(B, hyper_tol)
    n = B.shape[0]
    T, U, k = _ordered_schur(B, positive_first=True)
    P = np.zeros((n, n))
    P[:k, :k] = np.eye(k)
    if 0 < k < n:
        X = linalg.solve_sylvester(T[:k, :k], -T[k:, k:], -T[:k, k:])
        P[:k, k:] = -X
    Ps = U @ P @ U.T
    return ProjectorPair(stable=Ps, unstable=np.eye(n) - Ps, n_stable=k, n_unstable=n - k,
                         basis_stable=U[:, :k], block_stable=T[:k, :k])


def solve_lyapunov(A, C, rcond: float = 1e-12, check_residual: bool = True) -> np.ndarray:
    """Solve ``A^T X + X A = C``.

    Raises :class:`SingularLyapunovError` when the smallest singular value of
    the Kronecker form of the operator is below ``rcond`` times its norm.
    """
    A = _as_square(A)
    C = _as_square(C)
    if A.shape != C.shape:
        raise ValueError("A and C must have the same shape")
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    sv = linalg.svdvals(K)
    if sv[-1] <= rcond * max(sv[0], 1e-300):
        raise SingularLyapunovError(
            f"Lyapunov operator is singular (smallest singular value {sv[-1]:.3e})", sv[-1])
    X = linalg.solve_continuous_lyapunov(A.T, C)
    X = 0.5 * (X + X.T) if np.allclose(C, C.T) else X
    res = np.abs(A.T @ X + X @ A - C).max()
    scale = max(np.abs(C).max(), np.abs(A).max() * np.abs(X).max(), 1e-300)
    if check_residual and res > 1e-10 * scale:
        raise MatrixEquationError(f"Lyapunov residual {res:.3e} too large (ill conditioned)")
    return X


def _restricted_basis(B, stable: bool):
    T, U, k = _ordered_schur(B, positive_first=stable)
    return U[:, :k], T[:k, :k]


def lyapunov_pair(B, hyper_tol: float = HYPER_TOL):
    """``(A_s, A_u)`` with ``B A_s + A_s B^T = Ps Ps^T`` and ``B A_u + A_u B^T = -Pu Pu^T``.

    Each is solved on its own invariant subspace, where the restricted
    operator is nonsingular, and embedded back.
    """
    B = _as_square(B)
    pp = spectral_projectors(B, hyper_tol)
    n = B.shape[0]
    out = []
    for stable, P, sign in ((True, pp.stable, 1.0), (False, pp.unstable, -1.0)):
        V, A = _restricted_basis(B, stable)
        if V.shape[1] == 0:
            out.append(np.zeros((n, n)))
            continue
        C = sign * (V.T @ P @ P.T @ V)
        Y = solve_lyapunov(A.T, C)
        M = V @ Y @ V.T
        out.append(0.5 * (M + M.T))
    return out[0], out[1]


def _riccati_residual(G, B, Q, delta):
    return 4.0 * G @ Q @ G - B @ G - G @ B.T - delta * np.eye(B.shape[0])


def riccati_delta(B, Q, delta: float, hyper_tol: float = HYPER_TOL, newton_steps: int = 30) -> np.ndarray:
    """Positive definite solution of ``4 G Q G - B G - G B^T - delta I = 0``.

    Start: ``X`` solving ``(B Ps + delta I)^T X + X (B Ps + delta I) = 4 Q``,
    ``G0 = X^{-1}``, which is within O(delta) of the root.  Then Newton
    (Kleinman) steps, each one Lyapunov solve, polish it to the exact root.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    B = _as_square(B)
    Q = _as_square(Q)
    _require_pd(Q, "Q")
    n = B.shape[0]
    pp = spectral_projectors(B, hyper_tol)
    M0 = B @ pp.stable + delta * np.eye(n)
    X = solve_lyapunov(M0, 4.0 * Q)
    X = 0.5 * (X + X.T)
    if np.linalg.eigvalsh(X).min() <= 0:
        raise MatrixEquationError("Lyapunov iterate X is not positive definite")
    G = np.linalg.inv(X)
    G = 0.5 * (G + G.T)
    target = 1e-13 * max(1.0, np.abs(B).max(), np.abs(Q).max())
    for _ in range(newton_steps):
        F = _riccati_residual(G, B, Q, delta)
        if np.abs(F).max() <= target:
            break
        Mt = 4.0 * G @ Q - B
        D = solve_lyapunov(Mt.T, -F, check_residual=False)
        G = G + 0.5 * (D + D.T)
    res = np.abs(_riccati_residual(G, B, Q, delta)).max()
    if res > 1e-8:
        raise MatrixEquationError(f"Riccati residual {res:.3e} after Newton polish")
    if np.linalg.eigvalsh(G).min() <= 0:
        raise MatrixEquationError("Riccati solution is not positive definite")
    return G


def _require_pd(Q, name):
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


@dataclass
class BernoulliSolution:
    gamma: np.ndarray
    residual: float
    sigma: float
    route: str
    projectors: ProjectorPair
    cross_check: dict = field(default_factory=dict)

    def invariant_defects(self, B, Q) -> dict:
        B = _as_square(B)
        Q = _as_square(Q)
        G = self.gamma
        Ps = self.projectors.stable
        return {
            "symmetry": np.abs(G - G.T).max(),
            "min_eig": float(np.linalg.eigvalsh(0.5 * (G + G.T)).min()),
            "residual": np.abs(4 * G @ Q @ G - B @ G - G @ B.T).max(),
            "range": np.abs(G - Ps @ G @ Ps.T).max(),
            "trace": abs(2 * np.trace(Q @ G) - np.trace(B @ Ps)),
        }


def _subspace_gamma(B, Q, pp: ProjectorPair):
    n = B.shape[0]
    V, A = pp.basis_stable, pp.block_stable
    if V.shape[1] == 0:
        return np.zeros((n, n))
    X = solve_lyapunov(A, 4.0 * V.T @ Q @ V)
    G = V @ np.linalg.inv(0.5 * (X + X.T)) @ V.T
    return 0.5 * (G + G.T)


def _riccati_tangent(G, B, Q):
    """``dG/d delta`` from differentiating the Riccati equation (one Lyapunov solve)."""
    M = 4.0 * G @ Q - B
    D = solve_lyapunov(M.T, np.eye(B.shape[0]), check_residual=False)
    return 0.5 * (D + D.T)


def bernoulli_max(B, Q, hyper_tol: float = HYPER_TOL, cross_check: bool = True,
                  agree_tol: float = 1e-6) -> BernoulliSolution:
    """Maximal positive semidefinite solution of ``4 G Q G - B G - G B^T = 0``.

    Primary route: restriction to the stable invariant subspace.  The
    delta-regularised Riccati solutions, each pushed to delta = 0 by a tangent step,
    are computed independently and must agree to ``agree_tol``.
    """
    B = _as_square(B)
    Q = _as_square(Q)
    if B.shape != Q.shape:
        raise ValueError("B and Q must have the same shape")
    _require_pd(Q, "Q")
    pp = spectral_projectors(B, hyper_tol)
    G = _subspace_gamma(B, Q, pp)
    info = {}
    if cross_check:
        gds = [riccati_delta(B, Q, d, hyper_tol) for d in DELTA_SCHEDULE]
        # first-order Taylor step to delta = 0 from each regularised solution
        extrap = [g - d * _riccati_tangent(g, B, Q) for d, g in zip(DELTA_SCHEDULE, gds)]
        dist = [float(np.abs(g - G).max()) for g in gds]
        gaps = [float(np.abs(e - G).max()) for e in extrap]
        gap = gaps[-1]
        info = {"delta": DELTA_SCHEDULE, "distances": dist, "extrapolated_gaps": gaps,
                "extrapolated_gap": gap,
                "monotone": all(a > b for a, b in zip(dist, dist[1:]))}
        if gap > agree_tol:
            raise RouteDisagreementError(
                f"subspace and delta-continuation routes differ by {gap:.3e}")
    sol = BernoulliSolution(gamma=G, residual=float(np.abs(4 * G @ Q @ G - B @ G - G @ B.T).max()),
                            sigma=float(-2.0 * np.trace(Q @ G)), route="subspace",
                            projectors=pp, cross_check=info)
    d = sol.invariant_defects(B, Q)
    scale = max(1.0, np.abs(B).max())
    bad = [k for k, tol in (("symmetry", 1e-12), ("residual", 1e-9 * scale), ("range", 1e-8),
                            ("trace", 1e-8 * scale)) if d[k] > tol]
    if d["min_eig"] < -1e-10:
        bad.append("min_eig")
    if bad:
        raise MatrixEquationError(f"Bernoulli invariants violated: {', '.join(bad)} ({d})")
    return sol


def ou_sigma(B, Q, hyper_tol: float = HYPER_TOL):
    """Return ``(sigma, Gamma)`` with ``sigma = -2 tr(Q Gamma)``.

    The positive solution of the Ornstein-Uhlenbeck problem is
    ``exp(-Gamma z.z)``.
    """
    sol = bernoulli_max(B, Q, hyper_tol)
    return sol.sigma, sol.gamma


@dataclass
class Barrier:
    xi: np.ndarray
    A_s: np.ndarray
    A_u: np.ndarray
    mu: float
    nu: float
    valid: bool | None = None
    max_ratio: float = np.nan
    halvings: int = 0
    message: str = ""

    @property
    def matrix(self) -> np.ndarray:
        return self.mu * self.A_s - self.nu * self.A_u

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.xi
        return float(d @ self.matrix @ d)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.xi
        return 2.0 * self.matrix @ d


def _shell_directions(n, count=64, seed=0):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def quadratic_barrier(xi, B, mu: float, nu: float, hbar=None, radius: float = 0.05,
                      max_halvings: int = 10, hyper_tol: float = HYPER_TOL) -> Barrier:
    """Quadratic barrier ``mu (x-xi).A_s(x-xi) - nu (x-xi).A_u(x-xi)``.

    If ``hbar(p, x)`` is supplied, the barrier is checked on shells of radius
    ``radius, radius/2, radius/4`` around ``xi``: the largest value of
    ``hbar(grad Phi(x), x) / |x - xi|^2`` must be negative.  ``mu`` and ``nu``
    are halved until that holds; failure is reported, not raised.
    """
    B = _as_square(B)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if mu < 0 or nu < 0:
        raise ValueError("mu and nu must be nonnegative")
    A_s, A_u = lyapunov_pair(B, hyper_tol)
    bar = Barrier(xi=xi, A_s=A_s, A_u=A_u, mu=float(mu), nu=float(nu))
    if hbar is None:
        return bar
    dirs = _shell_directions(B.shape[0])
    pts = [xi + r * d for r in (radius, radius / 2, radius / 4) for d in dirs]
    for k in range(max_halvings + 1):
        ratios = [hbar(bar.gradient(x), x) / float(np.sum((x - xi) ** 2)) for x in pts]
        bar.max_ratio = float(np.max(ratios))
        bar.halvings = k
        if bar.max_ratio < 0:
            bar.valid = True
            bar.message = f"valid after {k} halvings"
            return bar
        if k < max_halvings:
            bar.mu *= 0.5
            bar.nu *= 0.5
    bar.valid = False
    bar.message = f"no valid (mu, nu) after {max_halvings} halvings; max ratio {bar.max_ratio:.3e}"
    return bar
