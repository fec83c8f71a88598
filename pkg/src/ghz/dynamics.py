"""Fixed points of the effective flow ``x' = -bbar(x)`` and their linearisation.

``B[i, j] = d bbar_j / d x_i`` (the transpose of the Jacobian of ``bbar``);
``sigma(xi)`` is the sum of the negative real parts of the eigenvalues of
``-B``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator

from .discretization import BoxGrid

__all__ = [
    "FixedPoint", "SigmaBar", "StructureReport", "NonHyperbolicPointError",
    "jacobian_fd", "linearize", "find_fixed_points", "sigma_bar", "verify_structure",
]

NEWTON_TOL = 1e-9
HYPER_TOL = 1e-8
TIE_TOL = 1e-9


class NonHyperbolicPointError(ValueError):
    pass


def _bounds(box):
    if isinstance(box, BoxGrid):
        return np.array(box.bounds, dtype=float)
    return np.atleast_2d(np.asarray(box, dtype=float))


@dataclass
class FixedPoint:
    xi: np.ndarray
    B: np.ndarray
    eigenvalues: np.ndarray   # of -B
    hyperbolic: bool
    sigma: float
    kind: str                 # sink / saddle / source of x' = -bbar
    residual: float

    @property
    def n_unstable(self) -> int:
        return int(np.sum(self.eigenvalues.real > 0))


def jacobian_fd(drift, x, step: float) -> np.ndarray:
    """Central differences, ``J[j, i] = d drift_j / d x_i``."""
    x = np.asarray(x, dtype=float)
    N = len(x)
    J = np.empty((N, N))
    for i in range(N):
        e = np.zeros(N)
        e[i] = step
        J[:, i] = (np.asarray(drift(x + e)) - np.asarray(drift(x - e))) / (2 * step)
    return J


def linearize(drift, xi, step: float, hyper_tol: float = HYPER_TOL) -> FixedPoint:
    xi = np.asarray(xi, dtype=float)
    B = jacobian_fd(drift, xi, step).T
    ev = np.linalg.eigvals(-B)
    hyper = bool(np.min(np.abs(ev.real)) >= hyper_tol)
    sigma = float(np.sum(ev.real[ev.real < 0]))
    if np.all(ev.real < 0):
        kind = "sink"
    elif np.all(ev.real > 0):
        kind = "source"
    else:
        kind = "saddle"
    return FixedPoint(xi=xi, B=B, eigenvalues=ev, hyperbolic=hyper, sigma=sigma, kind=kind,
                      residual=float(np.linalg.norm(drift(xi))))


def _newton(drift, x0, lo, hi, step, tol, max_iter=60):
    x = x0.copy()
    f = np.asarray(drift(x), dtype=float)
    nf = np.linalg.norm(f)
    for _ in range(max_iter):
        if nf <= tol:
            return x
        J = jacobian_fd(drift, x, step)
        if np.linalg.cond(J) > 1e12:
            return None
        dx = np.linalg.solve(J, -f)
        t = 1.0
        while t > 1e-6:
            xn = x + t * dx
            if np.all(xn > lo - 0.5 * (hi - lo)) and np.all(xn < hi + 0.5 * (hi - lo)):
                fn = np.asarray(drift(xn), dtype=float)
                if np.linalg.norm(fn) < nf:
                    break
            t *= 0.5
        else:
            return None
        x, f, nf = xn, fn, np.linalg.norm(fn)
    return x if nf <= tol else None


def find_fixed_points(drift, box, seeds_per_axis: int = 9, newton_tol: float = NEWTON_TOL,
                      hyper_tol: float = HYPER_TOL) -> list[FixedPoint]:
    """Zeros of ``drift`` in the open box by damped Newton from a seed lattice.

    Roots are deduplicated within ``1e-5`` times the box diameter and sorted
    lexicographically.
    """
    b = _bounds(box)
    lo, hi = b[:, 0], b[:, 1]
    diam = float(np.linalg.norm(hi - lo))
    step = 1e-4 * diam
    axes = [np.linspace(l, h, seeds_per_axis + 2)[1:-1] for l, h in zip(lo, hi)]
    roots = []
    for seed in itertools.product(*axes):
        r = _newton(drift, np.array(seed, dtype=float), lo, hi, step, newton_tol)
        if r is None or not (np.all(r > lo) and np.all(r < hi)):
            continue
        if any(np.linalg.norm(r - q) <= 1e-5 * diam for q in roots):
            continue
        roots.append(r)
    roots.sort(key=lambda r: tuple(r))
    return [linearize(drift, r, step, hyper_tol) for r in roots]


class SigmaBar(NamedTuple):
    value: float
    maximizers: list
    unique: bool


def sigma_bar(points, tie_tol: float = TIE_TOL) -> SigmaBar:
    """Largest ``sigma`` over hyperbolic fixed points, with all maximizers."""
    if not points:
        raise ValueError("no fixed points")
    for p in points:
        if not p.hyperbolic:
            raise NonHyperbolicPointError(f"fixed point {p.xi.tolist()} is not hyperbolic")
    best = max(p.sigma for p in points)
    maxi = [p for p in points if p.sigma >= best - tie_tol]
    return SigmaBar(best, maxi, len(maxi) == 1)


@dataclass
class StructureReport:
    verdict: str                      # pass / fail / inconclusive
    backward: dict = field(default_factory=dict)
    connections: list = field(default_factory=list)
    has_cycle: bool = False
    evidence: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"structure verdict: {self.verdict}",
                 "backward orbits: " + ", ".join(f"{k}={v}" for k, v in sorted(self.backward.items())),
                 "connections: " + (", ".join(f"{i}->{j}" for i, j in self.connections) or "none"),
                 f"directed cycle: {'yes' if self.has_cycle else 'no'}"]
        lines += [f"note: {e}" for e in self.evidence]
        return "\n".join(lines)


def _tabulate(drift, b, n):
    axes = [np.linspace(l, h, n) for l, h in b]
    pts = list(itertools.product(*axes))
    vals = np.array([drift(np.array(p)) for p in pts]).reshape(tuple(len(a) for a in axes) + (len(b),))
    interp = RegularGridInterpolator(axes, vals, method="cubic" if n >= 4 else "linear")
    return lambda x: interp(np.asarray(x, dtype=float)[None, :])[0]


def _has_cycle(n, edges):
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
    color = [0] * n

    def dfs(u):
        color[u] = 1
        for v in adj[u]:
            if color[v] == 1 or (color[v] == 0 and dfs(v)):
                return True
        color[u] = 2
        return False

    return any(color[u] == 0 and dfs(u) for u in range(n))


def verify_structure(drift, points, box, n_orbit_seeds: int = 9, horizon: float = 200.0,
                     conv_tol: float = 1e-3, tabulate: int | None = None) -> StructureReport:
    """Heuristic check of the structural hypothesis on the effective flow.

    Backward orbits from a seed lattice must exit the box or converge to a
    fixed point, and the heteroclinic relation between fixed points, built
    from forward orbits leaving along unstable directions, must be acyclic.
    If ``tabulate`` is given, ``drift`` is first sampled on a lattice with
    that many nodes per axis and replaced by a cubic interpolant.
    """
    b = _bounds(box)
    lo, hi = b[:, 0], b[:, 1]
    diam = float(np.linalg.norm(hi - lo))
    rep = StructureReport(verdict="pass")
    if not points:
        rep.verdict = "inconclusive"
        rep.evidence.append("no fixed points supplied")
        return rep
    if any(not p.hyperbolic for p in points):
        rep.verdict = "inconclusive"
        rep.evidence.append("non-hyperbolic fixed point present")
    f = _tabulate(drift, b, tabulate) if tabulate else drift
    xis = np.array([p.xi for p in points])

    def run(x0, sign):
        def rhs(t, x):
            if np.any(x <= lo) or np.any(x >= hi):
                return np.zeros_like(x)
            return sign * np.asarray(f(x), dtype=float)

        def leave(t, x):
            return min(np.min(x - lo), np.min(hi - x))
        leave.terminal = True
        leave.direction = -1
        sol = solve_ivp(rhs, (0.0, horizon), x0, events=leave, rtol=1e-8, atol=1e-10, method="RK45")
        if sol.status == 1:
            return "exit", None
        end = sol.y[:, -1]
        d = np.linalg.norm(xis - end, axis=1)
        k = int(np.argmin(d))
        return ("converge", k) if d[k] <= conv_tol else ("undetermined", None)

    counts = {"exit": 0, "converge": 0, "undetermined": 0}
    axes = [np.linspace(l, h, n_orbit_seeds + 2)[1:-1] for l, h in zip(lo, hi)]
    for seed in itertools.product(*axes):
        status, _ = run(np.array(seed, dtype=float), +1.0)
        counts[status] += 1
    rep.backward = counts
    if counts["undetermined"]:
        rep.verdict = "inconclusive"
        rep.evidence.append(f"{counts['undetermined']} backward orbits neither exit nor converge")

    r = 1e-3 * diam
    edges = set()
    for i, p in enumerate(points):
        w, V = np.linalg.eig(-p.B.T)
        dirs = []
        for lam, v in zip(w, V.T):
            if lam.real > 0:
                for part in (v.real, v.imag):
                    if np.linalg.norm(part) > 1e-12:
                        dirs.append(part / np.linalg.norm(part))
        for d in dirs:
            for s in (+1.0, -1.0):
                status, k = run(p.xi + s * r * d, -1.0)
                if status == "converge":
                    edges.add((i, k))
                elif status == "undetermined":
                    rep.evidence.append(f"forward orbit from point {i} undetermined")
                    if rep.verdict == "pass":
                        rep.verdict = "inconclusive"
    rep.connections = sorted(edges)
    rep.has_cycle = _has_cycle(len(points), edges)
    if rep.has_cycle:
        rep.verdict = "fail"
        rep.evidence.append("directed cycle among fixed points")
    return rep
