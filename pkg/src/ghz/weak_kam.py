"""Action-minimisation on a path graph for the effective Hamilton-Jacobi problem.

The effective Lagrangian is the convex conjugate of ``hbar`` in ``p``.  Curves
in the closed box are discretised as walks on a grid graph whose edges join
nodes a few cells apart; each traversal of an edge is a straight segment run
at constant speed over a time chosen from a geometric grid, and its action is
``t * Lbar(dx / t, midpoint)``.  On this graph

* the additive eigenvalue is minus the minimum cycle ratio
  (action per unit time), found by bisection with negative-cycle detection;
* the distance ``d(x, y)`` is the shortest path from ``y`` to ``x`` with
  edge weights ``min_t t (Lbar + lambda)``.
"""
from __future__ import annotations

import csv
import heapq
import itertools
from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .discretization import BoxGrid, GridFunction

__all__ = [
    "WeakKamError", "NegativeCycleError", "SelectionError", "CompatibilityError",
    "LagrangianEvaluator", "quadratic_lagrangian", "PathGraph", "DistanceField",
    "legendre_transform", "build_path_graph", "min_ratio_cycle", "additive_eigenvalue",
    "distance_function", "aubry_set", "solve_state_constraint", "uniqueness_check",
    "selected_solution", "default_aubry_tol",
]

BISECTION_STEPS = 60


class WeakKamError(ArithmeticError):
    pass


class NegativeCycleError(WeakKamError):
    pass


class SelectionError(WeakKamError):
    pass


class CompatibilityError(WeakKamError):
    pass


# --------------------------------------------------------------------------
# Legendre transform
# --------------------------------------------------------------------------

def _lattice(n, dim):
    ax = np.linspace(-1.0, 1.0, n)
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


class LagrangianEvaluator:
    """``Lbar(v, x) = max_p (v.p - hbar(p, x))`` by lattice search and Newton polish.

    ``hbar(P, X)`` must accept arrays of shape ``(M, N)`` and return ``(M,)``;
    an optional ``hbar.many_p(P[M, K, N], X[M, N])`` is used for batches.
    Damped Newton from ``p = 0`` is tried first.  Rows where it stalls fall
    back to a lattice search on ``[-R_p, R_p]^N`` with three refinements by a
    factor four and a Newton polish; if the best node lies on the lattice
    boundary ``R_p`` is doubled (at most ``max_growth`` times).
    """

    def __init__(self, hbar, dim: int, R_p: float = 4.0, n_grid: int | None = None,
                 refinements: int = 3, v_max: float = 16.0, max_growth: int = 3,
                 closed_form=None, chunk: int = 4096):
        self.hbar = hbar
        self.dim = int(dim)
        self.R_p = float(R_p)
        self.n_grid = n_grid or {1: 41, 2: 15}.get(self.dim, 9)
        if self.n_grid % 2 == 0:
            self.n_grid += 1
        self.refinements = refinements
        self.v_max = float(v_max)
        self.max_growth = max_growth
        self.closed_form = closed_form
        self.chunk = chunk

    def __call__(self, v, x):
        return self.batch(np.atleast_2d(np.asarray(v, dtype=float)),
                          np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def argmax(self, v, x):
        """Maximizing momentum (not available with a closed form)."""
        V = np.atleast_2d(np.asarray(v, dtype=float))
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return self._solve(V, X)[1][0]

    def batch(self, V, X) -> np.ndarray:
        V = np.asarray(V, dtype=float).reshape(-1, self.dim)
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if np.any(np.linalg.norm(V, axis=1) > self.v_max * (1 + 1e-12)):
            raise ValueError(f"velocity exceeds v_max = {self.v_max}")
        if self.closed_form is not None:
            return self.closed_form(V, X)
        out = np.empty(len(V))
        for s in range(0, len(V), self.chunk):
            out[s:s + self.chunk] = self._solve(V[s:s + self.chunk], X[s:s + self.chunk])[0]
        return out

    def _objective(self, P, V, X):
        return np.einsum("mi,mi->m", V, P) - self.hbar(P, X)

    def _objective_rows(self, P, V, X):
        """Objective at ``P[m, k]`` for row data ``V[m], X[m]``; shape ``(M, K)``."""
        many = getattr(self.hbar, "many_p", None)
        if many is not None:
            return np.einsum("mi,mki->mk", V, P) - many(P, X)
        M, K, N = P.shape
        return self._objective(P.reshape(-1, N), np.repeat(V, K, axis=0),
                               np.repeat(X, K, axis=0)).reshape(M, K)

    def _search(self, V, X, R):
        M, N = V.shape
        base = _lattice(self.n_grid, N)
        K = len(base)
        P = (R * base)[None, :, :].repeat(M, axis=0)
        f = self._objective_rows(P, V, X)
        k = np.argmax(f, axis=1)
        best = P[np.arange(M), k]
        boundary = np.any(np.abs(np.abs(base[k]) - 1.0) < 1e-12, axis=1)
        step = 2.0 * R / (self.n_grid - 1)
        local = _lattice(9, N)
        L = len(local)
        for _ in range(self.refinements):
            step /= 4.0
            P = np.clip(best[:, None, :] + 4.0 * step * local[None, :, :], -R, R)
            f = self._objective_rows(P, V, X)
            best = P[np.arange(M), np.argmax(f, axis=1)]
        return best, boundary

    def _h_rows(self, P, X):
        many = getattr(self.hbar, "many_p", None)
        if many is not None:
            return many(P, X)
        M, K, N = P.shape
        return self.hbar(P.reshape(-1, N), np.repeat(X, K, axis=0)).reshape(M, K)

    def _derivatives(self, P, X):
        """Central-difference value, gradient and Hessian of ``hbar`` in ``p``."""
        M, N = P.shape
        d = 1e-4 * max(1.0, self.R_p)
        eye = np.eye(N)
        offs = [np.zeros(N)] + [s * d * e for e in eye for s in (1, -1)]
        pairs = list(itertools.combinations(range(N), 2))
        for i, j in pairs:
            offs += [d * (eye[i] + eye[j]), d * (eye[i] - eye[j]),
                     -d * (eye[i] - eye[j]), -d * (eye[i] + eye[j])]
        H = self._h_rows(P[:, None, :] + np.array(offs)[None], X)
        f0 = H[:, 0]
        fp, fm = H[:, 1:2 * N + 1:2], H[:, 2:2 * N + 1:2]
        g = (fp - fm) / (2 * d)
        Hs = np.zeros((M, N, N))
        Hs[:, np.arange(N), np.arange(N)] = (fp - 2 * f0[:, None] + fm) / d**2
        for k, (i, j) in enumerate(pairs):
            a, b, c, e = H[:, 2 * N + 1 + 4 * k: 2 * N + 5 + 4 * k].T
            Hs[:, i, j] = Hs[:, j, i] = (a - b - c + e) / (4 * d * d)
        return f0, g, Hs

    def _newton(self, P, V, X, steps=2, gtol=None):
        """Damped Newton on the concave objective; returns ``(P, converged)``."""
        P = P.copy()
        R_max = self.R_p * 2.0 ** self.max_growth
        done = np.zeros(len(P), dtype=bool)
        failed = np.zeros(len(P), dtype=bool)
        for _ in range(steps):
            act = np.nonzero(~done & ~failed)[0]
            if act.size == 0:
                break
            f0, g, Hs = self._derivatives(P[act], X[act])
            r = V[act] - g
            if gtol is not None:
                conv = np.linalg.norm(r, axis=1) <= gtol * (1.0 + np.linalg.norm(V[act], axis=1))
                done[act[conv]] = True
            ok = np.all(np.linalg.eigvalsh(Hs) > 0, axis=1)
            failed[act[~ok]] = gtol is not None
            move = ok if gtol is None else ok & ~conv
            act, f0, r, Hs = act[move], f0[move], r[move], Hs[move]
            if act.size == 0:
                continue
            step = np.linalg.solve(Hs, r[..., None])[..., 0]
            base = np.einsum("mi,mi->m", V[act], P[act]) - f0
            t = np.ones(len(act))
            accepted = np.zeros(len(act), dtype=bool)
            for _ in range(30):
                todo = ~accepted
                if not np.any(todo):
                    break
                cand = P[act[todo]] + t[todo, None] * step[todo]
                inside = np.all(np.abs(cand) <= R_max, axis=1)
                val = np.full(len(cand), -np.inf)
                if np.any(inside):
                    val[inside] = self._objective(cand[inside], V[act[todo]][inside], X[act[todo]][inside])
                good = val >= base[todo] - 1e-14 * (1.0 + np.abs(base[todo]))
                idx = np.nonzero(todo)[0]
                P[act[idx[good]]] = cand[good]
                accepted[idx[good]] = True
                t[idx[~good]] *= 0.5
            if gtol is not None:
                failed[act[~accepted]] = True
        return P, done

    def _lattice_solve(self, V, X):
        M = len(V)
        R = np.full(M, self.R_p)
        P = np.empty_like(V)
        todo = np.arange(M)
        for growth in range(self.max_growth + 1):
            sub = {}
            for r in np.unique(R[todo]):
                idx = todo[R[todo] == r]
                sub[r] = (idx,) + self._search(V[idx], X[idx], r)
            still = []
            for r, (idx, best, boundary) in sub.items():
                P[idx] = best
                still.extend(idx[boundary])
            todo = np.array(sorted(still), dtype=int)
            if todo.size == 0:
                break
            R[todo] *= 2.0
        if todo.size:
            raise WeakKamError(
                f"Legendre maximiser on the search boundary after {self.max_growth} doublings "
                f"(R_p = {R[todo].max():g}); coercivity violated numerically")
        P, _ = self._newton(P, V, X)
        return P

    def _solve(self, V, X):
        P, conv = self._newton(np.zeros_like(V), V, X, steps=40, gtol=1e-9)
        if not np.all(conv):
            bad = np.nonzero(~conv)[0]
            P[bad] = self._lattice_solve(V[bad], X[bad])
        return self._objective(P, V, X), P


def quadratic_lagrangian(coeffs):
    """Closed form ``1/4 (v+b).a^{-1}(v+b) - c`` for y-free coefficient sets."""
    if not coeffs.y_free:
        raise ValueError("closed-form Lagrangian needs y-free coefficients")
    N = coeffs.dim

    def lag(V, X):
        xs = [X[:, i] for i in range(N)]
        ys = [np.zeros(len(X)) for _ in range(N)]
        a = np.broadcast_to(coeffs.a_values(xs, ys), (N, N, len(X)))
        b = np.broadcast_to(coeffs.b_values(xs, ys), (N, len(X)))
        c = np.broadcast_to(coeffs.c_values(xs, ys), (len(X),))
        w = V + b.T
        sol = np.linalg.solve(np.moveaxis(a, -1, 0), w[..., None])[..., 0]
        return 0.25 * np.einsum("mi,mi->m", w, sol) - c

    return lag


def legendre_transform(lag: LagrangianEvaluator, x, v) -> float:
    """``Lbar(v, x)`` for one point."""
    return float(lag(v, x))


# --------------------------------------------------------------------------
# Path graph
# --------------------------------------------------------------------------

def _offsets(dim):
    out = []
    for k in itertools.product(range(-2, 3), repeat=dim):
        if not any(k):
            continue
        if dim == 1 or gcd(*[abs(c) for c in k]) == 1:
            out.append(k)
    return np.array(out, dtype=int)


@dataclass
class PathGraph:
    grid: BoxGrid
    src: np.ndarray          # (E,)
    dst: np.ndarray          # (E,)
    dx: np.ndarray           # (E, N)
    t: np.ndarray            # (E, T) traversal times, padded with nan
    L: np.ndarray            # (E, T) Lbar at (dx/t, midpoint), padded with nan
    cost: np.ndarray         # (E,) min_t t Lbar
    tau: np.ndarray          # (E,) argmin time
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.grid.shape))

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def weights(self, lam: float) -> np.ndarray:
        """Edge weights ``min_t t (Lbar + lam)``."""
        return np.nanmin(self.t * (self.L + lam), axis=1)

    def node_index(self, x) -> int:
        return int(np.ravel_multi_index(self.grid.nearest_node(x), self.grid.shape))

    def node_coords(self) -> np.ndarray:
        return self.grid.coords().reshape(self.grid.dim, -1).T


def _t_grid(length, v_max):
    coarse = length * 2.0 ** np.arange(-6, 7)
    return coarse[length / coarse <= v_max * (1 + 1e-12)]


def build_path_graph(grid: BoxGrid, lag: LagrangianEvaluator, refine_points: int = 8) -> PathGraph:
    """Graph on all nodes of the closed box with stencil offsets ``|k|_inf <= 2``.

    Times: ``|dx| 2^j`` for ``j = -6..6`` (speeds above ``v_max`` dropped),
    refined once by ``2^(k/refine_points)`` around the cheapest coarse time.
    """
    shape = grid.shape
    N = grid.dim
    nodes = np.stack(np.unravel_index(np.arange(int(np.prod(shape))), shape), axis=1)
    X = grid.coords().reshape(N, -1).T
    src, dst, offs = [], [], []
    for k in _offsets(N):
        tgt = nodes + k
        ok = np.all((tgt >= 0) & (tgt < np.array(shape)), axis=1)
        src.append(np.nonzero(ok)[0])
        dst.append(np.ravel_multi_index(tuple(tgt[ok].T), shape))
        offs.append(np.repeat(k[None, :], ok.sum(), axis=0))
    if not src:
        raise ValueError("empty stencil")
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    dx = X[dst] - X[src]
    mid = 0.5 * (X[dst] + X[src])
    E = len(src)
    lengths = np.linalg.norm(dx, axis=1)

    # coarse times, grouped by edge length
    def sample(times_per_edge):
        T = max(len(t) for t in times_per_edge) if E else 0
        t = np.full((E, T), np.nan)
        for e, tt in enumerate(times_per_edge):
            t[e, :len(tt)] = tt
        mask = ~np.isnan(t)
        ee, jj = np.nonzero(mask)
        vals = np.full((E, T), np.nan)
        if ee.size:
            vals[ee, jj] = lag.batch(dx[ee] / t[ee, jj][:, None], mid[ee])
        return t, vals

    uniq = {}
    for e in range(E):
        key = round(lengths[e], 12)
        if key not in uniq:
            uniq[key] = _t_grid(lengths[e], lag.v_max)
    t1, L1 = sample([uniq[round(lengths[e], 12)] for e in range(E)]) if E else (np.zeros((0, 0)),) * 2
    if E and np.any(np.all(np.isnan(t1), axis=1)):
        raise ValueError("v_max too small for the edge lengths of this grid")
    if E:
        j = np.nanargmin(t1 * L1, axis=1)
        tstar = t1[np.arange(E), j]
        factors = 2.0 ** (np.arange(-refine_points, refine_points + 1) / refine_points)
        fine = []
        for e in range(E):
            tt = tstar[e] * factors
            tt = tt[(lengths[e] / tt <= lag.v_max * (1 + 1e-12)) & (tt <= 64 * lengths[e] * (1 + 1e-12))
                    & (tt >= lengths[e] / 64 * (1 - 1e-12))]
            fine.append(tt)
        t2, L2 = sample(fine)
        t = np.concatenate([t1, t2], axis=1)
        L = np.concatenate([L1, L2], axis=1)
        tl = t * L
        j = np.nanargmin(tl, axis=1)
        cost = tl[np.arange(E), j]
        tau = t[np.arange(E), j]
    else:
        t = L = np.zeros((0, 0))
        cost = tau = np.zeros(0)
    return PathGraph(grid=grid, src=src, dst=dst, dx=dx, t=t, L=L, cost=cost, tau=tau,
                     meta={"t_min_factor": 1 / 64, "t_max_factor": 64, "v_max": lag.v_max,
                           "offsets": len(_offsets(N))})


# --------------------------------------------------------------------------
# Shortest paths and cycle ratios
# --------------------------------------------------------------------------

def _parent_has_cycle(parent):
    """True if following ``parent`` pointers (-1 = none) enters a cycle."""
    n = len(parent)
    p = np.where(parent < 0, np.arange(n), parent)
    root = parent < 0
    steps = 1
    while steps < n:
        p = p[p]
        steps *= 2
    return bool(np.any(~root[p]))


def _bellman_ford(n, src, dst, w, dist, max_rounds=None, check_every=8, tol=1e-13):
    """Vectorised Bellman-Ford; returns (dist, parent, negative_cycle)."""
    parent = np.full(n, -1)
    rounds = max_rounds if max_rounds is not None else n
    for r in range(rounds + 1):
        cand = dist[src] + w
        best = np.full(n, np.inf)
        np.minimum.at(best, dst, cand)
        improve = best < dist - tol * (1.0 + np.abs(np.where(np.isfinite(dist), dist, 0.0)))
        if not np.any(improve):
            return dist, parent, False
        if r == rounds:
            return dist, parent, True
        # choose one improving edge per node (the first attaining the minimum)
        hit = (cand <= best[dst]) & improve[dst]
        e_idx = np.nonzero(hit)[0]
        nodes_hit, first = np.unique(dst[e_idx], return_index=True)
        parent[nodes_hit] = src[e_idx[first]]
        dist = np.where(improve, best, dist)
        if (r + 1) % check_every == 0 and _parent_has_cycle(parent):
            return dist, parent, True
    return dist, parent, True


def _has_negative_cycle(n, src, dst, w):
    # strict relaxation: anything the distance solver could see is detected here
    return _bellman_ford(n, src, dst, w, np.zeros(n), tol=0.0)[2]


def _dijkstra(n, src, dst, w, source):
    order = np.argsort(src, kind="stable")
    starts = np.searchsorted(src[order], np.arange(n + 1))
    dist = np.full(n, np.inf)
    parent = np.full(n, -1)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in order[starts[u]:starts[u + 1]]:
            v = dst[e]
            nd = d + w[e]
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, parent


def _ratio_bisection(n, src, dst, weight_fn, lo, hi, steps=BISECTION_STEPS):
    """Largest ``lam`` in ``[lo, hi]`` with no negative cycle under ``weight_fn(lam)``."""
    if _has_negative_cycle(n, src, dst, weight_fn(lo)):
        raise WeakKamError("bracket failure: negative cycle at the lower bracket end")
    if not _has_negative_cycle(n, src, dst, weight_fn(hi)):
        raise WeakKamError("bracket failure: no cycle reaches the upper bracket end (acyclic graph?)")
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if _has_negative_cycle(n, src, dst, weight_fn(mid)):
            hi = mid
        else:
            lo = mid
    return lo, hi


def min_ratio_cycle(n_nodes: int, edges, cost, time) -> float:
    """Minimum over directed cycles of ``sum(cost) / sum(time)``.

    ``edges`` is a sequence of ``(u, v)`` pairs; times must be positive.
    """
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    c = np.asarray(cost, dtype=float)
    t = np.asarray(time, dtype=float)
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    r = c / t
    pad = 1e-9 * (1.0 + np.max(np.abs(r)))
    lo, hi = _ratio_bisection(n_nodes, edges[:, 0], edges[:, 1], lambda lam: c - lam * t,
                              r.min() - pad, r.max() + pad)
    return 0.5 * (lo + hi)


def additive_eigenvalue(g: PathGraph) -> float:
    """``lambda = -min cycle ratio`` of the action per unit time."""
    if g.n_edges == 0:
        raise WeakKamError("graph has no edges")
    lo = float(np.nanmin(g.L))
    hi = float(np.nanmax(g.L))
    pad = 1e-9 * (1.0 + max(abs(lo), abs(hi)))
    lo, hi = _ratio_bisection(g.n_nodes, g.src, g.dst, lambda lam: g.weights(-lam), lo - pad, hi + pad)
    g.meta["lambda_star_bracket"] = (lo, hi)
    return -lo


@dataclass
class DistanceField:
    source: int
    source_point: np.ndarray
    lam: float
    values: GridFunction
    parent: np.ndarray

    def at(self, x) -> float:
        g = self.values.grid
        return float(self.values.values[g.nearest_node(x)])

    def path_to(self, node: int) -> list:
        out = [node]
        while out[-1] != self.source:
            p = self.parent[out[-1]]
            if p < 0:
                raise WeakKamError("node not reachable from the source")
            out.append(int(p))
        return out[::-1]

    def to_csv(self, path):
        _write_field_csv(path, self.values, "d")


def _write_field_csv(path, gf: GridFunction, name: str):
    X = gf.grid.coords().reshape(gf.grid.dim, -1).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(gf.grid.dim)] + [name])
        for x, v in zip(X, gf.values.ravel()):
            w.writerow([f"{c:.12g}" for c in x] + [f"{v:.12g}"])


def distance_function(g: PathGraph, lam: float, source, neg_tol: float = 1e-9) -> DistanceField:
    """``d(., y)`` for the node ``y`` nearest to ``source``."""
    s = source if isinstance(source, (int, np.integer)) else g.node_index(source)
    w = g.weights(lam)
    n = g.n_nodes
    if np.all(w >= 0):
        dist, parent = _dijkstra(n, g.src, g.dst, w, s)
    else:
        d0 = np.full(n, np.inf)
        d0[s] = 0.0
        dist, parent, neg = _bellman_ford(n, g.src, g.dst, w, d0)
        if neg:
            raise NegativeCycleError("negative cycle: lambda is below the additive eigenvalue")
        if dist[s] < -neg_tol:
            raise NegativeCycleError("negative cycle through the source")
        dist[s] = 0.0
    vals = GridFunction(g.grid, dist.reshape(g.grid.shape))
    return DistanceField(source=int(s), source_point=g.node_coords()[s], lam=float(lam),
                         values=vals, parent=parent)


def default_aubry_tol(grid: BoxGrid) -> float:
    return 10.0 * float(np.max(grid.h)) ** 2


def _cheapest_cycle_through(g: PathGraph, w, s):
    """Cheapest cycle through node ``s``: min over edges s->v of w + dist(v -> s)."""
    n = g.n_nodes
    if np.all(w >= 0):
        to_s, _ = _dijkstra(n, g.dst, g.src, w, s)
    else:
        d0 = np.full(n, np.inf)
        d0[s] = 0.0
        to_s, _, neg = _bellman_ford(n, g.dst, g.src, w, d0)
        if neg:
            raise NegativeCycleError("negative cycle while computing cycle costs")
    out = g.src == s
    if not np.any(out):
        return np.inf
    return float(np.min(w[out] + to_s[g.dst[out]]))


def aubry_set(g: PathGraph, lam: float, candidates, aubry_tol: float | None = None):
    """Confirm candidate points and compute the symmetrized distance matrix.

    Returns ``(confirmed, S, cycle_costs, fields)`` where ``confirmed`` is a
    boolean list, ``S[i, j] = d(xi_i, xi_j) + d(xi_j, xi_i)`` and ``fields``
    are the distance fields sourced at each candidate.
    """
    tol = default_aubry_tol(g.grid) if aubry_tol is None else aubry_tol
    pts = [np.asarray(getattr(c, "xi", c), dtype=float) for c in candidates]
    nodes = [g.node_index(p) for p in pts]
    w = g.weights(lam)
    fields = [distance_function(g, lam, s) for s in nodes]
    k = len(nodes)
    D = np.array([[fields[j].values.values.ravel()[nodes[i]] for j in range(k)] for i in range(k)])
    S = D + D.T
    np.fill_diagonal(S, 0.0)
    cyc = [_cheapest_cycle_through(g, w, s) for s in nodes]
    confirmed = [bool(c <= tol) for c in cyc]
    return confirmed, S, cyc, fields


def uniqueness_check(S, aubry_tol: float) -> bool:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    off = S[~np.eye(len(S), dtype=bool)]
    return bool(np.all(off <= aubry_tol))


def solve_state_constraint(g: PathGraph, lam: float, aubry_points, values, tol: float = 1e-9,
                           fields=None) -> GridFunction:
    """``W = min_i [d(., xi_i) + g_i]`` after checking ``g_i - g_j <= d(xi_i, xi_j)``."""
    pts = [np.asarray(getattr(c, "xi", c), dtype=float) for c in aubry_points]
    vals = np.asarray(values, dtype=float)
    if len(vals) != len(pts) or not pts:
        raise ValueError("one boundary value per Aubry point is required")
    if fields is None:
        fields = [distance_function(g, lam, p) for p in pts]
    nodes = [f.source for f in fields]
    bad = []
    for i, j in itertools.permutations(range(len(pts)), 2):
        dij = fields[j].values.values.ravel()[nodes[i]]
        if vals[i] - vals[j] > dij + tol:
            bad.append((i, j, vals[i] - vals[j] - dij))
    if bad:
        msg = ", ".join(f"g[{i}]-g[{j}] exceeds d by {e:.3g}" for i, j, e in bad)
        raise CompatibilityError(f"incompatible Aubry data: {msg}")
    W = np.min([f.values.values + v for f, v in zip(fields, vals)], axis=0)
    return GridFunction(g.grid, W)


def selected_solution(g: PathGraph, lam: float, maximizers, aubry_points=(), tol: float | None = None):
    """``W = d(., xi_bar)`` for the unique maximizer, with an ordering check.

    Returns ``(W, report)``; ``report['order_defects']`` lists
    ``|W(xi) - d(xi, xi_bar)|`` at the other Aubry points.
    """
    if len(maximizers) != 1:
        raise SelectionError(
            f"{len(maximizers)} maximizers of sigma: the selected solution is undefined "
            "unless the maximizer is unique")
    xb = np.asarray(getattr(maximizers[0], "xi", maximizers[0]), dtype=float)
    field_ = distance_function(g, lam, xb)
    tol = default_aubry_tol(g.grid) if tol is None else tol
    defects = []
    for p in aubry_points:
        p = np.asarray(getattr(p, "xi", p), dtype=float)
        k = g.node_index(p)
        defects.append(abs(field_.values.values.ravel()[k] - field_.at(p)))
    return field_.values, {"source": field_.source_point, "order_defects": defects,
                           "order_ok": all(d <= tol for d in defects), "field": field_}
