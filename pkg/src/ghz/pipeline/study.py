"""End-to-end convergence study: effective side, then one eigen-solve per eps."""
from __future__ import annotations

import warnings
from contextlib import contextmanager

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..coeff_dsl import validate_coefficient_set
from ..discretization import BoxGrid, assemble_dirichlet
from ..dynamics import find_fixed_points, sigma_bar, verify_structure
from ..effective import DriftField, HamiltonianTable
from ..matrix_eq import bernoulli_max, spectral_projectors
from ..spectral import blowup_rescale, log_transform, principal_eigenpair
from ..weak_kam import (
    LagrangianEvaluator, additive_eigenvalue, aubry_set, build_path_graph,
    quadratic_lagrangian, selected_solution, uniqueness_check,
)
from .config import RunConfig
from .report import RunReport

__all__ = ["StageError", "Study", "run_convergence_study", "run_blowup_check"]

LEGENDRE_GROWTH = 2


class StageError(RuntimeError):
    """A module error raised inside a named pipeline stage."""

    def __init__(self, stage: str, error: BaseException):
        self.stage = stage
        self.error = error
        super().__init__(f"stage '{stage}' failed: {type(error).__name__}: {error}")


@contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


class Study:
    """Lazily evaluated stages of one run; each stage is computed once."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.report = RunReport(config=config)
        self._cache = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # -- effective side ---------------------------------------------------
    @property
    def coeffs(self):
        def build():
            cfg = self.config
            with _stage("validate"):
                cs = validate_coefficient_set([list(r) for r in cfg.a], list(cfg.b), cfg.c, cfg.dim,
                                              box=cfg.bounds, seed=cfg.seed)
            self.report.coefficients = {"m": cs.m, "c_zero": cs.c_zero, "y_free": cs.y_free,
                                        "symmetric": cs.symmetric}
            return cs
        return self._once("coeffs", build)

    @property
    def table(self) -> HamiltonianTable:
        cfg = self.config
        return self._once("table", lambda: HamiltonianTable(
            self.coeffs, cfg.alpha, cfg.torus_n, cfg.viscosity_schedule, cfg.scheme))

    @property
    def drift(self):
        def build():
            cfg = self.config
            if cfg.alpha == 1:
                return DriftField(self.coeffs, 1.0, cfg.torus_n, cfg.scheme)
            if cfg.alpha > 1:
                return DriftField(self.coeffs, 0.0, cfg.torus_n, cfg.scheme)
            table = self.table
            return lambda x: -table.gradient_p(np.zeros(cfg.dim), x)
        return self._once("drift", build)

    @property
    def fixed_points(self):
        def build():
            cfg = self.config
            with _stage("fixed-points"):
                pts = find_fixed_points(self.drift, cfg.bounds, cfg.seeds_per_axis,
                                        cfg.newton_tol, cfg.hyper_tol)
            self.report.fixed_points = pts
            return pts
        return self._once("fixed_points", build)

    @property
    def selection(self):
        def build():
            with _stage("sigma-bar"):
                if not self.fixed_points:
                    raise ValueError("no fixed point of the effective drift in the box")
                sb = sigma_bar(self.fixed_points)
            self.report.sigma_bar = sb.value
            self.report.maximizers = [p.xi for p in sb.maximizers]
            self.report.unique_maximizer = sb.unique
            return sb
        return self._once("selection", build)

    def structure(self):
        def build():
            cfg = self.config
            tab = None if self.coeffs.y_free else (33 if cfg.dim == 1 else 9)
            with _stage("structure"):
                rep = verify_structure(self.drift, self.fixed_points, cfg.bounds, cfg.orbit_seeds,
                                       tabulate=tab)
            self.report.structure = rep
            return rep
        return self._once("structure", build)

    def ou_data(self):
        """``(B, Q, BernoulliSolution)`` at the selected point."""
        def build():
            sb = self.selection
            if not sb.unique:
                raise StageError("ou", ValueError("sigma maximizer is not unique"))
            fp = sb.maximizers[0]
            with _stage("ou"):
                Q = self.table.hessian_Q(fp.xi)
                sol = bernoulli_max(fp.B, Q, self.config.hyper_tol)
            r = self.report
            r.Q, r.gamma, r.ou_sigma = Q, sol.gamma, sol.sigma
            r.checks.append(("sigma_bar == -2 tr(Q Gamma)", abs(sol.sigma - sb.value),
                             abs(sol.sigma - sb.value) <= 1e-8))
            return fp.B, Q, sol
        return self._once("ou", build)

    def weak_kam(self):
        def build():
            cfg = self.config
            with _stage("weak-kam"):
                grid = BoxGrid.uniform(cfg.bounds, cfg.wk_n)
                if self.coeffs.y_free:
                    lag = LagrangianEvaluator(None, cfg.dim, cfg.p_radius, v_max=cfg.v_max,
                                              closed_form=quadratic_lagrangian(self.coeffs))
                else:
                    radius = cfg.p_radius * 2 ** LEGENDRE_GROWTH
                    hb = self.table.surrogate(cfg.bounds, radius, cfg.surrogate_nx, cfg.surrogate_np)
                    lag = LagrangianEvaluator(hb, cfg.dim, cfg.p_radius, v_max=cfg.v_max,
                                              max_growth=LEGENDRE_GROWTH)
                graph = build_path_graph(grid, lag)
                lam = additive_eigenvalue(graph)
                tol = cfg.aubry_tol_factor * float(np.max(grid.h)) ** 2
                confirmed, S, cyc, fields = aubry_set(graph, lam, self.fixed_points, tol)
                aubry = [p for p, ok in zip(self.fixed_points, confirmed) if ok]
                S_a = S[np.ix_(confirmed, confirmed)] if any(confirmed) else np.zeros((0, 0))
                unique = uniqueness_check(S_a, tol) if len(S_a) else True
            r = self.report
            r.lambda_H, r.aubry_confirmed, r.aubry_cycles, r.S = lam, confirmed, cyc, S
            r.uniqueness, r.aubry_tol = unique, tol
            sb = self.selection
            if sb.unique:
                with _stage("selected-solution"):
                    W, info = selected_solution(graph, lam, sb.maximizers, aubry, tol)
                r.W, r.distance = W, info["field"]
            else:
                r.warnings.append("sigma maximizer not unique: selected solution undefined")
            return graph, lam
        return self._once("weak_kam", build)

    # -- eps side -----------------------------------------------------------
    def eigenpair(self, eps: float, n: int | None = None):
        cfg = self.config
        n = n or cfg.n

        def build():
            with _stage(f"eigen eps={eps:g} n={n}"):
                grid = BoxGrid.uniform(cfg.bounds, n)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    op = assemble_dirichlet(self.coeffs, grid, eps, cfg.alpha, cfg.scheme)
                for w in op.warnings:
                    if w not in self.report.warnings:
                        self.report.warnings.append(f"eps={eps:g} n={n}: {w}")
                return principal_eigenpair(op, tol=cfg.solver_tol)
        return self._once(("eig", eps, n), build)

    def eigen_record(self, eps: float) -> dict:
        cfg = self.config
        pair = self.eigenpair(eps)
        lam_raw = pair.eigenvalue
        lam = lam_raw
        if cfg.richardson and cfg.n % 2 == 0 and cfg.n // 2 >= 8:
            coarse = self.eigenpair(eps, cfg.n // 2).eigenvalue
            lam = (4.0 * lam_raw - coarse) / 3.0
        rec = {"eps": eps, "lambda": lam, "lambda_over_eps": lam / eps, "lambda_raw": lam_raw,
               "residual": pair.residual, "iterations": pair.iterations, "W_sup_err": np.nan}
        return rec

    def interior_mask(self, grid: BoxGrid):
        margin = self.config.margin * grid.diameter
        X = grid.coords()
        ok = np.ones(grid.shape, dtype=bool)
        for k, (lo, hi) in enumerate(grid.bounds):
            ok &= (X[k] - lo >= margin - 1e-12) & (hi - X[k] >= margin - 1e-12)
        return ok

    def w_error(self, eps: float) -> float:
        r = self.report
        if r.W is None:
            return float("nan")
        pair = self.eigenpair(eps)
        We = log_transform(pair, eps)
        grid = We.grid
        mask = self.interior_mask(grid)
        interp = RegularGridInterpolator(r.W.grid.axes(), r.W.values, method="linear")
        pts = np.moveaxis(grid.coords(), 0, -1)[mask]
        return float(np.max(np.abs(We.values[mask] - interp(pts))))


def run_convergence_study(config: RunConfig, blowup: bool = True) -> RunReport:
    """Effective objects, the selected solution and the eps-sweep, in that order."""
    st = Study(config)
    rep = st.report
    _ = st.coeffs
    _ = st.fixed_points
    sb = st.selection
    st.structure()
    if sb.unique and config.alpha >= 1:
        st.ou_data()
    st.weak_kam()
    for eps in config.eps:
        rec = st.eigen_record(eps)
        rec["W_sup_err"] = st.w_error(eps)
        rec["sigma_bar"] = rep.sigma_bar
        if st.coeffs.c_zero:
            if not rec["lambda_raw"] < 0:
                rep.checks.append((f"lambda<0 at eps={eps:g}", rec["lambda_raw"], False))
            soft = rec["lambda_over_eps"] >= rep.sigma_bar - 0.5
            rec["soft_lower_bound_ok"] = soft
            if not soft:
                rep.warnings.append(
                    f"eps={eps:g}: lambda/eps={rec['lambda_over_eps']:.6g} below sigma_bar - 0.5")
        rep.eps_records.append(rec)
    if blowup and sb.unique and config.alpha >= 1:
        rep.blowup = run_blowup_check(config, config.blowup_eps or config.eps[-1], study=st)
    return rep


def run_blowup_check(config: RunConfig, eps: float, z_radius: float | None = None,
                     study: Study | None = None) -> dict:
    """Compare ``u(xi + sqrt(eps) z) / u(xi)`` with ``exp(-Gamma z.z)``."""
    st = study or Study(config)
    Z = config.z_radius if z_radius is None else z_radius
    B, Q, sol = st.ou_data()
    xi = st.selection.maximizers[0].xi
    pair = st.eigenpair(eps)
    with _stage("blowup"):
        w = blowup_rescale(pair, xi, eps, Z, config.z_n)
    z = np.moveaxis(w.grid.coords(), 0, -1)
    G = sol.gamma
    ref = np.exp(-np.einsum("...i,ij,...j->...", z, G, z))
    ball = np.linalg.norm(z, axis=-1) <= Z + 1e-12
    err = float(np.max(np.abs(w.values - ref)[ball]))
    pp = spectral_projectors(B, config.hyper_tol)
    Vs = pp.basis_stable
    mu = 0.0
    if Vs.shape[1]:
        mu = 0.5 * float(np.linalg.eigvalsh(Vs.T @ G @ Vs).min())
    zs = np.einsum("ij,...i->...j", pp.stable, z)    # Pi_s^T z
    zu = np.einsum("ij,...i->...j", pp.unstable, z)  # Pi_u^T z
    env = w.values * np.exp(mu * np.sum(zs**2, axis=-1) - 1.0 * np.sum(zu**2, axis=-1))
    env_max = float(np.max(env[ball]))
    out = {"eps": eps, "z_radius": Z, "xi": np.asarray(xi), "profile_error": err,
           "envelope_mu": mu, "envelope_nu": 1.0, "envelope_max": env_max,
           "envelope_ok": env_max <= 1.1, "gamma": G}
    st.report.blowup = out
    return out
