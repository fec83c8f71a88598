"""Run report container and deterministic file emission."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RunReport", "emit_outputs", "REPORT_HEADER", "LAMBDA_COLUMNS"]

REPORT_HEADER = "ghz-report v1"
LAMBDA_COLUMNS = ("eps", "lambda", "lambda_over_eps", "sigma_bar", "W_sup_err")


def fmt(v) -> str:
    """Fixed float formatting so that reruns are byte-identical."""
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not np.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    s = f"{v:.12g}"
    return "0" if s == "-0" else s


def _vec(x) -> str:
    return "(" + ", ".join(fmt(v) for v in np.atleast_1d(x)) + ")"


def _mat(M, indent="  ") -> list:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return [indent + "  ".join(f"{fmt(v):>16}" for v in row) for row in M]


@dataclass
class RunReport:
    """Everything measured in a run; fields stay ``None`` when a stage was skipped."""
    config: object = None
    coefficients: dict = field(default_factory=dict)
    fixed_points: list = field(default_factory=list)
    sigma_bar: float | None = None
    maximizers: list = field(default_factory=list)
    unique_maximizer: bool | None = None
    structure: object = None
    Q: np.ndarray | None = None
    gamma: np.ndarray | None = None
    ou_sigma: float | None = None
    lambda_H: float | None = None
    aubry_confirmed: list = field(default_factory=list)
    aubry_cycles: np.ndarray | None = None
    aubry_tol: float | None = None
    S: np.ndarray | None = None
    uniqueness: bool | None = None
    W: object = None
    distance: object = None
    eps_records: list = field(default_factory=list)
    blowup: dict | None = None
    warnings: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def xi_bar(self):
        return self.maximizers[0] if self.unique_maximizer else None

    def to_text(self) -> str:
        out = [REPORT_HEADER]
        cfg = self.config
        if cfg is not None:
            out.append(f"preset: {cfg.preset or '-'}")
            out.append(f"dim: {cfg.dim}  alpha: {fmt(cfg.alpha)}")
        if self.coefficients:
            c = self.coefficients
            out.append(f"ellipticity m: {fmt(c.get('m'))}  c_zero: {fmt(c.get('c_zero'))}  "
                       f"y_free: {fmt(c.get('y_free'))}")

        out += ["", "[fixed points]", f"{'#':>3}  {'xi':<32} {'kind':<8} {'sigma':>16} {'residual':>12}"]
        for i, p in enumerate(self.fixed_points):
            out.append(f"{i:>3}  {_vec(p.xi):<32} {p.kind:<8} {fmt(p.sigma):>16} {fmt(p.residual):>12}")
        out.append(f"sigma_bar: {fmt(self.sigma_bar)}")
        out.append("maximizers: " + (", ".join(_vec(x) for x in self.maximizers) or "none"))
        out.append(f"unique maximizer: {fmt(self.unique_maximizer)}")

        out += ["", "[structure]"]
        out.append(self.structure.to_text() if self.structure is not None else "not run")

        out += ["", "[ou]"]
        if self.Q is not None:
            out.append("Q:")
            out += _mat(self.Q)
            out.append("Gamma:")
            out += _mat(self.gamma)
            out.append(f"-2 tr(Q Gamma): {fmt(self.ou_sigma)}")
        else:
            out.append("not run")

        out += ["", "[weak-kam]"]
        out.append(f"lambda_H: {fmt(self.lambda_H)}")
        if self.S is not None:
            out.append(f"aubry tolerance: {fmt(self.aubry_tol)}")
            out.append("aubry confirmed: " + ", ".join(fmt(v) for v in self.aubry_confirmed))
            out.append("cheapest cycle cost: " + ", ".join(fmt(v) for v in self.aubry_cycles))
            out.append("S matrix (fixed point order):")
            out += _mat(self.S)
            out.append(f"uniqueness: {fmt(self.uniqueness)}")

        out += ["", "[eps sweep]",
                f"{'eps':>10} {'lambda':>20} {'lambda/eps':>18} {'lambda_raw':>20} {'residual':>12} "
                f"{'iters':>6} {'W_sup_err':>14}"]
        for r in self.eps_records:
            out.append(f"{fmt(r['eps']):>10} {fmt(r['lambda']):>20} {fmt(r['lambda_over_eps']):>18} "
                       f"{fmt(r['lambda_raw']):>20} {fmt(r['residual']):>12} {fmt(r['iterations']):>6} "
                       f"{fmt(r['W_sup_err']):>14}")

        out += ["", "[blowup]"]
        if self.blowup:
            b = self.blowup
            out.append(f"eps: {fmt(b['eps'])}  z_radius: {fmt(b['z_radius'])}  xi: {_vec(b['xi'])}")
            out.append(f"profile sup error: {fmt(b['profile_error'])}")
            out.append(f"envelope mu: {fmt(b['envelope_mu'])}  nu: {fmt(b['envelope_nu'])}  "
                       f"max: {fmt(b['envelope_max'])}  bounded: {fmt(b['envelope_ok'])}")
        else:
            out.append("not run")

        out += ["", "[checks]"]
        out += [f"{name}: value={fmt(v)} ok={fmt(ok)}" for name, v, ok in self.checks] or ["none"]
        out += ["", "[warnings]"]
        out += list(self.warnings) or ["none"]
        return "\n".join(out) + "\n"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _field_rows(gf):
    if gf is None:
        return []
    X = np.moveaxis(gf.grid.coords(), 0, -1).reshape(-1, gf.grid.dim)
    return [tuple(x) + (v,) for x, v in zip(X, gf.values.ravel())]


def emit_outputs(report: RunReport, directory) -> list:
    """Write ``lambda.csv``, ``distance.csv``, ``W.csv``, ``report.txt`` and ``config.ini``.

    Returns the written paths. ``OSError`` propagates with the offending path.
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    dim = report.config.dim if report.config is not None else 1
    xs = [f"x{k + 1}" for k in range(dim)]
    paths = []

    p = os.path.join(directory, "lambda.csv")
    _write_rows(p, LAMBDA_COLUMNS,
                [tuple(r.get(k, report.sigma_bar if k == "sigma_bar" else np.nan) for k in LAMBDA_COLUMNS)
                 for r in report.eps_records])
    paths.append(p)

    dist = report.distance.values if report.distance is not None else None
    p = os.path.join(directory, "distance.csv")
    _write_rows(p, xs + ["d"], _field_rows(dist))
    paths.append(p)

    p = os.path.join(directory, "W.csv")
    _write_rows(p, xs + ["W"], _field_rows(report.W))
    paths.append(p)

    p = os.path.join(directory, "report.txt")
    with open(p, "w") as fh:
        fh.write(report.to_text())
    paths.append(p)

    if report.config is not None:
        p = os.path.join(directory, "config.ini")
        with open(p, "w") as fh:
            fh.write(report.config.to_ini())
        paths.append(p)
    return paths
