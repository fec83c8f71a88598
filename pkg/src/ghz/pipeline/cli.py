"""Command-line entry point ``ghz``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ..coeff_dsl import ExpressionError
from .config import ConfigError, load_config
from .presets import PRESETS, preset_config
from .report import emit_outputs, fmt
from .study import StageError, Study, run_blowup_check, run_convergence_study

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _resolve(args):
    if args.preset is None and args.config is None:
        raise ConfigError("give --config PATH or --preset NAME")
    base = preset_config(args.preset) if args.preset else None
    cfg = load_config(args.config, base) if args.config else base
    if args.out:
        cfg = cfg.replace(output=args.out)
    return cfg


def _floats(text, dim, name):
    try:
        v = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"--{name} must be a list of numbers") from None
    if len(v) != dim:
        raise ConfigError(f"--{name} needs {dim} components")
    return v


def cmd_validate(st, args):
    cs = st.coeffs
    print(f"ok: dim={cs.dim} m={fmt(cs.m)} c_zero={fmt(cs.c_zero)} y_free={fmt(cs.y_free)}")


def cmd_effective(st, args):
    cfg = st.config
    p = _floats(args.p, cfg.dim, "p")
    x = _floats(args.x, cfg.dim, "x")
    print(f"Hbar(p, x) = {fmt(st.table(p, x))}")


def cmd_drift(st, args):
    x = _floats(args.x, st.config.dim, "x")
    print("bbar(x) = " + " ".join(fmt(v) for v in np.atleast_1d(st.drift(x))))


def cmd_fixed_points(st, args):
    st.fixed_points
    st.selection
    st.structure()
    text = st.report.to_text()
    print(text.split("[ou]")[0].rstrip())


def cmd_weakkam(st, args):
    st.weak_kam()
    r = st.report
    print(f"lambda_H = {fmt(r.lambda_H)}")
    print("S =")
    for row in np.atleast_2d(r.S):
        print("  " + "  ".join(fmt(v) for v in row))
    print(f"uniqueness = {fmt(r.uniqueness)}")
    if r.W is not None:
        os.makedirs(st.config.output, exist_ok=True)
        r.distance.to_csv(os.path.join(st.config.output, "W.csv"))
        print(f"wrote {os.path.join(st.config.output, 'W.csv')}")


def cmd_eigen(st, args):
    eps = args.eps if args.eps is not None else st.config.eps[-1]
    rec = st.eigen_record(eps)
    print(f"eps = {fmt(eps)}  lambda = {fmt(rec['lambda'])}  lambda/eps = {fmt(rec['lambda_over_eps'])}"
          f"  raw = {fmt(rec['lambda_raw'])}  residual = {fmt(rec['residual'])}")


def cmd_study(st, args):
    rep = run_convergence_study(st.config, blowup=not args.no_blowup)
    paths = emit_outputs(rep, st.config.output)
    sys.stdout.write(rep.to_text())
    for p in paths:
        print(f"wrote {p}")


def cmd_blowup(st, args):
    eps = args.eps if args.eps is not None else (st.config.blowup_eps or st.config.eps[-1])
    out = run_blowup_check(st.config, eps, args.z_radius, study=st)
    print(f"eps = {fmt(eps)}  z_radius = {fmt(out['z_radius'])}  profile_error = {fmt(out['profile_error'])}"
          f"  envelope_max = {fmt(out['envelope_max'])}  bounded = {fmt(out['envelope_ok'])}")


COMMANDS = {
    "validate": (cmd_validate, "parse and validate the coefficient expressions"),
    "effective": (cmd_effective, "evaluate the effective Hamiltonian at (p, x)"),
    "drift": (cmd_drift, "evaluate the effective drift at x"),
    "fixed-points": (cmd_fixed_points, "fixed points, sigma values and the structure check"),
    "weakkam": (cmd_weakkam, "additive eigenvalue, Aubry set and selected solution"),
    "eigen": (cmd_eigen, "principal eigenvalue at one eps"),
    "study": (cmd_study, "full convergence study with CSV and report output"),
    "blowup": (cmd_blowup, "compare the rescaled eigenfunction with the Gaussian profile"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ghz", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS))
        sp.add_argument("--out", metavar="DIR")
        if name == "effective":
            sp.add_argument("--p", required=True, help="momentum, comma separated")
            sp.add_argument("--x", required=True, help="slow variable, comma separated")
        if name == "drift":
            sp.add_argument("--x", required=True)
        if name in ("eigen", "blowup"):
            sp.add_argument("--eps", type=float)
        if name == "blowup":
            sp.add_argument("--z-radius", dest="z_radius", type=float)
        if name == "study":
            sp.add_argument("--no-blowup", action="store_true")
    return ap


def _exit_code(exc) -> int:
    inner = exc.error if isinstance(exc, StageError) else exc
    if isinstance(inner, (ConfigError, ExpressionError)):
        return EXIT_CONFIG
    if isinstance(inner, OSError):
        return EXIT_IO
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = _resolve(args)
        fn(Study(cfg), args)
    except (ConfigError, ExpressionError) as exc:
        print(f"ghz: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"ghz: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        print(f"ghz: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"ghz: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
