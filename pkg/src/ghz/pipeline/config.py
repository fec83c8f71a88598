"""Run configuration read from INI files.

Example::

    [problem]
    dim = 1
    bounds = -1 1
    a11 = "1"
    b1 = "2*x1"
    c = "0"
    alpha = 1

    [study]
    eps = 0.1, 0.05, 0.02
    n = 2048

Matrix entries are ``a<i><j>``, drift components ``b<j>``; expressions may be
quoted.  For several dimensions ``bounds`` lists one ``lo hi`` pair per axis
separated by commas.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dim: int
    bounds: tuple
    a: tuple
    b: tuple
    c: str
    alpha: float = 1.0
    eps: tuple = (0.1, 0.05, 0.02)
    n: int = 2048
    richardson: bool = True
    torus_n: int = 64
    z_n: int = 40
    z_radius: float = 2.0
    blowup_eps: float | None = None
    viscosity_schedule: tuple = (0.4, 0.2, 0.1)
    scheme: str = "fitted"
    newton_tol: float = 1e-9
    hyper_tol: float = 1e-8
    aubry_tol_factor: float = 10.0
    solver_tol: float = 1e-10
    seeds_per_axis: int = 9
    orbit_seeds: int = 9
    wk_n: int = 256
    v_max: float = 8.0
    p_radius: float = 4.0
    surrogate_nx: int = 17
    surrogate_np: int = 17
    margin: float = 0.05
    preset: str | None = None
    output: str = "ghz-out"
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if len(self.bounds) != self.dim or any(lo >= hi for lo, hi in self.bounds):
            raise ConfigError(f"bounds must give {self.dim} intervals with lo < hi")
        if len(self.a) != self.dim or any(len(r) != self.dim for r in self.a):
            raise ConfigError(f"a must be a {self.dim}x{self.dim} matrix of expressions")
        if len(self.b) != self.dim:
            raise ConfigError(f"b must have {self.dim} components")
        if not self.eps:
            raise ConfigError("eps list is empty")
        if any(e <= 0 for e in self.eps):
            raise ConfigError("eps values must be positive")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError("eps list must be strictly decreasing")
        if any(b >= a for a, b in zip(self.viscosity_schedule, self.viscosity_schedule[1:])):
            raise ConfigError("viscosity schedule must be strictly decreasing")
        for name in ("newton_tol", "hyper_tol", "aubry_tol_factor", "solver_tol", "alpha",
                     "v_max", "p_radius", "z_radius", "margin"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n < 8 or self.wk_n < 8 or self.z_n < 8 or self.torus_n < 4:
            raise ConfigError("grid sizes too small")
        if self.scheme not in ("fitted", "upwind"):
            raise ConfigError("scheme must be 'fitted' or 'upwind'")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_ini(self) -> str:
        """Canonical INI text (used as the config echo in outputs)."""
        lines = ["[problem]", f"dim = {self.dim}",
                 "bounds = " + ", ".join(f"{lo!r} {hi!r}" for lo, hi in self.bounds)]
        for i, row in enumerate(self.a):
            for j, e in enumerate(row):
                lines.append(f'a{i + 1}{j + 1} = "{e}"')
        for j, e in enumerate(self.b):
            lines.append(f'b{j + 1} = "{e}"')
        lines.append(f'c = "{self.c}"')
        lines.append(f"alpha = {self.alpha!r}")
        if self.preset:
            lines.append(f"preset = {self.preset}")
        lines += ["", "[study]", "eps = " + ", ".join(repr(e) for e in self.eps)]
        for k in ("n", "richardson", "torus_n", "z_n", "z_radius", "blowup_eps", "scheme", "margin"):
            lines.append(f"{k} = {getattr(self, k)!r}" if not isinstance(getattr(self, k), str)
                         else f"{k} = {getattr(self, k)}")
        lines.append("viscosity_schedule = " + ", ".join(repr(v) for v in self.viscosity_schedule))
        lines += ["", "[tolerances]"]
        for k in ("newton_tol", "hyper_tol", "aubry_tol_factor", "solver_tol"):
            lines.append(f"{k} = {getattr(self, k)!r}")
        lines += ["", "[dynamics]", f"seeds_per_axis = {self.seeds_per_axis}",
                  f"orbit_seeds = {self.orbit_seeds}",
                  "", "[weakkam]"]
        for k in ("wk_n", "v_max", "p_radius", "surrogate_nx", "surrogate_np"):
            lines.append(f"{k} = {getattr(self, k)!r}")
        lines += ["", "[output]", f"directory = {self.output}", f"seed = {self.seed}", ""]
        return "\n".join(lines)


_FLOATS = {"alpha", "z_radius", "blowup_eps", "newton_tol", "hyper_tol", "aubry_tol_factor",
           "solver_tol", "v_max", "p_radius", "margin"}
_INTS = {"n", "torus_n", "z_n", "seeds_per_axis", "orbit_seeds", "wk_n", "surrogate_nx",
         "surrogate_np", "seed"}


def _unquote(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def _floats(text: str, sep=","):
    try:
        return tuple(float(v) for v in text.replace(sep, " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Build a config from INI text; keys absent from the text keep ``base`` values."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    flat = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            flat[k] = v
    kw = {}
    if base is not None:
        kw = {f.name: getattr(base, f.name) for f in dataclasses.fields(RunConfig)}
    if "preset" in flat and base is None:
        from .presets import preset_config
        return parse_config_text(text, preset_config(_unquote(flat["preset"])))
    try:
        dim = int(flat.get("dim", kw.get("dim", 0)))
    except ValueError as exc:
        raise ConfigError("dim must be an integer") from exc
    kw["dim"] = dim
    if "bounds" in flat:
        pairs = [p.split() for p in flat["bounds"].split(",")]
        try:
            kw["bounds"] = tuple((float(p[0]), float(p[1])) for p in pairs)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad bounds {flat['bounds']!r}") from exc
    if any(f"a{i + 1}{j + 1}" in flat for i in range(dim) for j in range(dim)):
        try:
            kw["a"] = tuple(tuple(_unquote(flat[f"a{i + 1}{j + 1}"]) for j in range(dim))
                            for i in range(dim))
        except KeyError as exc:
            raise ConfigError(f"missing diffusion entry {exc.args[0]}") from exc
    if any(f"b{j + 1}" in flat for j in range(dim)):
        try:
            kw["b"] = tuple(_unquote(flat[f"b{j + 1}"]) for j in range(dim))
        except KeyError as exc:
            raise ConfigError(f"missing drift entry {exc.args[0]}") from exc
    if "c" in flat:
        kw["c"] = _unquote(flat["c"])
    if "eps" in flat:
        kw["eps"] = _floats(flat["eps"])
    if "viscosity_schedule" in flat:
        kw["viscosity_schedule"] = _floats(flat["viscosity_schedule"])
    if "richardson" in flat:
        kw["richardson"] = flat["richardson"].strip().lower() in ("1", "true", "yes", "on")
    if "scheme" in flat:
        kw["scheme"] = _unquote(flat["scheme"])
    if "directory" in flat:
        kw["output"] = _unquote(flat["directory"])
    if "preset" in flat:
        kw["preset"] = _unquote(flat["preset"])
    for k in _FLOATS:
        if k in flat:
            v = flat[k].strip()
            try:
                kw[k] = None if v.lower() == "none" else float(v)
            except ValueError as exc:
                raise ConfigError(f"{k} must be a number") from exc
    for k in _INTS:
        if k in flat:
            try:
                kw[k] = int(flat[k])
            except ValueError as exc:
                raise ConfigError(f"{k} must be an integer") from exc
    missing = [k for k in ("bounds", "a", "b", "c") if k not in kw]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    return RunConfig(**kw)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError:
        raise
    return parse_config_text(text, base)
