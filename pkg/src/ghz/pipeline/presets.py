"""Built-in problem definitions used by the CLI and the acceptance tests."""
from __future__ import annotations

from .config import ConfigError, RunConfig

PRESETS = {
    # b = P' with P = x^2: a single sink, closed-form eigenpair on the line
    "ou1d": dict(dim=1, bounds=((-1.0, 1.0),), a=(("1",),), b=("2*x1",), c="0"),
    # b = P' with P = (x^2 - 1/4)^2: two sinks separated by a source
    "doublewell1d": dict(dim=1, bounds=((-1.0, 1.0),), a=(("1",),), b=("4*x1^3 - x1",), c="0"),
    "oscillating1d": dict(dim=1, bounds=((-1.0, 1.0),), a=(("1",),),
                          b=("2*x1 + sin(2*pi*y1)",), c="0"),
    # divergence-free fast oscillation on top of a linear sink
    "shear2d": dict(dim=2, bounds=((-1.0, 1.0), (-1.0, 1.0)), a=(("1", "0"), ("0", "1")),
                    b=("2*x1 + sin(2*pi*y2)", "2*x2 + sin(2*pi*y1)"), c="0",
                    n=128, eps=(0.2, 0.1), wk_n=32, seeds_per_axis=5, orbit_seeds=5,
                    surrogate_nx=3, surrogate_np=9, torus_n=32),
}


def preset_config(name: str, **overrides) -> RunConfig:
    try:
        spec = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
    spec.update(overrides)
    spec["preset"] = name
    spec.setdefault("output", f"ghz-out-{name}")
    return RunConfig(**spec)
