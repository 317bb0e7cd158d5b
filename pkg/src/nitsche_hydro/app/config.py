"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

PROBLEMS = ("sedov_square", "sedov_trapezoid", "sedov_hole_circle", "sedov_hole_square",
            "sedov_disc", "custom_mesh")
BC_MODES = ("weak", "strong_axis_aligned")
FORMATS = ("csv", "vtk")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _parse_words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


@dataclass
class RunConfig:
    problem: str = "sedov_square"
    order: int = 2
    res: int = 10
    # disc layout; 0 derives the value from res
    n_rad: int = 0
    n_azi: int = 0
    trapezoid_corners: tuple[float, ...] = (0.0, 0.0, 1.0, 0.0, 1.0, 0.6, 0.0, 1.0)
    hole_size: float = 0.2
    hole_angle: float = 20.0
    mesh_file: str = ""
    quad_pts: int = 0
    thermo_nodes: str = "lobatto"
    mass_solver: str = "direct"
    gamma: float = 1.4
    rho0: float = 1.0
    blast_energy: float = 1.0
    # share of the full blast inside the domain; 0 picks it from the problem
    blast_fraction: float = 0.0
    viscosity: bool = True
    q1: float = 0.5
    q2: float = 2.0
    bc: str = "weak"
    beta: float = 0.0
    cfl: float = 0.5
    dt_init: float = 0.01
    dt_max: float = 1.0
    growth: float = 1.02
    shrink: float = 0.5
    t_final: float = 0.8
    max_rejections: int = 20
    output_dir: str = "output"
    formats: tuple[str, ...] = ("csv",)
    output_every: int = 10
    shock_rays: int = 16
    shock_samples: int = 400

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.bc not in BC_MODES:
            raise ConfigError(f"bc must be one of {BC_MODES}, got {self.bc!r}")
        if self.order < 1:
            raise ConfigError("order must be >= 1")
        if self.res < 1:
            raise ConfigError("res must be >= 1")
        if self.problem == "custom_mesh" and not self.mesh_file:
            raise ConfigError("problem custom_mesh needs mesh_file")
        if len(self.trapezoid_corners) != 8:
            raise ConfigError("trapezoid_corners needs 8 numbers")
        if self.thermo_nodes not in ("lobatto", "gauss"):
            raise ConfigError("thermo_nodes must be lobatto or gauss")
        if self.mass_solver not in ("direct", "cg"):
            raise ConfigError("mass_solver must be direct or cg")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown output format(s) {bad}; choose from {FORMATS}")
        if self.output_every < 1:
            raise ConfigError("output_every must be >= 1")
        if not 0.0 <= self.blast_fraction <= 1.0:
            raise ConfigError("blast_fraction must lie in [0, 1]")
        for name in ("cfl", "dt_init", "dt_max", "t_final", "gamma", "rho0", "blast_energy"):
            if getattr(self, name) < 0 or (name != "t_final" and getattr(self, name) == 0):
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.shrink < 1.0 < self.growth:
            raise ConfigError("need 0 < shrink < 1 < growth")
        if self.gamma <= 1.0:
            raise ConfigError("gamma must exceed 1")

    # --- text form --------------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def set(self, key: str, text: str, validate: bool = True) -> None:
        """Set ``key`` from its text form, revalidating unless told not to."""
        ftypes = {f.name: f.type for f in fields(self)}
        if key not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = ftypes[key]
        try:
            if ftype == "int":
                value = int(text)
            elif ftype == "float":
                value = float(text)
            elif ftype == "bool":
                value = _parse_bool(text)
            elif ftype == "tuple[float, ...]":
                value = _parse_floats(text)
            elif ftype == "tuple[str, ...]":
                value = _parse_words(text)
            else:
                value = text.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
        setattr(self, key, value)
        if validate:
            self.validate()

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = dataclasses.replace(base) if base is not None else cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value, validate=False)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = " ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def default_config() -> RunConfig:
    return RunConfig()


__all__ = ["RunConfig", "ConfigError", "PROBLEMS", "BC_MODES", "FORMATS", "default_config"]
