"""Scenario files: strict YAML schema and error reporting with line numbers.

Unknown keys are rejected everywhere; a silent typo in a physics run is worse
than a refusal to start.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

MODULES = ("fluid", "c2", "gravity", "plasma", "static-solve", "bound-check")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Geometry(_Strict):
    dim: Literal[1, 2, 3]
    extents: list[tuple[float, float]]
    shape: list[int]
    boundary: Literal["periodic", "fixed-wall"] = "periodic"

    @model_validator(mode="after")
    def _sizes(self):
        if len(self.extents) != self.dim or len(self.shape) != self.dim:
            raise ValueError("extents and shape need one entry per dimension")
        if any(n < 2 for n in self.shape):
            raise ValueError("shape entries must be at least 2")
        if any(hi <= lo for lo, hi in self.extents):
            raise ValueError("every extent needs lo < hi")
        return self


class Initial(_Strict):
    tag: str
    params: dict[str, float | int | list[float]] = Field(default_factory=dict)


class PotentialConfig(_Strict):
    kind: Literal["sound", "polytropic", "quadratic", "zero"] = "zero"
    kappa: float = 1.0
    rho_ref: float = 1.0
    rho_as: float = 1.0
    K: float = 1.0
    gamma: float = 5.0 / 3.0
    a: float = 1.0


class ForceConfig(_Strict):
    kind: Literal["free", "barotropic"] = "free"
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    dispersion: float = Field(0.0, ge=0.0)


class IntegratorConfig(_Strict):
    dt: float = Field(gt=0.0)
    steps: int = Field(ge=0)
    scheme: Literal["leapfrog", "rk4"] = "leapfrog"


class LoopConfig(_Strict):
    center: list[float]
    radius: float = Field(gt=0.0)
    markers: int = Field(64, ge=8)


class DiagnosticsConfig(_Strict):
    names: list[str] = Field(default_factory=lambda: ["energy"])
    cadence: int = Field(1, ge=1)
    loop: LoopConfig | None = None


class OutputConfig(_Strict):
    dir: str = "lagmedia-out"
    snapshot: Literal["csv", "binary", "none"] = "csv"
    figures: bool = True


class GravityConfig(_Strict):
    gamma: float = Field(1.0, gt=0.0)
    softening: float | None = Field(None, ge=0.0)
    solver: Literal["direct", "spectral"] = "direct"
    boundary: Literal["open", "periodic"] = "open"


class PlasmaConfig(_Strict):
    e: float = Field(1.0, gt=0.0)
    ion_mass: float = Field(1836.0, gt=0.0)
    mobile_ions: bool = True
    scheme: Literal["energy", "momentum"] = "energy"
    kernel: Literal["cic", "tsc"] = "tsc"
    ion_potential: PotentialConfig | None = None


class ProfileConfig(_Strict):
    csv: str | None = None
    column: str = "rho"
    kind: Literal["constant", "gaussian"] | None = None
    rho_c: float = Field(1.0, ge=0.0)
    sigma: float = Field(1.0, gt=0.0)
    r_max: float = Field(3.0, gt=0.0)
    nodes: int = Field(2001, ge=3)
    quadrature: Literal["trapezoid", "simpson"] = "trapezoid"

    @model_validator(mode="after")
    def _source(self):
        if (self.csv is None) == (self.kind is None):
            raise ValueError("give exactly one of 'csv' or 'kind'")
        return self


class BoundConfig(_Strict):
    grid: int = Field(48, ge=8)
    half_width: float = Field(2.0, gt=0.0)
    height: float = Field(1.0, gt=0.0)
    nz: int = Field(5, ge=3)
    radius: float = Field(1.8, gt=0.0)
    trials: int = Field(32, ge=1)
    modes: int = Field(4, ge=1)


class Scenario(_Strict):
    name: str
    module: Literal["fluid", "c2", "gravity", "plasma", "static-solve", "bound-check"]
    seed: int | None = Field(None, ge=0, lt=2 ** 64)
    mass: float = Field(1.0, gt=0.0)
    geometry: Geometry | None = None
    initial: Initial | None = None
    force: ForceConfig = Field(default_factory=ForceConfig)
    integrator: IntegratorConfig | None = None
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)
    gates: dict[str, float] = Field(default_factory=dict)
    output: OutputConfig = Field(default_factory=OutputConfig)
    threads: int = Field(1, ge=1)
    gravity: GravityConfig = Field(default_factory=GravityConfig)
    plasma: PlasmaConfig = Field(default_factory=PlasmaConfig)
    profile: ProfileConfig | None = None
    bound: BoundConfig = Field(default_factory=BoundConfig)

    @model_validator(mode="after")
    def _consistency(self):
        dynamic = self.module in ("fluid", "c2", "gravity", "plasma")
        if dynamic and (self.initial is None or self.integrator is None):
            raise ValueError(f"module {self.module!r} needs 'initial' and 'integrator'")
        if self.module in ("fluid", "c2", "plasma") and self.geometry is None:
            raise ValueError(f"module {self.module!r} needs 'geometry'")
        if self.module in ("static-solve", "bound-check") and self.profile is None:
            raise ValueError(f"module {self.module!r} needs 'profile'")
        if self.module == "bound-check" and self.seed is None:
            raise ValueError("bound-check draws random trial functions and needs 'seed'")
        if self.initial is not None and self.initial.params.get("noise", 0) and self.seed is None:
            raise ValueError("a noisy initial condition needs 'seed'")
        if any(t < 0 for t in self.gates.values()):
            raise ValueError("gate tolerances must be non-negative")
        return self


def _node_line(root, loc):
    """Line (1-based) of the YAML node addressed by a pydantic ``loc`` tuple."""
    node = root
    line = getattr(root, "start_mark", None)
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = k if v is None else v
                    line = k.start_mark
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark
        else:
            break
    return None if line is None else line.line + 1


def parse_scenario(text, source="<scenario>"):
    """Validate scenario text; raises :class:`ConfigError` naming the field and line."""
    try:
        raw = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}:{where}: YAML syntax error: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: scenario must be a mapping")
    try:
        return Scenario.model_validate(raw)
    except ValidationError as err:
        msgs = []
        for e in err.errors():
            loc = tuple(e["loc"])
            field = ".".join(str(p) for p in loc) or "<root>"
            line = _node_line(root, loc) if root is not None else None
            where = f" line {line}" if line else ""
            msgs.append(f"{source}:{where}: field '{field}': {e['msg']}")
        raise ConfigError("\n".join(msgs)) from err


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read scenario {path}: {err}") from err
    return parse_scenario(text, str(path))
