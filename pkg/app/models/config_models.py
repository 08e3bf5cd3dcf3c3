"""
Scenario configuration: INI sections validated by pydantic models.

A config file names a preset in ``[run] scenario``; the preset supplies every
default and the file overrides single keys. Unknown sections or keys and
invalid values raise ConfigError with the section, key and line number.

    [run]
    scenario = ellipse_transport
    seed = 3

    [time]
    K = 40
"""

from __future__ import annotations

import configparser
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigError

ScenarioName = Literal["ellipse_transport", "rising_bubble_control", "single_phase_ns",
                       "transported_circle", "custom"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _split_floats(value):
    if isinstance(value, str):
        return tuple(float(t) for t in value.replace(",", " ").split())
    return value


class RunSection(_Section):
    scenario: ScenarioName = "custom"
    seed: int = Field(0, ge=0)
    label: str = ""


class MeshSection(_Section):
    nx: int = Field(16, ge=1, le=4096)
    ny: int = Field(16, ge=1, le=4096)
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    adapt: bool = False
    pre_refine: int = Field(0, ge=0, le=6)

    @field_validator("domain", mode="before")
    @classmethod
    def parse_domain(cls, value):
        return _split_floats(value)

    @model_validator(mode="after")
    def check_domain(self):
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("domain must be (x0, x1, y0, y1) with x1 > x0 and y1 > y0")
        return self


class TimeSection(_Section):
    tau: float = Field(1e-3, gt=0.0)
    K: int = Field(10, ge=1)


class PhasefieldSection(_Section):
    sigma: float = Field(1.0, gt=0.0)
    eps: float = Field(0.02, gt=0.0)
    kappa: float = Field(1.0, ge=0.0)
    mobility: float = Field(1.0, gt=0.0)
    mobility2: Optional[float] = Field(None, gt=0.0)
    scaled: bool = True


class FluidSection(_Section):
    rho1: float = Field(1.0, gt=0.0)
    rho2: float = Field(1.0, gt=0.0)
    eta1: float = Field(1.0, gt=0.0)
    eta2: float = Field(1.0, gt=0.0)
    gravity: float = 0.0
    Re: float = Field(1.0, gt=0.0)
    convection: Literal["standard", "skew", "stokes"] = "standard"
    momentum: Literal["conservative", "skew"] = "conservative"
    coupling: Literal["monolithic", "fixed_point"] = "monolithic"


class PotentialSection(_Section):
    variant: Literal["double_well", "moreau_yosida", "relaxed_obstacle", "double_obstacle"] = "double_well"
    alpha: float = Field(1e-2, gt=0.0)
    r: float = Field(2.0, ge=2.0)
    s: float = Field(1e4, gt=0.0)
    psi1: float = -1.0
    psi2: float = 1.0
    kappa: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode="after")
    def check_bounds(self):
        if not self.psi1 < self.psi2:
            raise ValueError("psi1 must be smaller than psi2")
        return self


class InitialSection(_Section):
    shape: Literal["ellipse", "circle", "bubble", "none"] = "circle"
    center: Tuple[float, float] = (0.5, 0.5)
    radius: float = Field(0.25, gt=0.0)
    semi_axes: Tuple[float, float] = (0.4, 0.2)
    velocity: Literal["none", "ellipse_vortices", "vortex", "manufactured"] = "none"
    amplitude: float = 1.0

    @field_validator("center", "semi_axes", mode="before")
    @classmethod
    def parse_pairs(cls, value):
        return _split_floats(value)


class ControlSection(_Section):
    method: Literal["penalization", "descent", "gradient"] = "penalization"
    layout: Literal["2x4", "4x4", "full"] = "2x4"
    xi: float = Field(1e-11, gt=0.0)
    target: str = "two_squares"
    alpha0: float = Field(1e-1, gt=0.0)
    alpha_factor: float = Field(0.1, gt=0.0, lt=1.0)
    schedule_len: int = Field(5, ge=1)
    tol_c: float = Field(1e-3, gt=0.0)
    descent_tol: float = Field(1e-6, gt=0.0)
    descent_rtol: float = Field(0.0, ge=0.0, lt=1.0)
    max_iter: int = Field(200, ge=1)
    step_rule: Literal["fixed", "bb"] = "fixed"


class PodSection(_Section):
    ells: List[int] = [10, 20]
    x_space: Literal["L2", "H1", "H01"] = "L2"
    weights: Literal["trapezoidal", "uniform"] = "trapezoidal"
    rom: Literal["ch", "ns"] = "ch"
    compare: List[str] = []
    tail: Tuple[int, int] = (20, 20)
    projection: Literal["basis", "snapshots"] = "basis"

    @field_validator("ells", mode="before")
    @classmethod
    def parse_ells(cls, value):
        if isinstance(value, str):
            return [int(t) for t in value.replace(",", " ").split()]
        return value

    @field_validator("compare", mode="before")
    @classmethod
    def parse_compare(cls, value):
        if isinstance(value, str):
            return [t for t in value.replace(",", " ").split()]
        return value

    @field_validator("tail", mode="before")
    @classmethod
    def parse_tail(cls, value):
        if isinstance(value, str):
            return tuple(int(t) for t in value.replace(",", " ").split())
        return value

    @field_validator("ells")
    @classmethod
    def check_ells(cls, value):
        if not value or any(v < 1 for v in value):
            raise ValueError("ells must be a nonempty list of positive integers")
        return value


class MarkingSection(_Section):
    theta_r: float = Field(0.7, gt=0.0, lt=1.0)
    theta_c: float = Field(0.01, gt=0.0, lt=1.0)
    a_max: int = Field(20000, ge=1)
    max_cycles: int = Field(3, ge=0)
    shared_mesh: bool = False


class OutputSection(_Section):
    directory: str = ""
    dump_stride: int = Field(0, ge=0)
    snapshots: bool = True


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    run: RunSection = RunSection()
    mesh: MeshSection = MeshSection()
    time: TimeSection = TimeSection()
    phasefield: PhasefieldSection = PhasefieldSection()
    fluid: FluidSection = FluidSection()
    potential: PotentialSection = PotentialSection()
    initial: InitialSection = InitialSection()
    control: ControlSection = ControlSection()
    pod: PodSection = PodSection()
    marking: MarkingSection = MarkingSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def check_time_steps(self):
        if self.run.scenario == "rising_bubble_control" and self.time.K < 2:
            raise ValueError("control scenarios need at least two instants")
        return self


SECTIONS = tuple(ScenarioConfig.model_fields)


# ── Parsing ───────────────────────────────────────────────────────────────────

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_numbers(text: str) -> Dict[Tuple[str, str], int]:
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = _KEY_RE.match(line)
        if m and section:
            lines.setdefault((section, m.group(1).strip()), no)
    return lines


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    from app.scenarios.presets import preset_values

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (K, Re)
    lines = _line_numbers(text)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown section", section=section, line=lines.get((section, "")))
    scenario = parser.get("run", "scenario", fallback="custom")
    try:
        values = preset_values(scenario)
    except KeyError:
        raise ConfigError(f"unknown scenario {scenario!r}", "run", "scenario",
                          lines.get(("run", "scenario"))) from None
    for section in parser.sections():
        values.setdefault(section, {}).update(dict(parser.items(section)))

    try:
        return ScenarioConfig.model_validate(values)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = [str(p) for p in err["loc"]]
        section = loc[0] if loc else ""
        key = loc[1] if len(loc) > 1 else ""
        raise ConfigError(err["msg"], section, key, lines.get((section, key), lines.get((section, "")))) from None


def load_scenario_config(path: Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))
