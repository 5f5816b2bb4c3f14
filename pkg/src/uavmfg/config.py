"""Scenario configuration schema.

A scenario is a YAML document with exactly these top-level keys::

    domain, grid, target, obstacles, wind, fd, source,
    transport, picard, value_solver, eps_reg, eps_c, seed

Unknown keys anywhere in the document are rejected.  Defaults exist only
where a field below declares one.
"""

from __future__ import annotations

import math
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, InvalidValue, MalformedDocument, MissingRequired, TypeMismatch, UnknownKey

Vec3 = tuple[float, float, float]
Vec2 = tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Section):
    min: Vec3
    max: Vec3
    # obstacle boxes poking outside the domain are clipped instead of rejected
    allow_obstacle_clipping: bool = False

    @model_validator(mode="after")
    def _ordered(self) -> "DomainConfig":
        if not all(lo < hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("domain.min must be < domain.max componentwise")
        return self


class GridConfig(_Section):
    shape: tuple[int, int, int]

    @field_validator("shape")
    @classmethod
    def _min_cells(cls, v: tuple[int, int, int]) -> tuple[int, int, int]:
        if min(v) < 4:
            raise ValueError("grid.shape needs at least 4 cells per axis")
        return v


class TargetConfig(_Section):
    center: Vec3
    radius: float = Field(gt=0)


class BoxConfig(_Section):
    min: Vec3
    max: Vec3

    @model_validator(mode="after")
    def _ordered(self) -> "BoxConfig":
        if not all(lo <= hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("obstacle min must be <= max componentwise")
        return self


class NoWind(_Section):
    type: Literal["none"]


class UniformWind(_Section):
    type: Literal["uniform"]
    v: Vec3


class VortexWind(_Section):
    type: Literal["vortex"]
    center_xy: Vec2
    omega: float
    core_radius: float = Field(gt=0)


class ShearWind(_Section):
    type: Literal["shear"]
    rate: float
    axis_dir: Vec3

    @field_validator("axis_dir")
    @classmethod
    def _unit(cls, v: Vec3) -> Vec3:
        if abs(math.sqrt(sum(c * c for c in v)) - 1.0) > 1e-9:
            raise ValueError("shear axis_dir must have unit norm")
        return v


WindConfig = Annotated[Union[NoWind, UniformWind, VortexWind, ShearWind], Field(discriminator="type")]


class FundamentalDiagramConfig(_Section):
    v_max0: float = Field(gt=0)
    v_min: float = Field(gt=0)
    rho_jam: float = Field(gt=0)
    beta: float = Field(gt=0)
    clip_lo: float
    clip_hi: float

    @model_validator(mode="after")
    def _clips(self) -> "FundamentalDiagramConfig":
        if self.clip_lo < self.v_min:
            raise ValueError("fd.clip_lo must be >= fd.v_min")
        if self.clip_lo > self.clip_hi:
            raise ValueError("fd.clip_lo must be <= fd.clip_hi")
        return self


class HomingSource(_Section):
    type: Literal["homing"]
    rate_density: float = Field(ge=0)


class P2PSource(_Section):
    type: Literal["p2p"]
    center: Vec3
    radius: float = Field(gt=0)
    total_rate: float = Field(ge=0)


SourceConfig = Annotated[Union[HomingSource, P2PSource], Field(discriminator="type")]


class TransportConfig(_Section):
    kappa: float = Field(0.0, ge=0)
    cfl: float = Field(0.9, gt=0, le=1)
    max_iters: int = Field(200_000, ge=1)
    tol_rel: float = Field(1e-8, gt=0)


class PicardConfig(_Section):
    alpha: float = Field(0.5, gt=0, le=1)
    rho_max: float = Field(gt=0)
    max_outer: int = Field(20, ge=1)
    rho_change_tol: float = Field(1e-3, gt=0)


class FsmConfig(_Section):
    tol: float = Field(1e-10, gt=0)
    max_sweep_rounds: int = Field(2000, ge=1)
    # exact constant-coefficient travel times are seeded within
    # target_radius + seed_radius_cells * max spacing; 0 disables seeding
    seed_radius_cells: float = Field(3.0, ge=0)


class PinnConfig(_Section):
    hidden_layers: tuple[int, ...] = (32, 32)
    activation: Literal["tanh"] = "tanh"
    n_interior: int = Field(2000, ge=0)
    n_near_geom: int = Field(500, ge=0)
    epochs: int = Field(200, ge=0)
    lr: float = Field(0.05, gt=0)
    cosine_decay: bool = False
    # None -> half the minimum grid spacing
    fd_step_h: Optional[float] = Field(None, gt=0)
    barrier_C: float = Field(1.0, ge=0)
    barrier_k: float = Field(20.0, gt=0)
    bc_power_p: float = Field(1.0, gt=0)
    # None -> half the minimum grid spacing
    mask_delta: Optional[float] = Field(None, ge=0)
    # None -> three times the maximum grid spacing
    near_band: Optional[float] = Field(None, gt=0)
    warm_start: bool = True

    @field_validator("hidden_layers")
    @classmethod
    def _widths(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(w < 1 for w in v):
            raise ValueError("hidden layer widths must be positive")
        return v


class ValueSolverConfig(_Section):
    backend: Literal["fsm", "pinn"] = "fsm"
    fsm: FsmConfig = FsmConfig()
    pinn: PinnConfig = PinnConfig()


class ScenarioConfig(_Section):
    domain: DomainConfig
    grid: GridConfig
    target: TargetConfig
    obstacles: tuple[BoxConfig, ...] = ()
    wind: WindConfig = NoWind(type="none")
    fd: FundamentalDiagramConfig
    source: SourceConfig
    transport: TransportConfig = TransportConfig()
    picard: PicardConfig
    value_solver: ValueSolverConfig = ValueSolverConfig()
    eps_reg: float = Field(1e-3, ge=0)
    eps_c: float = Field(0.05, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _geometry(self) -> "ScenarioConfig":
        lo, hi = self.domain.min, self.domain.max
        boxes = []
        for n, box in enumerate(self.obstacles):
            inside = all(lo[d] <= box.min[d] and box.max[d] <= hi[d] for d in range(3))
            if inside:
                boxes.append(box)
                continue
            if not self.domain.allow_obstacle_clipping:
                raise ValueError(f"obstacles[{n}] extends outside the domain")
            bmin = tuple(min(max(box.min[d], lo[d]), hi[d]) for d in range(3))
            bmax = tuple(min(max(box.max[d], lo[d]), hi[d]) for d in range(3))
            boxes.append(BoxConfig(min=bmin, max=bmax))

        c, r = self.target.center, self.target.radius
        if not all(lo[d] < c[d] - r and c[d] + r < hi[d] for d in range(3)):
            raise ValueError("target sphere must lie strictly inside the domain")
        for n, box in enumerate(boxes):
            gap = sum(max(box.min[d] - c[d], 0.0, c[d] - box.max[d]) ** 2 for d in range(3))
            if gap <= r * r:
                raise ValueError(f"target sphere intersects obstacles[{n}]")

        if tuple(boxes) != self.obstacles:
            return self.model_copy(update={"obstacles": tuple(boxes)})
        return self

    @property
    def backend(self) -> str:
        return self.value_solver.backend


_UNKNOWN = {"extra_forbidden"}
_MISSING = {"missing"}
_INVALID = {
    "value_error",
    "greater_than",
    "greater_than_equal",
    "less_than",
    "less_than_equal",
    "assertion_error",
}


def _path(loc: tuple[Any, ...]) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out


def _translate(exc: ValidationError) -> ConfigError:
    errors = exc.errors()
    # report the most actionable problem first
    for kinds, cls in ((_UNKNOWN, UnknownKey), (_MISSING, MissingRequired)):
        for err in errors:
            if err["type"] in kinds:
                return cls(err["msg"], _path(err["loc"]))
    for err in errors:
        if err["type"] in _INVALID:
            return InvalidValue(err["msg"], _path(err["loc"]))
    err = errors[0]
    return TypeMismatch(err["msg"], _path(err["loc"]))


def config_from_dict(data: Any) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise MalformedDocument("top level of a scenario document must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise _translate(exc) from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse a YAML scenario document into a validated :class:`ScenarioConfig`."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"not a well-formed YAML document: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
