"""Run configuration: YAML in, fully validated model out.

Validation errors carry the line of the offending key in the config file, e.g.
``run.yaml:4: lambda: Input should be greater than or equal to 0``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .graphs import Graph, GraphError, parse_graph


class ConfigError(ValueError):
    """Config file failed to parse or validate."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GraphSpec(_Model):
    base: Literal["lattice", "ring", "torus", "tree", "tree_ball"]
    L: Optional[int] = None
    d: Optional[int] = None
    degree: Optional[int] = None
    radius: Optional[int] = None
    added: list[list[Any]] = Field(default_factory=list)
    removed: list[list[Any]] = Field(default_factory=list)
    strict: bool = False

    def build(self) -> Graph:
        spec = {k: v for k, v in self.model_dump().items() if v is not None}
        return parse_graph(spec)

    @model_validator(mode="after")
    def _buildable(self):
        try:
            self.build()
        except GraphError as exc:
            raise ValueError(str(exc)) from None
        return self


class Grid(_Model):
    """Observation times: an explicit list or ``step`` spacing from 0 to the horizon."""

    times: Optional[list[float]] = None
    step: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.times is None) == (self.step is None):
            raise ValueError("give exactly one of 'times' or 'step'")
        return self

    def resolve(self, horizon: float) -> list[float]:
        if self.times is not None:
            return [float(t) for t in self.times]
        n = int(round(horizon / self.step))
        out = [round(i * self.step, 12) for i in range(n + 1)]
        if out[-1] < horizon:
            out.append(float(horizon))
        return [min(t, horizon) for t in out]


class CoupleOptions(_Model):
    relax_time: float = Field(default=5.0, ge=0)
    edge: int = Field(default=0, ge=0)
    side: Literal["u", "v"] = "u"
    batch: int = Field(default=1000, ge=1)
    max_attempts: int = Field(default=100_000, ge=1)
    floor: float = Field(default=1e-4, gt=0, lt=1)


class ExactOptions(_Model):
    decomposition_instances: int = Field(default=200, ge=1)
    lemma_instances: int = Field(default=100, ge=1)
    duality_instances: int = Field(default=100, ge=1)
    max_vertices: int = Field(default=5, ge=2, le=12)
    decomposition_tolerance: float = Field(default=1e-12, gt=0)
    lemma_tolerance: float = Field(default=1e-8, gt=0)
    duality_tolerance: float = Field(default=1e-8, gt=0)
    semigroup_tolerance: float = Field(default=1e-10, gt=0)


class CurveOptions(_Model):
    fit_window: Optional[tuple[float, float]] = None
    bootstrap: int = Field(default=200, ge=0)


class CriticalOptions(_Model):
    lambda_lo: float = Field(default=0.0, ge=0)
    lambda_hi: float = Field(default=2.0, gt=0)
    threshold: float = Field(default=0.05, gt=0, lt=1)
    bootstrap: int = Field(default=1000, ge=0)
    tol: float = Field(default=1e-4, gt=0)
    confidence: float = Field(default=0.95, gt=0, lt=1)
    max_half_width: Optional[float] = Field(default=None, gt=0)


class RunConfig(_Model):
    graph: GraphSpec
    graph_prime: Optional[GraphSpec] = None
    lam: Union[float, list[float]] = Field(default=1.0, alias="lambda")
    init: Union[Literal["all-ones", "origin"], list[Any]] = "origin"
    horizon: float = Field(default=10.0, gt=0)
    observe: Grid = Field(default_factory=lambda: Grid(step=1.0))
    replicas: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    window: float = Field(default=1.0, gt=0)
    record_events: bool = False
    couple: CoupleOptions = Field(default_factory=CoupleOptions)
    exact: ExactOptions = Field(default_factory=ExactOptions)
    curve: CurveOptions = Field(default_factory=CurveOptions)
    critical: CriticalOptions = Field(default_factory=CriticalOptions)

    @field_validator("lam")
    @classmethod
    def _nonneg(cls, v):
        vals = v if isinstance(v, list) else [v]
        if not vals:
            raise ValueError("lambda list must be nonempty")
        for x in vals:
            if x < 0:
                raise ValueError(f"lambda must be >= 0, got {x}")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.critical.lambda_lo >= self.critical.lambda_hi:
            raise ValueError("critical.lambda_lo must be below critical.lambda_hi")
        if self.graph_prime is not None and self.graph_prime.build().base != self.graph.build().base:
            raise ValueError("graph_prime must perturb the same base graph as graph")
        obs = self.observe.resolve(self.horizon)
        if any(t < 0 or t > self.horizon for t in obs) or any(b < a for a, b in zip(obs, obs[1:])):
            raise ValueError("observe times must be nondecreasing and inside [0, horizon]")
        return self

    @property
    def lambdas(self) -> list[float]:
        return list(self.lam) if isinstance(self.lam, list) else [self.lam]

    def initial_set(self, g: Graph) -> list:
        if self.init == "origin":
            return [g.origin]
        if self.init == "all-ones":
            if not g.finite:
                raise ConfigError("init 'all-ones' needs a finite graph")
            return g.vertices()
        return [tuple(v) if isinstance(v, list) else v for v in self.init]

    def echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _line_index(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _anchor(lines: dict, loc: tuple) -> int:
    loc = tuple(loc)
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return lines.get((), 1)


def load_config(path: str | Path, overrides: dict | None = None) -> tuple[RunConfig, str]:
    """Parse and validate ``path``; returns the model and the raw text."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config(text, str(path), overrides)


def parse_config(text: str, name: str = "<config>", overrides: dict | None = None) -> tuple[RunConfig, str]:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 1
        raise ConfigError(f"{name}:{line}: YAML syntax error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{name}:1: config must be a mapping")
    lines = _line_index(node) if node is not None else {}
    data.update(overrides or {})
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
            field = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"{name}:{_anchor(lines, loc)}: {field}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None
    return cfg, text
