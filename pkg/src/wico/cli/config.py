"""YAML run configuration, validated up front; unknown keys are rejected."""
from __future__ import annotations

from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    h: int = Field(24, ge=1)
    w: int = Field(24, ge=1)
    d_v: int = Field(8, ge=1)
    kind: str = "gaussian"
    seed: int = Field(0, ge=0)


class ProjectorSection(_Section):
    kind: str = "Wico"
    k: Optional[int] = Field(None, ge=1)
    h_out: Optional[int] = Field(None, ge=1)
    w_out: Optional[int] = Field(None, ge=1)
    d_l: int = Field(16, ge=1)
    k_v: int = Field(1, ge=0)
    heads: int = Field(1, ge=1)
    head: Literal["mlp", "identity"] = "mlp"
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _grid_or_count(self):
        if (self.h_out is None) != (self.w_out is None):
            raise ValueError("h_out and w_out must be given together")
        if self.k is not None and self.h_out is not None and self.k != self.h_out * self.w_out:
            raise ValueError(f"k={self.k} disagrees with h_out * w_out = {self.h_out * self.w_out}")
        return self

    def token_count(self) -> Optional[int]:
        return self.k if self.k is not None else (
            self.h_out * self.w_out if self.h_out is not None else None)


class DecomposeSection(_Section):
    strategy: Literal["token", "channel"] = "token"
    l_l: int = Field(32, ge=1)
    k_l: int = Field(2, ge=0)
    n: int = Field(576, ge=1)

    @model_validator(mode="after")
    def _late_layers(self):
        if self.k_l > self.l_l:
            raise ValueError(f"k_l={self.k_l} exceeds l_l={self.l_l}")
        return self


class EvalSection(_Section):
    datasets: List[str] = ["gaussian"]
    projectors: List[str] = ["Wico", "Concat1D", "TokenFilter", "Perceiver", "TokenMixer",
                             "CAbstractor"]
    ks: List[int] = [16, 36]
    lam: float = Field(1e-6, gt=0)
    seeds: List[int] = [0]
    samples: Optional[int] = Field(None, ge=2)
    probe_stage: Literal["features", "output"] = "features"
    t_text: int = Field(50, ge=0)
    d_model: int = Field(4096, ge=1)


class OutputSection(_Section):
    gen: Optional[str] = None
    project: Optional[str] = None
    decompose: Optional[str] = None
    bench: Optional[str] = None
    cost: Optional[str] = None
    viz: Optional[str] = None


class RunConfig(_Section):
    grid: GridSection = GridSection()
    projector: ProjectorSection = ProjectorSection()
    decompose: DecomposeSection = DecomposeSection()
    eval: EvalSection = EvalSection()
    output: OutputSection = OutputSection()


def _flatten_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of sections")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_flatten_errors(exc)) from None


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {str(exc).splitlines()[0]}") from None
    return parse_config(data)
