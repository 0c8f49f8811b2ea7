"""Run configuration: a strict JSON schema for pipeline runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .models import MODELS, model_dimensions

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config", "dump_config", "STAGES"]

STAGES = ("reject", "regression", "marginal", "copula")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in errors))

    def to_dict(self) -> dict:
        return {"error": "ConfigError", "errors": [{"path": p, "message": m} for p, m in self.errors]}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSpec(_Strict):
    id: str
    params: dict = Field(default_factory=dict)

    @field_validator("id")
    @classmethod
    def _registered(cls, v):
        if v not in MODELS:
            raise ValueError(f"unknown model {v!r}; expected one of {sorted(MODELS)}")
        return v


class KernelSpec(_Strict):
    kind: Literal["uniform", "epanechnikov", "gaussian"] = "uniform"
    quantile: float = Field(0.01, gt=0, le=1)
    bandwidth: Optional[float] = Field(None, gt=0)


class SelectionSpec(_Strict):
    joint: Optional[list[int]] = None
    marginal: Optional[dict[int, list[int]]] = None
    pairs: Optional[dict[str, list[int]]] = None

    @field_validator("pairs")
    @classmethod
    def _pair_keys(cls, v):
        if v is None:
            return v
        for key in v:
            parts = key.split(",")
            if len(parts) != 2 or not all(s.strip().isdigit() for s in parts):
                raise ValueError(f"pair key {key!r} must look like 'i,j'")
        return v


class CopulaSpec(_Strict):
    kde_bandwidth: Optional[float] = Field(None, gt=0)
    grid_size: int = Field(512, ge=16)
    regression: bool = True


class OutputSpec(_Strict):
    dir: str = "abc_out"
    save_pool: bool = False


class RunConfig(_Strict):
    """Validated run description.

    ``seed`` is required; no run draws entropy implicitly.
    """

    model: ModelSpec
    pipeline: list[Literal["reject", "regression", "marginal", "copula"]] = ["reject"]
    n: int = Field(100_000, ge=10)
    seed: int = Field(ge=0, lt=2**64)
    scale: Literal["sd", "none"] = "sd"
    kernel: KernelSpec = KernelSpec()
    selections: SelectionSpec = SelectionSpec()
    marginal_regression: bool = True
    copula: CopulaSpec = CopulaSpec()
    output: OutputSpec = OutputSpec()

    @field_validator("pipeline")
    @classmethod
    def _pipeline(cls, v):
        if not v:
            raise ValueError("pipeline needs at least one stage")
        if len(set(v)) != len(v):
            raise ValueError("pipeline stages must not repeat")
        if any(s in v for s in ("regression", "marginal")) and "reject" not in v:
            raise ValueError("regression and marginal stages adjust a rejection sample; add 'reject'")
        return v


def _loc(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _check_indices(errors, path, idx, q):
    for i, v in enumerate(idx):
        if not 0 <= v < q:
            errors.append((f"{path}[{i}]", f"summary index {v} out of range for q={q}"))
    if not idx:
        errors.append((path, "selection is empty"))
    elif len(set(idx)) != len(idx):
        errors.append((path, "selection has duplicate indices"))


def _check_model_aware(cfg: RunConfig) -> None:
    try:
        p, q = model_dimensions(cfg.model.id, cfg.model.params)
    except (TypeError, ValueError) as err:
        raise ConfigError([("model.params", str(err))]) from None
    errors = []
    sel = cfg.selections
    if sel.joint is not None:
        _check_indices(errors, "selections.joint", sel.joint, q)
    if sel.marginal is not None:
        for j, idx in sel.marginal.items():
            if not 0 <= j < p:
                errors.append((f"selections.marginal.{j}", f"parameter index {j} out of range for p={p}"))
            _check_indices(errors, f"selections.marginal.{j}", idx, q)
    if sel.pairs is not None:
        for key, idx in sel.pairs.items():
            i, j = (int(s) for s in key.split(","))
            if not (0 <= i < p and 0 <= j < p and i != j):
                errors.append((f"selections.pairs.{key}", f"pair ({i}, {j}) invalid for p={p}"))
            _check_indices(errors, f"selections.pairs.{key}", idx, q)
    if errors:
        raise ConfigError(errors)


def parse_config(data) -> RunConfig:
    """Validate a mapping, JSON text or path into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        With one ``(path, message)`` entry per problem.
    """
    if isinstance(data, (str, Path)) and not str(data).lstrip().startswith("{"):
        path = Path(data)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([("<file>", f"{path} does not exist")]) from None
        except json.JSONDecodeError as err:
            raise ConfigError([("<file>", f"{path} is not valid JSON: {err}")]) from None
    elif isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as err:
            raise ConfigError([("<text>", f"invalid JSON: {err}")]) from None
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError([(_loc(e["loc"]), e["msg"]) for e in err.errors()]) from None
    _check_model_aware(cfg)
    return cfg


load_config = parse_config


def dump_config(cfg: RunConfig) -> str:
    """Resolved configuration (defaults filled) as JSON."""
    return json.dumps(cfg.model_dump(mode="json"), indent=1, sort_keys=True) + "\n"
