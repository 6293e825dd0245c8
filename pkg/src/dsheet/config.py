"""Run configuration: strict JSON schema backed by frozen dataclasses."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .geometry import Params
from .optimize import MeshSpec, OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticsConfig:
    radii: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    profile_radii: tuple[float, ...] = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    rho: float = 0.3
    phi_R: float = 0.5
    slice_R: float = 0.5
    enabled: bool = True

    def __post_init__(self) -> None:
        for r in (*self.radii, *self.profile_radii):
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"diagnostic radius {r} outside (0, 1]")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if not 0.0 < self.phi_R < 1.0 or not 0.0 < self.slice_R <= 1.0:
            raise ConfigError("phi_R must lie in (0, 1) and slice_R in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    delta: float = 0.5
    h_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    mesh: MeshSpec = MeshSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()
    output_dir: str = "dsheet_out"
    seed: int = 0
    snapshot: str | None = None

    def __post_init__(self) -> None:
        if not self.h_list:
            raise ConfigError("h_list must not be empty")
        if len(set(self.h_list)) != len(self.h_list):
            raise ConfigError("h_list entries must be distinct")
        for h in self.h_list:
            try:
                Params(self.delta, h)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        m = self.mesh
        if m.n_radial < 16 or m.n_angular < 16 or m.n_angular % 2:
            raise ConfigError("mesh needs n_radial >= 16 and even n_angular >= 16")
        if m.r_inner_factor <= 1.0:
            raise ConfigError("r_inner_factor must exceed 1")

    def params(self) -> list[Params]:
        return [Params(self.delta, h) for h in self.h_list]

    def to_json(self) -> dict[str, Any]:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


_NESTED = {"mesh": MeshSpec, "optimizer": OptimizerConfig, "diagnostics": DiagnosticsConfig}
_TUPLES = {"h_list", "radii", "profile_radii"}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if cls is RunConfig and key in _NESTED:
            val = _build(_NESTED[key], val, f"{where}.{key}")
        elif key in _TUPLES:
            if not isinstance(val, list) or not all(isinstance(v, (int, float)) for v in val):
                raise ConfigError(f"{where}.{key}: expected a list of numbers")
            val = tuple(float(v) for v in val)
        else:
            val = _check_scalar(names[key], val, f"{where}.{key}")
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_scalar(f: dataclasses.Field, val, where: str):
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, bool):
        ok = isinstance(val, bool)
    elif isinstance(default, int):
        ok = isinstance(val, int) and not isinstance(val, bool)
    elif isinstance(default, float):
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        val = float(val) if ok else val
    else:
        ok = val is None or isinstance(val, str)
    if not ok:
        raise ConfigError(f"{where}: bad value {val!r}")
    return val


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def override(cfg: RunConfig, **changes) -> RunConfig:
    """Apply command-line overrides (``None`` values are ignored)."""
    top = {}
    mesh = {}
    for key, val in changes.items():
        if val is None:
            continue
        if key in ("n_radial", "n_angular"):
            mesh[key] = val
        else:
            top[key] = tuple(val) if key == "h_list" else val
    if mesh:
        top["mesh"] = dataclasses.replace(cfg.mesh, **mesh)
    try:
        return dataclasses.replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
