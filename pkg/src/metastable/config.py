"""Run configuration: strict parsing of TOML or JSON into frozen dataclasses.

Unknown keys anywhere raise ConfigError; physical ranges are left to the
preconditions of the modules that consume the values.
"""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


@dataclass(frozen=True)
class PotentialBlock:
    name: str = "quartic2d"
    params: dict = field(default_factory=dict)
    box: list | None = None
    seeds: list | None = None


@dataclass(frozen=True)
class DriftBlock:
    M: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class GridBlock:
    nx: int = 401
    ny: int = 301
    box: list = field(default_factory=lambda: [[-2.0, 2.0], [-1.5, 1.5]])
    cells_per_sqrt_eps: float | None = None  # if set, h = sqrt(eps) / this, nx/ny ignored
    radius_a: float = 0.3
    radius_b: float = 0.3
    eta_cells: int = 2
    pack_K: float | None = None


@dataclass(frozen=True)
class SdeBlock:
    dt: float = 1e-3
    max_time: float = 1e4
    n_paths: int = 1000
    target_radius: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv"])


@dataclass(frozen=True)
class RunConfig:
    potential: PotentialBlock = field(default_factory=PotentialBlock)
    drift: DriftBlock = field(default_factory=DriftBlock)
    epsilons: list = field(default_factory=lambda: [0.1])
    grid: GridBlock = field(default_factory=GridBlock)
    sde: SdeBlock = field(default_factory=SdeBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sde=replace(cfg.sde, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
        return cfg


_BLOCKS = {
    "potential": PotentialBlock,
    "drift": DriftBlock,
    "grid": GridBlock,
    "sde": SdeBlock,
    "output": OutputBlock,
}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    return cls(**data)


def _validate(cfg: RunConfig) -> RunConfig:
    eps = cfg.epsilons
    if not isinstance(eps, list) or not eps:
        raise ConfigError("epsilons must be a non-empty list")
    try:
        eps = [float(e) for e in eps]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"epsilons must be numbers: {exc}") from None
    M = cfg.drift.M
    if not (isinstance(M, list) and M and all(isinstance(r, list) and len(r) == len(M) for r in M)):
        raise ConfigError("drift.M must be a square list of lists")
    try:
        M = [[float(v) for v in row] for row in M]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"drift.M entries must be numbers: {exc}") from None
    bad = set(cfg.output.formats) - {"json", "csv"}
    if bad:
        raise ConfigError(f"unknown report formats {sorted(bad)}")
    for name in ("nx", "ny", "eta_cells"):
        if not isinstance(getattr(cfg.grid, name), int):
            raise ConfigError(f"grid.{name} must be an integer")
    if not isinstance(cfg.sde.n_paths, int) or not isinstance(cfg.sde.seed, int):
        raise ConfigError("sde.n_paths and sde.seed must be integers")
    return replace(cfg, epsilons=eps, drift=DriftBlock(M=M))


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    unknown = set(data) - set(_BLOCKS) - {"epsilons"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kw = {name: _build(cls, data[name], name) for name, cls in _BLOCKS.items() if name in data}
    if "epsilons" in data:
        kw["epsilons"] = data["epsilons"]
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:  # pragma: no cover - guarded by _build
        raise ConfigError(str(exc)) from None
    return _validate(cfg)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a .toml or .json file; ``None`` gives the defaults."""
    if path is None:
        return _validate(RunConfig())
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            data = json.loads(text.decode("utf-8"))
        else:
            data = tomllib.loads(text.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(data)
