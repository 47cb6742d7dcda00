"""Pipeline configuration: JSON file plus CLI overrides.

Every section has working defaults; a config file only needs the keys it
changes. Unknown keys are rejected so typos fail loudly. The resolved
configuration is snapshotted into the workdir on every run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError


@dataclass
class WindowConfig:
    t0: int = 0
    dt: int = 3600
    n: int = 672


@dataclass
class GenerateConfig:
    zoom: int = 24
    origin_x: int = 2_683_400  # a 64x64 default scene in western North America
    origin_y: int = 6_484_700
    width: int = 64
    height: int = 64
    rate_sigma: float = 0.8
    weights: Optional[dict[str, float]] = None  # archetype palette; None = default
    fmt: str = "csv"
    window: WindowConfig = field(default_factory=WindowConfig)


@dataclass
class IngestConfig:
    trajectories: Optional[str] = None  # default: <workdir>/trajectories.csv
    modality: Optional[str] = "driving"
    dedup: bool = False
    grid: Optional[dict[str, int]] = None  # used when no scene.json exists


@dataclass
class SpectralConfig:
    window_len: int = 168
    hop: int = 24
    bins: int = 85
    remove_mean: bool = True
    log_compress: bool = True


@dataclass
class CaeConfig:
    hidden_dims: list[int] = field(default_factory=lambda: [128, 64])
    bottleneck_dim: int = 16
    lam: float = 1e-3
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"


@dataclass
class ClassifyConfig:
    task: str = "res_vs_com"
    block_size: int = 8
    test_fraction: float = 0.25
    hidden: int = 32
    learning_rate: float = 1e-2
    epochs: int = 80
    batch_size: int = 256
    optimizer: str = "adam"


@dataclass
class PipelineConfig:
    workdir: str = "tempo_run"
    seed: int = 0
    threads: int = 1
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    cae: CaeConfig = field(default_factory=CaeConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)


_KEY_ALIASES = {"lambda": "lam"}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in fields:
            raise ConfigError(f"{where}: unknown key {key!r}")
        ftype = fields[name].type
        if isinstance(value, dict) and name in _NESTED.get(cls, {}):
            value = _build(_NESTED[cls][name], value, f"{where}.{key}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    PipelineConfig: {
        "generate": GenerateConfig,
        "ingest": IngestConfig,
        "spectral": SpectralConfig,
        "cae": CaeConfig,
        "classify": ClassifyConfig,
    },
    GenerateConfig: {"window": WindowConfig},
}


def load_config(
    path: Optional[str] = None,
    workdir: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> PipelineConfig:
    """Config from a JSON file (optional) with CLI overrides applied."""
    if path is None:
        cfg = PipelineConfig()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        cfg = _build(PipelineConfig, data, "config")
    if workdir is not None:
        cfg.workdir = workdir
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig) -> None:
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    gen = cfg.generate
    if gen.width < 1 or gen.height < 1:
        raise ConfigError("generate.width and generate.height must be >= 1")
    win = gen.window
    if win.dt <= 0 or win.n < 2:
        raise ConfigError("generate.window must have dt > 0 and n >= 2")
    sp = cfg.spectral
    if sp.window_len > win.n:
        raise ConfigError(
            f"spectral.window_len {sp.window_len} exceeds window n {win.n}"
        )
    if not 1 <= sp.bins <= sp.window_len // 2 + 1:
        raise ConfigError("spectral.bins out of range for window_len")
    if sp.hop < 1:
        raise ConfigError("spectral.hop must be >= 1")
    if cfg.cae.lam < 0 or cfg.cae.learning_rate <= 0:
        raise ConfigError("cae.lambda must be >= 0, cae.learning_rate > 0")
    if cfg.classify.task not in ("res_vs_com", "strata", "activity_area"):
        raise ConfigError(f"unknown classify.task {cfg.classify.task!r}")
    if not 0 < cfg.classify.test_fraction < 1:
        raise ConfigError("classify.test_fraction must be in (0, 1)")


def resolved_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_snapshot(cfg: PipelineConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(resolved_dict(cfg), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
