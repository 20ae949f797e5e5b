"""
Run configuration read from TOML files.

    [paths]        observations, catalog, out_dir, calibration_input, and the
                   artifact overrides calibration, demand, costs, out
    [validation]   max_fill_gap, slots_per_day, strict
    [calibration]  mode ("fixed" | "fit"), intercept, beta, reading,
                   theta, min_abs_drop, q_bound
    [demand]       controls, pooled, use_marketplace, min_rows, covariance,
                   adjust_absorbed
    [costs]        share_method, window_start, window_end
    [optimality]   tolerance, k
    [run]          workers

`paths.out` names the artifact written by a stage run on its own; a full
pipeline run ignores it and the calibration and demand overrides.

Command-line flags override file values; unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
import logging
from pathlib import Path
import tomllib

from .cost import SHARE_METHODS
from .dataset import ValidationPolicy
from .demand import DemandSpec
from .errors import InputError
from .optimal import DEFAULT_TOLERANCE
from .rankmap import DEFAULT_BETA, DEFAULT_INTERCEPT, SpikeParams
from .simulate import SimConfig

logger = logging.getLogger(__name__)


def read_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc


@dataclass(frozen=True)
class PathsConfig:
    observations: Path | None = None
    catalog: Path | None = None
    out_dir: Path = Path("out")
    costs: Path | None = None
    calibration_input: Path | None = None
    calibration: Path | None = None
    demand: Path | None = None
    out: Path | None = None


@dataclass(frozen=True)
class ValidationConfig:
    max_fill_gap: int = 3
    slots_per_day: int = 3
    strict: bool = False

    def policy(self) -> ValidationPolicy:
        return ValidationPolicy(
            max_fill_gap=self.max_fill_gap, slots_per_day=self.slots_per_day, strict=self.strict
        )


@dataclass(frozen=True)
class CalibrationConfig:
    mode: str = "fixed"
    intercept: float = DEFAULT_INTERCEPT
    beta: float = DEFAULT_BETA
    reading: str = "log_alpha"
    theta: float = 0.30
    min_abs_drop: float = 100
    q_bound: float = 1000.0

    def __post_init__(self):
        if self.mode not in ("fixed", "fit"):
            raise InputError(f"calibration mode must be 'fixed' or 'fit', got '{self.mode}'")

    def spike_params(self) -> SpikeParams:
        return SpikeParams(theta=self.theta, min_abs_drop=self.min_abs_drop, q_bound=self.q_bound)


@dataclass(frozen=True)
class DemandConfig:
    controls: tuple[str, ...] = ("days_release", "avg_rating", "n_reviews")
    pooled: bool = False
    use_marketplace: bool = True
    min_rows: int = 30
    covariance: str = "hc0"
    adjust_absorbed: bool = True

    def spec(self, workers: int = 1) -> DemandSpec:
        if self.covariance not in ("hc0", "hc1"):
            raise InputError(f"covariance must be 'hc0' or 'hc1', got '{self.covariance}'")
        return DemandSpec(
            controls=tuple(self.controls),
            pooled=self.pooled,
            use_marketplace=self.use_marketplace,
            min_rows=self.min_rows,
            covariance=self.covariance,
            adjust_absorbed=self.adjust_absorbed,
            workers=workers,
        )


@dataclass(frozen=True)
class CostsConfig:
    share_method: str = "rank_ratio"
    window_start: str | None = None
    window_end: str | None = None

    def __post_init__(self):
        if self.share_method not in SHARE_METHODS:
            raise InputError(
                f"share_method must be one of {', '.join(SHARE_METHODS)}, got '{self.share_method}'"
            )


@dataclass(frozen=True)
class OptimalityConfig:
    tolerance: float = DEFAULT_TOLERANCE
    k: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0 or not self.k > 0:
            raise InputError("tolerance and k must be positive")


@dataclass(frozen=True)
class RunConfig:
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise InputError("workers must be >= 1")


_SECTIONS = {
    "paths": PathsConfig,
    "validation": ValidationConfig,
    "calibration": CalibrationConfig,
    "demand": DemandConfig,
    "costs": CostsConfig,
    "optimality": OptimalityConfig,
    "run": RunConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    costs: CostsConfig = field(default_factory=CostsConfig)
    optimality: OptimalityConfig = field(default_factory=OptimalityConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> PipelineConfig:
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise InputError(f"unknown config section(s): {', '.join(unknown)}")
        sections = {}
        for name, section_type in _SECTIONS.items():
            values = dict(data.get(name, {}))
            allowed = {f.name for f in fields(section_type)}
            extra = sorted(set(values) - allowed)
            if extra:
                raise InputError(f"[{name}]: unknown key(s) {', '.join(extra)}")
            if name == "paths":
                values = {
                    k: _resolve(v, base_dir) for k, v in values.items()
                }
            if name == "demand" and "controls" in values:
                values["controls"] = tuple(values["controls"])
            sections[name] = section_type(**values)
        return cls(**sections)

    def with_overrides(self, **overrides) -> PipelineConfig:
        """
        Apply command-line values given as section__key=value; None means
        "not given" and leaves the file value in place.
        """
        config = self
        for key, value in overrides.items():
            if value is None:
                continue
            section, name = key.split("__", 1)
            current = getattr(config, section)
            if name == "controls":
                value = tuple(value)
            elif section == "paths":
                value = Path(value)
            config = replace(config, **{section: replace(current, **{name: value})})
        return config


def _resolve(value, base_dir: Path | None) -> Path:
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return path


def load_pipeline_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    config = PipelineConfig.from_dict(read_toml(path), base_dir=path.parent)
    logger.info("read pipeline config %s", path)
    return config


def load_sim_config(path) -> SimConfig:
    config = SimConfig.from_dict(read_toml(path))
    logger.info("read simulation config %s (%d groups)", path, config.n_groups)
    return config
