"""
The staged pipeline: validate -> calibrate -> demand -> costs -> optimality.

Every stage reads its inputs from the artifacts earlier stages persisted in
the output directory, so a stage run on its own gives the same result as the
same stage inside a full run. A stage run on its own may instead name its
input artifacts and its output file explicitly.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field, replace
import logging
from pathlib import Path

from . import artifacts
from .config import PipelineConfig
from .cost import CostEstimate, estimate_costs, window_summary
from .dataset import (
    PanelDataset,
    load_catalog,
    load_observations,
    summary_records,
    summary_statistics,
    validate_panel,
)
from .demand import GroupDemand, estimate_all
from .errors import InputError, NumericalError, RankPricingError, StageError
from .optimal import build_profit_model, evaluate
from .rankmap import (
    ParetoCalibration,
    calibration_from_constants,
    collect_pairs,
    fit_pareto,
    rank_series_by_product,
)
from .report import render_report, write_report

logger = logging.getLogger(__name__)

STAGES = ("validate", "calibrate", "demand", "costs", "optimality")

FOC_NOTE = (
    "Costs recovered from the first-order conditions at the same prices and shares "
    "give a zero profit gradient by construction; the optimality test is informative "
    "with costs from another source or at other prices."
)


def _out(config: PipelineConfig, name: str) -> Path:
    return Path(config.paths.out_dir) / name


def _target(config: PipelineConfig, name: str) -> Path:
    return Path(config.paths.out) if config.paths.out is not None else _out(config, name)


def _source(config: PipelineConfig, path: Path | None, name: str) -> Path:
    return Path(path) if path is not None else _out(config, name)


def load_panel(config: PipelineConfig) -> PanelDataset:
    paths = config.paths
    if paths.observations is None or paths.catalog is None:
        raise InputError("observations and catalog paths are required")
    table = load_observations(paths.observations, strict=config.validation.strict)
    catalog = load_catalog(paths.catalog)
    return validate_panel(table, catalog, config.validation.policy())


def run_validate(config: PipelineConfig, panel: PanelDataset | None = None) -> Path:
    panel = panel or load_panel(config)
    data = {
        "report": panel.report.to_dict(),
        "products": len(panel.product_ids),
        "rows": len(panel.frame),
        "summary": summary_records(summary_statistics(panel)),
        "groups": [
            {"group_id": g.group_id, "relation": g.relation.value, "members": list(g.members)}
            for g in panel.groups
        ],
    }
    return artifacts.write_artifact(_target(config, artifacts.VALIDATION), data)


def run_calibrate(config: PipelineConfig) -> Path:
    settings = config.calibration
    if settings.mode == "fixed":
        calibration = calibration_from_constants(
            settings.intercept, settings.beta, settings.reading
        )
        data = calibration.to_dict()
    else:
        source = config.paths.calibration_input or config.paths.observations
        if source is None:
            raise InputError("calibration by fitting needs an hourly observations file")
        table = load_observations(source, strict=config.validation.strict)
        params = settings.spike_params()
        pairs, events = collect_pairs(
            rank_series_by_product(table.frame), params, workers=config.run.workers
        )
        calibration = fit_pareto(pairs, params)
        data = calibration.to_dict()
        data["events"] = len(events)
        data["pairs_total"] = len(pairs)
    return artifacts.write_artifact(_target(config, artifacts.CALIBRATION), data)


def read_calibration(path) -> ParetoCalibration:
    return ParetoCalibration.from_dict(artifacts.read_artifact(path))


def run_demand(config: PipelineConfig, panel: PanelDataset | None = None) -> Path:
    calibration = read_calibration(
        _source(config, config.paths.calibration, artifacts.CALIBRATION)
    )
    panel = panel or load_panel(config)
    spec = config.demand.spec(workers=config.run.workers)
    run = estimate_all(panel, spec)
    if not run.groups and panel.groups:
        raise InputError("no relation group could be estimated")
    data = {
        "beta_used": calibration.beta,
        "calibration": calibration.to_dict(),
        "spec": spec.to_dict(),
        "groups": [g.to_dict(calibration.beta) for g in run.groups],
        "skipped": [{"group_id": gid, "reason": reason} for gid, reason in run.skipped],
    }
    return artifacts.write_artifact(_target(config, artifacts.DEMAND), data)


def read_demand(path) -> tuple[ParetoCalibration, list[GroupDemand]]:
    data = artifacts.read_artifact(path)
    try:
        calibration = ParetoCalibration.from_dict(data["calibration"])
        groups = [GroupDemand.from_dict(g) for g in data["groups"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"corrupted artifact {path}: {exc!r}") from exc
    return calibration, groups


def read_costs(path) -> dict[str, CostEstimate]:
    data = artifacts.read_artifact(path)
    try:
        estimates = [CostEstimate.from_dict(g) for g in data["groups"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"corrupted artifact {path}: {exc!r}") from exc
    return {e.group_id: e for e in estimates}


def _per_group(config: PipelineConfig, groups, work: Callable):
    """Run `work` per group; under strict mode the first failure is fatal."""
    results, skipped = [], []
    for group in groups:
        try:
            results.append(work(group))
        except (InputError, NumericalError) as exc:
            if config.validation.strict:
                raise
            logger.warning("group '%s' skipped: %s", group.group_id, exc)
            skipped.append({"group_id": group.group_id, "reason": str(exc)})
    return results, skipped


def run_costs(config: PipelineConfig, panel: PanelDataset | None = None) -> Path:
    calibration, groups = read_demand(_source(config, config.paths.demand, artifacts.DEMAND))
    panel = panel or load_panel(config)
    settings = config.costs

    def one(demand: GroupDemand) -> CostEstimate:
        summary = window_summary(
            panel, demand.members, calibration, settings.window_start, settings.window_end
        )
        return estimate_costs(demand, summary, calibration, settings.share_method)

    estimates, skipped = _per_group(config, groups, one)
    data = {
        "share_method": settings.share_method,
        "window": {"start": settings.window_start, "end": settings.window_end},
        "groups": [e.to_dict() for e in estimates],
        "skipped": skipped,
    }
    return artifacts.write_artifact(_target(config, artifacts.COSTS), data)


def run_optimality(config: PipelineConfig, panel: PanelDataset | None = None) -> Path:
    calibration, groups = read_demand(_source(config, config.paths.demand, artifacts.DEMAND))
    costs_path = _source(config, config.paths.costs, artifacts.COSTS)
    costs = read_costs(costs_path)
    panel = panel or load_panel(config)
    settings = config.optimality
    window = config.costs

    def one(demand: GroupDemand):
        if demand.group_id not in costs:
            raise InputError(f"{costs_path} has no costs for group '{demand.group_id}'")
        summary = window_summary(
            panel, demand.members, calibration, window.window_start, window.window_end
        )
        model = build_profit_model(demand, costs[demand.group_id], summary, calibration, settings.k)
        return evaluate(model, settings.tolerance)

    results, skipped = _per_group(config, groups, one)
    data = {
        "tolerance": settings.tolerance,
        "k": settings.k,
        "costs_source": Path(costs_path).name,
        "window": {"start": window.window_start, "end": window.window_end},
        "groups": [r.to_dict() for r in results],
        "skipped": skipped,
        "note": FOC_NOTE,
    }
    return artifacts.write_artifact(_target(config, artifacts.OPTIMALITY), data)


@dataclass
class PipelineResult:
    artifacts: dict[str, Path] = field(default_factory=dict)
    failed_stage: str | None = None
    error: RankPricingError | None = None

    @property
    def exit_code(self) -> int:
        return 0 if self.error is None else self.error.exit_code


def run_stage(stage: str, config: PipelineConfig, panel: PanelDataset | None = None) -> Path:
    try:
        if stage == "validate":
            return run_validate(config, panel)
        if stage == "calibrate":
            return run_calibrate(config)
        if stage == "demand":
            return run_demand(config, panel)
        if stage == "costs":
            return run_costs(config, panel)
        if stage == "optimality":
            return run_optimality(config, panel)
    except RankPricingError as exc:
        raise StageError(stage, exc) from exc
    raise InputError(f"unknown stage '{stage}'")


def run_pipeline(config: PipelineConfig, stages=STAGES, *, render: bool = True) -> PipelineResult:
    """
    Run `stages` in order. The first failure halts the run; artifacts of the
    stages that finished are kept.
    """
    paths = config.paths
    if paths.out is not None or paths.calibration is not None or paths.demand is not None:
        logger.warning("single-stage artifact paths are ignored in a pipeline run")
        config = replace(config, paths=replace(paths, out=None, calibration=None, demand=None))
    result = PipelineResult()
    panel = None
    for stage in stages:
        logger.info("stage %s", stage)
        try:
            if panel is None and stage in ("validate", "demand", "costs", "optimality"):
                panel = load_panel(config)
            result.artifacts[stage] = run_stage(stage, config, panel)
        except StageError as exc:
            result.failed_stage, result.error = stage, exc
            logger.error("%s", exc)
            return result
        except RankPricingError as exc:
            result.failed_stage, result.error = stage, StageError(stage, exc)
            logger.error("%s", result.error)
            return result
    if render:
        report = render_report(config.paths.out_dir, panel=panel)
        result.artifacts.update(write_report(report, config.paths.out_dir))
    return result
