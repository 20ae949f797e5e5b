"""Stage artifacts: deterministic JSON on disk."""

from __future__ import annotations

from collections.abc import Mapping
import json
import logging
import math
from pathlib import Path

import numpy as np

from .errors import ArtifactMissingError, InputError

logger = logging.getLogger(__name__)

VALIDATION = "validation_report.json"
CALIBRATION = "calibration.json"
DEMAND = "demand_estimates.json"
COSTS = "costs.json"
OPTIMALITY = "optimality.json"
REPORT_TEXT = "report.txt"
REPORT_JSON = "report.json"
GROUND_TRUTH = "ground_truth.json"
TRUE_COSTS = "true_costs.json"

SIGNIFICANT_DIGITS = 12


def normalise(value):
    """Plain JSON types with floats cut to 12 significant digits and NaN as null."""
    if isinstance(value, Mapping):
        return {str(k): normalise(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [normalise(v) for v in value.tolist()]
    if isinstance(value, list | tuple):
        return [normalise(v) for v in value]
    if isinstance(value, bool | np.bool_):
        return bool(value)
    if isinstance(value, int | np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        value = float(value)
        if not math.isfinite(value):
            return None
        value = float(f"{value:.{SIGNIFICANT_DIGITS}g}")
        return 0.0 if value == 0 else value
    return value


def dumps(data) -> str:
    return json.dumps(normalise(data), sort_keys=True, indent=2) + "\n"


def write_artifact(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def read_artifact(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissingError(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"corrupted artifact {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"corrupted artifact {path}: expected a JSON object")
    return data
