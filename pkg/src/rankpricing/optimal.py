"""
Profit, its price gradient, and the optimality sign test.

Demand derivatives are reconstructed from the elasticity matrix at the
observed point, dQ_a/dp_b = eta_ab * Q_a / p_b, so the test is local: a
negative gradient means a small price cut raises profit.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
import logging

import numpy as np

from .cost import CostEstimate, WindowSummary
from .demand import GroupDemand
from .errors import InputError
from .rankmap import ParetoCalibration

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.01


class Classification(StrEnum):
    OPTIMAL = "optimal"
    OVERPRICED = "overpriced"
    UNDERPRICED = "underpriced"


@dataclass(frozen=True)
class ProfitModel:
    """
    Channel profit k * sum_i (p_i - c_i) Q_i for one group. `k` scales the
    rank-derived quantities to units and cancels from every verdict.
    """

    product_ids: tuple[str, ...]
    prices: np.ndarray
    costs: np.ndarray
    quantities: np.ndarray
    elasticities: np.ndarray
    k: float = 1.0
    group_id: str = ""

    def __post_init__(self):
        prices = np.atleast_1d(np.asarray(self.prices, dtype=float))
        costs = np.atleast_1d(np.asarray(self.costs, dtype=float))
        quantities = np.atleast_1d(np.asarray(self.quantities, dtype=float))
        N = np.atleast_2d(np.asarray(self.elasticities, dtype=float))
        n = prices.size
        if not (costs.size == quantities.size == n == len(self.product_ids)):
            raise InputError("prices, costs, quantities and product ids differ in length")
        if N.shape != (n, n):
            raise InputError(f"elasticity matrix of shape {N.shape} for {n} products")
        if not self.k > 0:
            raise InputError(f"k must be positive, got {self.k}")
        if np.any(~(prices > 0)):
            raise InputError("prices must be positive")
        if np.any(~(quantities >= 0)):
            raise InputError("quantities must be non-negative")
        if not (np.all(np.isfinite(costs)) and np.all(np.isfinite(N))):
            raise InputError("costs and elasticities must be finite")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "quantities", quantities)
        object.__setattr__(self, "elasticities", N)
        object.__setattr__(self, "product_ids", tuple(self.product_ids))

    def with_prices(self, prices) -> ProfitModel:
        """The same demand system re-evaluated at other prices."""
        return ProfitModel(
            self.product_ids,
            prices,
            self.costs,
            local_demand(self, prices),
            self.elasticities,
            self.k,
            self.group_id,
        )


def profit(model: ProfitModel) -> float:
    return float(model.k * np.sum((model.prices - model.costs) * model.quantities))


def demand_jacobian(model: ProfitModel) -> np.ndarray:
    """J[a, b] = dQ_a / dp_b."""
    return model.elasticities * model.quantities[:, None] / model.prices[None, :]


def profit_gradient(model: ProfitModel) -> np.ndarray:
    margins = model.prices - model.costs
    return model.k * (model.quantities + demand_jacobian(model).T @ margins)


def normalized_gradient(model: ProfitModel, gradient=None) -> np.ndarray:
    """g~_i = (dpi/dp_i) p_i / (k * total revenue); free of k."""
    if gradient is None:
        gradient = profit_gradient(model)
    revenue = float(np.sum(model.prices * model.quantities))
    if revenue <= 0:
        raise InputError(
            f"group '{model.group_id}' has zero revenue; gradient cannot be normalised"
        )
    return np.asarray(gradient) * model.prices / (model.k * revenue)


def local_demand(model: ProfitModel, prices) -> np.ndarray:
    """Constant-elasticity demand through the model's point: Q_a prod_b (p_b/p0_b)^eta_ab."""
    p = np.asarray(prices, dtype=float)
    if p.shape != model.prices.shape or np.any(~(p > 0)):
        raise InputError("prices must be positive and match the model")
    return model.quantities * np.exp(model.elasticities @ np.log(p / model.prices))


def local_profit(model: ProfitModel, prices) -> float:
    p = np.asarray(prices, dtype=float)
    return float(model.k * np.sum((p - model.costs) * local_demand(model, p)))


@dataclass(frozen=True)
class OptimalityVerdict:
    product_id: str
    gradient: float
    normalized_gradient: float
    classification: Classification
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "gradient": self.gradient,
            "normalized_gradient": self.normalized_gradient,
            "classification": self.classification.value,
        }


def _verdict(value: float, tolerance: float) -> Classification:
    if value < -tolerance:
        return Classification.OVERPRICED
    if value > tolerance:
        return Classification.UNDERPRICED
    return Classification.OPTIMAL


def classify(
    gradients,
    tolerance: float = DEFAULT_TOLERANCE,
    *,
    model: ProfitModel | None = None,
    product_ids: Sequence[str] | None = None,
) -> list[OptimalityVerdict]:
    """
    Sign test per member. With a model the raw gradients are normalised
    first; without one they are taken as already normalised.
    """
    if not tolerance > 0:
        raise InputError(f"tolerance must be positive, got {tolerance}")
    gradients = np.atleast_1d(np.asarray(gradients, dtype=float))
    normalized = normalized_gradient(model, gradients) if model is not None else gradients
    if product_ids is None and model is not None:
        product_ids = model.product_ids
    elif product_ids is None:
        product_ids = [str(i) for i in range(gradients.size)]
    return [
        OptimalityVerdict(pid, float(g), float(g_n), _verdict(g_n, tolerance), tolerance)
        for pid, g, g_n in zip(product_ids, gradients, normalized, strict=True)
    ]


@dataclass(frozen=True)
class GroupOptimality:
    group_id: str
    verdicts: tuple[OptimalityVerdict, ...]
    tolerance: float
    k: float
    profit: float

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": [v.to_dict() for v in self.verdicts],
            "tolerance": self.tolerance,
            "k": self.k,
            "profit": self.profit,
        }

    @property
    def classifications(self) -> dict[str, str]:
        return {v.product_id: v.classification.value for v in self.verdicts}


def evaluate(model: ProfitModel, tolerance: float = DEFAULT_TOLERANCE) -> GroupOptimality:
    verdicts = classify(profit_gradient(model), tolerance, model=model)
    for verdict in verdicts:
        logger.info(
            "group '%s': '%s' %s (normalised gradient %+.4f)",
            model.group_id,
            verdict.product_id,
            verdict.classification.value,
            verdict.normalized_gradient,
        )
    return GroupOptimality(model.group_id, tuple(verdicts), tolerance, model.k, profit(model))


def build_profit_model(
    demand: GroupDemand,
    costs: CostEstimate,
    summary: WindowSummary,
    calibration: ParetoCalibration,
    k: float = 1.0,
) -> ProfitModel:
    """
    Profit model at the window-average prices. Quantities are the window-mean
    demand index exp(intercept) * rank^beta, the same construction the
    rank-ratio shares use.
    """
    missing = [pid for pid in demand.members if pid not in costs.product_ids]
    if missing:
        raise InputError(
            f"group '{demand.group_id}': no marginal cost for {', '.join(missing)}"
        )
    if summary.product_ids != demand.members:
        raise InputError(f"group '{demand.group_id}': window summary members do not match")
    return ProfitModel(
        product_ids=demand.members,
        prices=summary.prices,
        costs=np.array([costs.cost_of(pid) for pid in demand.members]),
        quantities=summary.demand_index,
        elasticities=demand.elasticities(calibration.beta).matrix,
        k=k,
        group_id=demand.group_id,
    )
