"""
Lerner markups and marginal costs from the oligopoly first-order conditions.

With revenue shares s and the group's elasticity matrix N, profit
maximisation over all member prices requires s + N'm = 0, where m_i is
product i's Lerner index times its share. Costs follow as
c_i = p_i * (1 - m_i / s_i).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import logging
from typing import Literal

import numpy as np
import pandas as pd

from .dataset import PanelDataset, format_timestamp
from .demand import ElasticityMatrix, GroupDemand
from .errors import InputError, NumericalError
from .rankmap import ParetoCalibration, rank_to_quantity
from .statcore import CONDITION_LIMIT, solve_linear

logger = logging.getLogger(__name__)

ShareMethod = Literal["direct", "rank_ratio", "rank_ratio_literal"]
SHARE_METHODS = ("direct", "rank_ratio", "rank_ratio_literal")


def _positive_prices(prices) -> np.ndarray:
    p = np.atleast_1d(np.asarray(prices, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise InputError("prices must be a non-empty vector")
    if np.any(~(p > 0)):
        raise InputError("prices must be positive")
    return p


def revenue_shares(prices, quantities) -> np.ndarray:
    p = _positive_prices(prices)
    q = np.asarray(quantities, dtype=float)
    if q.shape != p.shape:
        raise InputError(f"{q.size} quantities for {p.size} prices")
    if np.any(~(q >= 0)):
        raise InputError("quantities must be non-negative")
    revenue = p * q
    total = revenue.sum()
    if total <= 0:
        raise InputError("every quantity is zero; shares undefined")
    return revenue / total


def shares_from_ranks(prices, ranks, beta: float, *, literal: bool = False) -> np.ndarray:
    """
    Revenue shares implied by sales ranks under Q proportional to R^beta:
    s_i = p_i R_i^beta / sum_k p_k R_k^beta.

    `literal` evaluates the printed two-product relation
    1/s_i = 1 + (p_i/p_j)(R_j/R_i)^beta (summed over j for larger groups)
    and renormalises; see `literal_share_sum` for the raw total.
    """
    if literal:
        shares, _ = literal_shares(prices, ranks, beta)
        return shares
    p, r = _rank_inputs(prices, ranks, beta)
    # log-space weights keep extreme ranks finite
    log_w = np.log(p) + beta * np.log(r)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def literal_shares(prices, ranks, beta: float) -> tuple[np.ndarray, float]:
    p, r = _rank_inputs(prices, ranks, beta)
    ratio = np.outer(p, 1.0 / p) * np.power(np.outer(1.0 / r, r), beta)
    np.fill_diagonal(ratio, 0.0)
    raw = 1.0 / (1.0 + ratio.sum(axis=1))
    total = float(raw.sum())
    if not np.isclose(total, 1.0, rtol=0, atol=1e-12):
        logger.warning("literal rank-ratio shares sum to %.6f; renormalised", total)
    return raw / total, total


def literal_share_sum(prices, ranks, beta: float) -> float:
    return literal_shares(prices, ranks, beta)[1]


def _rank_inputs(prices, ranks, beta):
    p = _positive_prices(prices)
    r = np.asarray(ranks, dtype=float)
    if r.shape != p.shape:
        raise InputError(f"{r.size} ranks for {p.size} prices")
    if np.any(~(r >= 1)):
        raise InputError("sales ranks must be >= 1")
    if not beta < 0:
        raise InputError(f"beta must be negative, got {beta}")
    return p, r


def _as_matrix(N) -> np.ndarray:
    if isinstance(N, ElasticityMatrix):
        return N.matrix
    return np.atleast_2d(np.asarray(N, dtype=float))


@dataclass(frozen=True)
class MarkupSolution:
    m: np.ndarray
    condition: float


def solve_markups(shares, N, *, condition_limit: float = CONDITION_LIMIT) -> MarkupSolution:
    """Solve s + N'm = 0 for m."""
    s = np.asarray(shares, dtype=float)
    matrix = _as_matrix(N)
    if matrix.shape != (s.size, s.size):
        raise InputError(f"{s.size} shares for an elasticity matrix of shape {matrix.shape}")
    solution = solve_linear(matrix.T, -s, condition_limit=condition_limit)
    residual = float(np.max(np.abs(s + matrix.T @ solution.x)))
    if residual > 1e-9 * float(np.max(np.abs(s))):
        raise NumericalError(f"markup system residual {residual:.3e} too large")
    logger.debug("markups %s, condition %.3e", solution.x, solution.condition)
    return MarkupSolution(m=solution.x, condition=solution.condition)


@dataclass(frozen=True)
class CostEstimate:
    group_id: str
    product_ids: tuple[str, ...]
    prices: np.ndarray
    shares: np.ndarray
    markups: np.ndarray
    lerner: np.ndarray
    marginal_costs: np.ndarray
    condition: float = float("nan")
    share_method: str = "rank_ratio"
    flags: dict[str, tuple[str, ...]] = field(default_factory=dict)
    raw_share_sum: float | None = None
    window: tuple[str | None, str | None] = (None, None)

    def cost_of(self, product_id: str) -> float:
        return float(self.marginal_costs[self.product_ids.index(product_id)])

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": [
                {
                    "product_id": pid,
                    "price": float(self.prices[i]),
                    "share": float(self.shares[i]),
                    "m": float(self.markups[i]),
                    "lerner": float(self.lerner[i]),
                    "marginal_cost": float(self.marginal_costs[i]),
                    "flags": list(self.flags.get(pid, ())),
                }
                for i, pid in enumerate(self.product_ids)
            ],
            "condition_estimate": self.condition,
            "share_method": self.share_method,
            "raw_share_sum": self.raw_share_sum,
            "window": {"start": self.window[0], "end": self.window[1]},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> CostEstimate:
        try:
            members = data["members"]
            cost = [float(m["marginal_cost"]) for m in members]
            window = data.get("window") or {}
            return cls(
                group_id=str(data["group_id"]),
                product_ids=tuple(str(m["product_id"]) for m in members),
                prices=np.array([float(m["price"]) for m in members]),
                shares=np.array([float(m["share"]) for m in members]),
                markups=np.array([float(m.get("m", np.nan)) for m in members]),
                lerner=np.array([float(m.get("lerner", np.nan)) for m in members]),
                marginal_costs=np.array(cost),
                condition=float(
                    np.nan if data.get("condition_estimate") is None else data["condition_estimate"]
                ),
                share_method=str(data.get("share_method", "rank_ratio")),
                flags={str(m["product_id"]): tuple(m.get("flags", ())) for m in members},
                raw_share_sum=data.get("raw_share_sum"),
                window=(window.get("start"), window.get("end")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed cost estimate: {exc!r}") from exc


def marginal_costs(
    m,
    shares,
    prices,
    *,
    product_ids: Sequence[str] | None = None,
    group_id: str = "",
    condition: float = float("nan"),
    share_method: str = "rank_ratio",
    raw_share_sum: float | None = None,
    window: tuple[str | None, str | None] = (None, None),
) -> CostEstimate:
    """
    Lerner index m_i/s_i and cost p_i(1 - lerner_i). Costs are reported even
    when negative; such members carry flags instead.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    s = np.atleast_1d(np.asarray(shares, dtype=float))
    p = _positive_prices(prices)
    if not (m.shape == s.shape == p.shape):
        raise InputError("markups, shares and prices must have the same length")
    if np.any(s <= 0):
        raise InputError("every member needs a positive share")
    if product_ids is None:
        product_ids = tuple(f"p{i}" for i in range(p.size))

    lerner = m / s
    costs = p * (1.0 - lerner)
    flags = {}
    for pid, value in zip(product_ids, lerner, strict=True):
        raised = []
        if value > 1:
            raised += ["negative_cost", "lerner_above_one"]
        if value < 0:
            raised.append("negative_markup")
        if raised:
            flags[pid] = tuple(raised)
            logger.warning("group '%s': '%s' has Lerner index %.3f", group_id, pid, value)
    return CostEstimate(
        group_id=group_id,
        product_ids=tuple(product_ids),
        prices=p,
        shares=s,
        markups=m,
        lerner=lerner,
        marginal_costs=costs,
        condition=condition,
        share_method=share_method,
        flags=flags,
        raw_share_sum=raw_share_sum,
        window=window,
    )


# =============================================================================
# Window inputs from the panel
# =============================================================================


@dataclass(frozen=True)
class WindowSummary:
    """
    Per-member averages over the estimation window, computed on observed
    (not forward-filled) rows.

    `effective_ranks` is the power mean of ranks with exponent beta, so that
    exp(intercept) * effective_rank^beta equals the window-mean demand index.
    """

    product_ids: tuple[str, ...]
    prices: np.ndarray
    mean_ranks: np.ndarray
    effective_ranks: np.ndarray
    demand_index: np.ndarray
    units: np.ndarray
    n_obs: tuple[int, ...]
    start: str | None = None
    end: str | None = None


def window_summary(
    panel: PanelDataset,
    product_ids: Sequence[str],
    calibration: ParetoCalibration,
    start=None,
    end=None,
) -> WindowSummary:
    frame = panel.frame
    rows = frame[frame["product_id"].isin(product_ids) & ~frame["filled"].astype(bool)]
    rows = rows[rows["sales_rank"].notna()]
    if start is not None:
        start = _utc(start)
        rows = rows[rows["timestamp"] >= start]
    if end is not None:
        end = _utc(end)
        rows = rows[rows["timestamp"] < end]

    prices, mean_ranks, effective, index, units, counts = [], [], [], [], [], []
    beta = calibration.beta
    for pid in product_ids:
        own = rows[rows["product_id"] == pid]
        if own.empty:
            raise InputError(f"no observations of '{pid}' in the cost window")
        ranks = own["sales_rank"].to_numpy(dtype=float)
        demand = np.exp(calibration.intercept + beta * np.log(ranks))
        prices.append(own["amazon_price"].mean())
        mean_ranks.append(ranks.mean())
        effective.append(float(np.mean(ranks**beta) ** (1.0 / beta)))
        index.append(demand.mean())
        units.append(np.mean(rank_to_quantity(ranks, calibration)))
        counts.append(len(own))
    return WindowSummary(
        product_ids=tuple(product_ids),
        prices=np.array(prices, dtype=float),
        mean_ranks=np.array(mean_ranks, dtype=float),
        effective_ranks=np.array(effective, dtype=float),
        demand_index=np.array(index, dtype=float),
        units=np.array(units, dtype=float),
        n_obs=tuple(counts),
        start=None if start is None else format_timestamp(start),
        end=None if end is None else format_timestamp(end),
    )


def _utc(value) -> pd.Timestamp:
    ts = pd.Timestamp(value)
    return ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")


def estimate_costs(
    demand: GroupDemand,
    summary: WindowSummary,
    calibration: ParetoCalibration,
    method: ShareMethod = "rank_ratio",
) -> CostEstimate:
    """Shares from the window summary, then markups and costs for one group."""
    if summary.product_ids != demand.members:
        raise InputError(f"group '{demand.group_id}': window summary members do not match")
    raw_sum = None
    if method == "direct":
        shares = revenue_shares(summary.prices, summary.units)
    elif method == "rank_ratio":
        shares = shares_from_ranks(summary.prices, summary.effective_ranks, calibration.beta)
    elif method == "rank_ratio_literal":
        shares, raw_sum = literal_shares(summary.prices, summary.effective_ranks, calibration.beta)
    else:
        raise InputError(f"unknown share method '{method}'")

    N = demand.elasticities(calibration.beta)
    solution = solve_markups(shares, N)
    estimate = marginal_costs(
        solution.m,
        shares,
        summary.prices,
        product_ids=demand.members,
        group_id=demand.group_id,
        condition=solution.condition,
        share_method=method,
        raw_share_sum=raw_sum,
        window=(summary.start, summary.end),
    )
    logger.info(
        "group '%s': costs %s (condition %.2e)",
        demand.group_id,
        ", ".join(f"{c:.2f}" for c in estimate.marginal_costs),
        solution.condition,
    )
    return estimate
