"""
Synthetic markets with known ground truth.

Log sales rank follows the same log-linear form the demand module estimates,
with true rank coefficients per product. Ranks map to a demand index
D = exp(intercept) * R^beta, so the true elasticity matrix is beta times the
rank coefficients; weekly units are max(D - 1, 0). Under the event-based rank
policies, units are realised as Poisson purchases, accumulated into an
exponentially decaying score and ranked against a static background
category whose scores follow the same power law.

Every product draws from its own random substream seeded by
(seed, crc32(product_id)), so output does not depend on worker count.
"""

from __future__ import annotations

from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
import dataclasses
from dataclasses import dataclass, field
from datetime import timedelta
import logging
import math
from pathlib import Path
import zlib

import numpy as np
import pandas as pd

from . import artifacts
from .cost import window_summary
from .dataset import (
    OBSERVATION_COLUMNS,
    Catalog,
    Category,
    ObservationTable,
    PanelDataset,
    Product,
    ProductKind,
    Relation,
    ValidationPolicy,
    days_since_release,
    format_timestamp,
    make_observation_frame,
    validate_panel,
    write_catalog,
    write_observations,
)
from .demand import CONTROL_LABELS
from .errors import InputError, NumericalError
from .optimal import (
    DEFAULT_TOLERANCE,
    GroupOptimality,
    ProfitModel,
    evaluate,
    local_demand,
    normalized_gradient,
    profit_gradient,
)
from .rankmap import (
    DEFAULT_BETA,
    DEFAULT_INTERCEPT,
    DemandRankPair,
    ParetoCalibration,
    quantity_to_rank,
)
from .statcore import solve_linear

logger = logging.getLogger(__name__)

RANK_POLICIES = ("direct_pareto", "event_decay", "legacy_three_tier")
HOURLY_TIER = 10_000
DAILY_TIER = 100_000
FOC_TOLERANCE = 1e-9

_KIND_BY_POSITION = {
    Relation.VERSIONS: (ProductKind.VERSION_HIGH, ProductKind.VERSION_MID, ProductKind.VERSION_LOW),
    Relation.GENERATIONS: (ProductKind.GENERATION_CURRENT, ProductKind.GENERATION_PRIOR),
}


# =============================================================================
# Configuration
# =============================================================================


@dataclass(frozen=True)
class MemberTemplate:
    product_id: str
    base_price: float
    cost: float
    base_rank: float
    phi: float
    gammas: dict[str, float] = field(default_factory=dict)
    lambda_: float = 0.0
    omega: dict[str, float] = field(default_factory=dict)
    marketplace_price: float | None = None
    list_markup: float = 1.25
    avg_rating: float | None = 4.0
    review_rate: float = 0.5
    initial_reviews: int = 10
    release_days: int = 180
    title: str = ""

    def __post_init__(self):
        where = f"product '{self.product_id}'"
        if not self.product_id:
            raise InputError("template member without product_id")
        if not self.base_price > 0:
            raise InputError(f"{where}: base_price must be positive")
        if not self.cost >= 0:
            raise InputError(f"{where}: cost must be non-negative")
        if not self.base_rank >= 1:
            raise InputError(f"{where}: base_rank must be >= 1")
        if self.marketplace_price is not None and not self.marketplace_price > 0:
            raise InputError(f"{where}: marketplace_price must be positive")
        if self.avg_rating is not None and not 1 <= self.avg_rating <= 5:
            raise InputError(f"{where}: avg_rating must lie in [1, 5]")
        unknown = set(self.omega) - set(CONTROL_LABELS)
        if unknown:
            raise InputError(f"{where}: unknown control(s) {', '.join(sorted(unknown))}")
        if self.avg_rating is None and self.omega.get("avg_rating", 0.0):
            raise InputError(f"{where}: rating coefficient without a rating")
        if self.marketplace_price is None and self.lambda_:
            raise InputError(f"{where}: marketplace coefficient without a marketplace price")
        if self.review_rate < 0 or self.initial_reviews < 0 or self.release_days < 0:
            raise InputError(f"{where}: review and release settings must be non-negative")


@dataclass(frozen=True)
class GroupTemplate:
    group_id: str
    relation: Relation
    members: tuple[MemberTemplate, ...]
    category: Category = Category.BUSINESS_PRODUCTIVITY

    def __post_init__(self):
        if not self.members:
            raise InputError(f"group template '{self.group_id}' has no members")
        ids = self.product_ids
        if len(set(ids)) != len(ids):
            raise InputError(f"group template '{self.group_id}' repeats a product")
        allowed = _KIND_BY_POSITION.get(self.relation)
        if len(ids) > 1 and allowed is not None and len(ids) > len(allowed):
            raise InputError(
                f"group template '{self.group_id}': {self.relation.value} allow at most "
                f"{len(allowed)} members"
            )
        for member in self.members:
            stray = set(member.gammas) - set(ids) | ({member.product_id} & set(member.gammas))
            if stray:
                raise InputError(
                    f"group template '{self.group_id}': '{member.product_id}' has cross "
                    f"coefficients for non-members {', '.join(sorted(stray))}"
                )

    @property
    def product_ids(self) -> tuple[str, ...]:
        return tuple(m.product_id for m in self.members)

    @property
    def size(self) -> int:
        return len(self.members)

    def rank_coefficients(self) -> np.ndarray:
        """Phi[a, b]: coefficient of log p_b in product a's log-rank equation."""
        ids = self.product_ids
        phi = np.zeros((self.size, self.size))
        for a, member in enumerate(self.members):
            phi[a, a] = member.phi
            for b, other in enumerate(ids):
                if other != member.product_id:
                    phi[a, b] = member.gammas.get(other, 0.0)
        return phi


@dataclass(frozen=True)
class SimConfig:
    groups: tuple[GroupTemplate, ...]
    seed: int = 42
    days: int = 100
    slots_per_day: int = 3
    start: str = "2021-01-04T00:00:00Z"
    rank_policy: str = "direct_pareto"
    half_life_hours: float = 24.0
    intercept: float = DEFAULT_INTERCEPT
    beta: float = DEFAULT_BETA
    sigma: float = 0.0
    drop_rate: float = 0.0
    price_change_prob: float = 0.02
    price_step: float = 0.1
    rank_rounding: bool = True
    background_size: int = 100_000
    background_anchor_rank: float = 3100.0
    experiment_weeks: int = 0
    k: float = 1.0
    tolerance: float = DEFAULT_TOLERANCE
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise InputError("simulation needs at least one group template")
        if self.rank_policy not in RANK_POLICIES:
            raise InputError(f"unknown rank policy '{self.rank_policy}'")
        if self.days < 1 or self.slots_per_day < 1 or 24 % self.slots_per_day:
            raise InputError("days must be >= 1 and slots_per_day must divide 24")
        if not self.beta < 0:
            raise InputError("calibration beta must be negative")
        if self.sigma < 0 or not 0 <= self.drop_rate < 1:
            raise InputError("sigma must be >= 0 and drop_rate in [0, 1)")
        if not 0 <= self.price_change_prob <= 1 or self.price_step < 0:
            raise InputError("price_change_prob must lie in [0, 1], price_step >= 0")
        if not self.half_life_hours > 0:
            raise InputError("half_life_hours must be positive")
        if self.background_size < 0 or not self.background_anchor_rank >= 1:
            raise InputError("background_size must be >= 0 and background_anchor_rank >= 1")
        ids = [pid for g in self.groups for pid in g.product_ids]
        if len(set(ids)) != len(ids):
            raise InputError("a product appears in more than one group template")
        group_ids = [g.group_id for g in self.groups]
        if len(set(group_ids)) != len(group_ids):
            raise InputError("group template ids must be unique")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def slot_hours(self) -> int:
        return 24 // self.slots_per_day

    @property
    def calibration(self) -> ParetoCalibration:
        return ParetoCalibration(intercept=self.intercept, beta=self.beta, source="fixed")

    def members(self) -> list[tuple[GroupTemplate, MemberTemplate]]:
        return [(g, m) for g in self.groups for m in g.members]

    @classmethod
    def from_dict(cls, data: Mapping) -> SimConfig:
        """Build from the parsed TOML layout: [market], [calibration], [[groups]]."""
        _reject_unknown(data, {"market", "calibration", "groups"}, "simulation config")
        market = dict(data.get("market", {}))
        calibration = dict(data.get("calibration", {}))
        _reject_unknown(
            market,
            {f.name for f in dataclasses.fields(cls)} - {"groups", "intercept", "beta"},
            "[market]",
        )
        _reject_unknown(calibration, {"intercept", "beta"}, "[calibration]")
        beta = float(calibration.get("beta", DEFAULT_BETA))
        groups = tuple(_group_from_dict(g, beta) for g in data.get("groups", ()))
        try:
            return cls(groups=groups, **market, **calibration)
        except TypeError as exc:
            raise InputError(f"simulation config: {exc}") from exc


def _reject_unknown(data: Mapping, allowed: set[str], where: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InputError(f"{where}: unknown key(s) {', '.join(unknown)}")


_MEMBER_KEYS = {f.name for f in dataclasses.fields(MemberTemplate)} | {"lambda"}


def _group_from_dict(data: Mapping, beta: float) -> GroupTemplate:
    _reject_unknown(
        data, {"group_id", "relation", "category", "members", "elasticities"}, "[[groups]]"
    )
    try:
        group_id = str(data["group_id"])
        relation = Relation(data.get("relation", Relation.VERSIONS.value))
        category = Category(data.get("category", Category.BUSINESS_PRODUCTIVITY.value))
        raw_members = [dict(m) for m in data["members"]]
    except (KeyError, ValueError) as exc:
        raise InputError(f"group template: {exc!r}") from exc

    elasticities = data.get("elasticities")
    if elasticities is not None:
        matrix = np.asarray(elasticities, dtype=float)
        if matrix.shape != (len(raw_members), len(raw_members)):
            raise InputError(
                f"group template '{group_id}': elasticity matrix of shape {matrix.shape} "
                f"for {len(raw_members)} members"
            )
        coefficients = matrix / beta
        ids = [str(m.get("product_id", "")) for m in raw_members]
        for a, member in enumerate(raw_members):
            member["phi"] = coefficients[a, a]
            member["gammas"] = {ids[b]: coefficients[a, b] for b in range(len(ids)) if b != a}

    members = []
    for member in raw_members:
        _reject_unknown(member, _MEMBER_KEYS, f"member of '{group_id}'")
        if "lambda" in member:
            member["lambda_"] = member.pop("lambda")
        member["gammas"] = {str(k): float(v) for k, v in member.get("gammas", {}).items()}
        member["omega"] = {str(k): float(v) for k, v in member.get("omega", {}).items()}
        try:
            members.append(MemberTemplate(**member))
        except TypeError as exc:
            raise InputError(f"member of '{group_id}': {exc}") from exc
    return GroupTemplate(group_id, relation, tuple(members), category)


# =============================================================================
# Rank policies
# =============================================================================


@dataclass
class RankPolicy:
    """
    Maps per-product scores at one time to displayed sales ranks.

    direct_pareto: scores are weekly quantities, rank = quantity_to_rank(Q).
    event_decay: scores are decayed purchase counts; rank = 1 + the number of
    background and simulated products ahead (ties by product_id).
    legacy_three_tier: event_decay ranks, but a product displayed beyond
    10000 is only re-ranked at the day boundary, beyond 100000 only on the
    first of the month.
    """

    kind: str = "event_decay"
    calibration: ParetoCalibration | None = None
    background_size: int = 0
    anchor_rank: float = 3100.0
    rounding: bool = True
    _displayed: dict[str, float] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in RANK_POLICIES:
            raise InputError(f"unknown rank policy '{self.kind}'")
        if self.kind == "direct_pareto" and self.calibration is None:
            raise InputError("direct_pareto ranks need a calibration")

    @property
    def background_beta(self) -> float:
        return self.calibration.beta if self.calibration else DEFAULT_BETA

    def background_count(self, scores: np.ndarray) -> np.ndarray:
        """Background products whose score exceeds each score; score 1 sits at anchor_rank."""
        beta = self.background_beta
        s0 = self.anchor_rank ** (-beta)
        with np.errstate(divide="ignore", over="ignore"):
            position = np.where(scores > 0, np.power(scores / s0, 1.0 / beta), np.inf)
        count = np.ceil(np.minimum(position, self.background_size + 1.0)) - 1
        return np.clip(count, 0, self.background_size)

    def apply(self, scores: Mapping[str, float], time: pd.Timestamp) -> dict[str, float]:
        ids = sorted(scores)
        values = np.array([scores[pid] for pid in ids], dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InputError("scores must be finite and non-negative")

        if self.kind == "direct_pareto":
            ranks = np.asarray(quantity_to_rank(values, self.calibration), dtype=float)
            if self.rounding:
                ranks = np.maximum(np.round(ranks), 1.0)
            return dict(zip(ids, ranks.tolist(), strict=True))

        ahead = values[None, :] > values[:, None]
        order = np.arange(len(ids))
        ahead |= (values[None, :] == values[:, None]) & (order[None, :] < order[:, None])
        fresh = 1.0 + self.background_count(values) + ahead.sum(axis=1)
        if self.kind == "event_decay":
            return dict(zip(ids, fresh.tolist(), strict=True))

        ranks = {}
        for pid, rank in zip(ids, fresh.tolist(), strict=True):
            shown = self._displayed.get(pid)
            if shown is None or shown <= HOURLY_TIER:
                ranks[pid] = rank
            elif shown <= DAILY_TIER:
                ranks[pid] = rank if _day_boundary(time) else shown
            else:
                ranks[pid] = rank if _day_boundary(time) and time.day == 1 else shown
        self._displayed = dict(ranks)
        return ranks


def _day_boundary(time: pd.Timestamp) -> bool:
    return time.hour == 0 and time.minute == 0


def rank_policy_apply(
    policy: RankPolicy, scores: Mapping[str, float], time: pd.Timestamp
) -> dict[str, float]:
    return policy.apply(scores, time)


# =============================================================================
# Ground truth
# =============================================================================


@dataclass(frozen=True)
class SimulatedPurchase:
    product_id: str
    timestamp: pd.Timestamp
    units: int


@dataclass(frozen=True)
class ProductTruth:
    product_id: str
    group_id: str
    phi: float
    gammas: dict[str, float]
    lambda_: float
    omega: dict[str, float]
    cost: float
    base_price: float
    base_rank: float
    fixed_effect: float
    optimal_price: float | None = None


@dataclass(frozen=True)
class GroupTruth:
    group_id: str
    relation: str
    members: tuple[str, ...]
    elasticities: np.ndarray
    costs: np.ndarray
    base_prices: np.ndarray
    base_demand: np.ndarray
    optimal_prices: np.ndarray | None
    optimal_shares: np.ndarray | None
    base_verdicts: GroupOptimality
    observed_verdicts: GroupOptimality | None = None

    def base_model(self, k: float = 1.0) -> ProfitModel:
        return ProfitModel(
            self.members,
            self.base_prices,
            self.costs,
            self.base_demand,
            self.elasticities,
            k,
            self.group_id,
        )


@dataclass(frozen=True)
class GroundTruth:
    seed: int
    rank_policy: str
    calibration: ParetoCalibration
    k: float
    products: dict[str, ProductTruth]
    groups: tuple[GroupTruth, ...]
    events: tuple[SimulatedPurchase, ...] = ()
    drops: tuple[tuple[str, pd.Timestamp], ...] = ()
    rank_clips: int = 0

    def group(self, group_id: str) -> GroupTruth:
        for group in self.groups:
            if group.group_id == group_id:
                return group
        raise InputError(f"no ground truth for group '{group_id}'")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rank_policy": self.rank_policy,
            "calibration": {"intercept": self.calibration.intercept, "beta": self.calibration.beta},
            "k": self.k,
            "products": [
                {
                    "product_id": p.product_id,
                    "group_id": p.group_id,
                    "phi": p.phi,
                    "gammas": p.gammas,
                    "lambda": p.lambda_,
                    "omega": p.omega,
                    "cost": p.cost,
                    "base_price": p.base_price,
                    "base_rank": p.base_rank,
                    "fixed_effect": p.fixed_effect,
                    "optimal_price": p.optimal_price,
                }
                for p in self.products.values()
            ],
            "groups": [
                {
                    "group_id": g.group_id,
                    "relation": g.relation,
                    "members": list(g.members),
                    "elasticities": g.elasticities,
                    "costs": g.costs,
                    "optimal_prices": g.optimal_prices,
                    "optimal_shares": g.optimal_shares,
                    "verdicts_base": g.base_verdicts.to_dict(),
                    "verdicts_observed": (
                        g.observed_verdicts.to_dict() if g.observed_verdicts else None
                    ),
                }
                for g in self.groups
            ],
            "events": [
                {
                    "product_id": e.product_id,
                    "timestamp": format_timestamp(e.timestamp),
                    "units": e.units,
                }
                for e in self.events
            ],
            "drops": [
                {"product_id": pid, "timestamp": format_timestamp(ts)} for pid, ts in self.drops
            ],
            "rank_clips": self.rank_clips,
        }


def find_optimal_prices(
    model: ProfitModel, *, damping: float = 0.5, tol: float = 1e-13, max_iter: int = 10_000
) -> np.ndarray | None:
    """
    Prices solving the first-order conditions of the constant-elasticity
    demand system through `model`'s point, or None without an interior
    optimum. Monopoly uses p* = c*eta/(1 + eta); groups iterate the markup
    equations with geometric damping.
    """
    N = model.elasticities
    c = model.costs
    if model.prices.size == 1:
        eta = float(N[0, 0])
        if eta >= -1 or c[0] <= 0:
            logger.warning(
                "'%s': no interior optimum (own elasticity %.3f)", model.product_ids[0], eta
            )
            return None
        return np.array([c[0] * eta / (1.0 + eta)])
    if np.any(c <= 0):
        logger.warning("group '%s': nonpositive cost; no interior optimum", model.group_id)
        return None

    p = model.prices.copy()
    for iteration in range(max_iter):
        q = local_demand(model, p)
        shares = p * q / np.sum(p * q)
        try:
            lerner = solve_linear(N.T, -shares).x / shares
        except NumericalError as exc:
            logger.warning("group '%s': markup system unsolvable (%s)", model.group_id, exc)
            return None
        if np.any(lerner <= 0) or np.any(lerner >= 1):
            logger.warning(
                "group '%s': implied Lerner indices %s leave (0, 1); no interior optimum",
                model.group_id,
                np.round(lerner, 4),
            )
            return None
        target = c / (1.0 - lerner)
        step = damping * np.log(target / p)
        p = p * np.exp(step)
        if np.max(np.abs(step)) < tol:
            logger.debug("group '%s': optimal prices after %d steps", model.group_id, iteration)
            return p
    logger.warning("group '%s': optimal-price iteration did not converge", model.group_id)
    return None


def ground_truth_report(truth: GroundTruth) -> dict:
    """
    Ground truth plus a check of the first-order conditions at every
    optimal price vector under the true model.
    """
    worst = 0.0
    checks = []
    for group in truth.groups:
        if group.optimal_prices is None:
            checks.append({"group_id": group.group_id, "max_abs_normalized_gradient": None})
            continue
        at_optimum = group.base_model(truth.k).with_prices(group.optimal_prices)
        g = float(np.max(np.abs(normalized_gradient(at_optimum, profit_gradient(at_optimum)))))
        worst = max(worst, g)
        checks.append({"group_id": group.group_id, "max_abs_normalized_gradient": g})
        if g > FOC_TOLERANCE:
            logger.warning(
                "group '%s': first-order residual %.3e at optimal prices", group.group_id, g
            )
    report = truth.to_dict()
    report["foc_checks"] = checks
    report["foc_ok"] = worst <= FOC_TOLERANCE
    return report


# =============================================================================
# Generation
# =============================================================================


def _substream(seed: int, product_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(product_id.encode())]))


def _walk(rng: np.random.Generator, base: float, n: int, prob: float, step: float) -> np.ndarray:
    changes = rng.random(n) < prob
    changes[0] = False
    steps = np.where(changes, rng.normal(0.0, step, n), 0.0)
    return np.maximum(np.round(base * np.exp(np.cumsum(steps)), 2), 0.01)


@dataclass
class _ProductPath:
    """Exogenous paths for one product, drawn from its own substream."""

    member: MemberTemplate
    rng: np.random.Generator
    prices: np.ndarray
    marketplace: np.ndarray
    reviews: np.ndarray
    days: np.ndarray
    noise: np.ndarray
    dropped: np.ndarray

    def controls(self) -> np.ndarray:
        """omega . X per slot, with the regressors the demand design uses."""
        omega = self.member.omega
        total = np.zeros(self.prices.size)
        if omega.get("days_release"):
            total += omega["days_release"] * np.log1p(np.maximum(self.days, 0))
        if omega.get("avg_rating"):
            total += omega["avg_rating"] * self.member.avg_rating
        if omega.get("n_reviews"):
            total += omega["n_reviews"] * np.log1p(self.reviews)
        return total


def _draw_path(
    config: SimConfig, member: MemberTemplate, timestamps: pd.DatetimeIndex, start
) -> _ProductPath:
    rng = _substream(config.seed, member.product_id)
    n = timestamps.size
    prices = _walk(rng, member.base_price, n, config.price_change_prob, config.price_step)
    if member.marketplace_price is None:
        marketplace = np.full(n, np.nan)
    else:
        marketplace = _walk(
            rng, member.marketplace_price, n, config.price_change_prob, config.price_step
        )
    day_index = np.asarray((timestamps - timestamps[0]) // pd.Timedelta(days=1))
    arrivals = rng.poisson(member.review_rate, config.days + 1)
    reviews = member.initial_reviews + np.concatenate([[0], np.cumsum(arrivals)])[day_index]
    release = (start - timedelta(days=member.release_days)).date()
    noise = rng.normal(0.0, 1.0, n) * config.sigma
    dropped = rng.random(n) < config.drop_rate
    dropped[0] = dropped[-1] = False
    return _ProductPath(
        member=member,
        rng=rng,
        prices=prices,
        marketplace=marketplace,
        reviews=reviews.astype(float),
        days=np.asarray(days_since_release(timestamps, release)),
        noise=noise,
        dropped=dropped,
    )


def _catalog(config: SimConfig, start) -> Catalog:
    products = []
    for group in config.groups:
        kinds = _KIND_BY_POSITION.get(group.relation)
        for position, member in enumerate(group.members):
            release = (start - timedelta(days=member.release_days)).date()
            if group.size == 1:
                kind, group_id, components = ProductKind.STANDALONE, None, ()
            elif group.relation is Relation.BUNDLE_WITH_COMPONENTS:
                group_id = group.group_id
                if position == 0:
                    kind, components = ProductKind.BUNDLE, group.product_ids[1:]
                else:
                    kind, components = ProductKind.COMPONENT, ()
            else:
                kind, group_id, components = kinds[position], group.group_id, ()
            products.append(
                Product(
                    product_id=member.product_id,
                    title=member.title or member.product_id,
                    category=group.category,
                    release_date=release,
                    kind=kind,
                    group_id=group_id,
                    bundle_components=tuple(components),
                )
            )
    return Catalog(products)


@dataclass(frozen=True)
class SimulatedMarket:
    config: SimConfig
    table: ObservationTable
    panel: PanelDataset
    truth: GroundTruth
    experiment: ObservationTable | None = None


def generate_market(config: SimConfig) -> tuple[PanelDataset, GroundTruth]:
    market = _generate(config)
    return market.panel, market.truth


def run_simulation(config: SimConfig) -> SimulatedMarket:
    """generate_market plus the optional hourly calibration experiment."""
    market = _generate(config)
    if config.experiment_weeks > 0:
        experiment = dataclasses.replace(
            config,
            rank_policy="event_decay",
            slots_per_day=24,
            days=7 * config.experiment_weeks,
            drop_rate=0.0,
            rank_rounding=True,
            experiment_weeks=0,
        )
        logger.info("simulating %d-week calibration experiment", config.experiment_weeks)
        market = dataclasses.replace(market, experiment=_generate(experiment).table)
    return market


def _generate(config: SimConfig) -> SimulatedMarket:
    start = pd.Timestamp(config.start)
    start = start.tz_localize("UTC") if start.tzinfo is None else start.tz_convert("UTC")
    n_slots = config.days * config.slots_per_day
    timestamps = pd.date_range(start, periods=n_slots, freq=f"{config.slot_hours}h")
    calibration = config.calibration

    members = config.members()
    with ThreadPoolExecutor(max_workers=max(config.workers, 1)) as pool:
        drawn = list(pool.map(lambda gm: _draw_path(config, gm[1], timestamps, start), members))
    paths = {path.member.product_id: path for path in drawn}

    log_rank, fixed_effects = {}, {}
    for group in config.groups:
        phi = group.rank_coefficients()
        log_prices = np.vstack([np.log(paths[pid].prices) for pid in group.product_ids])
        for a, member in enumerate(group.members):
            path = paths[member.product_id]
            systematic = phi[a] @ log_prices + path.controls()
            if member.marketplace_price is not None:
                systematic = systematic + member.lambda_ * np.log(path.marketplace)
            fixed_effects[member.product_id] = math.log(member.base_rank) - systematic[0]
            log_rank[member.product_id] = fixed_effects[member.product_id] + systematic + path.noise

    demand = {
        pid: np.exp(calibration.intercept + calibration.beta * lr) for pid, lr in log_rank.items()
    }
    events: list[SimulatedPurchase] = []
    clips = 0
    if config.rank_policy == "direct_pareto":
        ranks = {}
        for pid, lr in log_rank.items():
            latent = np.exp(lr)
            if config.rank_rounding:
                clips += int(np.sum(latent < 0.5))
                latent = np.maximum(np.round(latent), 1.0)
            ranks[pid] = latent
        if clips:
            logger.warning("%d latent ranks below 1 were clipped", clips)
    else:
        ranks, events = _event_ranks(config, paths, demand, timestamps)

    frame, drops = _observation_frame(paths, ranks, timestamps, config)
    table = ObservationTable(frame=frame, rows_read=len(frame), source="simulation")
    catalog = _catalog(config, start)
    panel = validate_panel(table, catalog, ValidationPolicy(slots_per_day=config.slots_per_day))

    truth = _ground_truth(config, panel, paths, fixed_effects, events, drops, clips)
    logger.info(
        "simulated %d products over %d slots (%s ranks, %d events, %d drops)",
        len(paths),
        n_slots,
        config.rank_policy,
        len(events),
        len(drops),
    )
    return SimulatedMarket(config=config, table=table, panel=panel, truth=truth)


def _event_ranks(config, paths, demand, timestamps):
    decay = 2.0 ** (-config.slot_hours / config.half_life_hours)
    scores, events = {}, []
    for pid in sorted(paths):
        units = np.maximum(demand[pid] - 1.0, 0.0)
        rate = units * config.slot_hours / 168.0
        purchases = paths[pid].rng.poisson(rate)
        score = np.empty(rate.size)
        level = rate[0] / (1.0 - decay)
        for t, bought in enumerate(purchases):
            level = level * decay + bought
            score[t] = level
        scores[pid] = score
        events += [
            SimulatedPurchase(pid, timestamps[t], int(purchases[t]))
            for t in np.flatnonzero(purchases)
        ]

    policy = RankPolicy(
        kind=config.rank_policy,
        calibration=config.calibration,
        background_size=config.background_size,
        anchor_rank=config.background_anchor_rank,
    )
    ranks = {pid: np.empty(timestamps.size) for pid in paths}
    for t, time in enumerate(timestamps):
        current = policy.apply({pid: scores[pid][t] for pid in paths}, time)
        for pid, rank in current.items():
            ranks[pid][t] = rank
    return ranks, events


def _observation_frame(paths, ranks, timestamps, config):
    columns = {name: [] for name in OBSERVATION_COLUMNS}
    drops = []
    for pid in sorted(paths):
        path = paths[pid]
        keep = ~path.dropped
        drops += [(pid, timestamps[t]) for t in np.flatnonzero(path.dropped)]
        n = int(keep.sum())
        rating = np.nan if path.member.avg_rating is None else path.member.avg_rating
        columns["product_id"].append(np.full(n, pid, dtype=object))
        columns["timestamp"].append(timestamps[keep])
        columns["sales_rank"].append(ranks[pid][keep])
        columns["amazon_price"].append(path.prices[keep])
        columns["list_price"].append(
            np.full(n, round(path.member.base_price * path.member.list_markup, 2))
        )
        columns["marketplace_new_price"].append(path.marketplace[keep])
        columns["avg_rating"].append(np.full(n, rating))
        columns["n_reviews"].append(path.reviews[keep])
    if drops:
        logger.info("dropped %d observations", len(drops))
    stamps = columns.pop("timestamp")
    merged = {name: np.concatenate(parts) for name, parts in columns.items()}
    merged["timestamp"] = stamps[0].append(stamps[1:])
    return make_observation_frame(merged), drops


def _ground_truth(config, panel, paths, fixed_effects, events, drops, clips) -> GroundTruth:
    calibration = config.calibration
    products, groups = {}, []
    for group in config.groups:
        N = calibration.beta * group.rank_coefficients()
        base_prices = np.array([paths[pid].prices[0] for pid in group.product_ids])
        costs = np.array([m.cost for m in group.members])
        base_demand = np.array(
            [math.exp(calibration.intercept) * m.base_rank**calibration.beta for m in group.members]
        )
        model = ProfitModel(
            group.product_ids, base_prices, costs, base_demand, N, config.k, group.group_id
        )
        optimum = find_optimal_prices(model)
        optimal_shares = None
        if optimum is not None:
            q = local_demand(model, optimum)
            optimal_shares = optimum * q / np.sum(optimum * q)

        observed = None
        try:
            summary = window_summary(panel, group.product_ids, calibration)
            observed = evaluate(
                ProfitModel(
                    group.product_ids,
                    summary.prices,
                    costs,
                    summary.demand_index,
                    N,
                    config.k,
                    group.group_id,
                ),
                config.tolerance,
            )
        except InputError as exc:
            logger.warning("group '%s': no observed-price verdicts (%s)", group.group_id, exc)

        groups.append(
            GroupTruth(
                group_id=group.group_id,
                relation=group.relation.value if group.size > 1 else "standalone",
                members=group.product_ids,
                elasticities=N,
                costs=costs,
                base_prices=base_prices,
                base_demand=base_demand,
                optimal_prices=optimum,
                optimal_shares=optimal_shares,
                base_verdicts=evaluate(model, config.tolerance),
                observed_verdicts=observed,
            )
        )
        for a, member in enumerate(group.members):
            products[member.product_id] = ProductTruth(
                product_id=member.product_id,
                group_id=group.group_id,
                phi=member.phi,
                gammas=dict(member.gammas),
                lambda_=member.lambda_,
                omega=dict(member.omega),
                cost=member.cost,
                base_price=float(base_prices[a]),
                base_rank=member.base_rank,
                fixed_effect=fixed_effects[member.product_id],
                optimal_price=None if optimum is None else float(optimum[a]),
            )
    return GroundTruth(
        seed=config.seed,
        rank_policy=config.rank_policy,
        calibration=calibration,
        k=config.k,
        products=dict(sorted(products.items())),
        groups=tuple(groups),
        events=tuple(events),
        drops=tuple(drops),
        rank_clips=clips,
    )


def true_costs(truth: GroundTruth) -> dict:
    """True costs in the costs-artifact layout, evaluated at base prices."""
    groups = []
    for group in truth.groups:
        revenue = group.base_prices * group.base_demand
        shares = revenue / revenue.sum()
        lerner = (group.base_prices - group.costs) / group.base_prices
        groups.append(
            {
                "group_id": group.group_id,
                "members": [
                    {
                        "product_id": pid,
                        "price": group.base_prices[i],
                        "share": shares[i],
                        "m": lerner[i] * shares[i],
                        "lerner": lerner[i],
                        "marginal_cost": group.costs[i],
                        "flags": [],
                    }
                    for i, pid in enumerate(group.members)
                ],
                "condition_estimate": None,
                "share_method": "true",
                "raw_share_sum": None,
                "window": {"start": None, "end": None},
            }
        )
    return {"share_method": "true", "groups": groups, "skipped": []}


def write_market(market: SimulatedMarket, out_dir) -> dict[str, Path]:
    """observations.csv, products.csv, ground_truth.json and true_costs.json."""
    if not market.config.rank_rounding:
        raise InputError("continuous ranks cannot be written; set rank_rounding = true")
    out_dir = Path(out_dir)
    paths = {
        "observations": write_observations(market.table.frame, out_dir / "observations.csv"),
        "catalog": write_catalog(market.panel.catalog, out_dir / "products.csv"),
        "ground_truth": artifacts.write_artifact(
            out_dir / artifacts.GROUND_TRUTH, ground_truth_report(market.truth)
        ),
        "true_costs": artifacts.write_artifact(
            out_dir / artifacts.TRUE_COSTS, true_costs(market.truth)
        ),
    }
    if market.experiment is not None:
        paths["experiment"] = write_observations(
            market.experiment.frame, out_dir / "experiment_observations.csv"
        )
    return paths


def simulate_calibration_pairs(
    n_products: int = 300,
    weeks: int = 2,
    intercept: float = DEFAULT_INTERCEPT,
    beta: float = DEFAULT_BETA,
    sigma: float = 0.3,
    seed: int = 0,
    rank_range: tuple[float, float] = (10.0, 10_000.0),
) -> list[DemandRankPair]:
    """
    Weekly (units, mean hourly rank) pairs from a direct power-law market:
    log(Q + 1) = intercept + beta * log(mean rank) + e, e ~ N(0, sigma^2).
    """
    rng = np.random.default_rng(seed)
    low, high = np.log(rank_range[0]), np.log(rank_range[1])
    levels = np.exp(rng.uniform(low, high, n_products))
    hourly = levels[:, None, None] * np.exp(rng.normal(0.0, 0.1, (n_products, weeks, 168)))
    mean_rank = np.maximum(hourly.mean(axis=2), 1.0)
    log_units = intercept + beta * np.log(mean_rank) + rng.normal(0.0, sigma, mean_rank.shape)
    units = np.maximum(np.expm1(log_units), 0.0)
    return [
        DemandRankPair(f"sim{i:04d}", week, float(units[i, week]), float(mean_rank[i, week]))
        for i in range(n_products)
        for week in range(weeks)
    ]
