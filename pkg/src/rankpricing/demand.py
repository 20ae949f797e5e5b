"""
Fixed-effects demand estimation on log sales rank.

For each product i of a relation group the regression is

    log(rank_it) = a_i + phi*log(p_it) + sum_j gamma_j*log(p_jt)
                   + lambda*log(marketplace_it) + omega'X_it + e_it

with j over the other members of the group. Product effects are absorbed by
the within transformation. Elasticities follow by scaling with the Pareto
slope beta: own = beta*phi, cross = beta*gamma.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd

from .dataset import PanelDataset, RelationGroup
from .errors import InputError
from .statcore import CovarianceKind, DesignMatrix, RegressionResult, ols_fit, within_transform

logger = logging.getLogger(__name__)

CONTROL_LABELS = {
    "days_release": "ln_days_release",
    "avg_rating": "avg_rating",
    "n_reviews": "ln_n_reviews",
}
MARKETPLACE_LABEL = "ln_marketplace_price"


def price_label(product_id: str) -> str:
    return f"ln_price[{product_id}]"


def role_label(position: int) -> str:
    return f"ln_price[member{position}]"


@dataclass(frozen=True)
class DemandSpec:
    controls: tuple[str, ...] = ("days_release", "avg_rating", "n_reviews")
    pooled: bool = False
    use_marketplace: bool = True
    min_rows: int = 30
    covariance: CovarianceKind = "hc0"
    adjust_absorbed: bool = True
    workers: int = 1

    def __post_init__(self):
        unknown = [c for c in self.controls if c not in CONTROL_LABELS]
        if unknown:
            raise InputError(f"unknown control(s): {', '.join(unknown)}")
        object.__setattr__(self, "controls", tuple(self.controls))

    def to_dict(self) -> dict:
        return {
            "controls": list(self.controls),
            "pooled": self.pooled,
            "use_marketplace": self.use_marketplace,
            "min_rows": self.min_rows,
            "covariance": self.covariance,
            "adjust_absorbed": self.adjust_absorbed,
        }


@dataclass(frozen=True)
class FocalDesign:
    """Aligned, log-transformed regressors for one focal product (before demeaning)."""

    group_id: str
    product_id: str
    related: tuple[str, ...]
    raw: DesignMatrix
    response: np.ndarray
    slots: pd.DatetimeIndex
    marketplace: bool
    controls: tuple[str, ...]
    labels_by_product: dict[str, str]

    @property
    def entity_ids(self) -> np.ndarray:
        return np.full(self.raw.n, self.product_id, dtype=object)

    def within(self) -> tuple[DesignMatrix, np.ndarray]:
        ids = self.entity_ids
        return (
            DesignMatrix(within_transform(self.raw.values, ids), self.raw.labels),
            within_transform(self.response, ids),
        )


def build_design(
    group: RelationGroup,
    panel: PanelDataset,
    product_id: str,
    spec: DemandSpec | None = None,
    *,
    by_role: bool = False,
) -> FocalDesign:
    """
    Align the focal product's rank with every member's price (and the focal
    marketplace price and controls) on observation slots. Rows missing the
    focal rank or any required price are dropped.
    """
    spec = spec or DemandSpec()
    related = group.related(product_id)
    members = (product_id, *related)
    if by_role:
        labels = {m: role_label(group.members.index(m)) for m in members}
    else:
        labels = {m: price_label(m) for m in members}

    prices = panel.wide("amazon_price", members)
    focal = panel.product_frame(product_id).set_index("slot")
    data = pd.DataFrame({"__rank": focal["sales_rank"]})
    for member in members:
        data[labels[member]] = prices[member]
    required = ["__rank", *labels.values()]

    marketplace = spec.use_marketplace and focal["marketplace_new_price"].notna().any()
    if marketplace:
        data[MARKETPLACE_LABEL] = focal["marketplace_new_price"]
        required.append(MARKETPLACE_LABEL)
    for control in spec.controls:
        data[control] = focal[control]

    aligned = data.dropna(subset=required)
    controls = []
    for control in spec.controls:
        if aligned[control].notna().all():
            controls.append(control)
        else:
            logger.warning(
                "group '%s': control %s incomplete for '%s'; omitted",
                group.group_id,
                control,
                product_id,
            )

    if len(aligned) < spec.min_rows:
        raise InputError(
            f"group '{group.group_id}': {len(aligned)} aligned rows for '{product_id}', "
            f"need at least {spec.min_rows}"
        )
    price_columns = [c for c in required if c != "__rank"]
    if (aligned[price_columns] <= 0).to_numpy().any():
        raise InputError(f"group '{group.group_id}': nonpositive price in aligned rows")

    columns = {label: np.log(aligned[label].to_numpy()) for label in price_columns}
    for control in controls:
        values = aligned[control].to_numpy(dtype=float)
        if control == "avg_rating":
            columns[CONTROL_LABELS[control]] = values
        else:
            columns[CONTROL_LABELS[control]] = np.log1p(values)

    return FocalDesign(
        group_id=group.group_id,
        product_id=product_id,
        related=related,
        raw=DesignMatrix.from_columns(columns),
        response=np.log(aligned["__rank"].to_numpy(dtype=float)),
        slots=pd.DatetimeIndex(aligned.index),
        marketplace=bool(marketplace),
        controls=tuple(controls),
        labels_by_product=labels,
    )


@dataclass(frozen=True)
class DemandEstimates:
    group_id: str
    product_id: str
    phi: float
    gammas: dict[str, float]
    lambda_: float | None
    controls: dict[str, float]
    intercept: float
    standard_errors: dict[str, float]
    r_squared: float
    n_obs: int
    dropped: tuple[str, ...] = ()
    dropped_related: tuple[str, ...] = ()
    covariance: np.ndarray | None = None
    labels: tuple[str, ...] = ()
    pooled_with: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "product_id": self.product_id,
            "phi": self.phi,
            "gammas": dict(self.gammas),
            "lambda": self.lambda_,
            "controls": dict(self.controls),
            "intercept": self.intercept,
            "se": dict(self.standard_errors),
            "r2": self.r_squared,
            "n_obs": self.n_obs,
            "dropped": list(self.dropped),
            "dropped_related": list(self.dropped_related),
            "pooled_with": list(self.pooled_with),
        }

    @classmethod
    def from_dict(cls, group_id: str, data: Mapping) -> DemandEstimates:
        try:
            return cls(
                group_id=group_id,
                product_id=str(data["product_id"]),
                phi=float(data["phi"]),
                gammas={str(k): float(v) for k, v in data["gammas"].items()},
                lambda_=None if data.get("lambda") is None else float(data["lambda"]),
                controls={str(k): float(v) for k, v in data.get("controls", {}).items()},
                intercept=float(data.get("intercept", 0.0)),
                standard_errors={str(k): float(v) for k, v in data.get("se", {}).items()},
                r_squared=float(data.get("r2", 0.0)),
                n_obs=int(data["n_obs"]),
                dropped=tuple(data.get("dropped", ())),
                dropped_related=tuple(data.get("dropped_related", ())),
                pooled_with=tuple(data.get("pooled_with", ())),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InputError(f"malformed demand estimates in group '{group_id}': {exc!r}") from exc


def _estimates_from_result(
    design: FocalDesign,
    result: RegressionResult,
    intercept: float,
    pooled_with: tuple[str, ...] = (),
) -> DemandEstimates:
    coef = dict(zip(result.labels, result.coefficients, strict=True))
    se = dict(zip(result.labels, result.standard_errors, strict=True))
    product_id = design.product_id
    own = design.labels_by_product[product_id]
    if own not in coef:
        raise InputError(
            f"group '{design.group_id}': own price of '{product_id}' has no usable variation"
        )
    n_params = len(result.labels) + result.absorbed
    if result.n < n_params + 2:
        raise InputError(
            f"group '{design.group_id}': {result.n} rows for '{product_id}' "
            f"cannot support {n_params} parameters"
        )

    gammas, dropped_related = {}, []
    errors = {"phi": float(se[own])}
    for j in design.related:
        label = design.labels_by_product[j]
        if label in coef:
            gammas[j] = float(coef[label])
            errors[f"gamma[{j}]"] = float(se[label])
        else:
            dropped_related.append(j)
    lambda_ = None
    if design.marketplace and MARKETPLACE_LABEL in coef:
        lambda_ = float(coef[MARKETPLACE_LABEL])
        errors["lambda"] = float(se[MARKETPLACE_LABEL])
    controls = {}
    for control in design.controls:
        label = CONTROL_LABELS[control]
        if label in coef:
            controls[control] = float(coef[label])
            errors[control] = float(se[label])

    if dropped_related:
        logger.warning(
            "group '%s': cross-price term(s) for %s dropped in '%s' equation",
            design.group_id,
            ", ".join(dropped_related),
            product_id,
        )
    return DemandEstimates(
        group_id=design.group_id,
        product_id=product_id,
        phi=float(coef[own]),
        gammas=gammas,
        lambda_=lambda_,
        controls=controls,
        intercept=intercept,
        standard_errors=errors,
        r_squared=result.r_squared,
        n_obs=result.n,
        dropped=result.dropped_columns,
        dropped_related=tuple(dropped_related),
        covariance=result.covariance,
        labels=result.labels,
        pooled_with=pooled_with,
    )


def _fixed_effect(design: FocalDesign, result: RegressionResult) -> float:
    keep = [design.raw.labels.index(label) for label in result.labels]
    column_means = design.raw.values[:, keep].mean(axis=0)
    return float(design.response.mean() - column_means @ result.coefficients)


def estimate_focal(design: FocalDesign, spec: DemandSpec | None = None) -> DemandEstimates:
    spec = spec or DemandSpec()
    X, y = design.within()
    result = ols_fit(X, y, covariance=spec.covariance, absorbed=1 if spec.adjust_absorbed else 0)
    return _estimates_from_result(design, result, _fixed_effect(design, result))


@dataclass(frozen=True)
class GroupDemand:
    group_id: str
    relation: str
    members: tuple[str, ...]
    estimates: tuple[DemandEstimates, ...]

    def estimate_for(self, product_id: str) -> DemandEstimates:
        for estimate in self.estimates:
            if estimate.product_id == product_id:
                return estimate
        raise InputError(f"group '{self.group_id}' has no estimates for '{product_id}'")

    def elasticities(self, beta: float) -> ElasticityMatrix:
        return elasticity_matrix(self.estimates, beta, members=self.members, group_id=self.group_id)

    def to_dict(self, beta: float) -> dict:
        return {
            "group_id": self.group_id,
            "relation": self.relation,
            "members": [e.to_dict() for e in self.estimates],
            "elasticities": self.elasticities(beta).to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> GroupDemand:
        try:
            group_id = str(data["group_id"])
            estimates = tuple(DemandEstimates.from_dict(group_id, m) for m in data["members"])
            members = tuple(data.get("elasticities", {}).get("members") or
                            [e.product_id for e in estimates])
            return cls(group_id, str(data.get("relation", "")), members, estimates)
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed demand group: {exc!r}") from exc


def estimate_demand(
    group: RelationGroup, panel: PanelDataset, spec: DemandSpec | None = None
) -> GroupDemand:
    """Estimate one equation per group member."""
    spec = spec or DemandSpec()
    estimates = tuple(
        estimate_focal(build_design(group, panel, member, spec), spec) for member in group.members
    )
    logger.info("estimated demand for group '%s' (%d members)", group.group_id, group.size)
    return GroupDemand(group.group_id, group.relation.value, group.members, estimates)


@dataclass(frozen=True)
class DemandRun:
    groups: tuple[GroupDemand, ...]
    skipped: tuple[tuple[str, str], ...] = field(default_factory=tuple)


def estimate_all(panel: PanelDataset, spec: DemandSpec | None = None) -> DemandRun:
    """
    Estimate every relation group of the panel. Groups without enough data are
    skipped and reported; numerical failures propagate.
    """
    spec = spec or DemandSpec()
    if spec.pooled:
        return estimate_pooled(panel, spec)

    def one(group: RelationGroup):
        try:
            return estimate_demand(group, panel, spec), None
        except InputError as exc:
            logger.warning("group '%s' skipped: %s", group.group_id, exc)
            return None, (group.group_id, str(exc))

    with ThreadPoolExecutor(max_workers=max(spec.workers, 1)) as pool:
        results = list(pool.map(one, panel.groups))
    groups = tuple(sorted((g for g, _ in results if g), key=lambda g: g.group_id))
    skipped = tuple(sorted(s for _, s in results if s))
    return DemandRun(groups=groups, skipped=skipped)


def estimate_pooled(panel: PanelDataset, spec: DemandSpec | None = None) -> DemandRun:
    """
    Pool groups of the same relation and size: for each member position the
    focal equations are stacked, product effects are absorbed, and the
    coefficients are shared across the stacked products.
    """
    spec = spec or DemandSpec()
    shapes: dict[tuple[str, int], list[RelationGroup]] = defaultdict(list)
    for group in panel.groups:
        shapes[(group.relation.value, group.size)].append(group)

    per_group: dict[str, dict[str, DemandEstimates]] = defaultdict(dict)
    skipped: dict[str, str] = {}
    for (relation, size), groups in sorted(shapes.items()):
        for position in range(size):
            designs = []
            for group in groups:
                if group.group_id in skipped:
                    continue
                try:
                    designs.append(
                        build_design(group, panel, group.members[position], spec, by_role=True)
                    )
                except InputError as exc:
                    logger.warning("group '%s' skipped: %s", group.group_id, exc)
                    skipped[group.group_id] = str(exc)
            if not designs:
                continue
            for design, estimate in zip(designs, _fit_stack(designs, spec), strict=True):
                per_group[design.group_id][design.product_id] = estimate
        logger.info("pooled %d %s groups of size %d", len(groups), relation, size)

    results = []
    for group in panel.groups:
        if group.group_id in skipped or group.group_id not in per_group:
            continue
        estimates = tuple(per_group[group.group_id][m] for m in group.members)
        results.append(GroupDemand(group.group_id, group.relation.value, group.members, estimates))
    return DemandRun(
        groups=tuple(sorted(results, key=lambda g: g.group_id)),
        skipped=tuple(sorted(skipped.items())),
    )


def _fit_stack(designs: list[FocalDesign], spec: DemandSpec) -> list[DemandEstimates]:
    labels = [
        label for label in designs[0].raw.labels if all(label in d.raw.labels for d in designs)
    ]
    raw = np.vstack(
        [d.raw.values[:, [d.raw.labels.index(label) for label in labels]] for d in designs]
    )
    response = np.concatenate([d.response for d in designs])
    ids = np.concatenate([d.entity_ids for d in designs])
    X = DesignMatrix(within_transform(raw, ids), tuple(labels))
    y = within_transform(response, ids)
    absorbed = len(designs) if spec.adjust_absorbed else 0
    result = ols_fit(X, y, covariance=spec.covariance, absorbed=absorbed)

    pooled_with = tuple(d.product_id for d in designs)
    estimates = []
    for design in designs:
        restricted = FocalDesign(
            group_id=design.group_id,
            product_id=design.product_id,
            related=design.related,
            raw=DesignMatrix(
                design.raw.values[:, [design.raw.labels.index(label) for label in labels]],
                tuple(labels),
            ),
            response=design.response,
            slots=design.slots,
            marketplace=design.marketplace and MARKETPLACE_LABEL in labels,
            controls=tuple(c for c in design.controls if CONTROL_LABELS[c] in labels),
            labels_by_product=design.labels_by_product,
        )
        effect = _fixed_effect(restricted, result)
        estimates.append(_estimates_from_result(restricted, result, effect, pooled_with))
    return estimates


# =============================================================================
# Elasticities
# =============================================================================


def own_price_elasticity(phi: float, beta: float) -> float:
    return beta * phi


def cross_price_elasticity(gamma: float, beta: float) -> float:
    return beta * gamma


def marketplace_price_elasticity(lambda_: float, beta: float) -> float:
    return beta * lambda_


@dataclass(frozen=True)
class ElasticityMatrix:
    """
    N[i][j] is the elasticity of member i's demand with respect to member j's
    price. `marketplace[i]` is the elasticity with respect to i's third-party
    new price, None where that term was not estimated.
    """

    group_id: str
    members: tuple[str, ...]
    matrix: np.ndarray
    structural_zeros: tuple[tuple[str, str], ...] = ()
    marketplace: tuple[float | None, ...] = ()

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": list(self.members),
            "matrix": self.matrix.tolist(),
            "structural_zeros": [list(pair) for pair in self.structural_zeros],
            "marketplace": list(self.marketplace),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ElasticityMatrix:
        try:
            return cls(
                group_id=str(data["group_id"]),
                members=tuple(data["members"]),
                matrix=np.asarray(data["matrix"], dtype=float),
                structural_zeros=tuple(tuple(p) for p in data.get("structural_zeros", ())),
                marketplace=tuple(
                    None if v is None else float(v) for v in data.get("marketplace", ())
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed elasticity matrix: {exc!r}") from exc


def elasticity_matrix(
    estimates: Sequence[DemandEstimates],
    beta: float,
    members: Sequence[str] | None = None,
    group_id: str | None = None,
) -> ElasticityMatrix:
    """
    Own elasticities on the diagonal, cross elasticities off it. A cross term
    whose column was dropped is a structural zero and is listed as such.
    """
    by_id = {e.product_id: e for e in estimates}
    members = tuple(members) if members is not None else tuple(e.product_id for e in estimates)
    missing = [m for m in members if m not in by_id]
    if missing:
        raise InputError(f"no demand estimates for: {', '.join(missing)}")
    if group_id is None:
        group_id = estimates[0].group_id if estimates else ""

    n = len(members)
    matrix = np.zeros((n, n))
    zeros = []
    for a, i in enumerate(members):
        estimate = by_id[i]
        matrix[a, a] = own_price_elasticity(estimate.phi, beta)
        for b, j in enumerate(members):
            if a == b:
                continue
            gamma = estimate.gammas.get(j)
            if gamma is None:
                zeros.append((i, j))
            else:
                matrix[a, b] = cross_price_elasticity(gamma, beta)
    marketplace = tuple(
        None if by_id[i].lambda_ is None else marketplace_price_elasticity(by_id[i].lambda_, beta)
        for i in members
    )
    return ElasticityMatrix(group_id, members, matrix, tuple(zeros), marketplace)
