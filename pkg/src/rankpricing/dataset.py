"""
Panel ingestion: observations and catalog files, relation groups, and the
validated panel the estimators read from.

Observation rows are parsed column-wise with pandas; every row is either
accepted or rejected with its 1-based data-row number and a reason.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from datetime import date
from enum import StrEnum
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputError

logger = logging.getLogger(__name__)

OBSERVATION_COLUMNS = (
    "product_id",
    "timestamp",
    "sales_rank",
    "amazon_price",
    "list_price",
    "marketplace_new_price",
    "avg_rating",
    "n_reviews",
)
CATALOG_COLUMNS = (
    "product_id",
    "title",
    "category",
    "release_date",
    "kind",
    "group_id",
    "bundle_components",
)
PRICE_COLUMNS = ("amazon_price", "list_price", "marketplace_new_price")


class Category(StrEnum):
    BUSINESS_PRODUCTIVITY = "business_productivity"
    SECURITY_UTILITIES = "security_utilities"
    GRAPHICS_DEVELOPMENT = "graphics_development"
    OPERATING_SYSTEMS = "operating_systems"


class ProductKind(StrEnum):
    STANDALONE = "standalone"
    VERSION_HIGH = "version_high"
    VERSION_MID = "version_mid"
    VERSION_LOW = "version_low"
    BUNDLE = "bundle"
    COMPONENT = "component"
    GENERATION_CURRENT = "generation_current"
    GENERATION_PRIOR = "generation_prior"


class Relation(StrEnum):
    VERSIONS = "versions"
    BUNDLE_WITH_COMPONENTS = "bundle_with_components"
    GENERATIONS = "generations"


VERSION_ORDER = {
    ProductKind.VERSION_HIGH: 0,
    ProductKind.VERSION_MID: 1,
    ProductKind.VERSION_LOW: 2,
}
GENERATION_ORDER = {ProductKind.GENERATION_CURRENT: 0, ProductKind.GENERATION_PRIOR: 1}
RELATION_ORDER = {relation: i for i, relation in enumerate(Relation)}


# =============================================================================
# Observations
# =============================================================================


@dataclass(frozen=True, slots=True)
class PanelObservation:
    product_id: str
    timestamp: pd.Timestamp
    sales_rank: int
    amazon_price: float
    list_price: float
    marketplace_new_price: float | None
    avg_rating: float | None
    n_reviews: int


@dataclass(frozen=True)
class RowReject:
    row: int
    reason: str


@dataclass(frozen=True)
class ObservationTable:
    """Accepted observation rows (typed frame) plus the rejects from parsing."""

    frame: pd.DataFrame
    rejects: tuple[RowReject, ...] = ()
    rows_read: int = 0
    source: str = ""

    def __len__(self) -> int:
        return len(self.frame)

    def observations(self) -> Iterator[PanelObservation]:
        for row in self.frame.itertuples(index=False):
            yield PanelObservation(
                product_id=row.product_id,
                timestamp=row.timestamp,
                sales_rank=int(row.sales_rank),
                amazon_price=float(row.amazon_price),
                list_price=float(row.list_price),
                marketplace_new_price=_optional(row.marketplace_new_price),
                avg_rating=_optional(row.avg_rating),
                n_reviews=int(row.n_reviews),
            )


def _optional(value) -> float | None:
    return None if pd.isna(value) else float(value)


def make_observation_frame(columns: Mapping[str, object]) -> pd.DataFrame:
    """Build an observation frame with the canonical column order and dtypes."""
    frame = pd.DataFrame({name: columns[name] for name in OBSERVATION_COLUMNS})
    frame["product_id"] = frame["product_id"].astype(str)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], utc=True)
    for name in OBSERVATION_COLUMNS[2:]:
        frame[name] = pd.to_numeric(frame[name]).astype(float)
    return frame


def load_observations(path, *, strict: bool = False) -> ObservationTable:
    """
    Parse an observations CSV. Rows violating the schema are collected as
    rejects; with `strict` any reject is an error.
    """
    path = Path(path)
    raw = _read_raw(path, OBSERVATION_COLUMNS, "observations")

    reasons = pd.Series("", index=raw.index, dtype=object)

    def reject(mask: pd.Series, reason: str) -> None:
        reasons[mask.fillna(False).astype(bool) & (reasons == "")] = reason

    product_id = raw["product_id"].str.strip()
    reject(product_id == "", "missing product_id")

    timestamp = pd.to_datetime(raw["timestamp"], utc=True, errors="coerce", format="ISO8601")
    reject(timestamp.isna(), "unparseable timestamp")

    rank = _numeric(raw["sales_rank"])
    reject(rank.isna(), "unparseable sales_rank")
    reject(rank.notna() & (rank != np.floor(rank)), "sales_rank not an integer")
    reject(rank < 1, "rank < 1")

    parsed = {}
    for name in ("amazon_price", "list_price"):
        value = _numeric(raw[name])
        reject(value.isna(), f"unparseable {name}")
        reject(value <= 0, "nonpositive price")
        parsed[name] = value

    present = raw["marketplace_new_price"].str.strip() != ""
    marketplace = _numeric(raw["marketplace_new_price"])
    reject(present & marketplace.isna(), "unparseable marketplace_new_price")
    reject(marketplace <= 0, "nonpositive price")

    present = raw["avg_rating"].str.strip() != ""
    rating = _numeric(raw["avg_rating"])
    reject(present & rating.isna(), "unparseable avg_rating")
    reject((rating < 1) | (rating > 5), "avg_rating outside [1, 5]")

    reviews = _numeric(raw["n_reviews"])
    reject(reviews.isna(), "unparseable n_reviews")
    reject(reviews.notna() & (reviews != np.floor(reviews)), "n_reviews not an integer")
    reject(reviews < 0, "n_reviews < 0")

    rejected = reasons != ""
    rejects = tuple(
        RowReject(row=int(i) + 1, reason=reason) for i, reason in reasons[rejected].items()
    )
    accepted = ~rejected
    frame = make_observation_frame(
        {
            "product_id": product_id[accepted].to_numpy(),
            "timestamp": timestamp[accepted].to_numpy(),
            "sales_rank": rank[accepted].to_numpy(),
            "amazon_price": parsed["amazon_price"][accepted].to_numpy(),
            "list_price": parsed["list_price"][accepted].to_numpy(),
            "marketplace_new_price": marketplace[accepted].to_numpy(),
            "avg_rating": rating[accepted].to_numpy(),
            "n_reviews": reviews[accepted].to_numpy(),
        }
    )

    logger.info("read %d observation rows from %s (%d rejected)", len(raw), path, len(rejects))
    if rejects:
        first = rejects[0]
        logger.warning("first rejected row %d: %s", first.row, first.reason)
        if strict:
            raise InputError(
                f"{len(rejects)} rows rejected in {path}; first: row {first.row}: {first.reason}"
            )
    return ObservationTable(frame=frame, rejects=rejects, rows_read=len(raw), source=str(path))


def _read_raw(path: Path, columns: tuple[str, ...], what: str) -> pd.DataFrame:
    if not path.is_file():
        raise InputError(f"{what} file not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError as exc:
        raise InputError(f"malformed header in {path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if tuple(raw.columns) != columns:
        raise InputError(
            f"malformed header in {path}: expected {','.join(columns)}, "
            f"got {','.join(map(str, raw.columns))}"
        )
    return raw.fillna("")


def _numeric(column: pd.Series) -> pd.Series:
    value = pd.to_numeric(column.str.strip().replace("", np.nan), errors="coerce")
    return value.where(np.isfinite(value))


def format_timestamp(ts: pd.Timestamp) -> str:
    return ts.tz_convert("UTC").isoformat().replace("+00:00", "Z")


def _format_float(value) -> str:
    return "" if pd.isna(value) else repr(float(value))


def _format_int(value) -> str:
    return "" if pd.isna(value) else str(int(value))


def write_observations(frame: pd.DataFrame, path) -> Path:
    """Write observation rows in the canonical CSV layout."""
    path = Path(path)
    out = pd.DataFrame(
        {
            "product_id": frame["product_id"].astype(str),
            "timestamp": [format_timestamp(ts) for ts in frame["timestamp"]],
            "sales_rank": [_format_int(v) for v in frame["sales_rank"]],
            "amazon_price": [_format_float(v) for v in frame["amazon_price"]],
            "list_price": [_format_float(v) for v in frame["list_price"]],
            "marketplace_new_price": [_format_float(v) for v in frame["marketplace_new_price"]],
            "avg_rating": [_format_float(v) for v in frame["avg_rating"]],
            "n_reviews": [_format_int(v) for v in frame["n_reviews"]],
        }
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, lineterminator="\n")
    return path


# =============================================================================
# Catalog
# =============================================================================


@dataclass(frozen=True)
class Product:
    product_id: str
    title: str
    category: Category
    release_date: date
    kind: ProductKind
    group_id: str | None = None
    bundle_components: tuple[str, ...] = ()

    def __post_init__(self):
        is_bundle = self.kind is ProductKind.BUNDLE
        if is_bundle and not self.bundle_components:
            raise InputError(f"bundle '{self.product_id}' has no components")
        if not is_bundle and self.bundle_components:
            raise InputError(f"non-bundle '{self.product_id}' lists bundle components")
        if self.kind is not ProductKind.STANDALONE and not self.group_id:
            raise InputError(f"product '{self.product_id}' of kind {self.kind} needs a group_id")


class Catalog(Mapping[str, Product]):
    """Products keyed by product_id, iterated in sorted id order."""

    def __init__(self, products=()):
        self._products: dict[str, Product] = {}
        for product in products:
            if product.product_id in self._products:
                raise InputError(f"duplicate product_id '{product.product_id}'")
            self._products[product.product_id] = product

    def __getitem__(self, product_id: str) -> Product:
        return self._products[product_id]

    def __iter__(self):
        return iter(sorted(self._products))

    def __len__(self) -> int:
        return len(self._products)


def _token(enum_type, value: str, row: int, field_name: str):
    try:
        return enum_type(value.strip())
    except ValueError:
        raise InputError(f"catalog row {row}: unknown {field_name} '{value}'") from None


def load_catalog(path) -> Catalog:
    path = Path(path)
    raw = _read_raw(path, CATALOG_COLUMNS, "catalog")
    products = []
    for i, rec in enumerate(raw.to_dict("records"), start=1):
        try:
            released = date.fromisoformat(rec["release_date"].strip())
        except ValueError:
            raise InputError(
                f"catalog row {i}: bad release_date '{rec['release_date']}'"
            ) from None
        components = tuple(c.strip() for c in rec["bundle_components"].split(";") if c.strip())
        products.append(
            Product(
                product_id=rec["product_id"].strip(),
                title=rec["title"],
                category=_token(Category, rec["category"], i, "category"),
                release_date=released,
                kind=_token(ProductKind, rec["kind"], i, "kind"),
                group_id=rec["group_id"].strip() or None,
                bundle_components=components,
            )
        )
    catalog = Catalog(products)
    logger.info("read %d products from %s", len(catalog), path)
    return catalog


def write_catalog(catalog: Catalog, path) -> Path:
    path = Path(path)
    rows = [
        {
            "product_id": p.product_id,
            "title": p.title,
            "category": p.category.value,
            "release_date": p.release_date.isoformat(),
            "kind": p.kind.value,
            "group_id": p.group_id or "",
            "bundle_components": ";".join(p.bundle_components),
        }
        for p in catalog.values()
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=list(CATALOG_COLUMNS)).to_csv(
        path, index=False, lineterminator="\n"
    )
    return path


# =============================================================================
# Relation groups
# =============================================================================


@dataclass(frozen=True)
class RelationGroup:
    group_id: str
    relation: Relation
    members: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 2:
            raise InputError(f"group '{self.group_id}' needs at least two members")
        if len(set(self.members)) != len(self.members):
            raise InputError(f"group '{self.group_id}' repeats a member")

    @property
    def size(self) -> int:
        return len(self.members)

    def related(self, product_id: str) -> tuple[str, ...]:
        """The products whose prices enter product_id's demand equation."""
        return tuple(m for m in self.members if m != product_id)


def build_relation_groups(catalog: Catalog) -> list[RelationGroup]:
    """
    Versions and generations are grouped by group_id; each bundle forms a
    group with its components. A product may belong to groups of different
    relation types, but to at most one group per relation type.
    """
    by_key: dict[tuple[Relation, str], list[Product]] = defaultdict(list)
    bundles = []
    for product in catalog.values():
        if product.kind in VERSION_ORDER:
            by_key[(Relation.VERSIONS, product.group_id)].append(product)
        elif product.kind in GENERATION_ORDER:
            by_key[(Relation.GENERATIONS, product.group_id)].append(product)
        elif product.kind is ProductKind.BUNDLE:
            bundles.append(product)

    groups = []
    for (relation, group_id), members in by_key.items():
        order = VERSION_ORDER if relation is Relation.VERSIONS else GENERATION_ORDER
        members.sort(key=lambda p: (order[p.kind], p.product_id))
        if len(members) < 2:
            logger.warning(
                "group '%s' (%s) has a single member; skipped", group_id, relation.value
            )
            continue
        groups.append(RelationGroup(group_id, relation, tuple(p.product_id for p in members)))

    for bundle in bundles:
        missing = [c for c in bundle.bundle_components if c not in catalog]
        if missing:
            raise InputError(
                f"bundle '{bundle.product_id}' references unknown components: {', '.join(missing)}"
            )
        groups.append(
            RelationGroup(
                bundle.group_id,
                Relation.BUNDLE_WITH_COMPONENTS,
                (bundle.product_id, *bundle.bundle_components),
            )
        )

    groups.sort(key=lambda g: (RELATION_ORDER[g.relation], g.group_id))
    _check_membership(groups)
    return groups


def _check_membership(groups: list[RelationGroup]) -> None:
    seen_ids: dict[str, Relation] = {}
    seen_members: dict[tuple[Relation, str], str] = {}
    for group in groups:
        if group.group_id in seen_ids:
            raise InputError(
                f"group_id '{group.group_id}' is used by more than one relation group"
            )
        seen_ids[group.group_id] = group.relation
        for member in group.members:
            key = (group.relation, member)
            if key in seen_members:
                raise InputError(
                    f"product '{member}' is in {group.relation.value} groups "
                    f"'{seen_members[key]}' and '{group.group_id}'"
                )
            seen_members[key] = group.group_id


# =============================================================================
# Validated panel
# =============================================================================


@dataclass(frozen=True)
class ValidationPolicy:
    """`strict` turns observations that share a slot into an error instead of drops."""

    max_fill_gap: int = 3
    slots_per_day: int = 3
    strict: bool = False

    def __post_init__(self):
        if self.max_fill_gap < 0:
            raise InputError("max_fill_gap must be >= 0")
        if self.slots_per_day < 1 or 24 % self.slots_per_day:
            raise InputError("slots_per_day must divide 24")

    @property
    def slot(self) -> pd.Timedelta:
        return pd.Timedelta(hours=24 // self.slots_per_day)


@dataclass(frozen=True)
class Gap:
    product_id: str
    start: pd.Timestamp
    slots: int
    filled: bool


@dataclass(frozen=True)
class ValidationReport:
    rows_read: int
    rows_rejected: tuple[RowReject, ...]
    price_fills: int
    price_gaps: int
    rank_gaps: int
    price_violations: int
    prerelease_rows: int = 0
    slot_collisions: int = 0
    gaps: tuple[Gap, ...] = ()
    collisions: tuple[tuple[str, pd.Timestamp], ...] = ()

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_rejected": [{"row": r.row, "reason": r.reason} for r in self.rows_rejected],
            "price_fills": self.price_fills,
            "price_gaps": self.price_gaps,
            "rank_gaps": self.rank_gaps,
            "price_violations": self.price_violations,
            "prerelease_rows": self.prerelease_rows,
            "slot_collisions": self.slot_collisions,
            "dropped_in_slot": [
                {"product_id": pid, "timestamp": format_timestamp(ts)}
                for pid, ts in self.collisions
            ],
            "gaps": [
                {
                    "product_id": g.product_id,
                    "start": format_timestamp(g.start),
                    "slots": g.slots,
                    "filled": g.filled,
                }
                for g in self.gaps
            ],
        }


@dataclass(frozen=True)
class PanelDataset:
    """
    Validated panel. `frame` is sorted by (product_id, slot) and is treated as
    read-only; accessors return copies.
    """

    frame: pd.DataFrame
    catalog: Catalog
    groups: tuple[RelationGroup, ...]
    report: ValidationReport
    policy: ValidationPolicy = field(default_factory=ValidationPolicy)

    @property
    def product_ids(self) -> list[str]:
        return sorted(self.frame["product_id"].unique())

    def group(self, group_id: str) -> RelationGroup:
        for group in self.groups:
            if group.group_id == group_id:
                return group
        raise InputError(f"unknown group '{group_id}'")

    def product_frame(self, product_id: str) -> pd.DataFrame:
        return self.frame[self.frame["product_id"] == product_id].reset_index(drop=True)

    def rank_series(self, product_id: str) -> pd.Series:
        rows = self.product_frame(product_id)
        rows = rows[rows["sales_rank"].notna()]
        return pd.Series(
            rows["sales_rank"].to_numpy(),
            index=pd.DatetimeIndex(rows["timestamp"]),
            name=product_id,
        )

    def wide(self, column: str, product_ids) -> pd.DataFrame:
        """One column per product, indexed by observation slot."""
        rows = self.frame[self.frame["product_id"].isin(product_ids)]
        table = rows.pivot(index="slot", columns="product_id", values=column)
        return table.reindex(columns=list(product_ids))


SUMMARY_COLUMNS = (
    "sales_rank",
    "amazon_price",
    "marketplace_new_price",
    "avg_rating",
    "n_reviews",
    "days_release",
)
SUMMARY_STATISTICS = ("mean", "std", "min", "max")


def summary_statistics(panel: PanelDataset) -> pd.DataFrame:
    """
    Mean, standard deviation, minimum and maximum of each summary column per
    product, over observed rows only. Columns are (column, statistic) pairs.
    """
    rows = panel.frame[~panel.frame["filled"].astype(bool)]
    stats = rows.groupby("product_id", sort=True)[list(SUMMARY_COLUMNS)].describe()
    return stats.drop(columns=["count", "25%", "50%", "75%"], level=1)


def summary_records(stats: pd.DataFrame) -> dict[str, dict[str, dict[str, float]]]:
    return {
        str(pid): {
            column: {stat: float(row[(column, stat)]) for stat in SUMMARY_STATISTICS}
            for column in SUMMARY_COLUMNS
        }
        for pid, row in stats.iterrows()
    }


def days_since_release(timestamps, release: date) -> np.ndarray:
    """Whole days from release to each timestamp (floor; may be negative)."""
    origin = pd.Timestamp(release, tz="UTC")
    delta = pd.DatetimeIndex(timestamps) - origin
    return np.floor(delta / pd.Timedelta(days=1)).astype(int)


def validate_panel(
    table: ObservationTable,
    catalog: Catalog,
    policy: ValidationPolicy | None = None,
    groups: list[RelationGroup] | None = None,
) -> PanelDataset:
    """
    Align observations to slots, forward-fill prices across short gaps, and
    derive days_release. Sales ranks are never filled.
    """
    policy = policy or ValidationPolicy()
    frame = table.frame
    if frame.empty:
        raise InputError("empty panel: no accepted observations")
    unknown = sorted(set(frame["product_id"]) - set(catalog))
    if unknown:
        raise InputError(f"products missing from catalog: {', '.join(unknown[:10])}")

    frame = frame.sort_values(["product_id", "timestamp"], kind="mergesort")
    duplicated = frame.duplicated(["product_id", "timestamp"])
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise InputError(
            f"timestamps must be strictly increasing per product; '{row.product_id}' "
            f"repeats {format_timestamp(row.timestamp)}"
        )
    frame = frame.assign(slot=frame["timestamp"].dt.floor(policy.slot), filled=False)
    collided = frame.duplicated(["product_id", "slot"])
    collisions = tuple(zip(frame.loc[collided, "product_id"], frame.loc[collided, "timestamp"]))
    if collisions:
        pid, ts = collisions[0]
        message = (
            f"{len(collisions)} observations share a {24 // policy.slots_per_day}-hour slot "
            f"with an earlier one; first: '{pid}' at {format_timestamp(ts)}"
        )
        if policy.strict:
            raise InputError(f"{message}; use a finer slots_per_day")
        logger.warning("%s; dropped", message)
        frame = frame[~collided]

    fills, gaps = _fill_gaps(frame, policy)
    if fills:
        frame = pd.concat([frame, pd.DataFrame(fills)], ignore_index=True)
        frame = frame.sort_values(["product_id", "slot"], kind="mergesort")
    frame = frame.reset_index(drop=True)

    days = np.zeros(len(frame), dtype=int)
    for product_id, index in frame.groupby("product_id").groups.items():
        days[frame.index.get_indexer(index)] = days_since_release(
            frame.loc[index, "timestamp"], catalog[product_id].release_date
        )
    prerelease = int((days < 0).sum())
    if prerelease:
        logger.warning("%d observations precede their product's release date", prerelease)
    frame["days_release"] = np.maximum(days, 0)

    observed = ~frame["filled"]
    violations = int((frame["amazon_price"] > frame["list_price"])[observed].sum())
    report = ValidationReport(
        rows_read=table.rows_read or len(table.frame),
        rows_rejected=table.rejects,
        price_fills=sum(g.slots for g in gaps if g.filled),
        price_gaps=sum(g.slots for g in gaps if not g.filled),
        rank_gaps=sum(g.slots for g in gaps),
        price_violations=violations,
        prerelease_rows=prerelease,
        slot_collisions=len(collisions),
        gaps=tuple(gaps),
        collisions=collisions,
    )
    logger.info(
        "validated %d rows: %d price fills, %d rank gaps, %d price violations",
        len(frame),
        report.price_fills,
        report.rank_gaps,
        report.price_violations,
    )
    if groups is None:
        groups = build_relation_groups(catalog)
    return PanelDataset(
        frame=frame, catalog=catalog, groups=tuple(groups), report=report, policy=policy
    )


def _fill_gaps(frame: pd.DataFrame, policy: ValidationPolicy) -> tuple[list[dict], list[Gap]]:
    slot = policy.slot
    fills: list[dict] = []
    gaps: list[Gap] = []
    for product_id, rows in frame.groupby("product_id", sort=True):
        slots = rows["slot"].to_numpy()
        steps = np.round(np.diff(slots) / slot).astype(int) - 1
        for pos in np.flatnonzero(steps > 0):
            missing = int(steps[pos])
            previous = rows.iloc[pos]
            start = previous["slot"] + slot
            filled = missing <= policy.max_fill_gap
            gaps.append(Gap(product_id, start, missing, filled))
            if not filled:
                continue
            for i in range(missing):
                at = start + i * slot
                fills.append(
                    {
                        "product_id": product_id,
                        "timestamp": at,
                        "sales_rank": np.nan,
                        "amazon_price": previous["amazon_price"],
                        "list_price": previous["list_price"],
                        "marketplace_new_price": previous["marketplace_new_price"],
                        "avg_rating": np.nan,
                        "n_reviews": np.nan,
                        "slot": at,
                        "filled": True,
                    }
                )
    return fills, gaps
