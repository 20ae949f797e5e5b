from __future__ import annotations

from pathlib import Path

import pytest

from rankpricing.dataset import (
    CATALOG_COLUMNS,
    OBSERVATION_COLUMNS,
    Relation,
    ValidationPolicy,
    load_catalog,
    load_observations,
    validate_panel,
)
from rankpricing.simulate import GroupTemplate, MemberTemplate, SimConfig

OBSERVATION_HEADER = ",".join(OBSERVATION_COLUMNS)
CATALOG_HEADER = ",".join(CATALOG_COLUMNS)

SAMPLE_DIR = Path(__file__).resolve().parent.parent / "example" / "sample"


def write_csv(path: Path, header: str, lines) -> Path:
    path.write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")
    return path


def observation_line(
    product_id: str,
    timestamp: str,
    rank,
    *,
    price="19.99",
    list_price="24.99",
    marketplace="",
    rating="4.5",
    reviews="12",
) -> str:
    return ",".join(
        str(v)
        for v in (product_id, timestamp, rank, price, list_price, marketplace, rating, reviews)
    )


def catalog_line(
    product_id: str,
    kind: str = "standalone",
    group: str = "",
    components: str = "",
    *,
    category: str = "business_productivity",
    release: str = "2005-01-01",
    title: str | None = None,
) -> str:
    return ",".join(
        (product_id, title or product_id, category, release, kind, group, components)
    )


def build_panel(tmp_path: Path, observation_lines, catalog_lines, **policy):
    obs = write_csv(tmp_path / "observations.csv", OBSERVATION_HEADER, observation_lines)
    cat = write_csv(tmp_path / "products.csv", CATALOG_HEADER, catalog_lines)
    return validate_panel(load_observations(obs), load_catalog(cat), ValidationPolicy(**policy))


def member(product_id: str, **overrides) -> MemberTemplate:
    values = {
        "product_id": product_id,
        "base_price": 10.0,
        "cost": 5.0,
        "base_rank": 5000.0,
        "phi": 2.0,
    }
    values.update(overrides)
    return MemberTemplate(**values)


def versions_group(group_id: str, *members: MemberTemplate) -> GroupTemplate:
    return GroupTemplate(group_id, Relation.VERSIONS, tuple(members))


def office_pair(group_id: str = "office", prefix: str = "office") -> GroupTemplate:
    """Two versions whose equations share phi 1.91, gamma -2.54 and lambda -0.36."""
    high, low = f"{prefix}-pro", f"{prefix}-std"
    return versions_group(
        group_id,
        member(
            high,
            base_price=399.0,
            cost=150.0,
            base_rank=20000.0,
            phi=1.91,
            gammas={low: -2.54},
            lambda_=-0.36,
            marketplace_price=360.0,
        ),
        member(
            low,
            base_price=149.0,
            cost=60.0,
            base_rank=15000.0,
            phi=1.91,
            gammas={high: -2.54},
            lambda_=-0.36,
            marketplace_price=130.0,
        ),
    )


def sim_config(*groups: GroupTemplate, **overrides) -> SimConfig:
    values = {
        "seed": 7,
        "days": 100,
        "slots_per_day": 3,
        "price_change_prob": 0.3,
        "price_step": 0.05,
        "rank_rounding": False,
    }
    values.update(overrides)
    return SimConfig(groups=groups, **values)


@pytest.fixture
def sample_dir() -> Path:
    return SAMPLE_DIR
