import random

import numpy as np
import pandas as pd
import pytest

from conftest import (
    CATALOG_HEADER,
    OBSERVATION_HEADER,
    build_panel,
    catalog_line,
    member,
    observation_line,
    sim_config,
    versions_group,
    write_csv,
)
from rankpricing.dataset import (
    Catalog,
    Category,
    Product,
    ProductKind,
    Relation,
    build_relation_groups,
    days_since_release,
    load_catalog,
    load_observations,
    summary_records,
    summary_statistics,
    validate_panel,
    write_observations,
)
from rankpricing.errors import InputError
from rankpricing.simulate import generate_market

T0 = "2005-06-15T00:00:00Z"


def stamps(n, start=T0, hours=8):
    return [
        (pd.Timestamp(start) + pd.Timedelta(hours=hours * i)).isoformat().replace("+00:00", "Z")
        for i in range(n)
    ]


def test_well_formed_rows(tmp_path):
    lines = [observation_line("A", ts, 100 + i) for i, ts in enumerate(stamps(3))]
    table = load_observations(write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, lines))
    assert len(table) == 3
    assert table.rejects == ()
    first = next(table.observations())
    assert first.sales_rank == 100
    assert first.marketplace_new_price is None
    assert first.timestamp == pd.Timestamp(T0)


def test_rejects_carry_row_number_and_reason(tmp_path):
    ts = stamps(4)
    lines = [
        observation_line("A", ts[0], 100),
        observation_line("A", ts[1], 0),
        observation_line("A", ts[2], 90, price="-1"),
        observation_line("A", "yesterday", 80),
    ]
    table = load_observations(write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, lines))
    assert [(r.row, r.reason) for r in table.rejects] == [
        (2, "rank < 1"),
        (3, "nonpositive price"),
        (4, "unparseable timestamp"),
    ]
    assert len(table) + len(table.rejects) == table.rows_read == 4


def test_strict_mode_fails_on_any_reject(tmp_path):
    path = write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, [observation_line("A", T0, 0)])
    with pytest.raises(InputError, match="rank < 1"):
        load_observations(path, strict=True)


def test_missing_file_and_bad_header(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_observations(tmp_path / "absent.csv")
    bad = write_csv(tmp_path / "bad.csv", "product_id,timestamp,rank", ["A,2005-01-01,3"])
    with pytest.raises(InputError, match="malformed header"):
        load_observations(bad)


def test_parsing_is_total_on_a_generated_file(tmp_path):
    rng = random.Random(4)
    lines, bad = [], 0
    for p in range(12):
        for ts in stamps(90):
            if rng.random() < 0.05:
                bad += 1
                lines.append(observation_line(f"P{p}", ts, rng.choice([0, -3, "x"])))
            else:
                lines.append(observation_line(f"P{p}", ts, rng.randint(1, 50_000)))
    table = load_observations(write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, lines))
    assert table.rows_read == len(lines)
    assert len(table.rejects) == bad
    assert len(table) == len(lines) - bad


def test_write_then_load_is_field_identical(tmp_path):
    ts = stamps(3)
    lines = [
        observation_line("A", ts[0], 10, marketplace="17.5", rating=""),
        observation_line("A", ts[1], 12, price="18.49"),
        observation_line("B", ts[0], 4000, reviews="0"),
    ]
    table = load_observations(write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, lines))
    again = load_observations(write_observations(table.frame, tmp_path / "again.csv"))
    pd.testing.assert_frame_equal(table.frame, again.frame)


def test_catalog_with_versions_and_bundle(tmp_path):
    lines = [
        catalog_line("A", "version_high", "g1"),
        catalog_line("B", "version_low", "g1"),
        catalog_line("X", "bundle", "b1", "A;B"),
    ]
    catalog = load_catalog(write_csv(tmp_path / "products.csv", CATALOG_HEADER, lines))
    assert len(catalog) == 3
    assert catalog["X"].bundle_components == ("A", "B")

    groups = build_relation_groups(catalog)
    assert [(g.group_id, g.relation, g.members) for g in groups] == [
        ("g1", Relation.VERSIONS, ("A", "B")),
        ("b1", Relation.BUNDLE_WITH_COMPONENTS, ("X", "A", "B")),
    ]


@pytest.mark.parametrize(
    ("lines", "message"),
    [
        ([catalog_line("A"), catalog_line("A")], "duplicate product_id 'A'"),
        ([catalog_line("A", category="games")], "unknown category"),
        ([catalog_line("A", kind="deluxe", group="g")], "unknown kind"),
        ([catalog_line("X", "bundle", "b1")], "no components"),
        ([catalog_line("A", "version_high")], "needs a group_id"),
    ],
)
def test_catalog_errors(tmp_path, lines, message):
    path = write_csv(tmp_path / "products.csv", CATALOG_HEADER, lines)
    with pytest.raises(InputError, match=message):
        load_catalog(path)


def _product(pid, kind, group=None, components=()):
    return Product(
        pid, pid, Category.BUSINESS_PRODUCTIVITY, pd.Timestamp("2004-01-01").date(), kind, group,
        tuple(components),
    )


def mixed_catalog_products():
    products = []
    for i in range(68):
        products.append(_product(f"bundle{i}", ProductKind.BUNDLE, f"b{i}", (f"c{i}a", f"c{i}b")))
        products.append(_product(f"c{i}a", ProductKind.COMPONENT, f"b{i}"))
        products.append(_product(f"c{i}b", ProductKind.COMPONENT, f"b{i}"))
    for i in range(32):
        products.append(_product(f"two{i}h", ProductKind.VERSION_HIGH, f"v2-{i}"))
        products.append(_product(f"two{i}l", ProductKind.VERSION_LOW, f"v2-{i}"))
    for i in range(19):
        for kind in (ProductKind.VERSION_HIGH, ProductKind.VERSION_MID, ProductKind.VERSION_LOW):
            products.append(_product(f"multi{i}{kind.value}", kind, f"v3-{i}"))
    for i in range(56):
        products.append(_product(f"gen{i}new", ProductKind.GENERATION_CURRENT, f"gen-{i}"))
        products.append(_product(f"gen{i}old", ProductKind.GENERATION_PRIOR, f"gen-{i}"))
    return products


def test_group_counts_for_a_mixed_catalog():
    groups = build_relation_groups(Catalog(mixed_catalog_products()))
    shapes = [(g.relation, g.size) for g in groups]
    assert shapes.count((Relation.BUNDLE_WITH_COMPONENTS, 3)) == 68
    assert shapes.count((Relation.VERSIONS, 2)) == 32
    assert shapes.count((Relation.VERSIONS, 3)) == 19
    assert shapes.count((Relation.GENERATIONS, 2)) == 56


def test_grouping_ignores_catalog_order():
    products = mixed_catalog_products()
    expected = build_relation_groups(Catalog(products))
    random.Random(9).shuffle(products)
    assert build_relation_groups(Catalog(products)) == expected


def test_groups_edge_cases(caplog):
    assert build_relation_groups(Catalog([_product("A", ProductKind.STANDALONE)])) == []

    lonely = Catalog([_product("A", ProductKind.VERSION_HIGH, "g1")])
    assert build_relation_groups(lonely) == []
    assert "single member" in caplog.text

    dangling = Catalog([_product("X", ProductKind.BUNDLE, "b1", ("A", "Z"))])
    with pytest.raises(InputError, match="unknown components: A, Z"):
        build_relation_groups(dangling)


TWO_VERSIONS = [catalog_line("A", "version_high", "g1"), catalog_line("B", "version_low", "g1")]


def test_one_slot_gap_fills_price_not_rank(tmp_path):
    ts = stamps(4)
    lines = [observation_line("A", t, 100 + i) for i, t in enumerate(ts) if i != 2]
    lines += [observation_line("B", t, 500) for t in ts]
    panel = build_panel(tmp_path, lines, TWO_VERSIONS)

    assert panel.report.price_fills == 1
    assert panel.report.rank_gaps == 1
    rows = panel.product_frame("A")
    filled = rows[rows["filled"]]
    assert len(filled) == 1
    assert np.isnan(filled["sales_rank"].iloc[0])
    assert filled["amazon_price"].iloc[0] == pytest.approx(19.99)
    assert rows.loc[~rows["filled"], "sales_rank"].tolist() == [100, 101, 103]


def test_summary_statistics_skip_filled_rows(tmp_path):
    ts = stamps(4)
    lines = [observation_line("A", t, 100 + i) for i, t in enumerate(ts) if i != 2]
    lines += [observation_line("B", t, 500) for t in ts]
    stats = summary_statistics(build_panel(tmp_path, lines, TWO_VERSIONS))

    assert list(stats.index) == ["A", "B"]
    assert set(stats.columns.get_level_values(1)) == {"mean", "std", "min", "max"}
    assert stats.loc["A", ("sales_rank", "mean")] == pytest.approx(304 / 3)
    assert stats.loc["A", ("sales_rank", "min")] == 100
    assert stats.loc["A", ("sales_rank", "max")] == 103
    assert stats.loc["B", ("sales_rank", "std")] == 0

    records = summary_records(stats)
    assert records["A"]["sales_rank"]["max"] == 103.0
    assert set(records["B"]) == {
        "sales_rank",
        "amazon_price",
        "marketplace_new_price",
        "avg_rating",
        "n_reviews",
        "days_release",
    }


def test_long_gap_is_recorded_but_not_filled(tmp_path):
    ts = stamps(8)
    lines = [observation_line("A", t, 100) for i, t in enumerate(ts) if i in (0, 6, 7)]
    panel = build_panel(tmp_path, lines, [catalog_line("A")], max_fill_gap=3)
    report = panel.report
    assert (report.price_fills, report.price_gaps, report.rank_gaps) == (0, 5, 5)
    assert report.gaps[0].slots == 5
    assert not report.gaps[0].filled
    assert len(panel.frame) == 3


def test_hourly_rows_sharing_a_slot_are_reported(tmp_path):
    lines = [observation_line("A", t, 100 + i) for i, t in enumerate(stamps(24, hours=1))]
    panel = build_panel(tmp_path, lines, [catalog_line("A")])

    assert panel.product_frame("A")["sales_rank"].tolist() == [100, 108, 116]
    report = panel.report.to_dict()
    assert report["slot_collisions"] == 21
    assert len(report["dropped_in_slot"]) == 21
    assert report["dropped_in_slot"][0] == {"product_id": "A", "timestamp": "2005-06-15T01:00:00Z"}

    with pytest.raises(InputError, match="21 observations share a 8-hour slot"):
        build_panel(tmp_path, lines, [catalog_line("A")], strict=True)
    hourly = build_panel(tmp_path, lines, [catalog_line("A")], slots_per_day=24, strict=True)
    assert hourly.report.slot_collisions == 0
    assert len(hourly.frame) == 24


def test_validation_errors(tmp_path):
    with pytest.raises(InputError, match="missing from catalog"):
        build_panel(tmp_path, [observation_line("Q", T0, 5)], TWO_VERSIONS)
    with pytest.raises(InputError, match="empty panel"):
        build_panel(tmp_path, [observation_line("A", T0, 0)], TWO_VERSIONS)
    duplicate = [observation_line("A", T0, 5), observation_line("A", T0, 6)]
    with pytest.raises(InputError, match="strictly increasing"):
        build_panel(tmp_path, duplicate, TWO_VERSIONS)


def test_price_violations_and_prerelease_rows(tmp_path):
    ts = stamps(3, start="2004-12-31T00:00:00Z")
    lines = [
        observation_line("A", ts[0], 10, price="30", list_price="25"),
        observation_line("A", ts[1], 10),
        observation_line("A", ts[2], 10),
    ]
    panel = build_panel(tmp_path, lines, [catalog_line("A", release="2005-01-01")])
    assert panel.report.price_violations == 1
    assert panel.report.prerelease_rows == 3
    assert panel.frame["days_release"].tolist() == [0, 0, 0]


def test_days_since_release_floors():
    days = days_since_release(
        pd.to_datetime(["2005-01-02T08:00:00Z", "2005-01-01T23:00:00Z"]),
        pd.Timestamp("2005-01-01").date(),
    )
    assert days.tolist() == [1, 0]


def test_validation_never_changes_ranks(tmp_path):
    ts = stamps(30)
    rng = random.Random(1)
    lines = [
        observation_line(pid, t, rng.randint(1, 9000))
        for pid in ("A", "B")
        for i, t in enumerate(ts)
        if rng.random() > 0.2 or i in (0, 29)
    ]
    obs = write_csv(tmp_path / "obs.csv", OBSERVATION_HEADER, lines)
    table = load_observations(obs)
    cat = load_catalog(write_csv(tmp_path / "products.csv", CATALOG_HEADER, TWO_VERSIONS))
    panel = validate_panel(table, cat)
    observed = panel.frame[~panel.frame["filled"]]
    assert sorted(observed["sales_rank"]) == sorted(table.frame["sales_rank"])


def test_simulated_drops_are_accounted_for():
    config = sim_config(
        versions_group("g", member("a", gammas={"b": -0.5}), member("b", gammas={"a": -0.5})),
        days=60,
        drop_rate=0.05,
        rank_rounding=True,
    )
    panel, truth = generate_market(config)
    report = panel.report
    assert len(truth.drops) > 0
    assert report.price_fills + report.price_gaps == len(truth.drops)
    assert report.rank_gaps == len(truth.drops)
