import re

import pandas as pd
import pytest

from conftest import office_pair, sim_config
from rankpricing import artifacts
from rankpricing.dataset import summary_records, summary_statistics
from rankpricing.report import (
    SECTIONS,
    coefficient_rows,
    export_svg,
    format_estimate,
    plot_series,
    render_report,
    significance_stars,
    write_report,
)
from rankpricing.simulate import generate_market


@pytest.mark.parametrize(
    ("estimate", "se", "expected"),
    [
        (1.91, 0.58, "1.91*** (0.58)"),
        (-2.54, 0.97, "-2.54*** (0.97)"),
        (-0.36, 0.11, "-0.36*** (0.11)"),
        (2.22, 0.48, "2.22*** (0.48)"),
        (-0.19, 0.06, "-0.19*** (0.06)"),
        (0.18, 0.1, "0.18* (0.10)"),
        (2.1, 1.0, "2.10** (1.00)"),
        (1.0, 1.0, "1.00 (1.00)"),
    ],
)
def test_format_estimate(estimate, se, expected):
    assert format_estimate(estimate, se) == expected


def test_stars_edge_cases():
    assert significance_stars(0.01, 0.003) == "***"
    # printed standard errors are sometimes negative
    assert significance_stars(-0.24, -0.07) == "***"
    assert significance_stars(1.0, 0.0) == ""
    assert significance_stars(1.0, None) == ""
    assert format_estimate(None, 0.1) == "-"
    assert format_estimate(8.352, None, 3) == "8.352"


def test_coefficient_rows():
    estimate = {
        "product_id": "pro",
        "intercept": 3.2,
        "phi": 1.91,
        "gammas": {"std": -2.54},
        "lambda": -0.36,
        "controls": {},
        "se": {"phi": 0.58, "gamma[std]": 0.97, "lambda": 0.11},
        "r2": 0.71,
        "n_obs": 300,
    }
    rows = dict(coefficient_rows(estimate))
    assert rows["ln(p_pro)"] == "1.91*** (0.58)"
    assert rows["ln(p_std)"] == "-2.54*** (0.97)"
    assert rows["ln(p^_pro)"] == "-0.36*** (0.11)"
    assert rows["R^2"] == "0.71"
    assert rows["n"] == "300"


def test_empty_directory_lists_every_section_as_absent(tmp_path):
    report = render_report(tmp_path)
    assert report.text.startswith("rankpricing report")
    for name, _ in SECTIONS:
        assert f"[{name}]\nabsent" in report.text
        assert report.data["sections"][name] == "absent"
    assert report.plots == {}


def test_unreadable_artifacts_are_reported(tmp_path):
    (tmp_path / artifacts.COSTS).write_text("[1, 2", encoding="utf-8")
    artifacts.write_artifact(tmp_path / artifacts.OPTIMALITY, {"groups": [{"members": [{}]}]})
    report = render_report(tmp_path)
    assert report.data["sections"]["costs"] == "unreadable"
    assert report.data["sections"]["optimality"] == "unreadable"
    assert "optimality" not in report.data


@pytest.fixture(scope="module")
def gappy_panel():
    panel, _ = generate_market(sim_config(office_pair(), days=20, drop_rate=0.1, seed=3))
    return panel


def test_plot_series_skips_filled_rows(gappy_panel):
    series = plot_series(gappy_panel, "office-pro")
    rows = gappy_panel.product_frame("office-pro")
    observed = int((~rows["filled"].astype(bool)).sum())

    assert sorted(series) == [
        "price_vs_rank_office-pro",
        "price_vs_time_office-pro",
        "rank_vs_time_office-pro",
    ]
    for frame in series.values():
        assert len(frame) == observed
    prices = series["price_vs_time_office-pro"]
    assert list(prices.columns) == ["timestamp", "amazon_price", "marketplace_new_price"]
    assert prices["timestamp"].tolist() == series["rank_vs_time_office-pro"]["timestamp"].tolist()
    assert series["rank_vs_time_office-pro"]["sales_rank"].notna().all()


def test_write_report_with_svg(gappy_panel, tmp_path):
    report = render_report(tmp_path, panel=gappy_panel, product_ids=["office-std"])
    written = write_report(report, tmp_path, svg=True)

    assert (tmp_path / artifacts.REPORT_TEXT).read_text(encoding="utf-8") == report.text
    bundle = artifacts.read_artifact(tmp_path / artifacts.REPORT_JSON)
    assert bundle["sections"]["demand"] == "absent"
    svg = written["svg_rank_vs_time_office-std"]
    assert svg == tmp_path / "plots" / "rank_vs_time_office-std.svg"
    assert "<polyline" in svg.read_text(encoding="utf-8")
    assert (tmp_path / "plots" / "price_vs_rank_office-std.csv").is_file()
    assert (tmp_path / "plots" / "price_vs_time_office-std.svg").is_file()


def polyline_heights(path) -> list[float]:
    points = re.search(r'points="([^"]+)"', path.read_text(encoding="utf-8")).group(1)
    values = [float(v) for v in re.split(r"[ ,]+", points.strip())]
    return values[1::2]


def test_rank_axes_put_rank_one_on_top_and_prices_grow_upward(tmp_path):
    stamps = ["2021-01-04T00:00:00Z", "2021-01-04T08:00:00Z", "2021-01-04T16:00:00Z"]
    ranks = pd.DataFrame({"timestamp": stamps, "sales_rank": [10.0, 500.0, 1000.0]})
    prices = pd.DataFrame({"timestamp": stamps, "amazon_price": [10.0, 20.0, 30.0]})

    rank_heights = polyline_heights(export_svg(ranks, tmp_path / "r.svg", invert_y=True))
    price_heights = polyline_heights(export_svg(prices, tmp_path / "p.svg"))

    # SVG y grows downward: the smallest y is the top of the chart
    assert rank_heights == sorted(rank_heights)
    assert price_heights == sorted(price_heights, reverse=True)
    assert rank_heights[0] == pytest.approx(price_heights[-1])


def test_summary_statistics_and_marketplace_elasticities_are_rendered(gappy_panel, tmp_path):
    validation = {
        "report": {"rows_read": 120, "slot_collisions": 0},
        "products": 2,
        "rows": 120,
        "summary": summary_records(summary_statistics(gappy_panel)),
        "groups": [],
    }
    demand = {
        "beta_used": -0.828,
        "groups": [
            {
                "group_id": "office",
                "relation": "versions",
                "members": [],
                "elasticities": {
                    "group_id": "office",
                    "members": ["office-pro", "office-std"],
                    "matrix": [[-1.6, 0.8], [0.8, -1.6]],
                    "structural_zeros": [],
                    "marketplace": [0.298, None],
                },
            }
        ],
    }
    artifacts.write_artifact(tmp_path / artifacts.VALIDATION, validation)
    artifacts.write_artifact(tmp_path / artifacts.DEMAND, demand)

    text = render_report(tmp_path).text

    assert "per-product statistics over observed rows" in text
    assert "slot collisions 0" in text
    ranks = gappy_panel.product_frame("office-pro")["sales_rank"].dropna()
    row = next(line for line in text.splitlines() if line.startswith("office-pro  sales_rank"))
    assert f"{ranks.mean():.2f}" in row
    assert f"{ranks.max():.2f}" in row
    assert "marketplace new price elasticity of office-pro: 0.298" in text
    assert "elasticity of office-std" not in text
