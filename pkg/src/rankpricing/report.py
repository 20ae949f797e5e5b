"""
Summary report over whatever stage artifacts exist: text tables in the
"estimate*** (standard error)" style, a JSON bundle, plot-ready CSV series
and optional SVG line charts.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from . import artifacts
from .dataset import SUMMARY_STATISTICS, PanelDataset, format_timestamp
from .demand import CONTROL_LABELS
from .errors import ArtifactMissingError, InputError

logger = logging.getLogger(__name__)

SECTIONS = (
    ("validation", artifacts.VALIDATION),
    ("calibration", artifacts.CALIBRATION),
    ("demand", artifacts.DEMAND),
    ("costs", artifacts.COSTS),
    ("optimality", artifacts.OPTIMALITY),
)
STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))


def significance_stars(estimate: float, standard_error: float | None) -> str:
    """Two-sided normal-approximation stars. The sign of a printed SE is ignored."""
    if standard_error is None or estimate is None:
        return ""
    se = abs(float(standard_error))
    if se == 0 or not np.isfinite(se):
        return ""
    p = 2.0 * norm.sf(abs(float(estimate)) / se)
    for level, stars in STAR_LEVELS:
        if p < level:
            return stars
    return ""


def format_estimate(estimate: float | None, standard_error: float | None, digits: int = 2) -> str:
    if estimate is None:
        return "-"
    text = f"{estimate:.{digits}f}{significance_stars(estimate, standard_error)}"
    if standard_error is not None:
        text += f" ({abs(standard_error):.{digits}f})"
    return text


def coefficient_rows(estimate: dict) -> list[tuple[str, str]]:
    """(variable, "estimate*** (se)") rows for one focal equation from the demand artifact."""
    se = estimate.get("se", {})
    pid = estimate["product_id"]
    rows = [
        ("Constant", format_estimate(estimate.get("intercept"), None)),
        (f"ln(p_{pid})", format_estimate(estimate["phi"], se.get("phi"))),
    ]
    for other, gamma in estimate.get("gammas", {}).items():
        rows.append((f"ln(p_{other})", format_estimate(gamma, se.get(f"gamma[{other}]"))))
    if estimate.get("lambda") is not None:
        rows.append((f"ln(p^_{pid})", format_estimate(estimate["lambda"], se.get("lambda"))))
    for control, value in estimate.get("controls", {}).items():
        label = CONTROL_LABELS.get(control, control)
        rows.append((label, format_estimate(value, se.get(control))))
    rows.append(("R^2", f"{estimate.get('r2', 0.0):.2f}"))
    rows.append(("n", str(estimate.get("n_obs", ""))))
    return rows


@dataclass
class Report:
    text: str
    data: dict
    plots: dict[str, pd.DataFrame] = field(default_factory=dict)


def _load_sections(out_dir: Path) -> tuple[dict, dict]:
    loaded, status = {}, {}
    for name, filename in SECTIONS:
        try:
            loaded[name] = artifacts.read_artifact(out_dir / filename)
            status[name] = "present"
        except ArtifactMissingError:
            status[name] = "absent"
        except InputError as exc:
            logger.warning("%s", exc)
            status[name] = "unreadable"
    return loaded, status


def _table(rows: Sequence[Sequence[str]], header: Sequence[str]) -> list[str]:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths, strict=True))
    out = [line, "-" * len(line)]
    for row in rows:
        out.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths, strict=True)))
    return out


def _validation_lines(data: dict) -> list[str]:
    report = data.get("report", {})
    lines = [
        f"rows read {report.get('rows_read')}, rejected {len(report.get('rows_rejected', []))}",
        f"price fills {report.get('price_fills')}, price gaps {report.get('price_gaps')}, "
        f"rank gaps {report.get('rank_gaps')}",
        f"price violations {report.get('price_violations')}, "
        f"pre-release rows {report.get('prerelease_rows')}, "
        f"slot collisions {report.get('slot_collisions', 0)}",
        f"{data.get('products')} products in {len(data.get('groups', []))} relation groups",
    ]
    summary = data.get("summary")
    if summary:
        lines.append("")
        lines.append("per-product statistics over observed rows")
        rows = [
            [pid, column, *(_number(values.get(stat)) for stat in SUMMARY_STATISTICS)]
            for pid, columns in summary.items()
            for column, values in columns.items()
        ]
        lines += _table(rows, ("product", "variable", "mean", "sd", "min", "max"))
    return lines


def _number(value) -> str:
    return "-" if value is None else f"{value:.2f}"


def _calibration_lines(data: dict) -> list[str]:
    lines = [
        f"log(Q + 1) = {format_estimate(data['intercept'], data.get('se_intercept') or None, 3)}"
        f" + {format_estimate(data['beta'], data.get('se_beta') or None, 3)} * log(rank)",
        f"source {data.get('source')}, {data.get('n_pairs')} pairs, "
        f"{data.get('implausible_pairs', 0)} implausible pairs excluded",
    ]
    checkpoints = data.get("checkpoints")
    if checkpoints:
        lines.append(checkpoints.get("note", ""))
        for cp in checkpoints.get("checkpoints", []):
            lines.append(
                f"  rank {cp['rank']}: reference {cp['units']} units, "
                f"calibration implies {cp['implied_units']:.2f}"
            )
    return lines


def _demand_lines(data: dict) -> list[str]:
    lines = [f"beta used {data.get('beta_used')}; dependent variable ln(sales rank)"]
    for group in data.get("groups", []):
        lines.append("")
        lines.append(f"group {group['group_id']} ({group.get('relation', '')})")
        for estimate in group["members"]:
            lines.append(f"  equation for {estimate['product_id']}")
            table = _table(coefficient_rows(estimate), ("variable", "estimate (se)"))
            lines += ["    " + s for s in table]
        matrix = group.get("elasticities", {})
        members = matrix.get("members", [])
        if members:
            lines.append("  elasticities (row: demand of, column: price of)")
            rows = [
                [pid, *(f"{v:.3f}" for v in row)]
                for pid, row in zip(members, matrix.get("matrix", []), strict=True)
            ]
            lines += ["    " + s for s in _table(rows, ("", *members))]
            for i, j in matrix.get("structural_zeros", []):
                lines.append(f"    structural zero: {i} w.r.t. {j}")
            for pid, value in zip(members, matrix.get("marketplace", []), strict=False):
                if value is not None:
                    lines.append(f"    marketplace new price elasticity of {pid}: {value:.3f}")
    for skipped in data.get("skipped", []):
        lines.append(f"skipped {skipped['group_id']}: {skipped['reason']}")
    return lines


def _costs_lines(data: dict) -> list[str]:
    lines = [f"share method {data.get('share_method')}"]
    rows = []
    for group in data.get("groups", []):
        for m in group["members"]:
            rows.append(
                [
                    group["group_id"],
                    m["product_id"],
                    f"{m['price']:.2f}",
                    f"{m['share']:.3f}",
                    f"{m['lerner']:.3f}",
                    f"{m['marginal_cost']:.2f}",
                    ",".join(m.get("flags", [])),
                ]
            )
    lines += _table(rows, ("group", "product", "price", "share", "lerner", "cost", "flags"))
    for skipped in data.get("skipped", []):
        lines.append(f"skipped {skipped['group_id']}: {skipped['reason']}")
    return lines


def _optimality_lines(data: dict) -> list[str]:
    lines = [
        f"tolerance {data.get('tolerance')}, k {data.get('k')} "
        f"(gradient magnitudes are meaningful only up to k), costs from {data.get('costs_source')}"
    ]
    rows = [
        [
            group["group_id"],
            v["product_id"],
            f"{v['gradient']:.4g}",
            f"{v['normalized_gradient']:+.4f}",
            v["classification"],
        ]
        for group in data.get("groups", [])
        for v in group["members"]
    ]
    lines += _table(rows, ("group", "product", "gradient", "normalised", "verdict"))
    if data.get("note"):
        lines.append(data["note"])
    return lines


_RENDERERS = {
    "validation": _validation_lines,
    "calibration": _calibration_lines,
    "demand": _demand_lines,
    "costs": _costs_lines,
    "optimality": _optimality_lines,
}


def plot_series(panel: PanelDataset, product_id: str) -> dict[str, pd.DataFrame]:
    """Rank and price over time and price against rank, one row per observation of the product."""
    rows = panel.product_frame(product_id)
    rows = rows[~rows["filled"].astype(bool)]
    stamps = [format_timestamp(ts) for ts in rows["timestamp"]]
    return {
        f"rank_vs_time_{product_id}": pd.DataFrame(
            {"timestamp": stamps, "sales_rank": rows["sales_rank"].to_numpy()}
        ),
        f"price_vs_time_{product_id}": pd.DataFrame(
            {
                "timestamp": stamps,
                "amazon_price": rows["amazon_price"].to_numpy(),
                "marketplace_new_price": rows["marketplace_new_price"].to_numpy(),
            }
        ),
        f"price_vs_rank_{product_id}": pd.DataFrame(
            {
                "amazon_price": rows["amazon_price"].to_numpy(),
                "sales_rank": rows["sales_rank"].to_numpy(),
            }
        ),
    }


def render_report(
    out_dir, panel: PanelDataset | None = None, product_ids: Sequence[str] | None = None
) -> Report:
    """Render every section; missing artifacts are listed as absent."""
    out_dir = Path(out_dir)
    loaded, status = _load_sections(out_dir)
    lines = ["rankpricing report", "=================="]
    for name, _ in SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        if status[name] != "present":
            lines.append(status[name])
            continue
        try:
            lines += _RENDERERS[name](loaded[name])
        except (KeyError, TypeError, ValueError) as exc:
            logger.warning("%s artifact cannot be rendered: %r", name, exc)
            status[name] = "unreadable"
            lines.append("unreadable")

    plots = {}
    if panel is not None:
        for pid in product_ids or panel.product_ids:
            plots.update(plot_series(panel, pid))
    present = {name: loaded[name] for name in loaded if status[name] == "present"}
    data = {"sections": status, **present}
    return Report(text="\n".join(lines) + "\n", data=data, plots=plots)


def write_report(report: Report, out_dir, *, svg: bool = False) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / artifacts.REPORT_TEXT
    text_path.write_text(report.text, encoding="utf-8")
    written = {
        "report_text": text_path,
        "report_json": artifacts.write_artifact(out_dir / artifacts.REPORT_JSON, report.data),
    }
    if report.plots:
        plot_dir = out_dir / "plots"
        plot_dir.mkdir(exist_ok=True)
        for name, frame in sorted(report.plots.items()):
            path = plot_dir / f"{name}.csv"
            frame.to_csv(path, index=False, lineterminator="\n")
            written[f"plot_{name}"] = path
            if svg:
                written[f"svg_{name}"] = export_svg(
                    frame,
                    plot_dir / f"{name}.svg",
                    title=name,
                    invert_y=frame.columns[1] == "sales_rank",
                )
    return written


def export_svg(
    frame: pd.DataFrame,
    output_path,
    title: str = "",
    size_mm: float = 160.0,
    *,
    invert_y: bool = False,
) -> Path:
    """
    Line chart of the frame's second column against its first (row order for
    timestamps). Larger values are drawn higher unless `invert_y`, which puts
    the smallest value at the top, as sales-rank axes are read.
    """
    import svgwrite

    x_raw, y = frame.iloc[:, 0], frame.iloc[:, 1].to_numpy(dtype=float)
    if pd.api.types.is_numeric_dtype(x_raw):
        x = x_raw.to_numpy(dtype=float)
        order = np.argsort(x, kind="mergesort")
        x, y = x[order], y[order]
    else:
        x = np.arange(len(x_raw), dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]

    margin = size_mm * 0.08
    span = size_mm - 2 * margin
    dwg = svgwrite.Drawing(
        str(output_path),
        size=(f"{size_mm}mm", f"{size_mm}mm"),
        viewBox=f"0 0 {size_mm} {size_mm}",
    )
    line_style = {"stroke": "black", "stroke-width": "0.3mm", "fill": "none"}
    bottom = size_mm - margin
    dwg.add(dwg.line((margin, bottom), (size_mm - margin, bottom), **line_style))
    dwg.add(dwg.line((margin, margin), (margin, size_mm - margin), **line_style))
    if title:
        dwg.add(dwg.text(title, insert=(margin, margin * 0.6), font_size=f"{margin * 0.4}"))

    if x.size >= 2:

        def scale(values):
            low, high = values.min(), values.max()
            return (values - low) / (high - low) if high > low else np.full(values.size, 0.5)

        px = margin + scale(x) * span
        # SVG y grows downward
        py = margin + scale(y) * span if invert_y else bottom - scale(y) * span
        dwg.add(dwg.polyline(list(zip(px.tolist(), py.tolist(), strict=True)), **line_style))
    dwg.save()
    logger.info("SVG saved to %s", output_path)
    return Path(output_path)
