"""Command-line interface: one subcommand per pipeline stage plus simulate and report."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import artifacts, pipeline
from .config import PipelineConfig, load_pipeline_config, load_sim_config
from .errors import InputError, RankPricingError, StageError
from .report import render_report, write_report
from .simulate import run_simulation, write_market

logger = logging.getLogger("rankpricing")

EXIT_OK = 0


def _global_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", "-c", help="TOML configuration file")
    parent.add_argument("--seed", type=int, help="Random seed (simulate)")
    parent.add_argument(
        "--strict", action="store_true", default=None, help="Treat any rejected row as an error"
    )
    parent.add_argument("--out-dir", "-o", help="Directory for artifacts (default: out)")
    parent.add_argument("--workers", type=int, help="Worker threads for per-group work")
    verbosity = parent.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Only warnings and errors")
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parent


def _data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", "-i", help="observations.csv")
    parser.add_argument("--catalog", help="products.csv")


def _out_option(parser: argparse.ArgumentParser, default: str) -> None:
    parser.add_argument("--out", help=f"Artifact file to write (default: <out-dir>/{default})")


def build_parser() -> argparse.ArgumentParser:
    parent = _global_options()
    parser = argparse.ArgumentParser(
        prog="rankpricing",
        description="Sales-rank demand estimation, cost recovery and price optimality tests",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  rankpricing simulate -c example/sample/sim.toml -o sim1
  rankpricing pipeline -c example/sample/pipeline.toml -o run1
  rankpricing demand -i sim1/observations.csv --catalog sim1/products.csv -o run1
  rankpricing optimality --costs sim1/true_costs.json -o run1
  rankpricing costs --demand run1/demand_estimates.json --out alt/costs.json -o run1
  rankpricing report --svg -i sim1/observations.csv --catalog sim1/products.csv -o run1
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[parent], help="Generate a synthetic market")

    p = sub.add_parser("validate", parents=[parent], help="Validate the panel")
    _data_options(p)
    _out_option(p, artifacts.VALIDATION)

    p = sub.add_parser("calibrate", parents=[parent], help="Rank-to-quantity calibration")
    p.add_argument("--input", "-i", help="Hourly observations for fitting")
    p.add_argument("--mode", choices=["fixed", "fit"], help="Fixed constants or fit from spikes")
    p.add_argument("--intercept", type=float, help="Fixed intercept (log alpha)")
    p.add_argument("--beta", type=float, help="Fixed slope")
    p.add_argument("--theta", type=float, help="Relative rank drop marking a purchase")
    p.add_argument("--min-abs-drop", type=float, help="Absolute rank drop marking a purchase")
    _out_option(p, artifacts.CALIBRATION)

    p = sub.add_parser("demand", parents=[parent], help="Fixed-effects demand estimation")
    _data_options(p)
    p.add_argument(
        "--calibration", help="Calibration artifact (default: <out-dir>/calibration.json)"
    )
    _out_option(p, artifacts.DEMAND)
    p.add_argument("--pooled", action="store_true", default=None, help="Pool groups of one shape")
    p.add_argument("--controls", nargs="*", help="Control variables to include")
    p.add_argument("--covariance", choices=["hc0", "hc1"], help="Covariance estimator")

    p = sub.add_parser("costs", parents=[parent], help="Markups and marginal costs")
    _data_options(p)
    p.add_argument("--demand", help="Demand artifact (default: <out-dir>/demand_estimates.json)")
    _out_option(p, artifacts.COSTS)
    p.add_argument(
        "--share-method",
        choices=["direct", "rank_ratio", "rank_ratio_literal"],
        help="Share inputs",
    )
    p.add_argument("--window-start", help="First timestamp of the cost window")
    p.add_argument("--window-end", help="End of the cost window (exclusive)")

    p = sub.add_parser("optimality", parents=[parent], help="Profit-gradient sign test")
    _data_options(p)
    p.add_argument("--demand", help="Demand artifact (default: <out-dir>/demand_estimates.json)")
    _out_option(p, artifacts.OPTIMALITY)
    p.add_argument("--costs", help="Costs artifact to test (default: <out-dir>/costs.json)")
    p.add_argument("--tolerance", type=float, help="Normalised-gradient tolerance (default 0.01)")
    p.add_argument("--k", type=float, help="Quantity scale constant (default 1)")

    p = sub.add_parser("pipeline", parents=[parent], help="Run every stage and the report")
    _data_options(p)
    p.add_argument("--costs", help="Costs artifact for the optimality stage")

    p = sub.add_parser("report", parents=[parent], help="Render the summary report")
    _data_options(p)
    p.add_argument("--product", action="append", help="Product for plot series (repeatable)")
    p.add_argument("--svg", action="store_true", help="Also write SVG charts")
    return parser


def _configure_logging(args) -> None:
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def pipeline_config(args) -> PipelineConfig:
    config = load_pipeline_config(args.config)

    def get(name):
        return getattr(args, name, None)

    return config.with_overrides(
        paths__observations=get("input") if args.command != "calibrate" else None,
        paths__calibration_input=get("input") if args.command == "calibrate" else None,
        paths__catalog=get("catalog"),
        paths__out_dir=get("out_dir"),
        paths__costs=get("costs"),
        paths__calibration=get("calibration"),
        paths__demand=get("demand"),
        paths__out=get("out"),
        validation__strict=get("strict"),
        calibration__mode=get("mode"),
        calibration__intercept=get("intercept"),
        calibration__beta=get("beta"),
        calibration__theta=get("theta"),
        calibration__min_abs_drop=get("min_abs_drop"),
        demand__pooled=get("pooled"),
        demand__controls=get("controls"),
        demand__covariance=get("covariance"),
        costs__share_method=get("share_method"),
        costs__window_start=get("window_start"),
        costs__window_end=get("window_end"),
        optimality__tolerance=get("tolerance"),
        optimality__k=get("k"),
        run__workers=get("workers"),
    )


def _simulate(args) -> int:
    if not args.config:
        raise InputError("simulate needs --config <sim.toml>")
    config = load_sim_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = dataclasses.replace(config, **overrides)
    market = run_simulation(config)
    for name, path in write_market(market, args.out_dir or "out").items():
        logger.info("%s: %s", name, path)
    return EXIT_OK


def _report(args, config: PipelineConfig) -> int:
    panel = None
    if config.paths.observations is not None and config.paths.catalog is not None:
        panel = pipeline.load_panel(config)
    report = render_report(config.paths.out_dir, panel=panel, product_ids=args.product)
    write_report(report, config.paths.out_dir, svg=args.svg)
    if not args.quiet:
        sys.stdout.write(report.text)
    return EXIT_OK


def run(args) -> int:
    if args.command == "simulate":
        return _simulate(args)
    config = pipeline_config(args)
    if args.command == "report":
        return _report(args, config)
    if args.command == "pipeline":
        result = pipeline.run_pipeline(config)
        if result.error is not None:
            raise result.error
        return EXIT_OK
    pipeline.run_stage(args.command, config)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return run(args)
    except StageError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except RankPricingError as exc:
        logger.error("%s: %s", args.command, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
