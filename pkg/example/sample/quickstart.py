"""
quickstart.py

Demonstrate use of the rankpricing library on a simulated market, one stage
at a time, without writing any artifacts.

Run this demo by calling: python quickstart.py

The same steps run end to end from the command line with:
    rankpricing pipeline -c pipeline.toml
"""

from pathlib import Path

from rankpricing.config import load_sim_config
from rankpricing.cost import estimate_costs, window_summary
from rankpricing.demand import estimate_all
from rankpricing.optimal import build_profit_model, evaluate
from rankpricing.rankmap import DEFAULT_BETA, DEFAULT_INTERCEPT, calibration_from_constants
from rankpricing.simulate import generate_market

here = Path(__file__).resolve().parent

panel, truth = generate_market(load_sim_config(here / "sim.toml"))
calibration = calibration_from_constants(DEFAULT_INTERCEPT, DEFAULT_BETA)

run = estimate_all(panel)
for demand in run.groups:
    elasticities = demand.elasticities(calibration.beta)
    print(f"{demand.group_id} ({demand.relation})")
    for pid, row in zip(elasticities.members, elasticities.matrix, strict=True):
        print(f"  {pid:14s} " + "  ".join(f"{v:+.2f}" for v in row))

    summary = window_summary(panel, demand.members, calibration)
    costs = estimate_costs(demand, summary, calibration)
    optimality = evaluate(build_profit_model(demand, costs, summary, calibration))

    for pid, cost, verdict in zip(
        costs.product_ids, costs.marginal_costs, optimality.verdicts, strict=True
    ):
        true_cost = truth.products[pid].cost
        print(
            f"  {pid:14s} cost {cost:8.2f} (true {true_cost:.2f})  "
            f"{verdict.classification.value} ({verdict.normalized_gradient:+.3f})"
        )

for group_id, reason in run.skipped:
    print(f"skipped {group_id}: {reason}")
