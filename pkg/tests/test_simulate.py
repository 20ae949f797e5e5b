import dataclasses

import numpy as np
import pandas as pd
import pytest

from conftest import SAMPLE_DIR, member, office_pair, sim_config, versions_group
from rankpricing import artifacts
from rankpricing.config import load_sim_config
from rankpricing.dataset import load_observations
from rankpricing.errors import InputError
from rankpricing.rankmap import (
    DEFAULT_BETA,
    DEFAULT_INTERCEPT,
    calibration_from_constants,
    detect_purchases,
    rank_to_quantity,
)
from rankpricing.simulate import (
    GroupTemplate,
    RankPolicy,
    SimConfig,
    generate_market,
    ground_truth_report,
    rank_policy_apply,
    run_simulation,
    true_costs,
    write_market,
)

CALIBRATION = calibration_from_constants(DEFAULT_INTERCEPT, DEFAULT_BETA)
MONDAY = pd.Timestamp("2021-01-04T00:00:00Z")


def solo(product_id="m", **overrides) -> GroupTemplate:
    return versions_group(product_id, member(product_id, **overrides))


def test_output_does_not_depend_on_worker_count():
    groups = (office_pair("office", "office"), office_pair("works", "works"))
    serial, truth_a = generate_market(sim_config(*groups, sigma=0.1, workers=1))
    threaded, truth_b = generate_market(sim_config(*groups, sigma=0.1, workers=4))
    pd.testing.assert_frame_equal(serial.frame, threaded.frame)
    assert artifacts.dumps(truth_a.to_dict()) == artifacts.dumps(truth_b.to_dict())


def test_seed_changes_the_noise():
    config = sim_config(office_pair(), sigma=0.1)
    first, _ = generate_market(config)
    second, _ = generate_market(dataclasses.replace(config, seed=8))
    assert not first.frame["sales_rank"].equals(second.frame["sales_rank"])


def test_true_elasticities_are_beta_times_rank_coefficients():
    _, truth = generate_market(sim_config(office_pair(), days=20))
    expected = DEFAULT_BETA * np.array([[1.91, -2.54], [-2.54, 1.91]])
    np.testing.assert_allclose(truth.group("office").elasticities, expected)


def test_monopoly_optimal_price():
    # own elasticity -2 and cost 5 put the optimum at 10
    _, truth = generate_market(sim_config(solo(phi=2.0 / 0.828, cost=5.0), days=20))
    assert truth.products["m"].optimal_price == pytest.approx(10.0, rel=1e-9)
    assert truth.group("m").relation == "standalone"


def test_inelastic_product_has_no_interior_optimum():
    _, truth = generate_market(sim_config(solo(phi=1.0), days=20))
    assert truth.products["m"].optimal_price is None
    report = ground_truth_report(truth)
    assert report["foc_checks"] == [{"group_id": "m", "max_abs_normalized_gradient": None}]


def test_symmetric_duopoly_optimum():
    group = versions_group(
        "pair",
        member("a", phi=3.0, gammas={"b": -0.3}),
        member("b", phi=3.0, gammas={"a": -0.3}),
    )
    _, truth = generate_market(sim_config(group, days=20))
    prices = truth.group("pair").optimal_prices
    assert prices[0] == pytest.approx(prices[1], rel=1e-9)
    np.testing.assert_allclose(truth.group("pair").optimal_shares, [0.5, 0.5])
    assert set(truth.group("pair").base_verdicts.classifications.values()) == {"overpriced"}
    assert ground_truth_report(truth)["foc_ok"]


def test_true_costs_layout():
    _, truth = generate_market(sim_config(office_pair(), days=20))
    data = true_costs(truth)
    (group,) = data["groups"]
    assert data["share_method"] == "true"
    assert [m["marginal_cost"] for m in group["members"]] == [150.0, 60.0]
    assert sum(m["share"] for m in group["members"]) == pytest.approx(1.0)


def test_event_decay_orders_by_score_then_product_id():
    policy = RankPolicy(kind="event_decay")
    assert policy.apply({"a": 5.0, "b": 3.0}, MONDAY) == {"a": 1.0, "b": 2.0}
    assert policy.apply({"b": 2.0, "a": 2.0}, MONDAY) == {"a": 1.0, "b": 2.0}
    assert rank_policy_apply(policy, {"a": 0.0, "b": 3.0}, MONDAY) == {"a": 2.0, "b": 1.0}


def test_background_products_push_ranks_down():
    policy = RankPolicy(kind="event_decay", background_size=100_000, anchor_rank=3100.0)
    ranks = policy.apply({"hot": 50.0, "cold": 1e-9, "mid": 1.0}, MONDAY)
    assert ranks["hot"] < ranks["mid"] < ranks["cold"]
    assert 3000 <= ranks["mid"] <= 3200
    assert ranks["cold"] == 100_003


def test_direct_pareto_inverts_the_calibration():
    policy = RankPolicy(kind="direct_pareto", calibration=CALIBRATION)
    assert policy.apply({"a": rank_to_quantity(3100, CALIBRATION)}, MONDAY) == {"a": 3100.0}
    with pytest.raises(InputError):
        RankPolicy(kind="direct_pareto")
    with pytest.raises(InputError):
        policy.apply({"a": -1.0}, MONDAY)


def test_legacy_tiers_freeze_slow_sellers():
    policy = RankPolicy(
        kind="legacy_three_tier", background_size=200_000, anchor_rank=50_000.0
    )
    slot = pd.Timedelta(hours=8)

    first = policy.apply({"a": 1.0, "z": 0.1}, MONDAY)["a"]
    assert 40_000 < first < 60_000

    # a sale mid-day is not shown while the displayed rank is beyond 10000
    assert policy.apply({"a": 100.0, "z": 0.1}, MONDAY + slot)["a"] == first
    fast = policy.apply({"a": 100.0, "z": 0.1}, MONDAY + pd.Timedelta(days=1))["a"]
    assert fast < 1000

    # fast sellers are re-ranked every slot
    assert policy.apply({"a": 1.0, "z": 0.1}, MONDAY + pd.Timedelta(days=1) + slot)["a"] > 40_000


def test_legacy_tiers_beyond_100000_wait_for_the_month():
    policy = RankPolicy(kind="legacy_three_tier", background_size=200_000, anchor_rank=50_000.0)
    assert policy.apply({"z": 0.1}, MONDAY)["z"] == 200_001
    assert policy.apply({"z": 100.0}, MONDAY + pd.Timedelta(days=1))["z"] == 200_001
    assert policy.apply({"z": 100.0}, pd.Timestamp("2021-02-01T00:00:00Z"))["z"] < 1000


def test_spike_detection_recovers_simulated_purchases():
    config = sim_config(
        solo("slow", base_rank=6000.0),
        days=56,
        slots_per_day=24,
        rank_policy="event_decay",
        half_life_hours=4.0,
        price_change_prob=0.0,
        rank_rounding=True,
    )
    panel, truth = generate_market(config)
    series = panel.rank_series("slow")
    detected = [e.timestamp for e in detect_purchases(series)]
    logged = [e.timestamp for e in truth.events if e.timestamp > series.index[0]]
    assert len(logged) > 5
    assert detected == logged


def test_event_ranks_are_integers():
    config = sim_config(office_pair(), days=10, rank_policy="event_decay", rank_rounding=True)
    panel, truth = generate_market(config)
    ranks = panel.frame["sales_rank"].dropna()
    assert (ranks == np.round(ranks)).all()
    assert ranks.min() >= 1
    assert all(e.units >= 1 for e in truth.events)


def test_write_market_needs_integer_ranks(tmp_path):
    market = run_simulation(sim_config(office_pair(), days=20))
    with pytest.raises(InputError, match="rank_rounding"):
        write_market(market, tmp_path)


def test_write_market_files(tmp_path):
    market = run_simulation(sim_config(office_pair(), days=20, rank_rounding=True))
    paths = write_market(market, tmp_path)
    assert sorted(paths) == ["catalog", "ground_truth", "observations", "true_costs"]
    table = load_observations(paths["observations"], strict=True)
    assert len(table) == 2 * 20 * 3
    report = artifacts.read_artifact(paths["ground_truth"])
    assert report["foc_ok"] is True
    assert [p["product_id"] for p in report["products"]] == ["office-pro", "office-std"]


def test_calibration_experiment_is_hourly(tmp_path):
    config = sim_config(office_pair(), days=20, rank_rounding=True, experiment_weeks=2)
    market = run_simulation(config)
    assert len(market.experiment) == 2 * 14 * 24
    assert "experiment" in write_market(market, tmp_path)


def test_sample_config_matches_its_elasticities():
    config = dataclasses.replace(load_sim_config(SAMPLE_DIR / "sim.toml"), days=20)
    assert [g.group_id for g in config.groups] == ["office", "studio", "shield"]
    _, truth = generate_market(config)
    np.testing.assert_allclose(truth.group("office").elasticities, [[-2.5, 0.5], [0.4, -2.2]])
    np.testing.assert_allclose(truth.group("shield").elasticities, [[-1.8, 0.6], [0.5, -2.0]])


@pytest.mark.parametrize(
    ("market", "message"),
    [
        ({"rank_policy": "random"}, "unknown rank policy"),
        ({"slots_per_day": 5}, "divide 24"),
        ({"colour": "red"}, "unknown key"),
    ],
)
def test_sim_config_errors(market, message):
    solo_member = {"product_id": "a", "base_price": 10.0, "cost": 5.0, "base_rank": 100, "phi": 2.0}
    data = {"market": market, "groups": [{"group_id": "g", "members": [solo_member]}]}
    with pytest.raises(InputError, match=message):
        SimConfig.from_dict(data)
