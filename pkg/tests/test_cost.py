import dataclasses

import numpy as np
import pytest

from conftest import SAMPLE_DIR, office_pair, sim_config
from rankpricing.config import load_sim_config
from rankpricing.cost import (
    CostEstimate,
    WindowSummary,
    estimate_costs,
    literal_share_sum,
    literal_shares,
    marginal_costs,
    revenue_shares,
    shares_from_ranks,
    solve_markups,
    window_summary,
)
from rankpricing.demand import estimate_demand
from rankpricing.errors import IllConditionedError, InputError
from rankpricing.optimal import local_demand
from rankpricing.rankmap import DEFAULT_BETA, DEFAULT_INTERCEPT, calibration_from_constants
from rankpricing.simulate import generate_market, true_costs

CALIBRATION = calibration_from_constants(DEFAULT_INTERCEPT, DEFAULT_BETA)


def test_equal_prices_and_ranks_split_evenly():
    np.testing.assert_allclose(shares_from_ranks([5.0, 5.0], [200, 200], DEFAULT_BETA), [0.5, 0.5])


def test_rank_ratio_shares_for_a_tenfold_rank_gap():
    shares = shares_from_ranks([10.0, 10.0], [100, 1000], DEFAULT_BETA)
    assert shares[0] == pytest.approx(1 / (1 + 10**DEFAULT_BETA))
    assert shares[0] == pytest.approx(0.8706, abs=1e-4)
    literal = shares_from_ranks([10.0, 10.0], [100, 1000], DEFAULT_BETA, literal=True)
    np.testing.assert_allclose(literal, shares)


def test_rank_ratio_matches_revenue_shares():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        prices = rng.uniform(5, 500, n)
        ranks = np.exp(rng.uniform(0, np.log(1e6), n))
        quantities = np.exp(DEFAULT_INTERCEPT) * ranks**DEFAULT_BETA
        shares = shares_from_ranks(prices, ranks, DEFAULT_BETA)
        np.testing.assert_allclose(shares, revenue_shares(prices, quantities), rtol=1e-9)
        assert shares.sum() == pytest.approx(1.0, abs=1e-12)


def test_literal_relation_weights_ranks_by_inverse_price():
    prices, ranks = [10.0, 20.0, 40.0], [300.0, 300.0, 300.0]
    shares, total = literal_shares(prices, ranks, DEFAULT_BETA)
    np.testing.assert_allclose(shares, [4 / 7, 2 / 7, 1 / 7])
    assert total == pytest.approx(1.0)
    assert literal_share_sum(prices, ranks, DEFAULT_BETA) == pytest.approx(1.0)
    consistent = shares_from_ranks(prices, ranks, DEFAULT_BETA)
    np.testing.assert_allclose(consistent, [1 / 7, 2 / 7, 4 / 7])


@pytest.mark.parametrize(
    ("prices", "ranks", "beta"),
    [([10.0, 0.0], [5, 5], -0.8), ([10.0, 10.0], [0.5, 5], -0.8), ([10.0], [5], 0.3)],
)
def test_share_input_errors(prices, ranks, beta):
    with pytest.raises(InputError):
        shares_from_ranks(prices, ranks, beta)


def test_revenue_shares_need_some_demand():
    with pytest.raises(InputError, match="shares undefined"):
        revenue_shares([1.0, 2.0], [0.0, 0.0])


def test_duopoly_markups():
    solution = solve_markups([0.5, 0.5], [[-2.0, 0.5], [0.5, -2.0]])
    np.testing.assert_allclose(solution.m, [1 / 3, 1 / 3])
    assert solution.condition == pytest.approx(2.5 / 1.5)


def test_monopoly_markup_and_cost():
    solution = solve_markups([1.0], [[-2.0]])
    np.testing.assert_allclose(solution.m, [0.5])
    estimate = marginal_costs(solution.m, [1.0], [10.0])
    assert estimate.cost_of("p0") == pytest.approx(5.0)
    assert estimate.flags == {}


def test_cost_from_lerner_index():
    estimate = marginal_costs([1 / 3], [0.5], [30.0], product_ids=["A"], group_id="g")
    assert estimate.lerner[0] == pytest.approx(2 / 3)
    assert estimate.cost_of("A") == pytest.approx(10.0)


def test_lerner_above_one_is_reported_not_hidden():
    estimate = marginal_costs([0.9], [0.5], [10.0])
    assert estimate.cost_of("p0") == pytest.approx(-8.0)
    assert estimate.flags["p0"] == ("negative_cost", "lerner_above_one")
    assert marginal_costs([-0.1], [0.5], [10.0]).flags["p0"] == ("negative_markup",)


def test_marginal_cost_input_errors():
    with pytest.raises(InputError, match="positive share"):
        marginal_costs([0.1, 0.1], [1.0, 0.0], [10.0, 10.0])
    with pytest.raises(InputError, match="same length"):
        marginal_costs([0.1], [0.5, 0.5], [10.0, 10.0])


def test_singular_elasticities_are_refused():
    with pytest.raises(IllConditionedError):
        solve_markups([0.5, 0.5], [[-1.0, 1.0], [-1.0, 1.0]])


def random_instance(rng, n):
    N = rng.uniform(-0.3, 0.3, (n, n))
    np.fill_diagonal(N, -rng.uniform(1.2, 4.0, n))
    return rng.dirichlet(np.ones(n)), N, rng.uniform(5, 500, n)


def test_markups_satisfy_first_order_conditions():
    rng = np.random.default_rng(23)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        shares, N, prices = random_instance(rng, n)
        m = solve_markups(shares, N).m
        np.testing.assert_allclose(shares + N.T @ m, 0.0, atol=1e-12)
        estimate = marginal_costs(m, shares, prices)
        np.testing.assert_allclose(estimate.marginal_costs, prices * (1 - m / shares), rtol=1e-12)


def test_relabelling_members_permutes_markups():
    rng = np.random.default_rng(4)
    shares, N, _ = random_instance(rng, 3)
    order = np.array([2, 0, 1])
    base = solve_markups(shares, N).m
    moved = solve_markups(shares[order], N[np.ix_(order, order)]).m
    np.testing.assert_allclose(moved, base[order], rtol=1e-12)


def test_cost_estimate_dict_keeps_flags():
    estimate = marginal_costs([0.9, 0.2], [0.5, 0.5], [10.0, 20.0], product_ids=["A", "B"])
    restored = CostEstimate.from_dict(estimate.to_dict())
    assert restored.product_ids == ("A", "B")
    assert restored.cost_of("A") == pytest.approx(-8.0)
    assert restored.flags == {"A": ("negative_cost", "lerner_above_one"), "B": ()}


@pytest.fixture(scope="module")
def market():
    return generate_market(sim_config(office_pair(), sigma=0.0))


def test_effective_ranks_reproduce_the_demand_index(market):
    panel, _ = market
    summary = window_summary(panel, ("office-pro", "office-std"), CALIBRATION)
    assert summary.n_obs == (300, 300)
    np.testing.assert_allclose(
        np.exp(DEFAULT_INTERCEPT) * summary.effective_ranks**DEFAULT_BETA,
        summary.demand_index,
        rtol=1e-10,
    )
    np.testing.assert_allclose(
        shares_from_ranks(summary.prices, summary.effective_ranks, DEFAULT_BETA),
        revenue_shares(summary.prices, summary.demand_index),
        rtol=1e-9,
    )


def test_window_bounds_select_observations(market):
    panel, _ = market
    summary = window_summary(
        panel, ("office-pro",), CALIBRATION, start="2021-01-14", end="2021-01-24"
    )
    assert summary.n_obs == (30,)
    assert summary.start == "2021-01-14T00:00:00Z"
    with pytest.raises(InputError, match="no observations"):
        window_summary(panel, ("office-pro",), CALIBRATION, start="2030-01-01")


def test_estimate_costs_for_a_group(market):
    panel, _ = market
    demand = estimate_demand(panel.group("office"), panel)
    summary = window_summary(panel, demand.members, CALIBRATION)

    estimate = estimate_costs(demand, summary, CALIBRATION)

    N = demand.elasticities(DEFAULT_BETA).matrix
    np.testing.assert_allclose(estimate.shares + N.T @ estimate.markups, 0.0, atol=1e-9)
    assert estimate.product_ids == demand.members
    assert estimate.share_method == "rank_ratio"

    with pytest.raises(InputError, match="members do not match"):
        estimate_costs(demand, window_summary(panel, ("office-pro",), CALIBRATION), CALIBRATION)


def test_true_inputs_at_the_optimum_reproduce_simulated_costs():
    config = dataclasses.replace(load_sim_config(SAMPLE_DIR / "sim.toml"), days=5)
    _, truth = generate_market(config)
    for group_id in ("office", "shield"):
        group = truth.group(group_id)
        model = group.base_model().with_prices(group.optimal_prices)
        shares = revenue_shares(model.prices, local_demand(model, model.prices))
        np.testing.assert_allclose(shares, group.optimal_shares, rtol=1e-10)

        m = solve_markups(shares, group.elasticities).m
        estimate = marginal_costs(m, shares, group.optimal_prices, product_ids=group.members)
        np.testing.assert_allclose(estimate.marginal_costs, group.costs, rtol=1e-10)


def summary_at(model, calibration) -> WindowSummary:
    """A one-point window at the model's prices with ranks implied by its quantities."""
    ranks = (model.quantities / np.exp(calibration.intercept)) ** (1.0 / calibration.beta)
    return WindowSummary(
        product_ids=model.product_ids,
        prices=model.prices,
        mean_ranks=ranks,
        effective_ranks=ranks,
        demand_index=model.quantities,
        units=model.quantities,
        n_obs=(1,) * len(model.product_ids),
    )


def test_estimated_elasticities_recover_costs_at_the_optimum():
    sample = load_sim_config(SAMPLE_DIR / "sim.toml")
    hits, checked = 0, set()
    for seed in range(20):
        config = dataclasses.replace(
            sample,
            seed=seed,
            sigma=0.2,
            drop_rate=0.0,
            rank_rounding=False,
            price_change_prob=0.3,
        )
        panel, truth = generate_market(config)
        expected = {
            m["product_id"]: m["marginal_cost"]
            for g in true_costs(truth)["groups"]
            for m in g["members"]
        }
        close = True
        for group in truth.groups:
            if group.optimal_prices is None:
                continue
            checked.add(group.group_id)
            demand = estimate_demand(panel.group(group.group_id), panel)
            assert demand.members == group.members
            model = group.base_model().with_prices(group.optimal_prices)
            estimate = estimate_costs(demand, summary_at(model, CALIBRATION), CALIBRATION)
            for pid, cost in zip(estimate.product_ids, estimate.marginal_costs, strict=True):
                close &= abs(cost - expected[pid]) <= 0.15 * expected[pid]
        hits += close
    assert {"office", "shield"} <= checked
    assert hits >= 17, hits
