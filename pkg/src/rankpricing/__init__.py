"""Sales-rank demand estimation, cost recovery and pricing-optimality tests."""

from .cost import marginal_costs, revenue_shares, shares_from_ranks, solve_markups
from .dataset import load_catalog, load_observations, validate_panel
from .demand import DemandSpec, elasticity_matrix, estimate_all, estimate_demand
from .errors import ArtifactMissingError, InputError, NumericalError, RankPricingError
from .optimal import ProfitModel, classify, profit, profit_gradient
from .rankmap import ParetoCalibration, fit_pareto, quantity_to_rank, rank_to_quantity
from .simulate import SimConfig, generate_market

__all__ = [
    "ArtifactMissingError",
    "DemandSpec",
    "InputError",
    "NumericalError",
    "ParetoCalibration",
    "ProfitModel",
    "RankPricingError",
    "SimConfig",
    "classify",
    "elasticity_matrix",
    "estimate_all",
    "estimate_demand",
    "fit_pareto",
    "generate_market",
    "load_catalog",
    "load_observations",
    "marginal_costs",
    "profit",
    "profit_gradient",
    "quantity_to_rank",
    "rank_to_quantity",
    "revenue_shares",
    "shares_from_ranks",
    "solve_markups",
    "validate_panel",
]
