"""Pricing and hedging under age-dependent semi-Markov regime switching.

Regimes switch with rates that depend on the time spent in the current
regime.  Prices solve a Volterra equation of the second kind by
fixed-point iteration and are checked against an independent Monte Carlo
simulator of the regime and asset paths.
"""

from .bonds import (BondSurfaces, price_model1, price_model2, price_model3, riskless_debt,
                    solve_bond_surfaces)
from .bsm import Payoff, VolProfile, bsm_delta, bsm_rho, survival_prob_down, survival_prob_up
from .config import ModelConfig, build_config, load_config, reference_config_path
from .errors import (AlreadyDefaultedError, ConvergenceError, NumericalError, UnsupportedModelError,
                     ValidationError)
from .hedging import (Strategy, hedge_ratio_psi, pnl_simulate, psi_finite_difference, residual_risk,
                      residual_risk_barrier, strategy_at)
from .model import MarketState, RegimeModel
from .rates import RateSpec
from .simulation import (ClaimSpec, MCResult, PathRecord, first_passage_up_mc, mc_price, simulate_asset,
                         simulate_chain, simulate_chains, simulate_inhomogeneous)
from .volterra import (GridSpec, PriceSurface, ZCBSurface, apply_A, pde_residual, solve_barrier,
                       solve_barrier_do, solve_barrier_uo, solve_vanilla, solve_zcb)

__all__ = [
    "AlreadyDefaultedError", "BondSurfaces", "ClaimSpec", "ConvergenceError", "GridSpec", "MCResult",
    "MarketState", "ModelConfig", "NumericalError", "PathRecord", "Payoff", "PriceSurface", "RateSpec",
    "RegimeModel", "Strategy", "UnsupportedModelError", "ValidationError", "VolProfile", "ZCBSurface",
    "apply_A", "bsm_delta", "bsm_rho", "build_config", "first_passage_up_mc", "hedge_ratio_psi",
    "load_config", "mc_price", "pde_residual", "pnl_simulate", "price_model1", "price_model2",
    "price_model3", "psi_finite_difference", "reference_config_path", "residual_risk",
    "residual_risk_barrier", "riskless_debt", "simulate_asset", "simulate_chain", "simulate_chains",
    "simulate_inhomogeneous", "solve_bond_surfaces", "solve_barrier", "solve_barrier_do",
    "solve_barrier_uo", "solve_vanilla", "solve_zcb", "strategy_at", "survival_prob_down",
    "survival_prob_up",
]
