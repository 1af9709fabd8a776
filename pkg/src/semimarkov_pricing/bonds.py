"""Structural defaultable debt assembled from vanilla, knock-out and bond prices.

The firm's asset value plays the role of the stock.  Debt with face ``K``
maturing at ``T`` is priced under three default conventions:

1. default only at maturity (debt pays ``min(A_T, K)``);
2. as 1, plus the call leg ``(A_T - K)^+`` handed to debtholders when the
   assets dipped below ``J`` before maturity;
3. premature default at the first passage below ``J`` with recovery
   ``delta * K`` paid as a default-free bond at the default time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsm import Payoff
from .errors import AlreadyDefaultedError, ValidationError
from .model import MarketState, RegimeModel
from .rates import RateSpec
from .simulation import BARRIER_STEPS, ClaimSpec, MCResult, mc_price
from .volterra import GridSpec, PriceSurface, ZCBSurface, solve_barrier_do, solve_vanilla, solve_zcb


@dataclass(eq=False)
class BondSurfaces:
    """Solved building blocks for one (K, T[, J]) capital structure."""

    face: float
    maturity: float
    call: PriceSurface
    put: PriceSurface
    zcb: ZCBSurface
    default_barrier: float | None = None
    down_out: PriceSurface | None = None


def solve_bond_surfaces(model: RegimeModel, spec: RateSpec, face: float, maturity: float,
                        default_barrier: float | None = None, grid: GridSpec | None = None,
                        tol: float = 1e-8, with_down_out: bool = True) -> BondSurfaces:
    """Solve the call, put and bond, plus the down-and-out call when a barrier is set.

    ``with_down_out=False`` skips the knock-out surface (model 3 only needs
    the barrier level), which also allows time-dependent volatility.
    """
    if not face > 0:
        raise ValidationError("face value K must be positive")
    call = solve_vanilla(model, spec, Payoff.call(face), maturity, grid, tol)
    put = solve_vanilla(model, spec, Payoff.put(face), maturity, grid, tol)
    zcb = solve_zcb(model, spec, maturity)
    do = None
    if default_barrier is not None:
        _check_barrier(face, default_barrier)
    if default_barrier is not None and with_down_out:
        do = solve_barrier_do(model, spec, face, default_barrier, maturity, grid, tol)
    return BondSurfaces(float(face), float(maturity), call, put, zcb,
                        None if default_barrier is None else float(default_barrier), do)


def _check_barrier(face: float, J: float) -> None:
    if not 0 < J < face:
        raise ValidationError(f"default barrier J={J} must satisfy 0 < J < K={face}")


def _at(surface: PriceSurface, state: MarketState) -> float:
    return float(surface.evaluate(state.t, state.s, state.i, state.y)[0])


def price_model1(surfaces: BondSurfaces, state: MarketState) -> tuple[float, float]:
    """Debt and equity when default can only happen at maturity.

    Debt is a riskless bond for ``K`` less a put struck at ``K``; equity is
    the call.
    """
    K = surfaces.face
    bond = K * surfaces.zcb(state.t, state.i, state.y)
    debt = bond - _at(surfaces.put, state)
    equity = _at(surfaces.call, state)
    # clip round-off: the put never exceeds the bond in exact arithmetic
    return float(min(max(debt, 0.0), bond)), float(max(equity, 0.0))


def model2_addon(surfaces: BondSurfaces, state: MarketState, knock: str = "in") -> float:
    """Value of the call leg that model 2 grants debtholders.

    ``knock="in"`` pays the leg only after a premature breach of ``J``
    (vanilla minus down-and-out); ``"out"`` pays it only without one.
    """
    if surfaces.down_out is None:
        raise ValueError("bond surfaces were solved without a default barrier")
    if state.s <= surfaces.default_barrier:
        raise AlreadyDefaultedError(f"asset value {state.s} is at or below the default barrier "
                                    f"{surfaces.default_barrier}")
    out = _at(surfaces.down_out, state)
    if knock == "out":
        return max(out, 0.0)
    if knock != "in":
        raise ValueError("knock must be 'in' or 'out'")
    return max(_at(surfaces.call, state) - out, 0.0)


def price_model2(surfaces: BondSurfaces, state: MarketState, knock: str = "in") -> float:
    """Model-1 debt plus the barrier-contingent call leg (constant volatility only)."""
    addon = model2_addon(surfaces, state, knock)
    return price_model1(surfaces, state)[0] + addon


def price_model3(surfaces: BondSurfaces, model: RegimeModel, spec: RateSpec, state: MarketState,
                 recovery: float, n_paths: int, rng, barrier_steps: int = BARRIER_STEPS) -> MCResult:
    """Monte Carlo value of debt with premature default and bond-denominated recovery.

    The asset is monitored on ``barrier_steps`` points per unit time; at the
    first monitoring time below ``J`` debtholders receive ``recovery * K``
    default-free bonds maturing at ``T``, valued at the regime and age of
    that time.
    """
    K, J = surfaces.face, surfaces.default_barrier
    if J is None:
        raise ValueError("bond surfaces were solved without a default barrier")
    if not 0.0 <= recovery <= J / K:
        raise ValidationError(f"recovery rate {recovery} must lie in [0, J/K] = [0, {J / K:g}]")
    if state.s <= J:
        raise AlreadyDefaultedError(f"asset value {state.s} is at or below the default barrier {J}")
    claim = ClaimSpec("bond-model-3", surfaces.maturity, K, default_barrier=J, recovery=recovery)
    return mc_price(claim, model, spec, state, n_paths, rng, barrier_steps, zcb=surfaces.zcb)


def riskless_debt(surfaces: BondSurfaces, state: MarketState) -> float:
    """``K * B(t, T, i, y)``, the upper bound for every debt value."""
    return float(surfaces.face * surfaces.zcb(state.t, state.i, state.y))


def equity_model2(surfaces: BondSurfaces, state: MarketState, knock: str = "in") -> float:
    """Equity under model 2: the call leg left to shareholders."""
    leg = _at(surfaces.call, state) - model2_addon(surfaces, state, knock)
    return float(np.maximum(leg, 0.0))
