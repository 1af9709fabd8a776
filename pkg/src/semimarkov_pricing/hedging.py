"""Locally risk-minimising hedge: hedge ratio, strategy, residual risk and cost simulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .model import MarketState
from .simulation import DEFAULT_BATCH, GridPaths, MCResult, batch_generators, simulate_grid
from .volterra import PriceSurface

FD_REL_STEP = 1e-4


def hedge_ratio_psi(surface: PriceSurface, state: MarketState) -> float:
    """Units of stock held by the optimal strategy at ``state``.

    For vanilla surfaces this differentiates the pricing equation under the
    integral: closed-form frozen-regime delta for the survival term plus a
    quadrature of the converged age-zero slice against the spot derivative of
    the lognormal density.  Knock-out surfaces fall back to a central
    difference of the same off-grid evaluation.
    """
    t, s, i, y = state
    if surface.kind != "vanilla":
        return psi_finite_difference(surface, state)
    return float(surface.evaluate(t, s, i, y, derivative=True)[0])


def psi_finite_difference(surface: PriceSurface, state: MarketState, rel_step: float = FD_REL_STEP) -> float:
    """Central difference of the off-grid price in ``s`` with step ``rel_step * s``."""
    t, s, i, y = state
    h = rel_step * s
    up, dn = surface.evaluate(t, [s + h, s - h], i, y)
    return float((up - dn) / (2 * h))


@dataclass(frozen=True)
class Strategy:
    """Holdings at one instant.

    ``xi`` shares, ``eps`` units of the money-market account whose value is
    ``bank`` (so that ``value = xi * s + eps * bank``).
    """

    t: float
    s: float
    xi: float
    eps: float
    value: float
    bank: float

    @property
    def discounted_stock(self) -> float:
        return self.s / self.bank


def strategy_at(surface: PriceSurface, state: MarketState, path_discount: float = 1.0) -> Strategy:
    """Optimal holdings at ``state``.

    ``path_discount`` is ``exp(-int_0^t r(X_u) du)`` along the realised
    regime path, i.e. the reciprocal of the money-market account.
    """
    if not path_discount > 0:
        raise ValueError("path_discount must be positive")
    t, s, i, y = state
    value = float(surface.evaluate(t, s, i, y)[0])
    xi = hedge_ratio_psi(surface, state)
    eps = path_discount * (value - xi * s)
    return Strategy(float(t), float(s), xi, eps, value, 1.0 / path_discount)


# ----------------------------------------------------------------------------
# path functionals
# ----------------------------------------------------------------------------
def _time_grid(t0: float, T: float, dt: float) -> NDArray:
    n = max(1, int(np.ceil((T - t0) / dt - 1e-9)))
    return np.linspace(t0, T, n + 1)


def _alive(surface: PriceSurface, s: NDArray) -> NDArray:
    """1 until the first grid time the asset sits beyond the knock-out level, then 0."""
    b = surface.operator.barrier
    if b is None:
        return np.ones(s.shape, dtype=bool)
    out = s < b.level if b.up else s > b.level
    return np.logical_and.accumulate(out, axis=1)


def _spot_delta(surface: PriceSurface, t, s, i, y) -> NDArray:
    if surface.kind == "vanilla":
        return np.asarray(surface.delta(t, s, i, y))
    h = FD_REL_STEP * 10 * s
    return (np.asarray(surface.value(t, s + h, i, y)) - np.asarray(surface.value(t, s - h, i, y))) / (2 * h)


def residual_risk(surface: PriceSurface, state: MarketState, n_paths: int, rng, steps_per_unit: int = 128,
                  batch_size: int = DEFAULT_BATCH) -> MCResult:
    """Monte Carlo estimate of the residual risk of the optimal strategy from ``state``.

    Integrates, along risk-neutral paths on a uniform time grid (trapezoid
    rule), the squared jump in value when the regime switches, weighted by
    the transition rates and the squared discount factor, while the claim is
    alive.
    """
    op = surface.operator
    model, spec = op.model, op.spec
    T = surface.maturity
    if not T > state.t:
        raise ValueError("valuation time must precede maturity")
    grid = _time_grid(state.t, T, 1.0 / steps_per_unit)
    w = np.full(grid.size, grid[1] - grid[0])
    w[[0, -1]] *= 0.5
    k = spec.k
    chunks = []
    for n, gen in batch_generators(rng, n_paths, batch_size):
        p = simulate_grid(spec, model, state, grid, n, gen, "risk_neutral")
        tt = np.broadcast_to(grid, p.s.shape)
        here = np.asarray(surface.value(tt, p.s, p.states, p.ages))
        rates = spec.rates_from(p.states, p.ages)                        # (n, Q, k)
        sq = np.zeros_like(here)
        for j in range(k):
            jump = np.asarray(surface.value(tt, p.s, j, 0.0)) - here
            sq += rates[..., j] * jump ** 2
        integrand = sq * np.exp(-2.0 * p.rint) * _alive(surface, p.s)
        chunks.append(integrand @ w)
    vals = np.concatenate(chunks)
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return MCResult(float(vals.mean()), se, int(vals.size))


def residual_risk_barrier(surface_uo: PriceSurface, state: MarketState, n_paths: int, rng, **kw) -> MCResult:
    """Residual risk of a knock-out claim (see :func:`residual_risk`)."""
    if surface_uo.kind == "vanilla":
        raise ValueError("expected a knock-out surface")
    return residual_risk(surface_uo, state, n_paths, rng, **kw)


def strategy_on_paths(surface: PriceSurface, paths: GridPaths) -> tuple[NDArray, NDArray, NDArray]:
    """Optimal ``(xi, eps, value)`` at every node of simulated paths, each of shape (n, Q).

    Uses the grid-interpolated price and spot delta (vectorised); the last
    column holds the terminal payoff with no stock position.  Knocked-out
    paths hold nothing from the first node beyond the barrier on.
    """
    op = surface.operator
    tt = np.broadcast_to(paths.grid, paths.s.shape)
    alive = _alive(surface, paths.s)
    value = np.empty(paths.s.shape)
    xi = np.zeros(paths.s.shape)
    a = (slice(None), slice(None, -1))
    value[a] = surface.value(tt[a], paths.s[a], paths.states[a], paths.ages[a])
    xi[a] = _spot_delta(surface, tt[a], paths.s[a], paths.states[a], paths.ages[a])
    value[:, -1] = op.payoff(paths.s[:, -1])
    value *= alive
    xi *= alive
    eps = np.exp(-paths.rint) * (value - xi * paths.s)
    return xi, eps, value


class HedgeCost(NamedTuple):
    """Per-path terminal discounted cost ``C*_T - C*_0`` of discrete rebalancing."""

    cost: NDArray
    mean: float
    stderr: float
    grid: NDArray


def pnl_simulate(surface: PriceSurface, state: MarketState, n_paths: int, rebalance_dt: float, rng,
                 measure: str = "risk_neutral", batch_size: int = DEFAULT_BATCH) -> HedgeCost:
    """Hedge the claim by rebalancing every ``rebalance_dt`` and report the discounted cost.

    At each rebalancing time the position is reset to the optimal number of
    shares (grid-interpolated spot delta) with the rest in the money market.
    The cost of path ``p`` is ``V*_T - V*_0 - sum xi_n (S*_{n+1} - S*_n)``,
    with starred quantities discounted by the path's money-market account
    and the stock gain including its dividend yield.  Knock-out claims stop
    trading at the first rebalancing time beyond the barrier.
    """
    if not rebalance_dt > 0:
        raise ValueError("rebalance_dt must be positive")
    op = surface.operator
    model, spec = op.model, op.spec
    T = surface.maturity
    if not T > state.t:
        raise ValueError("valuation time must precede maturity")
    grid = _time_grid(state.t, T, rebalance_dt)
    has_div = bool(np.any(model.kappa_arr != 0))
    chunks = []
    for n, gen in batch_generators(rng, n_paths, batch_size):
        p = simulate_grid(spec, model, state, grid, n, gen, measure)
        xi, _, value = strategy_on_paths(surface, p)
        disc = np.exp(-p.rint)
        s_disc = p.s * disc
        growth = 1.0
        if has_div:
            kint = p.chain.integrate(model.kappa_arr, grid[1:], counts=p.chain.counts_at(grid[1:]))
            kint = np.concatenate([np.zeros((n, 1)), kint], axis=1)
            growth = np.exp(np.diff(kint, axis=1))
        gains = np.sum(xi[:, :-1] * (s_disc[:, 1:] * growth - s_disc[:, :-1]), axis=1)
        chunks.append(value[:, -1] * disc[:, -1] - value[:, 0] * disc[:, 0] - gains)
    cost = np.concatenate(chunks)
    se = float(cost.std(ddof=1) / np.sqrt(cost.size)) if cost.size > 1 else 0.0
    return HedgeCost(cost, float(cost.mean()), se, grid)
