import numpy as np
import pytest

from semimarkov_pricing import (AlreadyDefaultedError, ClaimSpec, MarketState, RegimeModel, ValidationError,
                                VolProfile, mc_price, price_model1, price_model2, price_model3, riskless_debt,
                                solve_bond_surfaces)
from semimarkov_pricing.bonds import equity_model2, model2_addon


@pytest.fixture(scope="module")
def bonds(ref_model, ref_spec):
    return solve_bond_surfaces(ref_model, ref_spec, 1.0, 1.0, 0.7)


def grid_states(surface, every=10):
    g = surface.grid
    t, s, i, y = np.meshgrid(g.t, g.s, np.arange(2), g.y[::every], indexing="ij")
    return t, s, i, y


# -- model 1 -------------------------------------------------------------------------
def test_model1_balance_sheet_on_grid(bonds):
    # debt + equity = K B - put + call = s when there is no payout
    g = bonds.call.grid
    B = np.stack([np.stack([bonds.zcb(g.t, i, y) for y in g.y], -1) for i in range(2)], 1)[:, None]
    s = g.s[None, :, None, None]
    total = bonds.face * B - bonds.put.full + bonds.call.full
    assert np.max(np.abs(total - s) / (1 + s)) <= 1e-3


def test_model1_bounds_and_limits(bonds):
    for s in (0.2, 0.8, 1.0, 2.0):
        debt, equity = price_model1(bonds, MarketState(0.0, s, 1, 0.3))
        assert 0.0 <= debt <= riskless_debt(bonds, MarketState(0.0, s, 1, 0.3))
        assert equity >= 0.0
    kb = riskless_debt(bonds, MarketState(0.0, 6.0, 0, 0.0))
    debt, equity = price_model1(bonds, MarketState(0.0, 6.0, 0, 0.0))
    assert debt == pytest.approx(kb, abs=1e-6)
    assert equity == pytest.approx(6.0 - kb, abs=1e-3 * 7.0)
    assert price_model1(bonds, MarketState(0.0, 0.05, 0, 0.0))[0] == pytest.approx(0.05, abs=1e-4)


def test_model1_matches_monte_carlo(bonds, ref_model, ref_spec, atm):
    mc = mc_price(ClaimSpec("bond-model-1", 1.0, 1.0), ref_model, ref_spec, atm, 100_000, 1)
    assert abs(price_model1(bonds, atm)[0] - mc.estimate) <= 3 * mc.stderr


def test_debt_increases_with_assets_and_falls_with_volatility(ref_spec, coarse):
    s = np.linspace(0.4, 2.5, 30)
    debts = []
    for scale in (1.0, 1.3):
        m = RegimeModel((0.03, 0.07), (0.1, 0.1), VolProfile((0.15 * scale, 0.35 * scale)))
        b = solve_bond_surfaces(m, ref_spec, 1.0, 1.0, grid=coarse)
        debts.append(np.array([price_model1(b, MarketState(0.0, x, 0, 0.0))[0] for x in s]))
    assert np.all(np.diff(debts[0]) >= -1e-12)
    assert np.all(debts[1] <= debts[0] + 1e-12)


# -- model 2 -------------------------------------------------------------------------
def test_model2_dominates_model1_on_grid(bonds):
    t, s, i, y = grid_states(bonds.down_out)
    alive = s > bonds.default_barrier * (1 + 1e-9)
    addon = bonds.call.value(t[alive], s[alive], i[alive], y[alive]) - bonds.down_out.value(
        t[alive], s[alive], i[alive], y[alive])
    assert addon.min() >= -1e-10


@pytest.mark.parametrize("s", [0.72, 0.75, 1.0])
@pytest.mark.parametrize("knock", ["in", "out"])
def test_model2_matches_monte_carlo(bonds, ref_model, ref_spec, s, knock):
    st_ = MarketState(0.0, s, 0, 0.0)
    claim = ClaimSpec("bond-model-2", 1.0, 1.0, default_barrier=0.7, knock=knock)
    mc = mc_price(claim, ref_model, ref_spec, st_, 40_000, 2)
    assert abs(price_model2(bonds, st_, knock) - mc.estimate) <= 3 * mc.stderr + 5e-3


def test_model2_vanishing_barrier(ref_model, ref_spec, coarse, atm):
    b = solve_bond_surfaces(ref_model, ref_spec, 1.0, 1.0, 1e-3, grid=coarse)
    debt1 = price_model1(b, atm)[0]
    call = float(b.call.evaluate(0.0, 1.0, 0)[0])
    assert price_model2(b, atm, "out") == pytest.approx(debt1 + call, abs=1e-6)
    assert model2_addon(b, atm, "in") == pytest.approx(0.0, abs=1e-6)


def test_model2_equity_splits_call(bonds, atm):
    leg = model2_addon(bonds, atm)
    assert equity_model2(bonds, atm) + leg == pytest.approx(float(bonds.call.evaluate(0.0, 1.0, 0)[0]))


def test_model2_rejects_defaulted_state(bonds):
    with pytest.raises(AlreadyDefaultedError):
        price_model2(bonds, MarketState(0.0, 0.7, 0, 0.0))


def test_barrier_must_sit_below_face(ref_model, ref_spec, coarse):
    with pytest.raises(ValidationError):
        solve_bond_surfaces(ref_model, ref_spec, 1.0, 1.0, 1.2, grid=coarse)


# -- model 3 -------------------------------------------------------------------------
def test_model3_monotone_in_recovery_and_bounded(bonds, ref_model, ref_spec, atm):
    kb = riskless_debt(bonds, atm)
    est = [price_model3(bonds, ref_model, ref_spec, atm, d, 20_000, 5) for d in (0.0, 0.35, 0.7)]
    vals = [e.estimate for e in est]
    assert vals[0] < vals[1] < vals[2] <= kb


def test_model3_without_default_is_model1(ref_model, ref_spec, coarse, atm):
    b = solve_bond_surfaces(ref_model, ref_spec, 1.0, 1.0, 1e-3, grid=coarse, with_down_out=False)
    mc = price_model3(b, ref_model, ref_spec, atm, 0.0, 20_000, 5)
    assert abs(mc.estimate - price_model1(b, atm)[0]) <= 3 * mc.stderr + 1e-3


def test_model3_full_recovery_far_from_default(bonds, ref_model, ref_spec):
    st_ = MarketState(0.0, 3.0, 0, 0.0)
    mc = price_model3(bonds, ref_model, ref_spec, st_, 0.7, 10_000, 6)
    assert abs(mc.estimate - riskless_debt(bonds, st_)) <= 3 * mc.stderr + 1e-3


def test_model3_argument_checks(bonds, ref_model, ref_spec, atm):
    with pytest.raises(ValidationError):
        price_model3(bonds, ref_model, ref_spec, atm, 0.8, 10, 1)
    with pytest.raises(AlreadyDefaultedError):
        price_model3(bonds, ref_model, ref_spec, MarketState(0.0, 0.65, 0, 0.0), 0.1, 10, 1)
