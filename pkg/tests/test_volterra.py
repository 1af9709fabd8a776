import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from semimarkov_pricing import (ClaimSpec, ConvergenceError, GridSpec, MarketState, Payoff, RateSpec, RegimeModel,
                                UnsupportedModelError, ValidationError, VolProfile, apply_A, bsm_rho, mc_price,
                                pde_residual, solve_barrier_do, solve_barrier_uo, solve_vanilla, solve_zcb)
from semimarkov_pricing.volterra import default_max_iter


def bs_call(s, K, r, sig, tau):
    if tau <= 0:
        return max(s - K, 0.0)
    d1 = (np.log(s / K) + (r + 0.5 * sig ** 2) * tau) / (sig * np.sqrt(tau))
    return s * norm.cdf(d1) - K * np.exp(-r * tau) * norm.cdf(d1 - sig * np.sqrt(tau))


def zcb_on_grid(zcb, grid, k):
    """B(t, T, i, y) on the surface grid, shape (n_t, 1, k, n_y)."""
    return np.stack([np.stack([zcb(grid.t, i, y) for y in grid.y], -1) for i in range(k)], 1)[:, None]


@pytest.fixture(scope="module")
def const_spec():
    return RateSpec(np.array([[0.0, 1.0], [2.0, 0.0]]), age_cap=10.0)


# -- degenerate model ---------------------------------------------------------
def test_identical_regimes_reproduce_black_scholes(deg_call, deg_model):
    g = deg_call.grid
    rows = g.t <= 0.8
    cols = (g.s >= 0.8) & (g.s <= 1.25)
    bs = np.stack([bsm_rho(deg_model, 0, t, g.s[cols], 1.0, Payoff.call(1.0)) for t in g.t[rows]])
    sub = deg_call.full[rows][:, cols]
    rel = np.abs(sub - bs[:, :, None, None]) / bs[:, :, None, None]
    assert rel.max() <= 5e-3
    assert deg_call.value(0.0, 1.0, 0) == pytest.approx(0.104506, rel=5e-3)


def test_terminal_slice_is_payoff(ref_call, ref_put):
    for surf, pay in ((ref_call, Payoff.call(1.0)), (ref_put, Payoff.put(1.0))):
        g = surf.grid
        np.testing.assert_allclose(surf.full[-1], np.broadcast_to(pay(g.s)[:, None, None], surf.full[-1].shape),
                                   atol=1e-14)


def test_age_zero_extension_matches_slice(ref_call):
    np.testing.assert_allclose(ref_call.full[..., 0], ref_call.zero_slice, atol=1e-12)


def test_put_call_parity_on_grid(ref_call, ref_put, ref_zcb):
    g = ref_call.grid
    B = zcb_on_grid(ref_zcb, g, 2)
    s = g.s[None, :, None, None]
    gap = ref_call.full - ref_put.full - (s - 1.0 * B)
    assert np.max(np.abs(gap) / (1 + s)) <= 1e-3


def test_positivity_and_growth(ref_call, ref_put):
    for surf in (ref_call, ref_put):
        k1, k2 = surf.operator.payoff.growth()
        s = surf.grid.s[None, :, None, None]
        assert surf.full.min() >= -1e-12
        assert np.all(surf.full <= k1 + k2 * s + 1e-9)


def test_monotone_in_payoff(ref_model, ref_spec, coarse):
    lo = solve_vanilla(ref_model, ref_spec, Payoff.call(1.1), 1.0, grid=coarse, center=1.0)
    hi = solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, grid=coarse, center=1.0)
    assert np.all(hi.full - lo.full >= -1e-12)


def test_tabulated_payoff_tracks_call(ref_model, ref_spec, coarse):
    x = np.linspace(0.0, 8.0, 1601)
    tab = solve_vanilla(ref_model, ref_spec, Payoff.tabulated(x, np.maximum(x - 1.0, 0.0)), 1.0, grid=coarse,
                        center=1.0)
    call = solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, grid=coarse)
    np.testing.assert_allclose(tab.zero_slice, call.zero_slice, atol=2e-4)


# -- the operator ---------------------------------------------------------------
def test_operator_on_zero_gives_first_term(ref_model, ref_spec, coarse):
    pay = Payoff.call(1.0)
    surf = solve_vanilla(ref_model, ref_spec, pay, 1.0, grid=coarse, full=False)
    g = surf.grid
    got = apply_A(np.zeros_like(surf.zero_slice), ref_model, ref_spec, pay, 1.0, coarse)
    for n in (0, 10, 25):
        for i in (0, 1):
            surv = ref_spec.survival(i, 1.0 - g.t[n])
            np.testing.assert_allclose(got[n, :, i], surv * bsm_rho(ref_model, i, g.t[n], g.s, 1.0, pay),
                                       rtol=1e-12, atol=1e-15)


def test_two_iterations_match_nested_quadrature(ref_model, const_spec):
    # constant rates: u2(0, 1, 0) = S_0(1) rho_0 + int e^{-r0 v} f_0(v) E[S_1(1 - v) rho_1(v, X_v)] dv
    lam, r, sig = (1.0, 2.0), ref_model.r, ref_model.vol.sigma0
    first = lambda i, t, s: np.exp(-lam[i] * (1 - t)) * bs_call(s, 1.0, r[i], sig[i], 1 - t)

    def inner(v):
        if v == 0:
            return first(1, 0.0, 1.0)
        m, sd = (r[0] - sig[0] ** 2 / 2) * v, sig[0] * np.sqrt(v)
        return quad(lambda z: first(1, v, np.exp(m + sd * z)) * norm.pdf(z), -10, 10, epsabs=1e-12, limit=200)[0]

    oracle = first(0, 0.0, 1.0) + quad(lambda v: np.exp(-(r[0] + lam[0]) * v) * lam[0] * inner(v), 0, 1,
                                       epsabs=1e-11, limit=200)[0]
    pay, gs = Payoff.call(1.0), GridSpec()
    u0 = np.zeros((gs.n_t, gs.n_logs, 2))
    u2 = apply_A(apply_A(u0, ref_model, const_spec, pay, 1.0, gs), ref_model, const_spec, pay, 1.0, gs)
    assert u2[0, gs.n_logs // 2, 0] == pytest.approx(oracle, abs=1e-4)


def test_converged_slice_is_fixed_point(ref_call, ref_model, ref_spec):
    again = apply_A(ref_call.zero_slice, ref_model, ref_spec, Payoff.call(1.0), 1.0)
    weight = 1 + ref_call.grid.s[None, :, None]
    assert np.max(np.abs(again - ref_call.zero_slice) / weight) <= 1e-8


def test_apply_A_rejects_wrong_shape(ref_model, ref_spec):
    with pytest.raises(ValueError):
        apply_A(np.zeros((3, 3, 2)), ref_model, ref_spec, Payoff.call(1.0), 1.0)


def test_contraction_ratios_and_budget(ref_call):
    h = ref_call.residuals
    ratios = [h[n + 1] / h[n] for n in range(1, len(h) - 1)]
    assert max(ratios) <= ref_call.j_est + 0.05
    assert ref_call.iterations <= ref_call.max_iter == default_max_iter(1e-8, ref_call.j_est)


def test_default_iteration_budget():
    assert default_max_iter(1e-8, 0.5) == 27 + 10
    assert default_max_iter(1e-8, 0.0) == 10


def test_convergence_error_carries_history(ref_model, ref_spec, coarse):
    with pytest.raises(ConvergenceError) as info:
        solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, grid=coarse, max_iter=2)
    assert len(info.value.history) == 2 and info.value.history[-1] > 1e-8


def test_argument_checks(ref_model, ref_spec):
    with pytest.raises(ValueError):
        solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, tol=0.0)
    with pytest.raises(ValidationError):
        GridSpec(n_t=1)
    with pytest.raises(ValidationError):
        GridSpec(s_min=2.0, s_max=1.0)


# -- barrier ---------------------------------------------------------------------
def test_far_barrier_is_vanilla(ref_model, const_spec):
    v = solve_vanilla(ref_model, const_spec, Payoff.call(1.0), 1.0)
    b = solve_barrier_uo(ref_model, const_spec, 1.0, 1e3 * v.grid.s[-1], 1.0)
    np.testing.assert_allclose(b.zero_slice, v.zero_slice, rtol=1e-6, atol=1e-12)


def test_barrier_node_is_absorbing(ref_uo):
    g = ref_uo.grid
    assert g.s[-1] == pytest.approx(1.3)
    assert np.all(ref_uo.full[:, -1] == 0.0)
    assert ref_uo.value(0.3, 1.35, 1) == 0.0


def test_up_out_below_vanilla(ref_uo, ref_call):
    s = np.linspace(0.7, 1.29, 12)
    assert np.all(ref_uo.value(0.0, s, 0) <= ref_call.value(0.0, s, 0) + 1e-12)


def test_up_out_matches_monte_carlo(ref_uo, ref_model, ref_spec, atm):
    mc = mc_price(ClaimSpec("up-out-call", 1.0, 1.0, barrier=1.3), ref_model, ref_spec, atm, 40_000, 21)
    assert abs(ref_uo.value(0.0, 1.0, 0) - mc.estimate) <= 3 * mc.stderr + 5e-3


def test_down_out_far_barrier_and_knockout(ref_model, ref_spec, coarse):
    v = solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, grid=coarse)
    far = solve_barrier_do(ref_model, ref_spec, 1.0, 1e-4, 1.0, grid=coarse)
    np.testing.assert_allclose(far.zero_slice, v.zero_slice, rtol=1e-6, atol=1e-12)
    near = solve_barrier_do(ref_model, ref_spec, 1.0, 0.7, 1.0, grid=coarse)
    assert near.value(0.0, 0.7, 0) == 0.0
    assert 0.0 < near.value(0.0, 1.0, 0) < v.value(0.0, 1.0, 0)


def test_barrier_rejects_time_dependent_vol(ref_spec):
    m = RegimeModel((0.03, 0.07), (0.1, 0.1), VolProfile((0.15, 0.35), "monday", alpha=0.5))
    with pytest.raises(UnsupportedModelError):
        solve_barrier_uo(m, ref_spec, 1.0, 1.3, 1.0)
    with pytest.raises(ValidationError):
        solve_barrier_uo(RegimeModel((0.03, 0.07), (0.1, 0.1), VolProfile((0.15, 0.35))), ref_spec, 1.4, 1.3, 1.0)


# -- time-dependent volatility -----------------------------------------------------
def test_monday_volatility_matches_monte_carlo(ref_spec, atm):
    m = RegimeModel((0.03, 0.07), (0.1, 0.1), VolProfile((0.15, 0.35), "monday", alpha=0.4, period=0.25))
    surf = solve_vanilla(m, ref_spec, Payoff.call(1.0), 1.0, grid=GridSpec(41, 81))
    mc = mc_price(ClaimSpec("call", 1.0, 1.0), m, ref_spec, atm, 100_000, 4)
    assert abs(surf.value(0.0, 1.0, 0) - mc.estimate) <= 3 * mc.stderr


# -- zero-coupon bond ------------------------------------------------------------
def test_zcb_equal_rates_is_exponential(deg_model, ref_spec):
    # discounting no longer depends on the path; the trapezoid rule in v leaves an O(h^2) error
    t = np.linspace(0, 2, 9)
    errs = []
    for n_t in (201, 401):
        z = solve_zcb(deg_model, ref_spec, 2.0, n_t=n_t)
        errs.append(max(np.max(np.abs(z(t, i, y) / np.exp(-0.05 * (2 - t)) - 1)) for i in (0, 1) for y in (0.0, 0.7)))
    assert errs[0] <= 1e-4
    assert errs[1] == pytest.approx(errs[0] / 4, rel=0.05)


def test_zcb_bounds_and_monotone(ref_zcb):
    f = ref_zcb.full
    assert np.all((f > 0) & (f <= 1 + 1e-14))
    assert np.all(np.diff(f, axis=0) >= -1e-14)      # rises towards maturity
    np.testing.assert_allclose(f[-1], 1.0, atol=1e-14)


def test_zcb_matches_monte_carlo(ref_zcb, ref_model, ref_spec):
    for x0, y0 in ((0, 0.0), (1, 0.5)):
        mc = mc_price(ClaimSpec("zcb", 1.0), ref_model, ref_spec, MarketState(0.0, 1.0, x0, y0), 50_000, 3 + x0)
        assert abs(ref_zcb(0.0, x0, y0) - mc.estimate) <= 3 * mc.stderr


# -- generator residual ------------------------------------------------------------
def test_residual_of_zero_claim_vanishes(ref_model, ref_spec, coarse):
    surf = solve_vanilla(ref_model, ref_spec, Payoff.constant(0.0), 1.0, grid=coarse)
    rep = pde_residual(surf, ref_model, ref_spec)
    assert rep.sup == 0.0


def test_residual_shrinks_under_refinement(deg_model, ref_spec):
    region = dict(t_max=0.8, s_min=0.6, s_max=1.6)
    sups = [pde_residual(solve_vanilla(deg_model, ref_spec, Payoff.call(1.0), 1.0, grid=GridSpec(nt, ns)),
                         deg_model, ref_spec, region).sup for nt, ns in ((11, 25), (21, 49), (41, 97))]
    assert sups[0] > sups[1] > sups[2]
    assert sups[2] < 0.5 * sups[0]


def test_residual_needs_full_surface(ref_model, ref_spec, coarse):
    surf = solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0, grid=coarse, full=False)
    with pytest.raises(ValueError):
        pde_residual(surf, ref_model, ref_spec)


# -- properties ------------------------------------------------------------------
@settings(max_examples=12, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.0, 1.0), st.floats(0.1, 0.4), st.floats(0.1, 0.4),
       st.floats(0.7, 1.4))
def test_solution_bounded_and_positive(a, b, c, s0, s1, K):
    spec = RateSpec(np.stack([[[0, a], [b, 0]], [[0, c], [c, 0]]]), age_cap=3.0)
    m = RegimeModel((0.02, 0.06), (0.1, 0.1), VolProfile((s0, s1)))
    surf = solve_vanilla(m, spec, Payoff.call(K), 1.0, grid=GridSpec(11, 31, n_x=24))
    s = surf.grid.s[None, :, None, None]
    assert surf.full.min() >= -1e-12
    assert np.all(surf.full <= s + 1e-9)
    # B <= 1 under non-negative rates, so parity gives phi >= s - K
    assert np.all(surf.full >= s - K - 1e-4 * (1 + s))
    h = surf.residuals
    assert all(h[n + 1] <= (surf.j_est + 0.05) * h[n] for n in range(1, len(h) - 1))
