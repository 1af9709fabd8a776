"""Integral-equation pricer for the age-dependent regime-switching market.

The price ``phi(t, s, i, y)`` satisfies

    phi = S_i(y; T - t) rho_i(t, s)
          + int_0^{T-t} e^{-r_i v} sum_{j != i} lambda_ij(y + v) S_i(y; v)
                          E_{t,s,i,v}[ u(t + v, X, j) ] dv

with ``S_i(y; v) = exp(-(Lambda_i(y + v) - Lambda_i(y)))``, ``rho_i`` the
price in a market frozen in regime ``i``, ``X`` lognormal and
``u = phi(., ., ., 0)``.  Only the age-zero slice ``u`` appears inside the
integral, so the fixed point is computed on a (time, log-price, regime) grid
and every other age is filled in afterwards by one application of the
right-hand side.

Discretisation: the v-integral uses the trapezoid rule on time-grid offsets
(so ``u`` is only ever needed at grid times), the lognormal expectation uses
Gauss-Legendre nodes in the standard normal variable truncated at
``trunc_sd``, and ``u`` is interpolated linearly in ``ln s`` (linearly in
``s`` outside the grid, which keeps linear-growth payoffs exact in the
tails).  All interpolation weights are non-negative inside the grid, so the
discrete operator keeps the positivity of the continuous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bsm import (
    Payoff,
    barrier_down_out_call_closed,
    barrier_up_out_call_closed,
    bridge_survival,
    bsm_delta,
    bsm_rho,
    gauss_legendre,
    normal_rule,
    survival_prob_down,
    survival_prob_up,
    SQRT_2PI,
)
from .errors import ConvergenceError, UnsupportedModelError, ValidationError
from .model import RegimeModel
from .rates import RateSpec

CACHE_BYTES = 256 * 2**20


# ----------------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Discretisation controls.

    The time grid is uniform with ``n_t`` nodes on ``[0, T]``; the v-integral
    reuses its offsets.  Log-price nodes are uniform on
    ``[ln s_min, ln s_max]``; when the range is not given it is centred on
    the strike (an odd ``n_logs`` makes the strike a node) with half-width
    ``width_sd`` standard deviations of the most volatile regime.  Ages are
    uniform on ``[0, y_max]`` (default ``T``) with ``n_y`` nodes (default:
    the time step).
    """

    n_t: int = 101
    n_logs: int = 201
    n_y: int | None = None
    n_x: int = 64
    trunc_sd: float = 8.0
    s_min: float | None = None
    s_max: float | None = None
    y_max: float | None = None
    width_sd: float = 5.0

    def __post_init__(self):
        errors = []
        for name in ("n_t", "n_logs", "n_x"):
            if getattr(self, name) < 2:
                errors.append(f"{name} must be at least 2")
        if self.n_y is not None and self.n_y < 2:
            errors.append("n_y must be at least 2")
        if self.s_min is not None and not self.s_min > 0:
            errors.append("s_min must be positive")
        if self.s_min is not None and self.s_max is not None and not self.s_max > self.s_min:
            errors.append("s_max must exceed s_min")
        if not self.trunc_sd > 0:
            errors.append("trunc_sd must be positive")
        if errors:
            raise ValidationError(errors)

    def build(self, T: float, center: float, sig_max: float, lower: float | None = None,
              upper: float | None = None) -> "Grid":
        """Concrete node arrays.  ``lower``/``upper`` pin an end node (barriers)."""
        half = max(self.width_sd * sig_max * math.sqrt(T), 0.25)
        lo = math.log(self.s_min) if self.s_min is not None else math.log(center) - half
        hi = math.log(self.s_max) if self.s_max is not None else math.log(center) + half
        if lower is not None:
            lo = math.log(lower)
        if upper is not None:
            hi = math.log(upper)
        if not hi > lo:
            raise ValidationError("empty log-price range")
        t = np.linspace(0.0, T, self.n_t)
        y_max = T if self.y_max is None else float(self.y_max)
        n_y = self.n_y if self.n_y is not None else max(2, int(round(y_max / (t[1] - t[0]))) + 1)
        return Grid(T=float(T), t=t, logs=np.linspace(lo, hi, self.n_logs), y=np.linspace(0.0, y_max, n_y),
                    n_x=self.n_x, trunc_sd=self.trunc_sd)


@dataclass(frozen=True, eq=False)
class Grid:
    T: float
    t: NDArray
    logs: NDArray
    y: NDArray
    n_x: int
    trunc_sd: float
    s: NDArray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "s", np.exp(self.logs))
        for a in (self.t, self.logs, self.y, self.s):
            a.setflags(write=False)

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dlog(self) -> float:
        return float(self.logs[1] - self.logs[0])

    @property
    def N(self) -> int:
        return self.t.size - 1


def trapezoid_weights(n_nodes: int, h: float) -> NDArray:
    if n_nodes < 2:
        return np.zeros(n_nodes)
    w = np.full(n_nodes, h)
    w[0] = w[-1] = 0.5 * h
    return w


# ----------------------------------------------------------------------------
# interpolation onto the log-price grid
# ----------------------------------------------------------------------------
def interp_weights(grid: Grid, target_logs: NDArray) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """Two-point interpolation stencil: linear in ln s inside, linear in s outside."""
    n = grid.logs.size
    pos = (target_logs - grid.logs[0]) / grid.dlog
    j = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    frac = pos - j
    out = (pos < 0) | (pos > n - 1)
    if out.any():
        x = np.exp(target_logs[out])
        jo = j[out]
        s_lo, s_hi = grid.s[jo], grid.s[jo + 1]
        frac = frac.copy()
        frac[out] = (x - s_lo) / (s_hi - s_lo)
    return j, j + 1, 1.0 - frac, frac


def interp_slope(grid: Grid, values: NDArray, s: ArrayLike) -> NDArray:
    """d/ds of the interpolant of ``values`` (first axis = log-price); node slopes are two-sided averages."""
    s = np.asarray(s, dtype=float)
    pos = (np.log(s) - grid.logs[0]) / grid.dlog
    n = grid.logs.size
    ds = np.diff(grid.s)
    # slope in s of each cell: inside the grid the interpolant is linear in ln s
    dv = np.diff(values, axis=0)
    j = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    frac = pos - j
    on_node = np.isclose(frac, 0.0, atol=1e-9) | np.isclose(frac, 1.0, atol=1e-9)
    extra = (slice(None),) + (None,) * (values.ndim - 1)

    def cell_slope(jj, ss):
        inside = (ss >= grid.s[0]) & (ss <= grid.s[-1])
        log_slope = dv[jj] / grid.dlog / ss[extra] if values.ndim > 1 else dv[jj] / grid.dlog / ss
        lin_slope = dv[jj] / ds[jj][extra] if values.ndim > 1 else dv[jj] / ds[jj]
        return np.where(inside[extra] if values.ndim > 1 else inside, log_slope, lin_slope)

    slope = cell_slope(j, s)
    if on_node.any():
        node = np.clip(np.rint(pos).astype(np.int64), 0, n - 1)
        left = cell_slope(np.clip(node - 1, 0, n - 2), s)
        right = cell_slope(np.clip(node, 0, n - 2), s)
        interior = (node > 0) & (node < n - 1) & on_node
        avg = 0.5 * (left + right)
        mask = interior[extra] if values.ndim > 1 else interior
        slope = np.where(mask, avg, slope)
    return slope


def interp_values(grid: Grid, values: NDArray, s: ArrayLike) -> NDArray:
    """Interpolate ``values`` (first axis = log-price) at prices ``s``."""
    s = np.asarray(s, dtype=float)
    lo, hi, wl, wh = interp_weights(grid, np.log(s).ravel())
    extra = (slice(None),) + (None,) * (values.ndim - 1)
    out = values[lo] * wl[extra] + values[hi] * wh[extra]
    return out.reshape(s.shape + values.shape[1:])


# ----------------------------------------------------------------------------
# expectation matrices
# ----------------------------------------------------------------------------
class _Barrier(NamedTuple):
    level: float
    up: bool
    factorized: bool


def _lognormal_params(model: RegimeModel, i: int, t: float, v: float) -> tuple[float, float]:
    var = float(model.vol.integrated_var(i, t, t + v))
    return (float(model.r[i] - model.kappa[i])) * v - 0.5 * var, var


def expectation_matrix(grid: Grid, model: RegimeModel, i: int, t: float, v: float,
                       src_logs: NDArray | None = None, derivative: bool = False,
                       barrier: _Barrier | None = None) -> NDArray:
    """Matrix ``W`` with ``(W @ g)[a] ~ E[g(X)]`` for ``X`` the regime-``i`` asset at
    ``t + v`` started at ``exp(src_logs[a])`` at ``t`` and ``g`` given on the grid.

    With ``derivative=True`` the rows give the derivative of that expectation
    with respect to the starting price (likelihood-ratio weights ``z / (s sigma_bar)``).
    With a barrier the expectation is restricted to paths that do not touch it.
    """
    src = grid.logs if src_logs is None else np.asarray(src_logs, dtype=float)
    n_src, n_s = src.size, grid.logs.size
    mean, var = _lognormal_params(model, i, t, v)
    sbar = math.sqrt(var)
    if barrier is None or barrier.factorized:
        z, w = normal_rule(grid.n_x, grid.trunc_sd)
        zz = np.broadcast_to(z, (n_src, z.size))
        ww = np.broadcast_to(w * z / sbar if derivative else w, (n_src, z.size)).copy()
        if derivative:
            ww /= np.exp(src)[:, None]
        if barrier is not None:
            # factorized variant: barrier survival probability times the truncated density
            x_log = src[:, None] + mean + sbar * zz
            ok = (x_log < math.log(barrier.level)) if barrier.up else (x_log > math.log(barrier.level))
            surv = (survival_prob_up if barrier.up else survival_prob_down)(model, i, barrier.level, np.exp(src), v)
            ww = ww * ok * surv[:, None]
    else:
        if derivative:
            raise UnsupportedModelError("likelihood-ratio derivative is not available for killed expectations")
        xg, wg = gauss_legendre(grid.n_x)
        zb = (math.log(barrier.level) - src - mean) / sbar              # barrier in z units, per row
        if barrier.up:
            lo = np.full(n_src, -grid.trunc_sd)
            hi = np.minimum(zb, grid.trunc_sd)
        else:
            lo = np.maximum(zb, -grid.trunc_sd)
            hi = np.full(n_src, grid.trunc_sd)
        span = np.maximum(hi - lo, 0.0)
        zz = lo[:, None] + 0.5 * span[:, None] * (xg[None, :] + 1.0)
        ww = 0.5 * span[:, None] * wg[None, :] * np.exp(-0.5 * zz * zz) / SQRT_2PI
        x = np.exp(src[:, None] + mean + sbar * zz)
        ww = ww * bridge_survival(barrier.level, np.exp(src)[:, None], x, var, up=barrier.up)
    target = src[:, None] + mean + sbar * zz
    lo_i, hi_i, wl, wh = interp_weights(grid, target.ravel())
    rows = np.repeat(np.arange(n_src), zz.shape[1])
    wf = ww.ravel()
    size = n_src * n_s
    W = np.bincount(rows * n_s + lo_i, wf * wl, minlength=size) + np.bincount(rows * n_s + hi_i, wf * wh, minlength=size)
    return W.reshape(n_src, n_s)


# ----------------------------------------------------------------------------
# age coefficients
# ----------------------------------------------------------------------------
def age_coefficients(spec: RateSpec, model: RegimeModel, i: int, y: ArrayLike, v: ArrayLike) -> tuple[NDArray, NDArray]:
    """Survival ratio and discounted jump weights at age ``y`` after a further ``v``.

    Returns ``surv = exp(-(Lambda_i(y+v) - Lambda_i(y)))`` and
    ``coef[..., j] = exp(-r_i v) lambda_ij(y+v) surv`` (zero at ``j = i``).
    Using the hazard form avoids the 0/0 of ``f / (1 - F)`` at large ages.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    yy, vv = np.broadcast_arrays(y, v)
    surv = np.exp(-(np.asarray(spec.big_lambda(i, yy + vv)) - np.asarray(spec.big_lambda(i, yy))))
    lam = spec.rates_from(i, yy + vv)
    coef = (np.exp(-model.r[i] * vv) * surv)[..., None] * lam
    return surv, coef


# ----------------------------------------------------------------------------
# the operator
# ----------------------------------------------------------------------------
class PricingOperator:
    """Discretised right-hand side of the pricing equation for one claim.

    ``kind`` is ``"vanilla"`` (payoff through ``bsm_rho``), ``"up-out"`` or
    ``"down-out"`` (call with strike ``payoff.strike`` knocked out at
    ``barrier``).
    """

    def __init__(self, model: RegimeModel, spec: RateSpec, payoff: Payoff, grid: Grid, kind: str = "vanilla",
                 barrier: float | None = None, factorized: bool = False):
        model.check_states(spec.k)
        self.model, self.spec, self.payoff, self.grid, self.kind = model, spec, payoff, grid, kind
        self.k = spec.k
        self.barrier = None if kind == "vanilla" else _Barrier(float(barrier), kind == "up-out", factorized)
        self.time_homogeneous = model.vol.is_constant
        g = grid
        self._cache: dict = {}
        n_mats = self.k * g.N * (1 if self.time_homogeneous else g.N)
        self._use_cache = n_mats * g.logs.size ** 2 * 8 <= CACHE_BYTES
        # age-zero coefficients on the time-offset grid: (k, N+1, k)
        v = g.t - g.t[0]
        self.coef0 = np.stack([age_coefficients(spec, model, i, 0.0, v)[1] for i in range(self.k)])
        self.first = self.first_term(0.0)

    # -- pieces ---------------------------------------------------------------
    def frozen_price(self, i: int, t: float, s: ArrayLike) -> NDArray:
        """Price in a market frozen in regime ``i`` (the inhomogeneous term before survival weighting)."""
        T = self.grid.T
        if self.kind == "vanilla":
            return bsm_rho(self.model, i, t, s, T, self.payoff)
        fn = barrier_up_out_call_closed if self.barrier.up else barrier_down_out_call_closed
        return fn(self.model, i, t, s, self.payoff.strike, self.barrier.level, T)

    def frozen_delta(self, i: int, t: float, s: ArrayLike) -> NDArray:
        if self.kind != "vanilla":
            raise UnsupportedModelError("closed-form delta is only wired for vanilla claims")
        if t >= self.grid.T:
            return interp_slope(self.grid, self.payoff(self.grid.s), s)
        return bsm_delta(self.model, i, t, s, self.grid.T, self.payoff)

    def first_term(self, y: float) -> NDArray:
        """``S_i(y; T - t) rho_i(t, s)`` on the grid: shape (N+1, n_s, k)."""
        g = self.grid
        out = np.empty((g.t.size, g.logs.size, self.k))
        for i in range(self.k):
            surv, _ = age_coefficients(self.spec, self.model, i, y, g.T - g.t)
            for n, t in enumerate(g.t):
                out[n, :, i] = surv[n] * self.frozen_price(i, t, g.s)
        if self.barrier is not None:
            self._zero_barrier(out)
        return out

    def _zero_barrier(self, u: NDArray) -> None:
        b = self.barrier.level
        mask = self.grid.s >= b * (1 - 1e-12) if self.barrier.up else self.grid.s <= b * (1 + 1e-12)
        u[:, mask] = 0.0

    def matrix(self, i: int, n: int, d: int, derivative: bool = False) -> NDArray:
        """Expectation matrix for regime i, start node n, lag d (d >= 1)."""
        g = self.grid
        key = (i, d, derivative) if self.time_homogeneous else (i, n, d, derivative)
        W = self._cache.get(key)
        if W is None:
            W = expectation_matrix(g, self.model, i, float(g.t[n]), float(g.t[d] - g.t[0]),
                                   derivative=derivative, barrier=self.barrier)
            if self._use_cache:
                self._cache[key] = W
        return W

    # -- the map u -> A u at age zero ---------------------------------------------
    def integral_term(self, u: NDArray) -> NDArray:
        g = self.grid
        N, h = g.N, g.h
        out = np.zeros_like(u)
        n_idx = np.arange(N + 1)
        for d in range(N + 1):
            rows = n_idx[: N + 1 - d]                      # start nodes that reach n + d <= N
            # trapezoid weight of offset d for a start node with N - n remaining steps
            rem = N - rows
            wt = np.where((d == 0) | (d == rem), 0.5 * h, h)
            wt = np.where(rem == 0, 0.0, wt)
            V = u[d:]                                      # values at n + d, (N+1-d, n_s, k)
            for i in range(self.k):
                mixed = V @ self.coef0[i, d]               # contract destination regimes -> (N+1-d, n_s)
                if d == 0:
                    E = mixed
                elif self.time_homogeneous:
                    E = (self.matrix(i, 0, d) @ mixed.T).T
                else:
                    E = np.stack([self.matrix(i, n, d) @ mixed[n] for n in rows])
                out[rows, :, i] += wt[:, None] * E
        if self.barrier is not None:
            self._zero_barrier(out)
        return out

    def apply(self, u: NDArray) -> NDArray:
        return self.first + self.integral_term(u)

    # -- extension to all ages ------------------------------------------------------
    def extend(self, u: NDArray, derivative: bool = False) -> NDArray:
        """Value (or spot-derivative) surface on (N+1, n_s, k, n_y) from the converged slice."""
        g = self.grid
        N, h = g.N, g.h
        n_y = g.y.size
        out = np.zeros((N + 1, g.logs.size, self.k, n_y))
        v = g.t - g.t[0]
        for i in range(self.k):
            surv_T = np.stack([age_coefficients(self.spec, self.model, i, yl, g.T - g.t)[0] for yl in g.y], axis=-1)
            base = np.stack([self.frozen_delta(i, t, g.s) if derivative else self.frozen_price(i, t, g.s)
                             for t in g.t])                                   # (N+1, n_s)
            out[:, :, i, :] = base[:, :, None] * surv_T[:, None, :]
            # coef[l, d, j] for every age node
            coef = np.stack([age_coefficients(self.spec, self.model, i, yl, v)[1] for yl in g.y])
            for d in range(N + 1):
                rows = np.arange(N + 1 - d)
                rem = N - rows
                wt = np.where((d == 0) | (d == rem), 0.5 * h, h)
                wt = np.where(rem == 0, 0.0, wt)
                V = u[d:]                                                    # (R, n_s, k)
                if d == 0:
                    E = np.stack([interp_slope(g, u[n], g.s) for n in rows]) if derivative else V
                elif self.time_homogeneous:
                    W = self.matrix(i, 0, d, derivative)
                    R, n_s, k = V.shape
                    E = (W @ V.transpose(1, 0, 2).reshape(n_s, R * k)).reshape(n_s, R, k).transpose(1, 0, 2)
                else:
                    E = np.stack([self.matrix(i, n, d, derivative) @ V[n] for n in rows])
                out[rows, :, i, :] += wt[:, None, None] * (E @ coef[:, d, :].T)
        if self.barrier is not None and not derivative:
            b = self.barrier.level
            mask = g.s >= b * (1 - 1e-12) if self.barrier.up else g.s <= b * (1 + 1e-12)
            out[:, mask] = 0.0
        return out

    # -- evaluation at an arbitrary state ---------------------------------------------
    def evaluate(self, u: NDArray, t: float, s: ArrayLike, i: int, y: float = 0.0,
                 derivative: bool = False) -> NDArray:
        """Apply the right-hand side once at (t, s, i, y) using the converged slice ``u``.

        The v-integral runs over ``0`` and the grid times after ``t``
        (non-uniform trapezoid); ``u(t, ., .)`` for the ``v = 0`` node is
        interpolated linearly in time.
        """
        g = self.grid
        s = np.atleast_1d(np.asarray(s, dtype=float))
        T = g.T
        if not 0.0 <= t <= T:
            raise ValueError("t outside [0, T]")
        if self.barrier is not None and derivative:
            raise UnsupportedModelError("use finite differences of evaluate() for barrier deltas")
        if T - t <= 1e-14:
            if derivative:
                return interp_slope(g, self.payoff(g.s), s)
            val = self.payoff(s)
            return self._kill(val, s)
        surv, _ = age_coefficients(self.spec, self.model, i, y, T - t)
        first = self.frozen_delta(i, t, s) if derivative else self.frozen_price(i, t, s)
        total = float(surv) * first
        # grid times strictly after t (a node within round-off of t is the v = 0 node)
        ks = np.flatnonzero(g.t - t > 1e-10 * max(1.0, T))
        v = np.concatenate([[0.0], g.t[ks] - t])
        wts = np.zeros(v.size)
        dv = np.diff(v)
        wts[:-1] += 0.5 * dv
        wts[1:] += 0.5 * dv
        _, coef = age_coefficients(self.spec, self.model, i, y, v)          # (len(v), k)
        # v = 0: identity expectation of u(t, ., .) interpolated in time
        pos = t / g.h
        n0 = min(int(np.floor(pos)), g.N - 1)
        a = pos - n0
        u_t = (1 - a) * u[n0] + a * u[n0 + 1]                               # (n_s, k)
        mixed = u_t @ coef[0]
        e0 = interp_slope(g, mixed, s) if derivative else interp_values(g, mixed, s)
        total = total + wts[0] * e0
        src = np.log(s)
        for idx, kk in enumerate(ks, start=1):
            if wts[idx] == 0.0:
                continue
            W = expectation_matrix(g, self.model, i, t, float(v[idx]), src_logs=src,
                                   derivative=derivative, barrier=self.barrier)
            total = total + wts[idx] * (W @ (u[kk] @ coef[idx]))
        return total if derivative else self._kill(total, s)

    def _kill(self, val: NDArray, s: NDArray) -> NDArray:
        if self.barrier is None:
            return val
        b = self.barrier.level
        return np.where(s >= b if self.barrier.up else s <= b, 0.0, val)


# ----------------------------------------------------------------------------
# surfaces
# ----------------------------------------------------------------------------
@dataclass(eq=False)
class PriceSurface:
    """Discretised price ``phi(t, s, i, y)``.

    ``zero_slice`` has shape (n_t, n_s, k); ``full`` (optional) has shape
    (n_t, n_s, k, n_y).  Interpolation is linear in t and y and linear in
    ln s (linear in s outside the grid).
    """

    grid: Grid
    zero_slice: NDArray
    full: NDArray | None
    operator: PricingOperator
    residuals: list[float]
    iterations: int
    max_iter: int
    j_est: float
    _delta: NDArray | None = None

    @property
    def kind(self) -> str:
        return self.operator.kind

    @property
    def maturity(self) -> float:
        return self.grid.T

    def _table(self, derivative: bool) -> NDArray:
        if derivative:
            if self._delta is None:
                self._delta = self.operator.extend(self.zero_slice, derivative=True)
            return self._delta
        if self.full is None:
            return self.zero_slice[..., None]
        return self.full

    def _interp(self, table: NDArray, t, s, i, y) -> NDArray:
        g = self.grid
        t, s, i, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float), np.asarray(i), np.asarray(y, float))
        if np.any(t < -1e-12) or np.any(t > g.T + 1e-12):
            raise ValueError("t outside the surface")
        pt = np.clip(t / g.h, 0, g.N)
        n0 = np.minimum(np.floor(pt).astype(np.int64), g.N - 1)
        at = pt - n0
        if table.shape[-1] == 1:
            l0 = np.zeros_like(n0)
            ay = np.zeros_like(pt)
            l1 = l0
        else:
            dy = g.y[1] - g.y[0]
            py = np.clip(y / dy, 0, g.y.size - 1)
            l0 = np.minimum(np.floor(py).astype(np.int64), g.y.size - 2)
            ay = py - l0
            l1 = l0 + 1
        lo, hi, wl, wh = interp_weights(g, np.log(s).ravel())
        lo = lo.reshape(s.shape)
        hi = hi.reshape(s.shape)
        wl = wl.reshape(s.shape)
        wh = wh.reshape(s.shape)
        out = np.zeros(s.shape)
        for tn, tw in ((n0, 1 - at), (n0 + 1, at)):
            for yl, yw in ((l0, 1 - ay), (l1, ay)):
                out += tw * yw * (wl * table[tn, lo, i, yl] + wh * table[tn, hi, i, yl])
        return out

    def value(self, t, s, i, y=0.0) -> NDArray | float:
        out = self._interp(self._table(False), t, s, i, y)
        b = self.operator.barrier
        if b is not None:
            s_arr = np.broadcast_to(np.asarray(s, float), out.shape)
            out = np.where(s_arr >= b.level if b.up else s_arr <= b.level, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def delta(self, t, s, i, y=0.0) -> NDArray | float:
        """Spot derivative interpolated from the grid delta surface."""
        out = self._interp(self._table(True), t, s, i, y)
        return float(out) if out.ndim == 0 else out

    def evaluate(self, t: float, s: ArrayLike, i: int, y: float = 0.0, derivative: bool = False) -> NDArray:
        """Off-grid evaluation by one application of the equation (see :meth:`PricingOperator.evaluate`)."""
        return self.operator.evaluate(self.zero_slice, t, s, i, y, derivative)


def _contraction_bound(spec: RateSpec, T: float) -> float:
    return float(max(spec.holding_cdf(i, T) for i in range(spec.k)))


def default_max_iter(tol: float, j_est: float) -> int:
    if j_est <= 0:
        return 10
    if j_est >= 1:
        return 10_000
    return int(math.ceil(math.log(tol) / math.log(j_est))) + 10


def _iterate(op: PricingOperator, tol: float, max_iter: int | None, j_est: float):
    g = op.grid
    max_iter = default_max_iter(tol, j_est) if max_iter is None else int(max_iter)
    weight = 1.0 + g.s[None, :, None]
    u = op.first.copy()
    history = []
    for it in range(1, max_iter + 1):
        new = op.apply(u)
        diff = float(np.max(np.abs(new - u) / weight))
        history.append(diff)
        u = new
        if diff <= tol:
            return u, history, it, max_iter
    raise ConvergenceError(f"no convergence to {tol:g} within {max_iter} iterations (last change {history[-1]:.3e})",
                           history)


def _sig_max(model: RegimeModel) -> float:
    return float(max(model.vol.sigma0))


def apply_A(zero_slice: NDArray, model: RegimeModel, spec: RateSpec, payoff: Payoff, maturity: float,
            grid: GridSpec | None = None) -> NDArray:
    """One application of the age-zero operator to ``zero_slice`` (shape (n_t, n_s, k))."""
    grid = grid or GridSpec()
    center = payoff.strike if payoff.kind in ("call", "put") else 1.0
    g = grid.build(maturity, center, _sig_max(model))
    op = PricingOperator(model, spec, payoff, g)
    u = np.asarray(zero_slice, dtype=float)
    if u.shape != op.first.shape:
        raise ValueError(f"zero_slice must have shape {op.first.shape}")
    return op.apply(u)


def solve_vanilla(model: RegimeModel, spec: RateSpec, payoff: Payoff, maturity: float,
                  grid: GridSpec | None = None, tol: float = 1e-8, max_iter: int | None = None,
                  center: float | None = None, full: bool = True) -> PriceSurface:
    """Solve the pricing equation for a European payoff by fixed-point iteration.

    Raises :class:`ConvergenceError` (carrying the residual history) when
    ``max_iter`` is exhausted; the default budget is
    ``ceil(ln tol / ln J) + 10`` with ``J = max_i F(T | i)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not maturity > 0:
        raise ValueError("maturity must be positive")
    grid = grid or GridSpec()
    if center is None:
        center = payoff.strike if payoff.kind in ("call", "put") else 1.0
    g = grid.build(maturity, center, _sig_max(model))
    op = PricingOperator(model, spec, payoff, g)
    j_est = _contraction_bound(spec, maturity)
    u, hist, it, mi = _iterate(op, tol, max_iter, j_est)
    return PriceSurface(g, u, op.extend(u) if full else None, op, hist, it, mi, j_est)


def solve_barrier(model: RegimeModel, spec: RateSpec, strike: float, barrier: float, maturity: float,
                  direction: str = "up", grid: GridSpec | None = None, tol: float = 1e-8,
                  max_iter: int | None = None, survival: str = "bridge", full: bool = True) -> PriceSurface:
    """Knock-out call (``direction`` up or down) under regime switching.

    ``survival="bridge"`` weights the transition density by the exact
    probability that the log-price bridge avoids the barrier;
    ``"factorized"`` multiplies the survival probability of the running
    extremum by the density truncated at the barrier.
    """
    if not model.vol.is_constant:
        raise UnsupportedModelError("barrier pricing needs a time-independent volatility in every regime")
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    if survival not in ("bridge", "factorized"):
        raise ValueError("survival must be 'bridge' or 'factorized'")
    if direction == "up" and not 0 < strike < barrier:
        raise ValidationError("up-and-out call needs 0 < K < b")
    if direction == "down" and not 0 < barrier:
        raise ValidationError("down-and-out call needs a positive barrier")
    grid = grid or GridSpec()
    sig = _sig_max(model)
    # pin the grid end to the barrier unless the barrier lies beyond the vanilla grid
    plain = grid.build(maturity, strike, sig)
    if direction == "up":
        g = grid.build(maturity, strike, sig, upper=barrier) if barrier <= plain.s[-1] else plain
    else:
        g = grid.build(maturity, strike, sig, lower=barrier) if barrier >= plain.s[0] else plain
    kind = "up-out" if direction == "up" else "down-out"
    op = PricingOperator(model, spec, Payoff.call(strike), g, kind, barrier, survival == "factorized")
    j_est = _contraction_bound(spec, maturity)
    u, hist, it, mi = _iterate(op, tol, max_iter, j_est)
    return PriceSurface(g, u, op.extend(u) if full else None, op, hist, it, mi, j_est)


def solve_barrier_uo(model, spec, K, b, maturity, grid=None, tol=1e-8, **kw) -> PriceSurface:
    return solve_barrier(model, spec, K, b, maturity, "up", grid, tol, **kw)


def solve_barrier_do(model, spec, K, h, maturity, grid=None, tol=1e-8, **kw) -> PriceSurface:
    return solve_barrier(model, spec, K, h, maturity, "down", grid, tol, **kw)


# ----------------------------------------------------------------------------
# zero-coupon bond
# ----------------------------------------------------------------------------
@dataclass(eq=False)
class ZCBSurface:
    """Default-free discount bond ``B(t, T, i, y)`` on a (time, regime, age) grid."""

    T: float
    t: NDArray
    y: NDArray
    zero_slice: NDArray       # (n_t, k)
    full: NDArray             # (n_t, k, n_y)
    residuals: list[float]
    iterations: int

    def __call__(self, t, i, y=0.0) -> NDArray | float:
        t, i, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(i), np.asarray(y, float))
        h = self.t[1] - self.t[0]
        pt = np.clip(t / h, 0, self.t.size - 1)
        n0 = np.minimum(np.floor(pt).astype(np.int64), self.t.size - 2)
        at = pt - n0
        dy = self.y[1] - self.y[0]
        py = np.clip(y / dy, 0, self.y.size - 1)
        l0 = np.minimum(np.floor(py).astype(np.int64), self.y.size - 2)
        ay = py - l0
        f = self.full
        out = ((1 - at) * ((1 - ay) * f[n0, i, l0] + ay * f[n0, i, l0 + 1])
               + at * ((1 - ay) * f[n0 + 1, i, l0] + ay * f[n0 + 1, i, l0 + 1]))
        return float(out) if out.ndim == 0 else out


def solve_zcb(model: RegimeModel, spec: RateSpec, maturity: float, n_t: int = 201, y_max: float | None = None,
              n_y: int | None = None, tol: float = 1e-12, max_iter: int | None = None) -> ZCBSurface:
    """Unit-face bond under regime-switching short rates.

    The price does not depend on the asset, so the pricing equation
    collapses to a renewal system in time that is solved by the same
    fixed-point iteration on a fine time grid, then extended to all ages.
    """
    model.check_states(spec.k)
    T = float(maturity)
    t = np.linspace(0.0, T, n_t)
    h = t[1] - t[0]
    N = n_t - 1
    k = spec.k
    v = t - t[0]
    r = model.r_arr
    y_max = T if y_max is None else float(y_max)
    n_y = n_y if n_y is not None else int(round(y_max / h)) + 1
    yg = np.linspace(0.0, y_max, n_y)

    # first[l, n, i] and coef[l, i, d, j] for every age node
    first = np.empty((n_y, n_t, k))
    coef = np.empty((n_y, k, n_t, k))
    for i in range(k):
        surv_T, _ = age_coefficients(spec, model, i, yg[:, None], (T - t)[None, :])
        first[:, :, i] = surv_T * np.exp(-r[i] * (T - t))[None, :]
        coef[:, i] = age_coefficients(spec, model, i, yg[:, None], v[None, :])[1]

    def integral(u, c):
        # out[..., n, i] = sum_d wt(n, d) sum_j c[..., i, d, j] u[n + d, j]
        lead = c.shape[:-3]
        out = np.zeros(lead + (N + 1, k))
        for d in range(N + 1):
            rows = np.arange(N + 1 - d)
            rem = N - rows
            wt = np.where((d == 0) | (d == rem), 0.5 * h, h)
            wt = np.where(rem == 0, 0.0, wt)
            cd = c[..., :, d, :]                                   # lead + (k_i, k_j)
            out[..., rows, :] += wt[:, None] * np.swapaxes(cd @ u[d:].T, -1, -2)
        return out

    j_est = _contraction_bound(spec, T)
    max_iter = default_max_iter(tol, j_est) if max_iter is None else max_iter
    u = first[0].copy()
    hist = []
    for it in range(1, max_iter + 1):
        new = first[0] + integral(u, coef[0])
        diff = float(np.max(np.abs(new - u)))
        hist.append(diff)
        u = new
        if diff <= tol:
            break
    else:
        raise ConvergenceError(f"zero-coupon iteration did not reach {tol:g}", hist)
    full = (first + integral(u, coef)).transpose(1, 2, 0)         # (n_t, k, n_y)
    return ZCBSurface(T, t, yg, u, full, hist, it)


# ----------------------------------------------------------------------------
# PDE residual
# ----------------------------------------------------------------------------
class ResidualReport(NamedTuple):
    field: NDArray          # residual on interior nodes, NaN elsewhere
    sup: float
    mean: float


def pde_residual(surface: PriceSurface, model: RegimeModel, spec: RateSpec,
                 region: dict | None = None) -> ResidualReport:
    """Generator residual of the surface by central differences.

    Evaluates ``(d_t + d_y) phi + b s phi_s + sigma^2 s^2 phi_ss / 2
    + sum_j lambda_ij(y) (phi(t, s, j, 0) - phi) - r phi`` at interior nodes;
    the time and age derivatives are taken together along the diagonal
    ``(t + h, y + h)``.  ``region`` may restrict the nodes with keys
    ``t_max``, ``t_min``, ``s_min``, ``s_max``, ``y_max``.
    """
    if surface.full is None:
        raise ValueError("pde_residual needs the full (age-extended) surface")
    g = surface.grid
    phi = surface.full
    h = g.h
    dy = g.y[1] - g.y[0]
    N = g.N
    n_s = g.logs.size
    region = region or {}
    res = np.full(phi.shape, np.nan)
    s = g.s
    dl = g.dlog
    b = model.drift("risk_neutral")
    for i in range(spec.k):
        for l in range(1, g.y.size - 1):
            yl = g.y[l]
            # diagonal neighbours at ages y +- h (linear interpolation in age)
            def at_age(yq):
                pos = min(max(yq / dy, 0.0), g.y.size - 1 - 1e-12)
                l0 = int(np.floor(pos))
                a = pos - l0
                return (1 - a) * phi[:, :, i, l0] + a * phi[:, :, i, l0 + 1]
            plus = at_age(yl + h)
            minus = at_age(yl - h)
            cur = phi[:, :, i, l]
            dt = (plus[2:] - minus[:-2]) / (2 * h)                       # (N-1, n_s)
            c = cur[1:-1]
            d1 = (c[:, 2:] - c[:, :-2]) / (2 * dl)                      # d/d ln s
            d2 = (c[:, 2:] - 2 * c[:, 1:-1] + c[:, :-2]) / dl**2
            sig2 = model.vol.vol(i, g.t[1:-1]) ** 2
            sig2 = np.broadcast_to(np.asarray(sig2, float).reshape(-1, 1), d1.shape)
            # s phi_s = d1, s^2 phi_ss = d2 - d1
            gen = dt[:, 1:-1] + b[i] * d1 + 0.5 * sig2 * (d2 - d1) - model.r[i] * c[:, 1:-1]
            lam = spec.rates_from(i, yl)
            for j in range(spec.k):
                if j != i and lam[j] != 0:
                    gen = gen + lam[j] * (phi[1:-1, 1:-1, j, 0] - c[:, 1:-1])
            res[1:-1, 1:-1, i, l] = gen
    mask = np.ones(phi.shape, dtype=bool)
    tt = g.t[:, None, None, None]
    ss = s[None, :, None, None]
    yy = g.y[None, None, None, :]
    if "t_min" in region:
        mask &= tt >= region["t_min"]
    if "t_max" in region:
        mask &= tt <= region["t_max"]
    if "s_min" in region:
        mask &= ss >= region["s_min"]
    if "s_max" in region:
        mask &= ss <= region["s_max"]
    if "y_max" in region:
        mask &= yy <= region["y_max"]
    if "y_min" in region:
        mask &= yy >= region["y_min"]
    res = np.where(mask, res, np.nan)
    vals = np.abs(res[np.isfinite(res)])
    if vals.size == 0:
        return ResidualReport(res, 0.0, 0.0)
    return ResidualReport(res, float(vals.max()), float(vals.mean()))
