"""Per-regime Black-Scholes-Merton building blocks.

Everything here works inside one regime ``i`` with short rate ``r[i]``,
dividend yield ``kappa[i]`` and a deterministic volatility profile, so the
asset is lognormal between regime switches.  The pricing drift is
``r[i] - kappa[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr

from .errors import UnsupportedModelError, ValidationError

if TYPE_CHECKING:
    from .model import RegimeModel

TRUNC_SD = 8.0
SQRT_2PI = np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=16)
def gauss_legendre(n: int) -> tuple[NDArray, NDArray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=16)
def normal_rule(n: int, trunc_sd: float = TRUNC_SD) -> tuple[NDArray, NDArray]:
    """Gauss-Legendre nodes/weights for E[g(Z)], Z ~ N(0,1), truncated at +-trunc_sd.

    Weights are renormalised to sum to one so constants integrate exactly.
    """
    x, w = gauss_legendre(n)
    z = trunc_sd * x
    wz = w * trunc_sd * np.exp(-0.5 * z * z) / SQRT_2PI
    wz = wz / wz.sum()
    z.setflags(write=False)
    wz.setflags(write=False)
    return z, wz


# ----------------------------------------------------------------------------
# volatility profile
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class VolProfile:
    """Deterministic volatility sigma(t, i).

    ``kind="constant"`` gives ``sigma0[i]``.  ``kind="monday"`` gives the
    weekly profile ``sigma0[i] * (alpha + 4 (1 - alpha) (w**beta - 1/2)**2)``
    with ``w = (t / period) mod 1``; ``period`` is one week expressed in model
    time units (1.0 when time is measured in weeks, 1/52 for years).
    """

    sigma0: tuple[float, ...]
    kind: str = "constant"
    alpha: float = 0.5
    beta: float = 1.0
    period: float = 1.0
    _s0: NDArray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s0 = np.asarray(self.sigma0, dtype=float).ravel()
        object.__setattr__(self, "sigma0", tuple(float(v) for v in s0))
        object.__setattr__(self, "_s0", s0)
        errors = []
        if self.kind not in ("constant", "monday"):
            errors.append(f"unknown volatility kind {self.kind!r}")
        if s0.size == 0 or not np.all(np.isfinite(s0)) or np.any(s0 <= 0):
            errors.append("sigma0 must be positive in every state")
        if self.kind == "monday":
            if not 0 < self.alpha < 1:
                errors.append(f"monday alpha must lie in (0, 1), got {self.alpha}")
            if not self.beta > 0:
                errors.append(f"monday beta must be positive, got {self.beta}")
            if not self.period > 0:
                errors.append(f"monday period must be positive, got {self.period}")
        if errors:
            raise ValidationError(errors)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def _shape(self, t: NDArray) -> NDArray:
        w = np.mod(t / self.period, 1.0) ** self.beta
        return 1.0 - 4.0 * (1.0 - self.alpha) * w * (1.0 - w)

    def _shape_sq_cum(self, x: NDArray) -> NDArray:
        # integral of shape(u)^2 over u in [0, x], x in [0, 1]; exact power expansion
        a, b = 1.0 - self.alpha, self.beta
        terms = ((1.0, 0), (-8.0 * a, 1), (16.0 * a * a + 8.0 * a, 2), (-32.0 * a * a, 3), (16.0 * a * a, 4))
        return sum(c * x ** (k * b + 1.0) / (k * b + 1.0) for c, k in terms)

    def variance_clock(self, t: ArrayLike) -> NDArray:
        """Integral of (sigma / sigma0)^2 from 0 to t; the identity for constant vol."""
        if self.is_constant:
            return np.asarray(t, dtype=float)
        tau = np.asarray(t, dtype=float) / self.period
        whole = np.floor(tau)
        return self.period * (whole * self._shape_sq_cum(np.float64(1.0)) + self._shape_sq_cum(tau - whole))

    def vol(self, i: ArrayLike, t: ArrayLike) -> NDArray | float:
        s0 = self._s0[np.asarray(i)]
        if self.is_constant:
            out = np.broadcast_to(s0, np.broadcast_shapes(np.shape(s0), np.shape(t))).astype(float)
        else:
            out = s0 * self._shape(np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def integrated_var(self, i: ArrayLike, t: ArrayLike, u: ArrayLike) -> NDArray | float:
        """Integral of sigma(w, i)^2 for w in [t, u]."""
        s0sq = self._s0[np.asarray(i)] ** 2
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        out = s0sq * (self.variance_clock(u) - self.variance_clock(t))
        return float(out) if np.ndim(out) == 0 else out

    def sigma_bar(self, i: int, t: ArrayLike, v: ArrayLike) -> NDArray | float:
        return np.sqrt(self.integrated_var(i, t, np.asarray(t) + np.asarray(v)))


# ----------------------------------------------------------------------------
# payoffs
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class Payoff:
    """Terminal payoff K(s): non-negative with at most linear growth."""

    kind: str
    strike: float = 0.0
    level: float = 0.0
    x: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        errors = []
        if self.kind in ("call", "put"):
            if not self.strike > 0:
                errors.append(f"{self.kind} strike must be positive")
        elif self.kind == "constant":
            if not self.level >= 0:
                errors.append("constant payoff must be non-negative")
        elif self.kind == "tabulated":
            x = np.asarray(self.x, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if x.ndim != 1 or x.size < 2 or x.shape != v.shape:
                errors.append("tabulated payoff needs matching x/values arrays of length >= 2")
            elif np.any(np.diff(x) <= 0) or x[0] < 0:
                errors.append("tabulated x grid must be non-negative and strictly increasing")
            elif np.any(v < 0) or not np.all(np.isfinite(v)):
                errors.append("tabulated payoff values must be finite and non-negative")
        else:
            errors.append(f"unknown payoff kind {self.kind!r}")
        if errors:
            raise ValidationError(errors)

    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls("call", strike=float(strike))

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls("put", strike=float(strike))

    @classmethod
    def constant(cls, level: float) -> "Payoff":
        return cls("constant", level=float(level))

    @classmethod
    def tabulated(cls, x: ArrayLike, values: ArrayLike) -> "Payoff":
        return cls("tabulated", x=tuple(np.asarray(x, float)), values=tuple(np.asarray(values, float)))

    def __call__(self, s: ArrayLike) -> NDArray:
        s = np.asarray(s, dtype=float)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.kind == "constant":
            return np.full_like(s, self.level)
        x = np.asarray(self.x)
        v = np.asarray(self.values)
        out = np.interp(s, x, v)
        lo_slope = (v[1] - v[0]) / (x[1] - x[0])
        hi_slope = (v[-1] - v[-2]) / (x[-1] - x[-2])
        out = np.where(s > x[-1], v[-1] + hi_slope * (s - x[-1]), out)
        out = np.where(s < x[0], v[0] + lo_slope * (s - x[0]), out)
        return np.maximum(out, 0.0)

    def growth(self) -> tuple[float, float]:
        """Constants (k1, k2) with K(s) <= k1 + k2 s."""
        if self.kind == "call":
            return 0.0, 1.0
        if self.kind == "put":
            return self.strike, 0.0
        if self.kind == "constant":
            return self.level, 0.0
        x = np.asarray(self.x)
        v = np.asarray(self.values)
        hi_slope = max((v[-1] - v[-2]) / (x[-1] - x[-2]), 0.0)
        lo_slope = (v[1] - v[0]) / (x[1] - x[0])
        k2 = max(hi_slope, float(np.max(np.diff(v) / np.diff(x))), 0.0)
        k1 = float(np.max(v)) + max(-lo_slope, 0.0) * x[0]
        return k1, k2


# ----------------------------------------------------------------------------
# lognormal transition density
# ----------------------------------------------------------------------------
def _drift(model: "RegimeModel", i: int) -> float:
    return float(model.r[i] - model.kappa[i])


def log_kernel_L(model: "RegimeModel", t: float, x: ArrayLike, s: ArrayLike, i: int, v: float) -> NDArray:
    """Standardised log-return of reaching ``x`` at ``t + v`` from ``s`` at ``t``."""
    var = model.vol.integrated_var(i, t, t + v)
    mean = _drift(model, i) * v - 0.5 * var
    return (np.log(np.asarray(x, float) / np.asarray(s, float)) - mean) / np.sqrt(var)


def lognormal_alpha(model: "RegimeModel", x: ArrayLike, t: float, s: ArrayLike, i: int, v: float) -> NDArray:
    """Transition density of the regime-``i`` asset from (t, s) to (t + v, x)."""
    sbar = np.sqrt(model.vol.integrated_var(i, t, t + v))
    L = log_kernel_L(model, t, x, s, i, v)
    return np.exp(-0.5 * L * L) / (SQRT_2PI * np.asarray(x, float) * sbar)


def bsm_rho(model: "RegimeModel", i: int, t: float, s: ArrayLike, T: float, payoff: Payoff,
            n_quad: int = 128, trunc_sd: float = TRUNC_SD) -> NDArray:
    """Price in a market frozen in regime ``i``: discounted lognormal expectation of the payoff."""
    s = np.asarray(s, dtype=float)
    tau = T - t
    if tau < 0:
        raise ValueError("valuation time after maturity")
    if tau == 0:
        return payoff(s)
    r = float(model.r[i])
    disc = np.exp(-r * tau)
    var = model.vol.integrated_var(i, t, T)
    sbar = np.sqrt(var)
    fwd = s * np.exp(_drift(model, i) * tau)
    if payoff.kind == "constant":
        return np.full_like(s, payoff.level * disc)
    if payoff.kind in ("call", "put"):
        K = payoff.strike
        d1 = (np.log(fwd / K) + 0.5 * var) / sbar
        d2 = d1 - sbar
        if payoff.kind == "call":
            return disc * (fwd * ndtr(d1) - K * ndtr(d2))
        return disc * (K * ndtr(-d2) - fwd * ndtr(-d1))
    z, w = normal_rule(n_quad, trunc_sd)
    x = s[..., None] * np.exp(_drift(model, i) * tau - 0.5 * var + sbar * z)
    return disc * (payoff(x) @ w)


def bsm_delta(model: "RegimeModel", i: int, t: float, s: ArrayLike, T: float, payoff: Payoff,
              n_quad: int = 128, trunc_sd: float = TRUNC_SD) -> NDArray:
    """Derivative of :func:`bsm_rho` with respect to the spot."""
    s = np.asarray(s, dtype=float)
    tau = T - t
    if tau <= 0:
        raise ValueError("delta needs t < T")
    var = model.vol.integrated_var(i, t, T)
    sbar = np.sqrt(var)
    carry = np.exp(-float(model.kappa[i]) * tau)
    if payoff.kind == "constant":
        return np.zeros_like(s)
    if payoff.kind in ("call", "put"):
        fwd = s * np.exp(_drift(model, i) * tau)
        d1 = (np.log(fwd / payoff.strike) + 0.5 * var) / sbar
        return carry * (ndtr(d1) if payoff.kind == "call" else ndtr(d1) - 1.0)
    z, w = normal_rule(n_quad, trunc_sd)
    x = s[..., None] * np.exp(_drift(model, i) * tau - 0.5 * var + sbar * z)
    disc = np.exp(-float(model.r[i]) * tau)
    return disc * (payoff(x) @ (w * z)) / (s * sbar)


# ----------------------------------------------------------------------------
# barriers (constant volatility inside the regime)
# ----------------------------------------------------------------------------
def _const_sigma(model: "RegimeModel", i: int) -> float:
    if not model.vol.is_constant:
        raise UnsupportedModelError("barrier formulas need a time-independent volatility")
    return float(model.vol.sigma0[i])


def survival_prob_up(model: "RegimeModel", i: int, b: float, s: ArrayLike, v: float) -> NDArray:
    """P(running maximum over [0, v] stays below ``b``) for the regime-``i`` asset started at ``s``."""
    sig = _const_sigma(model, i)
    s = np.asarray(s, dtype=float)
    if v <= 0:
        return (s < b).astype(float)
    mu = _drift(model, i) - 0.5 * sig * sig
    a = np.log(b / np.minimum(s, b))
    sv = sig * np.sqrt(v)
    out = ndtr((a - mu * v) / sv) - np.exp(2.0 * mu * a / (sig * sig)) * ndtr((-a - mu * v) / sv)
    return np.where(s < b, np.clip(out, 0.0, 1.0), 0.0)


def survival_prob_down(model: "RegimeModel", i: int, h: float, s: ArrayLike, v: float) -> NDArray:
    """P(running minimum over [0, v] stays above ``h``); mirror image of :func:`survival_prob_up`."""
    sig = _const_sigma(model, i)
    s = np.asarray(s, dtype=float)
    if v <= 0:
        return (s > h).astype(float)
    mu = _drift(model, i) - 0.5 * sig * sig
    a = np.log(np.maximum(s, h) / h)
    sv = sig * np.sqrt(v)
    out = ndtr((a + mu * v) / sv) - np.exp(-2.0 * mu * a / (sig * sig)) * ndtr((-a + mu * v) / sv)
    return np.where(s > h, np.clip(out, 0.0, 1.0), 0.0)


def bridge_survival(barrier: float, s: ArrayLike, x: ArrayLike, var: ArrayLike, up: bool = True) -> NDArray:
    """Probability a Brownian bridge in log space from ``s`` to ``x`` with total
    variance ``var`` does not touch ``barrier``."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if up:
        a, c = np.log(barrier / s), np.log(barrier / x)
    else:
        a, c = np.log(s / barrier), np.log(x / barrier)
    inside = (a > 0) & (c > 0)
    return np.where(inside, -np.expm1(-2.0 * np.where(inside, a * c, 0.0) / var), 0.0)


def _barrier_parts(model: "RegimeModel", i: int, t: float, s: NDArray, K: float, H: float, T: float):
    sig = _const_sigma(model, i)
    tau = T - t
    r, q = float(model.r[i]), float(model.kappa[i])
    sv = sig * np.sqrt(tau)
    lam = (r - q + 0.5 * sig * sig) / (sig * sig)
    return sig, tau, r, q, sv, lam


def barrier_up_out_call_closed(model: "RegimeModel", i: int, t: float, s: ArrayLike, K: float,
                               b: float, T: float) -> NDArray:
    """Up-and-out call in regime ``i`` (continuous monitoring, no rebate)."""
    s = np.asarray(s, dtype=float)
    if T - t <= 0:
        return np.where(s < b, np.maximum(s - K, 0.0), 0.0)
    if b <= K:
        return np.zeros_like(s)
    sig, tau, r, q, sv, lam = _barrier_parts(model, i, t, s, K, b, T)
    ss = np.minimum(s, b)
    vanilla = bsm_rho(model, i, t, ss, T, Payoff.call(K))
    dq, dr = np.exp(-q * tau), np.exp(-r * tau)
    x1 = np.log(ss / b) / sv + lam * sv
    y = np.log(b * b / (ss * K)) / sv + lam * sv
    y1 = np.log(b / ss) / sv + lam * sv
    ratio = b / ss
    up_in = (ss * dq * ndtr(x1) - K * dr * ndtr(x1 - sv)
             - ss * dq * ratio ** (2 * lam) * (ndtr(-y) - ndtr(-y1))
             + K * dr * ratio ** (2 * lam - 2) * (ndtr(-y + sv) - ndtr(-y1 + sv)))
    return np.where(s < b, np.maximum(vanilla - up_in, 0.0), 0.0)


def barrier_down_out_call_closed(model: "RegimeModel", i: int, t: float, s: ArrayLike, K: float,
                                 h: float, T: float) -> NDArray:
    """Down-and-out call in regime ``i`` (continuous monitoring, no rebate)."""
    s = np.asarray(s, dtype=float)
    if T - t <= 0:
        return np.where(s > h, np.maximum(s - K, 0.0), 0.0)
    sig, tau, r, q, sv, lam = _barrier_parts(model, i, t, s, K, h, T)
    ss = np.maximum(s, h)
    dq, dr = np.exp(-q * tau), np.exp(-r * tau)
    ratio = h / ss
    if h <= K:
        vanilla = bsm_rho(model, i, t, ss, T, Payoff.call(K))
        y = np.log(h * h / (ss * K)) / sv + lam * sv
        down_in = ss * dq * ratio ** (2 * lam) * ndtr(y) - K * dr * ratio ** (2 * lam - 2) * ndtr(y - sv)
        out = vanilla - down_in
    else:
        x1 = np.log(ss / h) / sv + lam * sv
        y1 = np.log(h / ss) / sv + lam * sv
        out = (ss * dq * ndtr(x1) - K * dr * ndtr(x1 - sv)
               - ss * dq * ratio ** (2 * lam) * ndtr(y1) + K * dr * ratio ** (2 * lam - 2) * ndtr(y1 - sv))
    return np.where(s > h, np.maximum(out, 0.0), 0.0)
