"""Market parameters per regime and the (t, s, i, y) market state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bsm import VolProfile
from .errors import ValidationError


def _as_tuple(values: ArrayLike) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class RegimeModel:
    """Per-regime short rate, physical drift, dividend yield and volatility.

    Parameters
    ----------
    r, mu, kappa : sequences of length k
        Short rate (must be positive), physical drift and continuous
        dividend yield per regime.  ``kappa`` defaults to zero.
    vol : VolProfile
        Deterministic volatility profile; its ``sigma0`` must have length k.
    """

    r: tuple[float, ...]
    mu: tuple[float, ...]
    vol: VolProfile
    kappa: tuple[float, ...] = ()
    _arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = _as_tuple(self.r)
        mu = _as_tuple(self.mu)
        kappa = _as_tuple(self.kappa) if len(np.atleast_1d(self.kappa)) else tuple(0.0 for _ in r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)
        errors = []
        k = len(r)
        if k == 0:
            errors.append("at least one regime is required")
        for name, vals in (("mu", mu), ("kappa", kappa), ("vol.sigma0", self.vol.sigma0)):
            if len(vals) != k:
                errors.append(f"{name} has length {len(vals)}, expected {k}")
        if not all(np.isfinite(r)) or any(v <= 0 for v in r):
            errors.append("short rate r must be positive in every regime")
        if not all(np.isfinite(mu)) or not all(np.isfinite(kappa)):
            errors.append("mu and kappa must be finite")
        if errors:
            raise ValidationError(errors)
        arrays = {"r": np.array(r), "mu": np.array(mu), "kappa": np.array(kappa)}
        for a in arrays.values():
            a.setflags(write=False)
        object.__setattr__(self, "_arrays", arrays)

    @property
    def k(self) -> int:
        return len(self.r)

    @property
    def r_arr(self) -> NDArray:
        return self._arrays["r"]

    @property
    def mu_arr(self) -> NDArray:
        return self._arrays["mu"]

    @property
    def kappa_arr(self) -> NDArray:
        return self._arrays["kappa"]

    def drift(self, measure: str = "risk_neutral") -> NDArray:
        """Per-regime asset drift ``b`` so that dS = S (b dt + sigma dW)."""
        if measure == "risk_neutral":
            return self.r_arr - self.kappa_arr
        if measure == "physical":
            return self.mu_arr - self.kappa_arr
        raise ValueError(f"unknown measure {measure!r}")

    def check_states(self, k: int) -> None:
        if k != self.k:
            raise ValidationError(f"rate spec has {k} states but the market model has {self.k}")


class MarketState(NamedTuple):
    """Calendar time, asset price, regime index (0-based) and age."""

    t: float
    s: float
    i: int
    y: float = 0.0
