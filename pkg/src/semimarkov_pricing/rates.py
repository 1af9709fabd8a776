"""Age-dependent transition rates and the holding-time laws derived from them.

A :class:`RateSpec` stores the polynomial family

    Lambda(y) = L1 + y L2 + ... + y^n L(n+1)

of k x k rate matrices, frozen at ``age_cap``: for y > age_cap the rates are
held at their value at the cap.  Freezing keeps the total exit rate bounded
(needed by the thinning simulator) while the hazard still integrates to
infinity, so every holding time is finite.

States are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ValidationError

SIMPSON_TOL = 1e-10
INFINITY_EPS = 1e-12


def _horner(coefs: NDArray, y: NDArray) -> NDArray:
    """Evaluate polynomials with coefficients on the last axis (lowest power first)."""
    out = np.zeros(np.broadcast_shapes(coefs.shape[:-1], np.shape(y)))
    for p in range(coefs.shape[-1] - 1, -1, -1):
        out = out * y + coefs[..., p]
    return out


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = SIMPSON_TOL, max_depth: int = 48) -> float:
    """Adaptive Simpson quadrature with absolute tolerance ``tol``.

    Raises :class:`NumericalError` when a panel cannot be resolved within
    ``max_depth`` bisections.
    """
    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    worst = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        err = left + right - est
        if abs(err) <= 15.0 * eps:
            total += left + right + err / 15.0
        elif depth >= max_depth:
            worst = max(worst, abs(err) / 15.0)
            total += left + right + err / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    if worst > tol:
        raise NumericalError("adaptive Simpson did not converge", residual=worst)
    return total


class EmbeddedChain(NamedTuple):
    matrix: NDArray[np.float64]
    irreducible: bool


def _poly_extrema_candidates(coefs: NDArray, lo: float, hi: float, n_samples: int = 257) -> NDArray:
    pts = [np.linspace(lo, hi, n_samples)]
    if len(coefs) > 2:
        deriv = np.polynomial.polynomial.polyder(coefs)
        roots = np.polynomial.polynomial.polyroots(deriv)
        real = roots[np.abs(roots.imag) < 1e-12].real
        pts.append(real[(real > lo) & (real < hi)])
    return np.concatenate(pts)


@dataclass(frozen=True, eq=False)
class RateSpec:
    """Polynomial age-dependent rate family with an age cap.

    Parameters
    ----------
    coeff : array (n+1, k, k)
        ``coeff[p]`` multiplies ``y**p``.  Diagonal entries are ignored and
        re-derived as minus the off-diagonal row sums.
    age_cap : float
        Age beyond which rates are frozen.
    """

    coeff: NDArray[np.float64]
    age_cap: float

    def __init__(self, coeff: ArrayLike, age_cap: float):
        arr = np.array(coeff, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        errors = []
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ValidationError(f"rate coefficients must have shape (n+1, k, k), got {arr.shape}")
        if arr.shape[1] < 2:
            errors.append("at least two states are required")
        if not np.all(np.isfinite(arr)):
            errors.append("rate coefficients must be finite")
        if not (np.isfinite(age_cap) and age_cap > 0):
            errors.append(f"age_cap must be positive, got {age_cap}")
        if errors:
            raise ValidationError(errors)
        k = arr.shape[1]
        off = ~np.eye(k, dtype=bool)
        arr[:, ~off] = 0.0
        arr[:, np.arange(k), np.arange(k)] = -arr.sum(axis=2)
        arr.setflags(write=False)
        object.__setattr__(self, "coeff", arr)
        object.__setattr__(self, "age_cap", float(age_cap))
        row = -arr[:, np.arange(k), np.arange(k)].T.copy()  # (k, n+1)
        row.setflags(write=False)
        object.__setattr__(self, "_row", row)
        # antiderivative coefficients of the row sums: y^(p+1)/(p+1)
        anti = np.zeros((k, row.shape[1] + 1))
        anti[:, 1:] = row / np.arange(1, row.shape[1] + 1)
        object.__setattr__(self, "_anti", anti)
        self._validate()
        sups = []
        for i in range(k):
            pts = _poly_extrema_candidates(row[i], 0.0, self.age_cap)
            sups.append(float(np.max(_horner(row[i], pts))))
        object.__setattr__(self, "row_sup", np.array(sups))
        object.__setattr__(self, "c", float(max(sups)))
        cap_row = _horner(row, np.full(k, self.age_cap))
        object.__setattr__(self, "_cap_row", cap_row)
        object.__setattr__(self, "_cap_lambda", _horner(anti, np.full(k, self.age_cap)))

    def _validate(self) -> None:
        k, cap = self.k, self.age_cap
        errors = []
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                poly = self.coeff[:, i, j]
                pts = _poly_extrema_candidates(poly, 0.0, cap)
                vals = _horner(poly, pts)
                scale = max(1.0, float(np.max(np.abs(poly))))
                if vals.min() < -1e-12 * scale:
                    neg = [p for p in range(len(poly)) if poly[p] < 0]
                    errors.append(
                        f"rate ({i},{j}) is negative on [0, {cap:g}] (min {vals.min():.6g} at age "
                        f"{pts[np.argmin(vals)]:.6g}); negative coefficients at (i,j,power) = "
                        + ", ".join(f"({i},{j},{p})" for p in neg)
                    )
        if not errors:
            for i in range(k):
                total = float(_horner(self._row[i], np.array(cap)))
                if not total > 0:
                    errors.append(
                        f"state {i}: total exit rate at the age cap is {total:g}; the integrated hazard "
                        "must diverge, so the state cannot be absorbing"
                    )
        if errors:
            raise ValidationError(errors)

    # ------------------------------------------------------------------
    @property
    def k(self) -> int:
        return self.coeff.shape[1]

    @property
    def degree(self) -> int:
        return self.coeff.shape[0] - 1

    def _check_state(self, *states: int) -> None:
        for s in states:
            if not (isinstance(s, (int, np.integer)) and 0 <= s < self.k):
                raise ValueError(f"state index {s!r} outside 0..{self.k - 1}")

    def _capped(self, y: ArrayLike) -> NDArray:
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("age must be non-negative")
        return np.minimum(y, self.age_cap)

    # -- rates -----------------------------------------------------------
    def matrix(self, y: ArrayLike) -> NDArray:
        """Full rate matrix at age(s) ``y``; shape ``y.shape + (k, k)``."""
        yc = self._capped(y)
        return _horner(np.moveaxis(self.coeff, 0, -1), yc[..., None, None])

    def lambda_at(self, i: int, j: int, y: ArrayLike) -> NDArray | float:
        self._check_state(i, j)
        out = _horner(self.coeff[:, i, j], self._capped(y))
        return float(out) if out.ndim == 0 else out

    def row_rate(self, i: ArrayLike, y: ArrayLike) -> NDArray:
        """Total exit rate -lambda_ii(y); ``i`` may be an index array."""
        return _horner(self._row[np.asarray(i)], self._capped(y))

    def rates_from(self, i: ArrayLike, y: ArrayLike) -> NDArray:
        """Off-diagonal rates out of state(s) ``i``: shape ``broadcast + (k,)``, zero at j = i."""
        i = np.asarray(i)
        coefs = np.moveaxis(self.coeff[:, i, :], 0, -1)  # i.shape + (k, n+1)
        out = _horner(coefs, self._capped(y)[..., None])
        np.put_along_axis(out, np.broadcast_to(i, out.shape[:-1])[..., None], 0.0, axis=-1)
        return out

    # -- integrated hazard --------------------------------------------------
    def big_lambda(self, i: ArrayLike, y: ArrayLike) -> NDArray | float:
        """Integrated hazard of state ``i`` up to age ``y``."""
        if isinstance(i, (int, np.integer)):
            self._check_state(i)
        i = np.asarray(i)
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("age must be non-negative")
        yc = np.minimum(y, self.age_cap)
        out = _horner(self._anti[i], yc) + self._cap_row[i] * np.maximum(y - self.age_cap, 0.0)
        return float(out) if out.ndim == 0 else out

    def survival(self, i: ArrayLike, y: ArrayLike) -> NDArray | float:
        return np.exp(-np.asarray(self.big_lambda(i, y)))

    def holding_cdf(self, i: ArrayLike, y: ArrayLike) -> NDArray | float:
        out = -np.expm1(-np.asarray(self.big_lambda(i, y)))
        return float(out) if np.ndim(out) == 0 else out

    def holding_pdf(self, i: ArrayLike, y: ArrayLike) -> NDArray | float:
        out = self.row_rate(i, y) * np.exp(-np.asarray(self.big_lambda(i, y)))
        return float(out) if np.ndim(out) == 0 else out

    def hazard_inverse(self, i: ArrayLike, target: ArrayLike) -> NDArray:
        """Age y with ``big_lambda(i, y) == target`` (vectorised, target >= 0)."""
        i = np.asarray(i)
        target = np.asarray(target, dtype=float)
        i, target = np.broadcast_arrays(i, target)
        out = np.empty(target.shape)
        lam_cap = self._cap_lambda[i]
        beyond = target >= lam_cap
        out[beyond] = self.age_cap + (target[beyond] - lam_cap[beyond]) / self._cap_row[i[beyond]]
        inside = ~beyond
        if not inside.any():
            return out
        ii, tt = i[inside], target[inside]
        if self.degree == 0:
            out[inside] = tt / self._row[ii, 0]
        elif self.degree == 1:
            a, b = self._row[ii, 0], self._row[ii, 1]
            # root of b/2 y^2 + a y - t = 0 in cancellation-free form
            out[inside] = 2.0 * tt / (a + np.sqrt(np.maximum(a * a + 2.0 * b * tt, 0.0)))
        else:
            lo = np.zeros_like(tt)
            hi = np.full_like(tt, self.age_cap)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                below = _horner(self._anti[ii], mid) < tt
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            y = 0.5 * (lo + hi)
            for _ in range(3):
                rate = _horner(self._row[ii], y)
                step = np.where(rate > 0, (_horner(self._anti[ii], y) - tt) / np.where(rate > 0, rate, 1.0), 0.0)
                y = np.clip(y - step, lo, hi)
            out[inside] = y
        return out

    def infinity_proxy(self, i: int, eps: float = INFINITY_EPS) -> float:
        """Age beyond which the survival probability of state ``i`` is below ``eps``."""
        self._check_state(i)
        return float(self.hazard_inverse(i, -np.log(eps)))

    # -- embedded jump law ----------------------------------------------------
    def jump_prob(self, i: int, j: int, y: ArrayLike) -> NDArray | float:
        self._check_state(i, j)
        out = self.jump_matrix(y)[..., i, j]
        return float(out) if np.ndim(out) == 0 else out

    def jump_matrix(self, y: ArrayLike) -> NDArray:
        """Conditional destination law p_ij(y); rows sum to one."""
        lam = self.matrix(y)
        k = self.k
        diag = np.arange(k)
        total = -lam[..., diag, diag]
        pos = total > 0
        p = np.where(pos[..., None], lam / np.where(pos, total, 1.0)[..., None], 0.0)
        p[..., diag, diag] = np.where(pos, 0.0, 1.0)
        return p

    def kernel(self, i: int, j: int, y: float, tol: float = SIMPSON_TOL) -> float:
        """Semi-Markov kernel Q_ij(y): next state j with holding time <= y."""
        self._check_state(i, j)
        if i == j:
            raise ValueError("kernel is defined for i != j")
        if y < 0:
            raise ValueError("age must be non-negative")
        upper = min(y, self.age_cap)

        def integrand(s: float) -> float:
            return float(np.exp(-self.big_lambda(i, s)) * self.lambda_at(i, j, s))

        head = adaptive_simpson(integrand, 0.0, upper, tol)
        if y <= self.age_cap:
            return head
        # past the cap the rates are constant: closed-form exponential tail
        rate = self._cap_row[i]
        lam_ij = self.lambda_at(i, j, self.age_cap)
        tail_mass = -np.expm1(-rate * (y - self.age_cap)) if np.isfinite(y) else 1.0
        return head + float(np.exp(-self._cap_lambda[i]) * lam_ij / rate * tail_mass)

    def embedded_matrix(self, tol: float = 1e-12) -> EmbeddedChain:
        """Transition matrix of the embedded jump chain and its irreducibility."""
        k = self.k
        P = np.zeros((k, k))
        for i in range(k):
            for j in range(k):
                if i != j:
                    P[i, j] = self.kernel(i, j, np.inf, tol=tol)
        n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
        return EmbeddedChain(P, bool(n_comp == 1))
