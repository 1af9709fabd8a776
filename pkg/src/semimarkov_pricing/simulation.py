"""Simulation of the age-dependent regime process and regime-modulated asset paths.

Two chain samplers are provided.  ``thinning`` draws candidate epochs from a
homogeneous Poisson stream of rate ``c`` (the sup of the exit rates) with
uniform marks on ``[0, c)`` and accepts a jump ``i -> j`` when the mark lands
in the interval of length ``lambda_ij(age)`` assigned to ``j``; the intervals
out of a state are laid out consecutively from zero in increasing ``j``.
``inversion`` alternates a holding-time draw from the conditional survival
function with a categorical draw of the destination.  They share no code
beyond :class:`RateSpec`, which is what makes them useful against each other.

All Monte Carlo runs are split into batches; batch ``b`` uses
``PCG64(SeedSequence(seed).spawn(n_batches)[b])`` so results depend only on
``(seed, n_paths, batch_size)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import MarketState, RegimeModel
from .rates import RateSpec

DEFAULT_BATCH = 10_000
BARRIER_STEPS = 512


def seed_sequence(rng) -> np.random.SeedSequence:
    """Normalise an int / SeedSequence / Generator / None into a SeedSequence."""
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(rng)


def batch_generators(rng, n_paths: int, batch_size: int = DEFAULT_BATCH) -> Iterator[tuple[int, np.random.Generator]]:
    """Yield ``(batch_len, generator)`` pairs covering ``n_paths`` paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    n_batches = -(-n_paths // batch_size)
    children = seed_sequence(rng).spawn(n_batches)
    for b, child in enumerate(children):
        yield min(batch_size, n_paths - b * batch_size), np.random.Generator(np.random.PCG64(child))


# ----------------------------------------------------------------------------
# path containers
# ----------------------------------------------------------------------------
class ChainBatch(NamedTuple):
    """A batch of regime paths in padded form.

    ``times[p, n]`` is the n-th transition time of path p (``inf`` padding);
    ``states[p, n]`` is the state occupied after ``n`` transitions, so
    ``states[:, 0]`` is the initial state.
    """

    times: NDArray
    states: NDArray
    t0: float
    y0: float
    horizon: float

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    def _per_path(self, q: ArrayLike) -> NDArray:
        # 2-D queries are per path; anything else is shared by all paths
        q = np.asarray(q, dtype=float)
        return q if q.ndim > 1 else np.broadcast_to(q, (self.n_paths,) + q.shape)

    def counts_at(self, q: ArrayLike) -> NDArray:
        """Number of transitions in ``(t0, q]``; ``q`` is (Q,) shared or (n, Q) per path."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 1 and q.size > 1 and np.all(np.diff(q) > 0):
            # shared sorted grid: histogram of event positions, then cumulate
            n, Q = self.n_paths, q.size
            rows, cols = np.nonzero(np.isfinite(self.times))
            pos = np.searchsorted(q, self.times[rows, cols], side="left")
            keep = pos < Q
            hist = np.bincount(rows[keep] * Q + pos[keep], minlength=n * Q).reshape(n, Q)
            return np.cumsum(hist, axis=1)
        qq = self._per_path(q)
        out = np.zeros(qq.shape, dtype=np.int64)
        extra = (slice(None),) + (None,) * (qq.ndim - 1)
        for col in range(self.times.shape[1]):
            out += self.times[:, col][extra] <= qq
        return out

    def _gather(self, arr: NDArray, cnt: NDArray) -> NDArray:
        """``arr[p, cnt[p, ...]]`` via flat indexing."""
        width = arr.shape[1]
        offs = (np.arange(self.n_paths) * width).reshape((-1,) + (1,) * (cnt.ndim - 1))
        return arr.ravel()[cnt + offs]

    def state_age_at(self, q: ArrayLike, counts: NDArray | None = None) -> tuple[NDArray, NDArray]:
        """Regime and age at query times (right-continuous)."""
        cnt = self.counts_at(q) if counts is None else counts
        qq = np.broadcast_to(self._per_path(q), cnt.shape)
        st = self._gather(self.states, cnt)
        padded = np.concatenate([np.full((self.n_paths, 1), self.t0), self.times], axis=1)
        last = self._gather(padded, cnt)
        age = np.where(cnt == 0, self.y0 + qq - self.t0, qq - last)
        return st, age

    def integrate(self, per_state: ArrayLike, q: ArrayLike, clock: Callable[[NDArray], NDArray] | None = None,
                  counts: NDArray | None = None) -> NDArray:
        """Integral of ``per_state[X_u] dclock(u)`` over ``[t0, q]`` (``q <= horizon``).

        ``per_state`` may be (k,) or (p, k); the result gains a leading axis
        of length p in the second case.  ``counts`` may pass a precomputed
        :meth:`counts_at` for the same ``q``.
        """
        a = np.asarray(per_state, dtype=float)
        qq = self._per_path(q)
        cnt = self.counts_at(q) if counts is None else counts
        H = clock if clock is not None else (lambda x: np.asarray(x, dtype=float))
        starts = np.concatenate([np.full((self.n_paths, 1), self.t0), np.minimum(self.times, self.horizon)], axis=1)
        h_starts = H(starts)
        width = starts.shape[1]
        flat = cnt + (np.arange(self.n_paths) * width).reshape((-1,) + (1,) * (cnt.ndim - 1))
        since = H(qq) - h_starts.ravel()[flat]
        st = self.states.ravel()[flat]
        out = []
        for row in np.atleast_2d(a):
            rate = row[self.states]                                   # (n, m+1)
            cum = np.concatenate([np.zeros((self.n_paths, 1)), np.cumsum(rate[:, :-1] * np.diff(h_starts, axis=1), axis=1)], axis=1)
            out.append(cum.ravel()[flat] + row[st] * since)
        return out[0] if a.ndim == 1 else np.stack(out)

    def path(self, p: int) -> "PathRecord":
        n = np.isfinite(self.times[p]).sum()
        return PathRecord(
            x0=int(self.states[p, 0]), y0=float(self.y0), horizon=float(self.horizon), t0=float(self.t0),
            times=self.times[p, :n].copy(), states=self.states[p, 1:n + 1].copy(),
        )


@dataclass(frozen=True, eq=False)
class PathRecord:
    """One simulated trajectory of the regime process, optionally with asset samples.

    ``times``/``states`` list the transitions (time, new state).  Ages reset to
    zero at each transition and otherwise grow at unit speed.
    """

    x0: int
    y0: float
    horizon: float
    times: NDArray
    states: NDArray
    t0: float = 0.0
    asset_times: NDArray | None = None
    asset_values: NDArray | None = None
    first_passage: tuple[float, float | None] | None = None

    @property
    def transitions(self) -> list[tuple[float, int]]:
        return [(float(t), int(s)) for t, s in zip(self.times, self.states)]

    def as_batch(self) -> ChainBatch:
        return ChainBatch(self.times[None, :].astype(float), np.concatenate([[self.x0], self.states])[None, :].astype(np.int64),
                          self.t0, self.y0, self.horizon)

    def state_at(self, t: float) -> int:
        n = np.searchsorted(self.times, t, side="right")
        return int(self.x0 if n == 0 else self.states[n - 1])

    def age_at(self, t: float) -> float:
        n = np.searchsorted(self.times, t, side="right")
        return float(self.y0 + t - self.t0 if n == 0 else t - self.times[n - 1])

    def __eq__(self, other):
        if not isinstance(other, PathRecord):
            return NotImplemented
        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)
        return (self.x0 == other.x0 and self.y0 == other.y0 and self.horizon == other.horizon and self.t0 == other.t0
                and same(self.times, other.times) and same(self.states, other.states)
                and same(self.asset_times, other.asset_times) and same(self.asset_values, other.asset_values)
                and self.first_passage == other.first_passage)


# ----------------------------------------------------------------------------
# chain samplers
# ----------------------------------------------------------------------------
def sample_holding(spec: RateSpec, i: int, y0: float, rng, size=None) -> NDArray | float:
    """Residual holding time in state ``i`` given current age ``y0``.

    Solves ``Lambda_i(y0 + u) - Lambda_i(y0) = E`` with ``E ~ Exp(1)``.
    """
    if y0 < 0:
        raise ValueError("age must be non-negative")
    spec._check_state(i)
    E = rng.exponential(size=size)
    u = spec.hazard_inverse(i, spec.big_lambda(i, y0) + np.asarray(E)) - y0
    u = np.maximum(u, 0.0)
    return float(u) if np.ndim(u) == 0 else u


def _pack(n: int, x0, events: list[tuple[NDArray, NDArray, NDArray]], t0, y0, horizon) -> ChainBatch:
    """Turn per-round (path index, time, new state) triples into padded arrays."""
    counts = np.zeros(n, dtype=np.int64)
    for idx, _, _ in events:
        counts[idx] += 1
    m = int(counts.max()) if n else 0
    times = np.full((n, m), np.inf)
    states = np.empty((n, m + 1), dtype=np.int64)
    states[:, 0] = x0
    fill = np.zeros(n, dtype=np.int64)
    for idx, t, j in events:
        times[idx, fill[idx]] = t
        states[idx, fill[idx] + 1] = j
        fill[idx] += 1
    # carry the last state forward into the padding so states[:, count] is always valid
    for col in range(1, m + 1):
        pad = col > counts
        states[pad, col] = states[pad, col - 1]
    return ChainBatch(times, states, float(t0), float(y0), float(horizon))


def _thinning_rounds(spec: RateSpec, x0: int, y0: float, t0: float, horizon: float, n: int, rng,
                     eta_prime: Callable[[NDArray], NDArray] | None = None, eta_sup: float = 1.0) -> ChainBatch:
    c = spec.c
    dom = c * eta_sup
    t = np.full(n, float(t0))
    x = np.full(n, x0, dtype=np.int64)
    last = np.full(n, float(t0))
    age0 = np.full(n, float(y0))
    alive = np.ones(n, dtype=bool)
    events = []
    while alive.any():
        gap = rng.exponential(size=n) / dom
        z = rng.uniform(size=n) * dom
        t = np.where(alive, t + gap, t)
        alive &= t < horizon
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        ti = t[idx]
        zi = z[idx]
        if eta_prime is not None:
            ep = np.asarray(eta_prime(ti), dtype=float)
            keep = zi < c * ep
            zi = np.where(keep, zi / np.where(keep, ep, 1.0), np.inf)
        age = age0[idx] + (ti - last[idx])
        lam = spec.rates_from(x[idx], age)                # (m, k), zero on the diagonal
        edges = np.cumsum(lam, axis=1)
        j = (zi[:, None] >= edges).sum(axis=1)            # first interval whose right end exceeds z
        jump = j < spec.k
        if jump.any():
            jidx = idx[jump]
            events.append((jidx, ti[jump], j[jump]))
            x[jidx] = j[jump]
            last[jidx] = ti[jump]
            age0[jidx] = 0.0
    return _pack(n, x0, events, t0, y0, horizon)


def _inversion_rounds(spec: RateSpec, x0: int, y0: float, t0: float, horizon: float, n: int, rng) -> ChainBatch:
    t = np.full(n, float(t0))
    x = np.full(n, x0, dtype=np.int64)
    age = np.full(n, float(y0))
    alive = np.ones(n, dtype=bool)
    events = []
    while alive.any():
        E = rng.exponential(size=n)
        U = rng.uniform(size=n)
        idx = np.flatnonzero(alive)
        y_jump = spec.hazard_inverse(x[idx], spec.big_lambda(x[idx], age[idx]) + E[idx])
        t_jump = t[idx] + np.maximum(y_jump - age[idx], 0.0)
        ok = t_jump < horizon
        alive[idx[~ok]] = False
        if not ok.any():
            continue
        idx, y_jump, t_jump = idx[ok], y_jump[ok], t_jump[ok]
        P = spec.jump_matrix(y_jump)[np.arange(idx.size), x[idx]]   # (m, k)
        j = (U[idx][:, None] >= np.cumsum(P, axis=1)).sum(axis=1)
        j = np.minimum(j, spec.k - 1)
        # guard against round-off selecting the current state
        j = np.where(j == x[idx], np.argmax(P, axis=1), j)
        events.append((idx, t_jump, j))
        x[idx] = j
        t[idx] = t_jump
        age[idx] = 0.0
    return _pack(n, x0, events, t0, y0, horizon)


def simulate_chains(spec: RateSpec, x0: int, y0: float, horizon: float, n_paths: int, rng,
                    method: str = "thinning", t0: float = 0.0) -> ChainBatch:
    """Simulate ``n_paths`` regime paths on ``[t0, horizon]`` with a single generator."""
    spec._check_state(x0)
    if not horizon > t0:
        raise ValueError("horizon must exceed the start time")
    if y0 < 0:
        raise ValueError("age must be non-negative")
    if method == "thinning":
        return _thinning_rounds(spec, x0, y0, t0, horizon, n_paths, rng)
    if method == "inversion":
        return _inversion_rounds(spec, x0, y0, t0, horizon, n_paths, rng)
    raise ValueError(f"unknown method {method!r}")


def simulate_chain(spec: RateSpec, x0: int, y0: float, horizon: float, rng,
                   method: str = "thinning", t0: float = 0.0) -> PathRecord:
    """Simulate one path of the regime process (see :func:`simulate_chains`)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(rng)))
    return simulate_chains(spec, x0, y0, horizon, 1, rng, method, t0).path(0)


def simulate_inhomogeneous(spec: RateSpec, eta: Callable, eta_prime: Callable, x0: int, y0: float,
                           horizon: float, rng, n_paths: int | None = None, eta_prime_sup: float | None = None,
                           n_check: int = 4097):
    """Time-changed chain whose Poisson clock runs at speed ``eta'(t)``.

    Candidates arrive at rate ``c * sup eta'`` with one uniform mark ``z`` on
    ``[0, c sup eta')``; a candidate is a genuine clock tick when
    ``z < c eta'(t)`` and is then tested with the rescaled mark ``z / eta'(t)``.
    With ``eta(t) = t`` this consumes random numbers exactly like the
    thinning sampler and reproduces its paths.

    Returns a :class:`PathRecord` when ``n_paths`` is None, else a :class:`ChainBatch`.
    """
    grid = np.linspace(0.0, horizon, n_check)
    ep = np.asarray(eta_prime(grid), dtype=float)
    if not np.all(np.isfinite(ep)) or np.any(ep <= 0):
        raise ValueError("eta must be strictly increasing: eta' has to be positive on [0, horizon]")
    e = np.asarray(eta(grid), dtype=float)
    if abs(e[0]) > 1e-12 or np.any(np.diff(e) <= 0):
        raise ValueError("eta must satisfy eta(0) = 0 and be strictly increasing")
    sup = float(eta_prime_sup) if eta_prime_sup is not None else float(ep.max())
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(rng)))
    spec._check_state(x0)
    batch = _thinning_rounds(spec, x0, y0, 0.0, horizon, n_paths or 1, rng, eta_prime=eta_prime, eta_sup=sup)
    return batch.path(0) if n_paths is None else batch


# ----------------------------------------------------------------------------
# asset paths
# ----------------------------------------------------------------------------
class GridPaths(NamedTuple):
    """Regime paths with asset values and discount integrals on a common time grid."""

    chain: ChainBatch
    grid: NDArray        # (Q,) times, grid[0] = t0
    s: NDArray           # (n, Q) asset values
    rint: NDArray        # (n, Q) integral of r(X_u) du from t0
    states: NDArray      # (n, Q) regime at grid times
    ages: NDArray        # (n, Q) age at grid times


def _asset_on(chain: ChainBatch, model: RegimeModel, s0: float, q: NDArray, measure: str, rng,
              counts: NDArray | None = None) -> NDArray:
    """Exact lognormal asset at increasing query times ``q`` of shape (n, Q).

    Returns the asset values and the running integral of the short rate.
    """
    counts = chain.counts_at(q) if counts is None else counts
    var = chain.integrate(np.asarray(model.vol.sigma0) ** 2, q, model.vol.variance_clock, counts=counts)
    drift, rint = chain.integrate(np.stack([model.drift(measure), model.r_arr]), q, counts=counts)
    dvar = np.diff(var, axis=1, prepend=0.0)
    ddrift = np.diff(drift, axis=1, prepend=0.0)
    z = rng.standard_normal(size=q.shape)
    logret = np.cumsum(ddrift - 0.5 * dvar + np.sqrt(np.maximum(dvar, 0.0)) * z, axis=1)
    return s0 * np.exp(logret), rint


def simulate_asset(path: PathRecord, model: RegimeModel, s0: float, measure: str = "risk_neutral", rng=None,
                   extra_times: ArrayLike | None = None, barrier: float | None = None) -> PathRecord:
    """Attach asset samples at every transition time, the horizon and ``extra_times``.

    Between transitions the log-price is Gaussian with drift
    ``int (b - sigma^2 / 2)`` and variance ``int sigma^2``, where ``b`` is
    ``mu - kappa`` (physical) or ``r - kappa`` (risk neutral).  If
    ``barrier`` is given the first sample at or above it is recorded (discrete
    monitoring on the sample times).
    """
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(rng)))
    pts = [path.times, [path.horizon]]
    if extra_times is not None:
        ex = np.asarray(extra_times, dtype=float)
        pts.append(ex[(ex > path.t0) & (ex <= path.horizon)])
    q = np.unique(np.concatenate(pts))
    vals = _asset_on(path.as_batch(), model, s0, q[None, :], measure, rng)[0][0]
    times = np.concatenate([[path.t0], q])
    values = np.concatenate([[s0], vals])
    fp = None
    if barrier is not None:
        hit = np.flatnonzero(values >= barrier)
        fp = (float(barrier), float(times[hit[0]]) if hit.size else None)
    return replace(path, asset_times=times, asset_values=values, first_passage=fp)


def simulate_grid(spec: RateSpec, model: RegimeModel, state: MarketState, grid: ArrayLike, n_paths: int, rng,
                  measure: str = "risk_neutral", method: str = "thinning") -> GridPaths:
    """Simulate ``n_paths`` regime + asset paths sampled on ``grid`` (grid[0] must equal state.t)."""
    model.check_states(spec.k)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != state.t or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at the valuation time and increase strictly")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(seed_sequence(rng)))
    chain = simulate_chains(spec, state.i, state.y, grid[-1], n_paths, rng, method, t0=state.t)
    counts = chain.counts_at(grid)
    q = np.broadcast_to(grid[1:], (n_paths, grid.size - 1))
    s = np.empty((n_paths, grid.size))
    s[:, 0] = state.s
    rint = np.zeros_like(s)
    s[:, 1:], rint[:, 1:] = _asset_on(chain, model, state.s, q, measure, rng, counts[:, 1:])
    st, age = chain.state_age_at(grid, counts)
    return GridPaths(chain, grid, s, rint, st, age)


# ----------------------------------------------------------------------------
# Monte Carlo pricing
# ----------------------------------------------------------------------------
CLAIM_KINDS = ("call", "put", "zcb", "up-out-call", "down-out-call", "bond-model-1", "bond-model-2", "bond-model-3")


@dataclass(frozen=True)
class ClaimSpec:
    """A claim priced by :func:`mc_price`.

    ``barrier`` is the knock-out level for barrier calls; ``default_barrier``
    is ``J`` for bond models 2 and 3; ``recovery`` is ``delta`` for model 3.
    For model 2, ``knock="in"`` pays the call leg only after a premature
    default (the terminal payoff formula); ``"out"`` pays it only without one.
    """

    kind: str
    maturity: float
    strike: float = 0.0
    barrier: float | None = None
    default_barrier: float | None = None
    recovery: float = 0.0
    knock: str = "in"

    def __post_init__(self):
        if self.kind not in CLAIM_KINDS:
            raise ValueError(f"unknown claim kind {self.kind!r}; expected one of {CLAIM_KINDS}")
        if self.kind in ("up-out-call", "down-out-call") and self.barrier is None:
            raise ValueError(f"{self.kind} needs a barrier")
        if self.kind in ("bond-model-2", "bond-model-3") and self.default_barrier is None:
            raise ValueError(f"{self.kind} needs a default barrier")
        if self.knock not in ("in", "out"):
            raise ValueError("knock must be 'in' or 'out'")

    @property
    def monitored(self) -> bool:
        return self.kind in ("up-out-call", "down-out-call", "bond-model-2", "bond-model-3")


class MCResult(NamedTuple):
    estimate: float
    stderr: float
    n_paths: int


def monitoring_grid(t: float, T: float, steps_per_unit: int) -> NDArray:
    n = max(1, int(np.ceil(steps_per_unit * (T - t) - 1e-9)))
    return np.linspace(t, T, n + 1)


def claim_payoffs(claim: ClaimSpec, paths: GridPaths, zcb=None) -> NDArray:
    """Discounted payoff per path for paths sampled on the claim's grid."""
    K = claim.strike
    sT = paths.s[:, -1]
    disc = np.exp(-paths.rint[:, -1])
    kind = claim.kind
    if kind == "call":
        return disc * np.maximum(sT - K, 0.0)
    if kind == "put":
        return disc * np.maximum(K - sT, 0.0)
    if kind == "zcb":
        return disc
    if kind == "up-out-call":
        alive = paths.s.max(axis=1) < claim.barrier
        return disc * np.maximum(sT - K, 0.0) * alive
    if kind == "down-out-call":
        alive = paths.s.min(axis=1) > claim.barrier
        return disc * np.maximum(sT - K, 0.0) * alive
    if kind == "bond-model-1":
        return disc * np.minimum(sT, K)
    J = claim.default_barrier
    if kind == "bond-model-2":
        breached = paths.s.min(axis=1) < J
        leg = breached if claim.knock == "in" else ~breached
        return disc * (np.minimum(sT, K) + np.maximum(sT - K, 0.0) * leg)
    # bond-model-3: premature default at the first monitoring time with A < J
    if zcb is None:
        raise ValueError("bond-model-3 needs a zero-coupon bond function zcb(t, i, y)")
    below = paths.s[:, :-1] < J
    hit = below.any(axis=1)
    first = np.argmax(below, axis=1)
    out = disc * np.minimum(sT, K)
    if hit.any():
        rows = np.flatnonzero(hit)
        cols = first[rows]
        tau = paths.grid[cols]
        B = zcb(tau, paths.states[rows, cols], paths.ages[rows, cols])
        out[rows] = np.exp(-paths.rint[rows, cols]) * claim.recovery * K * B
    return out


def mc_price(claim: ClaimSpec, model: RegimeModel, spec: RateSpec, state: MarketState, n_paths: int, rng,
             barrier_steps: int = BARRIER_STEPS, zcb=None, batch_size: int = DEFAULT_BATCH,
             method: str = "thinning") -> MCResult:
    """Risk-neutral Monte Carlo price of ``claim`` from ``state``.

    Barriers are monitored on a uniform grid of ``barrier_steps`` points per
    unit time (no continuity correction).  ``zcb(t, i, y)`` supplies the
    default-free bond for model-3 recoveries.
    """
    T = claim.maturity
    if not T > state.t:
        raise ValueError("maturity must exceed the valuation time")
    if claim.kind == "up-out-call" and state.s >= claim.barrier:
        return MCResult(0.0, 0.0, n_paths)
    grid = monitoring_grid(state.t, T, barrier_steps) if claim.monitored else np.array([state.t, T])
    chunks = []
    for n, gen in batch_generators(rng, n_paths, batch_size):
        paths = simulate_grid(spec, model, state, grid, n, gen, "risk_neutral", method)
        chunks.append(claim_payoffs(claim, paths, zcb))
    vals = np.concatenate(chunks)
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return MCResult(float(vals.mean()), se, int(vals.size))


def first_passage_up_mc(model: RegimeModel, spec: RateSpec, state: MarketState, barrier: float, horizon: float,
                        n_paths: int, rng, barrier_steps: int = BARRIER_STEPS,
                        batch_size: int = DEFAULT_BATCH) -> MCResult:
    """Probability that the discretely monitored asset stays below ``barrier`` up to ``state.t + horizon``."""
    grid = monitoring_grid(state.t, state.t + horizon, barrier_steps)
    chunks = []
    for n, gen in batch_generators(rng, n_paths, batch_size):
        paths = simulate_grid(spec, model, state, grid, n, gen, "risk_neutral")
        chunks.append((paths.s.max(axis=1) < barrier).astype(float))
    vals = np.concatenate(chunks)
    return MCResult(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)), int(vals.size))
