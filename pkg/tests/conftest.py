import numpy as np
import pytest

from semimarkov_pricing import (GridSpec, MarketState, Payoff, RateSpec, RegimeModel, VolProfile, solve_barrier_uo,
                                solve_vanilla, solve_zcb)

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def emit(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[ACCEPTANCE_KEY].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return emit


# two-regime reference market: Lambda(y) = L1 + y L2
L1 = np.array([[0.0, 1.0], [2.0, 0.0]])
L2 = np.array([[0.0, 0.5], [0.5, 0.0]])


@pytest.fixture(scope="session")
def ref_spec():
    return RateSpec(np.stack([L1, L2]), age_cap=10.0)


@pytest.fixture(scope="session")
def ref_model():
    return RegimeModel((0.03, 0.07), (0.10, 0.10), VolProfile((0.15, 0.35)))


@pytest.fixture(scope="session")
def deg_model():
    """Both regimes share r and sigma, so prices reduce to Black-Scholes."""
    return RegimeModel((0.05, 0.05), (0.10, 0.10), VolProfile((0.2, 0.2)))


@pytest.fixture(scope="session")
def spec3():
    c0 = np.array([[0.0, 0.6, 0.4], [0.3, 0.0, 0.9], [1.2, 0.2, 0.0]])
    c1 = np.array([[0.0, 0.8, 0.0], [0.0, 0.0, 0.4], [0.1, 0.5, 0.0]])
    return RateSpec(np.stack([c0, c1]), age_cap=5.0)


@pytest.fixture(scope="session")
def atm():
    return MarketState(0.0, 1.0, 0, 0.0)


@pytest.fixture(scope="session")
def ref_call(ref_model, ref_spec):
    return solve_vanilla(ref_model, ref_spec, Payoff.call(1.0), 1.0)


@pytest.fixture(scope="session")
def ref_put(ref_model, ref_spec):
    return solve_vanilla(ref_model, ref_spec, Payoff.put(1.0), 1.0)


@pytest.fixture(scope="session")
def deg_call(deg_model, ref_spec):
    return solve_vanilla(deg_model, ref_spec, Payoff.call(1.0), 1.0)


@pytest.fixture(scope="session")
def ref_zcb(ref_model, ref_spec):
    return solve_zcb(ref_model, ref_spec, 1.0)


@pytest.fixture(scope="session")
def ref_uo(ref_model, ref_spec):
    return solve_barrier_uo(ref_model, ref_spec, 1.0, 1.3, 1.0)


@pytest.fixture(scope="session")
def coarse():
    return GridSpec(n_t=41, n_logs=81)
