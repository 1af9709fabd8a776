"""Model configuration files: parsing, overrides, validation and object construction."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bsm import VolProfile
from .errors import ValidationError
from .model import MarketState, RegimeModel
from .rates import RateSpec
from .volterra import GridSpec

CLAIM_KINDS = ("call", "put", "zcb", "up-out-call", "down-out-call", "bond")

# allowed keys and their defaults; ``...`` marks a required key
SCHEMA: dict[str, dict[str, Any]] = {
    "rates": {"coefficients": ..., "age_cap": ...},
    "regimes": {"r": ..., "mu": ..., "kappa": None},
    "vol": {"kind": "constant", "sigma0": ..., "alpha": 0.5, "beta": 1.0, "period": 1.0},
    "claim": {"kind": "call", "strike": 1.0, "maturity": 1.0, "barrier": None, "default_barrier": None,
              "recovery": 0.0, "bond_model": 1, "knock": "in"},
    "state": {"t": 0.0, "s": 1.0, "regime": 0, "age": 0.0},
    "grid": {"n_t": 101, "n_logs": 201, "n_x": 64, "n_y": None, "s_min": None, "s_max": None, "y_max": None},
    "run": {"tol": 1e-8, "max_iter": None, "n_paths": 200_000, "seed": 20240601, "rebalance_dt": 1 / 64,
            "measure": "risk_neutral", "method": "thinning", "barrier_steps": 512, "bias_allowance": 5e-3,
            "survival": "bridge", "sim_paths": 20, "sim_horizon": None, "hedge_paths": 20,
            "hedge_cost_paths": 2000},
}


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split ``a.b=value``; the value is read as a TOML literal, else kept as a string."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if len(path) != 2:
        raise ValidationError(f"override key {key!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides:
        (section, key), value = parse_override(item)
        out.setdefault(section, {})[key] = value
    return out


def _resolve(raw: dict) -> tuple[dict, list[str]]:
    errors = []
    resolved = {}
    for section in raw:
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            errors.append(f"[{section}] must be a table")
            continue
        for key in given:
            if key not in keys:
                errors.append(f"unknown key {section}.{key}")
        res = {}
        for key, default in keys.items():
            if key in given:
                res[key] = given[key]
            elif default is ...:
                errors.append(f"missing required key {section}.{key}")
            else:
                res[key] = default
        resolved[section] = res
    return resolved, errors


@dataclass(frozen=True)
class ModelConfig:
    """Validated configuration with the objects it describes."""

    values: dict
    spec: RateSpec
    model: RegimeModel
    state: MarketState
    grid: GridSpec

    @property
    def claim(self) -> dict:
        return self.values["claim"]

    @property
    def run(self) -> dict:
        return self.values["run"]

    def digest(self) -> str:
        """SHA-256 of the resolved configuration in canonical JSON."""
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _capture(errors: list[str], build):
    try:
        return build()
    except ValidationError as exc:
        errors.extend(exc.errors)
    except (TypeError, ValueError) as exc:
        errors.append(str(exc))
    return None


def build_config(raw: dict) -> ModelConfig:
    """Validate ``raw`` (parsed TOML) and construct the model objects.

    Raises :class:`ValidationError` listing every problem found.
    """
    v, errors = _resolve(raw)
    if errors:
        raise ValidationError(errors)
    rt, rg, vo, cl, stt, gr, run = (v[s] for s in ("rates", "regimes", "vol", "claim", "state", "grid", "run"))
    spec = _capture(errors, lambda: RateSpec(np.asarray(rt["coefficients"], dtype=float), float(rt["age_cap"])))
    vol = _capture(errors, lambda: VolProfile(tuple(vo["sigma0"]), vo["kind"], float(vo["alpha"]),
                                              float(vo["beta"]), float(vo["period"])))
    model = None
    if vol is not None:
        kappa = () if rg["kappa"] is None else tuple(rg["kappa"])
        model = _capture(errors, lambda: RegimeModel(tuple(rg["r"]), tuple(rg["mu"]), vol, kappa))
    if spec is not None and model is not None:
        _capture(errors, lambda: model.check_states(spec.k))
    grid = _capture(errors, lambda: GridSpec(**{k: gr[k] for k in gr}))

    if cl["kind"] not in CLAIM_KINDS:
        errors.append(f"claim.kind must be one of {CLAIM_KINDS}, got {cl['kind']!r}")
    if not _positive(cl["maturity"]):
        errors.append("claim.maturity must be positive")
    if cl["kind"] != "zcb" and not _positive(cl["strike"]):
        errors.append("claim.strike must be positive")
    if cl["kind"] in ("up-out-call", "down-out-call") and not _positive(cl["barrier"]):
        errors.append(f"{cl['kind']} needs a positive claim.barrier")
    if cl["kind"] == "bond":
        if cl["bond_model"] not in (1, 2, 3):
            errors.append("claim.bond_model must be 1, 2 or 3")
        elif cl["bond_model"] in (2, 3):
            J = cl["default_barrier"]
            if not _positive(J) or (_positive(cl["strike"]) and not J < cl["strike"]):
                errors.append("claim.default_barrier J must satisfy 0 < J < strike")
            elif cl["bond_model"] == 3 and not 0 <= cl["recovery"] <= J / cl["strike"]:
                errors.append(f"claim.recovery must lie in [0, J/K] = [0, {J / cl['strike']:g}]")
    if cl["knock"] not in ("in", "out"):
        errors.append("claim.knock must be 'in' or 'out'")

    state = None
    k = spec.k if spec is not None else None
    if not isinstance(stt["regime"], int) or (k is not None and not 0 <= stt["regime"] < k):
        errors.append(f"state.regime must be an integer in [0, {k})")
    elif not _positive(stt["s"]) or stt["age"] < 0 or stt["t"] < 0:
        errors.append("state needs s > 0, age >= 0 and t >= 0")
    elif _positive(cl["maturity"]) and not stt["t"] < cl["maturity"]:
        errors.append("state.t must precede claim.maturity")
    else:
        state = MarketState(float(stt["t"]), float(stt["s"]), int(stt["regime"]), float(stt["age"]))

    if not _positive(run["tol"]):
        errors.append("run.tol must be positive")
    for key in ("n_paths", "barrier_steps", "sim_paths", "hedge_paths", "hedge_cost_paths"):
        if not isinstance(run[key], int) or run[key] < 1:
            errors.append(f"run.{key} must be a positive integer")
    if not isinstance(run["seed"], int) or run["seed"] < 0:
        errors.append("run.seed must be a non-negative integer")
    if not _positive(run["rebalance_dt"]):
        errors.append("run.rebalance_dt must be positive")
    if run["measure"] not in ("risk_neutral", "physical"):
        errors.append("run.measure must be 'risk_neutral' or 'physical'")
    if run["method"] not in ("thinning", "inversion"):
        errors.append("run.method must be 'thinning' or 'inversion'")
    if run["survival"] not in ("bridge", "factorized"):
        errors.append("run.survival must be 'bridge' or 'factorized'")
    if errors:
        raise ValidationError(errors)
    return ModelConfig(v, spec, model, state, grid)


def _positive(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0


def load_config(path: str | Path, overrides: list[str] = ()) -> ModelConfig:
    raw = load_toml(path)
    return build_config(apply_overrides(raw, list(overrides)))


def reference_config_path() -> Path:
    """The shipped two-regime example configuration."""
    return Path(__file__).with_name("data") / "reference.toml"
