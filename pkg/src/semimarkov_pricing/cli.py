"""Command-line front end.

Exit status: 0 success, 1 cross-check mismatch or unexpected failure,
2 invalid configuration or state, 3 solver did not converge.  A
``manifest.json`` is written to the output directory on every path.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import bonds, hedging
from .bsm import Payoff
from .config import ModelConfig, load_config
from .errors import AlreadyDefaultedError, ConvergenceError, UnsupportedModelError, ValidationError
from .simulation import ClaimSpec, mc_price, simulate_asset, simulate_chain, simulate_grid
from .volterra import solve_barrier, solve_vanilla, solve_zcb

log = logging.getLogger("semimarkov_pricing")

COMMANDS = ("validate", "simulate", "price", "hedge", "bond", "crosscheck")
EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NOCONV = 0, 1, 2, 3


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if x is None or x == "":
        return ""
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


class Run:
    """State shared by one CLI invocation; collects what goes into the manifest."""

    def __init__(self, command: str, cfg: ModelConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.outputs: list[str] = []
        self.results: dict = {}
        self.residuals: dict[str, list[float]] = {}

    @property
    def seed(self) -> int:
        return int(self.cfg.run["seed"])

    def child_seeds(self, n: int) -> list[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed).spawn(n)

    def csv(self, name: str, header, rows) -> None:
        write_csv(self.out / name, header, rows)
        self.outputs.append(name)

    # -- solvers --------------------------------------------------------
    def surface(self, kind: str | None = None):
        cfg, cl, run = self.cfg, self.cfg.claim, self.cfg.run
        kind = kind or cl["kind"]
        K, T = float(cl["strike"]), float(cl["maturity"])
        if kind in ("call", "put"):
            payoff = Payoff.call(K) if kind == "call" else Payoff.put(K)
            surf = solve_vanilla(cfg.model, cfg.spec, payoff, T, cfg.grid, run["tol"], run["max_iter"])
        elif kind in ("up-out-call", "down-out-call"):
            surf = solve_barrier(cfg.model, cfg.spec, K, float(cl["barrier"]), T,
                                 "up" if kind == "up-out-call" else "down", cfg.grid, run["tol"], run["max_iter"],
                                 survival=run["survival"])
        else:
            raise ValidationError(f"claim kind {kind!r} has no price surface")
        self.residuals[kind] = surf.residuals
        log.info("%s: %d iterations, last change %.3e", kind, surf.iterations, surf.residuals[-1])
        return surf

    def bond_surfaces(self):
        cl, cfg = self.cfg.claim, self.cfg
        model_no = cl["bond_model"]
        J = None if model_no == 1 else float(cl["default_barrier"])
        bs = bonds.solve_bond_surfaces(cfg.model, cfg.spec, float(cl["strike"]), float(cl["maturity"]), J,
                                       cfg.grid, cfg.run["tol"], with_down_out=model_no == 2)
        self.residuals.update({"call": bs.call.residuals, "put": bs.put.residuals, "zcb": bs.zcb.residuals})
        if bs.down_out is not None:
            self.residuals["down-out-call"] = bs.down_out.residuals
        return bs


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------
def cmd_validate(run: Run) -> int:
    cfg = run.cfg
    run.results = {"states": cfg.spec.k, "degree": cfg.spec.degree, "claim": cfg.claim["kind"],
                   "embedded_chain_irreducible": bool(cfg.spec.embedded_matrix().irreducible)}
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    cfg, r = run.cfg, run.cfg.run
    st = cfg.state
    horizon = float(r["sim_horizon"] if r["sim_horizon"] is not None else cfg.claim["maturity"])
    if not horizon > st.t:
        raise ValidationError("run.sim_horizon must exceed state.t")
    rows = []
    for p, child in enumerate(run.child_seeds(int(r["sim_paths"]))):
        gen = np.random.Generator(np.random.PCG64(child))
        path = simulate_chain(cfg.spec, st.i, st.y, horizon, gen, r["method"], st.t)
        path = simulate_asset(path, cfg.model, st.s, r["measure"], gen)
        price = dict(zip(path.asset_times.tolist(), path.asset_values.tolist()))
        rows.append((p, st.t, st.i, st.y, st.s))
        prev_t, prev_state, prev_age0 = st.t, st.i, st.y
        for t, j in path.transitions:
            rows.append((p, t, j, prev_age0 + t - prev_t, price[t]))
            prev_t, prev_state, prev_age0 = t, j, 0.0
        rows.append((p, horizon, prev_state, prev_age0 + horizon - prev_t, price[horizon]))
    run.csv("paths.csv", ["path_id", "event_time", "state", "age_before", "price"], rows)
    run.results = {"paths": int(r["sim_paths"]), "horizon": horizon}
    return EXIT_OK


def cmd_price(run: Run) -> int:
    cfg, st = run.cfg, run.cfg.state
    kind = cfg.claim["kind"]
    if kind == "bond":
        raise ValidationError("use the bond command for claim.kind = 'bond'")
    rows = []
    if kind == "zcb":
        z = solve_zcb(cfg.model, cfg.spec, float(cfg.claim["maturity"]))
        run.residuals["zcb"] = z.residuals
        for n, t in enumerate(z.t):
            for i in range(cfg.spec.k):
                rows.append((t, 0.0, i, 0.0, z.zero_slice[n, i]))
        value = float(z(st.t, st.i, st.y))
    else:
        surf = run.surface()
        g = surf.grid
        for n, t in enumerate(g.t):
            for m, s in enumerate(g.s):
                for i in range(cfg.spec.k):
                    rows.append((t, s, i, 0.0, surf.zero_slice[n, m, i]))
        value = float(surf.evaluate(st.t, st.s, st.i, st.y)[0])
    rows.append((st.t, st.s, st.i, st.y, value))
    run.csv("surface.csv", ["t", "s", "state", "age", "value"], rows)
    run.results = {"claim": kind, "value": value, "state": list(st)}
    return EXIT_OK


def cmd_hedge(run: Run) -> int:
    cfg, r, st = run.cfg, run.cfg.run, run.cfg.state
    surf = run.surface()
    grid = hedging._time_grid(st.t, surf.maturity, float(r["rebalance_dt"]))
    path_seed, cost_seed = run.child_seeds(2)
    paths = simulate_grid(cfg.spec, cfg.model, st, grid, int(r["hedge_paths"]), path_seed, r["measure"], r["method"])
    xi, eps, value = hedging.strategy_on_paths(surf, paths)
    rows = []
    for p in range(paths.s.shape[0]):
        for q, t in enumerate(grid):
            rows.append((p, t, paths.s[p, q], paths.states[p, q], paths.ages[p, q], xi[p, q], eps[p, q],
                         value[p, q]))
    run.csv("hedge.csv", ["path_id", "t", "s", "state", "age", "xi", "eps", "value"], rows)
    cost = hedging.pnl_simulate(surf, st, int(r["hedge_cost_paths"]), float(r["rebalance_dt"]), cost_seed,
                                r["measure"])
    start = hedging.strategy_at(surf, st)
    run.results = {"xi0": start.xi, "eps0": start.eps, "value0": start.value,
                   "hedge_cost_mean": cost.mean, "hedge_cost_stderr": cost.stderr,
                   "hedge_cost_sd": float(cost.cost.std(ddof=1)) if cost.cost.size > 1 else 0.0}
    return EXIT_OK


def _bond_rows(run: Run):
    cfg, cl, st = run.cfg, run.cfg.claim, run.cfg.state
    model_no = cl["bond_model"]
    bs = run.bond_surfaces()
    if model_no == 1:
        debt, equity = bonds.price_model1(bs, st)
        se = None
    elif model_no == 2:
        debt = bonds.price_model2(bs, st, cl["knock"])
        equity, se = bonds.equity_model2(bs, st, cl["knock"]), None
    else:
        res = bonds.price_model3(bs, cfg.model, cfg.spec, st, float(cl["recovery"]), int(cfg.run["n_paths"]),
                                 run.child_seeds(1)[0], int(cfg.run["barrier_steps"]))
        debt, equity, se = res.estimate, None, res.stderr
    return bs, (model_no, st.t, st.s, st.i, st.y, debt, equity, se, bonds.riskless_debt(bs, st))


def cmd_bond(run: Run) -> int:
    if run.cfg.claim["kind"] != "bond":
        raise ValidationError("the bond command needs claim.kind = 'bond'")
    _, row = _bond_rows(run)
    run.csv("bond.csv", ["model", "t", "s", "state", "age", "debt", "equity", "stderr", "riskless"], [row])
    run.results = dict(zip(["model", "t", "s", "state", "age", "debt", "equity", "stderr", "riskless"], row))
    return EXIT_OK


def cmd_crosscheck(run: Run) -> int:
    cfg, cl, r, st = run.cfg, run.cfg.claim, run.cfg.run, run.cfg.state
    kind = cl["kind"]
    T, K = float(cl["maturity"]), float(cl["strike"])
    seed = run.child_seeds(1)[0]
    n, steps = int(r["n_paths"]), int(r["barrier_steps"])
    bias = 0.0
    zcb = None
    if kind in ("call", "put", "up-out-call", "down-out-call"):
        solver = float(run.surface().evaluate(st.t, st.s, st.i, st.y)[0])
        claim = ClaimSpec(kind, T, K, barrier=cl["barrier"])
        bias = float(r["bias_allowance"]) if claim.monitored else 0.0
    elif kind == "zcb":
        z = solve_zcb(cfg.model, cfg.spec, T)
        run.residuals["zcb"] = z.residuals
        solver = float(z(st.t, st.i, st.y))
        claim = ClaimSpec("zcb", T)
    else:
        model_no = cl["bond_model"]
        bs, row = _bond_rows(run)
        zcb = bs.zcb
        claim = ClaimSpec(f"bond-model-{model_no}", T, K, default_barrier=cl["default_barrier"],
                          recovery=float(cl["recovery"]), knock=cl["knock"])
        if model_no == 3:
            # no independent solver: check the riskless bound instead
            solver = row[-1]
        else:
            solver = row[5]
            bias = float(r["bias_allowance"]) if model_no == 2 else 0.0
    mc = mc_price(claim, cfg.model, cfg.spec, st, n, seed, steps, zcb=zcb, method=r["method"])
    diff = solver - mc.estimate
    allowance = 3.0 * mc.stderr + bias
    ok = mc.estimate <= solver + allowance if claim.kind == "bond-model-3" else abs(diff) <= allowance
    run.csv("crosscheck.csv", ["claim", "t", "s", "state", "age", "solver", "mc", "stderr", "diff", "allowance", "pass"],
            [(claim.kind, st.t, st.s, st.i, st.y, solver, mc.estimate, mc.stderr, diff, allowance, int(ok))])
    run.results = {"claim": claim.kind, "solver": solver, "mc": mc.estimate, "stderr": mc.stderr, "diff": diff,
                   "allowance": allowance, "pass": bool(ok)}
    return EXIT_OK if ok else EXIT_FAIL


HANDLERS = {"validate": cmd_validate, "simulate": cmd_simulate, "price": cmd_price, "hedge": cmd_hedge,
            "bond": cmd_bond, "crosscheck": cmd_crosscheck}


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semimarkov-pricing",
                                description="Price and hedge claims under age-dependent regime switching.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML model configuration")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. --set claim.strike=1.1 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    manifest = {"command": args.command, "config_path": str(args.config), "overrides": overrides,
                "versions": _versions(), "errors": [], "outputs": [], "results": {}, "residual_history": {}}
    run = None
    try:
        cfg = load_config(args.config, overrides)
        manifest.update(config_sha256=cfg.digest(), seed=int(cfg.run["seed"]), config=cfg.values)
        run = Run(args.command, cfg, out)
        code = HANDLERS[args.command](run)
        status = "ok" if code == EXIT_OK else "crosscheck_failed"
    except (ValidationError, AlreadyDefaultedError, UnsupportedModelError) as exc:
        code, status = EXIT_INVALID, "invalid"
        manifest["errors"] = list(getattr(exc, "errors", [str(exc)]))
    except ConvergenceError as exc:
        code, status = EXIT_NOCONV, "not_converged"
        manifest["errors"] = [str(exc)]
        manifest["residual_history"]["failed"] = exc.history
    except FileNotFoundError as exc:
        code, status = EXIT_INVALID, "invalid"
        manifest["errors"] = [f"config file not found: {exc.filename}"]
    except Exception as exc:  # noqa: BLE001 - report every failure in the manifest
        code, status = EXIT_FAIL, "error"
        manifest["errors"] = [f"{type(exc).__name__}: {exc}"]
    if run is not None:
        manifest["outputs"] = run.outputs
        manifest["results"] = run.results
        manifest["residual_history"].update(run.residuals)
    manifest["status"], manifest["exit_code"] = status, code
    _write_manifest(out, manifest)
    if manifest["errors"]:
        print(json.dumps({"status": status, "errors": manifest["errors"]}), file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
