import csv
import json
import subprocess
import sys

import pytest

from semimarkov_pricing import load_config, reference_config_path
from semimarkov_pricing.cli import main
from semimarkov_pricing.config import parse_override

REF = str(reference_config_path())
FAST = ["--set", "grid.n_t=41", "--set", "grid.n_logs=81", "--set", "run.n_paths=20000"]


def run_cli(tmp_path, command, *extra, name="out"):
    out = tmp_path / name
    code = main([command, "--config", REF, "--out", str(out), *extra])
    manifest = json.loads((out / "manifest.json").read_text())
    return code, out, manifest


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_reference_config_loads():
    cfg = load_config(REF)
    assert cfg.spec.k == 2 and cfg.claim["kind"] == "call"
    assert cfg.model.r == (0.03, 0.07)


def test_override_parsing():
    assert parse_override("claim.strike=1.1") == (["claim", "strike"], 1.1)
    assert parse_override("claim.kind=put") == (["claim", "kind"], "put")
    assert parse_override("regimes.r=[0.05, 0.05]") == (["regimes", "r"], [0.05, 0.05])


def test_validate_ok(tmp_path):
    code, _, man = run_cli(tmp_path, "validate")
    assert code == 0 and man["status"] == "ok" and man["results"]["states"] == 2
    assert len(man["config_sha256"]) == 64 and man["seed"] == 20240601


def test_validate_negative_coefficient_names_entry(tmp_path):
    code, _, man = run_cli(tmp_path, "validate", "--set", "rates.coefficients=[[[0,1],[2,0]],[[0,-0.5],[0.5,0]]]")
    assert code == 2 and man["status"] == "invalid"
    assert any("(0,1,1)" in e for e in man["errors"])


def test_unknown_key_rejected(tmp_path):
    code, _, man = run_cli(tmp_path, "validate", "--set", "claim.colour=blue")
    assert code == 2 and any("colour" in e for e in man["errors"])


def test_missing_config_still_writes_manifest(tmp_path):
    out = tmp_path / "o"
    code = main(["validate", "--config", str(tmp_path / "nope.toml"), "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    assert code == 2 and man["exit_code"] == 2 and man["errors"]


def test_convergence_failure_exit_code(tmp_path):
    code, _, man = run_cli(tmp_path, "price", "--set", "run.max_iter=2", *FAST[:4])
    assert code == 3 and man["status"] == "not_converged"
    assert len(man["residual_history"]["failed"]) == 2


def test_simulate_writes_paths(tmp_path):
    code, out, man = run_cli(tmp_path, "simulate", "--set", "run.sim_paths=5")
    rows = read_rows(out / "paths.csv")
    assert code == 0 and "paths.csv" in man["outputs"]
    assert set(rows[0]) == {"path_id", "event_time", "state", "age_before", "price"}
    assert {int(r["path_id"]) for r in rows} == set(range(5))


def test_price_identical_regimes_matches_black_scholes(tmp_path):
    code, out, man = run_cli(tmp_path, "price", "--set", "regimes.r=[0.05, 0.05]",
                             "--set", "vol.sigma0=[0.2, 0.2]")
    rows = read_rows(out / "surface.csv")
    assert code == 0
    at_money = [r for r in rows if float(r["t"]) == 0.0 and abs(float(r["s"]) - 1.0) < 1e-12]
    assert len(at_money) == 3     # both regimes on the grid plus the requested state
    for r in at_money:
        assert float(r["value"]) == pytest.approx(0.104506, rel=5e-3)
    assert man["results"]["value"] == pytest.approx(0.104506, rel=5e-3)


def test_price_zcb(tmp_path):
    code, out, man = run_cli(tmp_path, "price", "--set", "claim.kind=zcb")
    assert code == 0 and 0.9 < man["results"]["value"] < 1.0
    assert "zcb" in man["residual_history"]


def test_hedge_writes_strategy(tmp_path):
    code, out, man = run_cli(tmp_path, "hedge", *FAST[:4], "--set", "run.hedge_paths=3",
                             "--set", "run.hedge_cost_paths=200", "--set", "run.rebalance_dt=0.125")
    rows = read_rows(out / "hedge.csv")
    assert code == 0 and len(rows) == 3 * 9
    for r in rows:
        if float(r["t"]) == 1.0:
            assert float(r["value"]) == pytest.approx(max(float(r["s"]) - 1.0, 0.0), abs=1e-12)
    assert {"hedge_cost_mean", "hedge_cost_stderr", "xi0"} <= set(man["results"])


@pytest.mark.parametrize("model", [1, 2, 3])
def test_bond_command(tmp_path, model):
    code, out, man = run_cli(tmp_path, "bond", *FAST, "--set", "claim.kind=bond",
                             "--set", f"claim.bond_model={model}", "--set", "run.n_paths=2000")
    rows = read_rows(out / "bond.csv")
    assert code == 0 and len(rows) == 1
    assert 0 < float(rows[0]["debt"]) <= float(rows[0]["riskless"]) + (1.0 if model == 2 else 1e-12)
    assert (rows[0]["stderr"] != "") == (model == 3)


def test_bond_command_rejects_defaulted_state(tmp_path):
    code, _, man = run_cli(tmp_path, "bond", *FAST, "--set", "claim.kind=bond", "--set", "claim.bond_model=2",
                           "--set", "state.s=0.6")
    assert code == 2 and man["status"] == "invalid"


@pytest.mark.parametrize("kind", ["call", "zcb", "up-out-call"])
def test_crosscheck_passes(tmp_path, kind):
    code, out, man = run_cli(tmp_path, "crosscheck", *FAST, "--set", f"claim.kind={kind}")
    row = read_rows(out / "crosscheck.csv")[0]
    assert code == 0 and row["pass"] == "1" and man["results"]["pass"] is True


def test_crosscheck_detects_mismatch(tmp_path):
    # a far too coarse solver grid on a long maturity cannot agree with a large MC run
    code, out, man = run_cli(tmp_path, "crosscheck", "--set", "grid.n_t=3", "--set", "grid.n_logs=5",
                             "--set", "grid.n_x=4", "--set", "run.n_paths=100000")
    assert code == 1 and man["status"] == "crosscheck_failed"
    assert read_rows(out / "crosscheck.csv")[0]["pass"] == "0"


def test_outputs_are_byte_identical(tmp_path):
    args = (*FAST, "--set", "claim.kind=up-out-call")
    a = run_cli(tmp_path, "crosscheck", *args, name="a")[1]
    b = run_cli(tmp_path, "crosscheck", *args, name="b")[1]
    assert (a / "crosscheck.csv").read_bytes() == (b / "crosscheck.csv").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["results"] == mb["results"] and ma["config_sha256"] == mb["config_sha256"]


def test_seed_flag_changes_mc(tmp_path):
    a = run_cli(tmp_path, "crosscheck", *FAST, "--seed", "1", name="a")[2]
    b = run_cli(tmp_path, "crosscheck", *FAST, "--seed", "2", name="b")[2]
    assert a["seed"] == 1 and b["seed"] == 2 and a["results"]["mc"] != b["results"]["mc"]
    assert a["results"]["solver"] == b["results"]["solver"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "semimarkov_pricing", "validate", "--config", REF,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "validate"
