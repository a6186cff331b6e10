import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from npupg import cli
from npupg.sim import SimulationError

ROOT = Path(__file__).resolve().parents[1]
MANIFESTS = sorted((ROOT / "manifests").glob("*.toml"))
GOLDEN = Path(__file__).parent / "golden"


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def tree(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def manifest_command(path: Path) -> str:
    name = path.stem
    return "sweep" if "sweep" in name else "analyze" if "analyze" in name else \
        "carbon" if "carbon" in name else "simulate"


# -- simulate --------------------------------------------------------------

def test_simulate_two_policies_golden(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--chip", "npu-d", "--workload", "llm-decode", "--policy", "nopg,hwsw",
               "--out", out) == 0
    runs = sorted(p.name for p in (out / "runs").iterdir())
    assert runs == ["llm-decode__npu-d__hwsw.json", "llm-decode__npu-d__nopg.json"]
    for name in ("comparison.csv", "metrics.csv"):
        got = (out / name).read_text()
        golden = GOLDEN / "simulate-decode" / name
        if os.environ.get("NPUPG_REGEN_GOLDEN"):
            golden.parent.mkdir(parents=True, exist_ok=True)
            golden.write_text(got)
        assert got == golden.read_text(), f"{name} drifted from the golden copy"
    rows = read_csv(out / "comparison.csv")
    assert [r["policy"] for r in rows] == ["nopg", "hwsw"]
    assert float(rows[1]["savings_vs_nopg"]) > 0


def test_missing_workload_file_exit_2(tmp_path, capsys):
    assert run("simulate", "--workload", tmp_path / "nope.toml", "--out", tmp_path) == 2
    assert "npupg: error [" in capsys.readouterr().err


def test_unknown_policy_exit_2(tmp_path):
    assert run("simulate", "--policy", "turbo", "--out", tmp_path) == 2


def test_simulation_error_exit_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SimulationError("ready bits never set")
    monkeypatch.setattr(cli, "run_policies", boom)
    assert run("simulate", "--policy", "nopg", "--out", tmp_path) == 3
    err = capsys.readouterr().err
    assert "sim.SimulationError" in err and "ready bits" in err


def test_ideal_only_zero_transition_energy(tmp_path):
    assert run("simulate", "--policy", "ideal", "--out", tmp_path) == 0
    (report,) = (tmp_path / "runs").iterdir()
    d = json.loads(report.read_text())
    assert d["energy"]["transition_j"] == 0
    assert not (tmp_path / "comparison.csv").exists()


def test_every_row_carries_parameters(tmp_path):
    assert run("simulate", "--policy", "nopg,hw", "--out", tmp_path) == 0
    keys = {"workload", "chip", "vu_granularity", "leakage", "sram_sleep", "delay_multiplier"}
    for name in ("metrics.csv", "comparison.csv"):
        for row in read_csv(tmp_path / name):
            assert keys <= row.keys() and all(row[k] != "" for k in keys)


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("NPUPG_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert run("simulate", "--policy", "nopg") == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_events_and_plots_opt_in(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--policy", "nopg,hw", "--out", out) == 0
    assert not (out / "events").exists() and not (out / "plots").exists()
    assert run("simulate", "--policy", "nopg,hw", "--out", out, "--events", "--plot") == 0
    assert (out / "events" / "llm-decode__npu-d__hw.csv").exists()
    png = out / "plots" / "policy_energy.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# -- analyze ---------------------------------------------------------------

def _util(tmp_path, workload):
    assert run("analyze", "--workload", workload, "--out", tmp_path) == 0
    (row,) = read_csv(tmp_path / "utilization.csv")
    return {k: float(v) for k, v in row.items() if k not in ("workload", "chip", "policy")}


def test_analyze_prefill(tmp_path):
    u = _util(tmp_path, "llm-prefill")
    assert u["sa_temporal"] > 0.5
    assert u["hbm_idle"] > 0.5


def test_analyze_dlrm_sa_near_zero(tmp_path):
    # desk-scale tables cannot reach the production-scale rounding level; see the ledger
    assert _util(tmp_path, "dlrm")["sa_temporal"] < 0.05


def test_dlrm_sa_share_shrinks_with_embedding_traffic(tmp_path):
    text = (ROOT / "src" / "npupg" / "presets" / "workloads" / "dlrm.toml").read_text()
    got = []
    for pooling in (20, 80, 320):
        spec = tmp_path / f"dlrm{pooling}.toml"
        spec.write_text(text.replace("pooling = 80", f"pooling = {pooling}"))
        got.append(_util(tmp_path / str(pooling), spec)["sa_temporal"])
    assert got == sorted(got, reverse=True) and got[-1] < 0.02


def test_analyze_empty_graph(tmp_path):
    spec = tmp_path / "empty.toml"
    spec.write_text('[model]\nfamily = "synthetic"\n')
    u = _util(tmp_path, spec)
    assert all(v == 0 for v in u.values())


def test_analyze_outputs(tmp_path):
    assert run("analyze", "--workload", "dlrm", "--out", tmp_path) == 0
    shares = read_csv(tmp_path / "energy_shares.csv")
    total = sum(float(r["static_share"]) + float(r["dynamic_share"]) for r in shares)
    assert 0.9 < total <= 1 + 1e-9  # transitions take the rest
    hist = read_csv(tmp_path / "sram_demand.csv")
    assert sum(float(r["fraction"]) for r in hist) == pytest.approx(1)


# -- sweep -----------------------------------------------------------------

def test_sweep_leakage_monotone(tmp_path):
    assert run("sweep", "--policy", "hw,hwsw", "--leakage", "0.03,0.05,0.10", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 3 * 3  # nopg is always added as the baseline
    assert all(r["monotone_in_leakage"] == "true" for r in rows)
    for pol in ("hw", "hwsw"):
        s = [float(r["savings_vs_nopg"]) for r in sorted((r for r in rows if r["policy"] == pol),
                                                          key=lambda r: float(r["leakage"]))]
        assert s == sorted(s, reverse=True)
    assert len(list((tmp_path / "cells").glob("cell*.json"))) == 3


def test_sweep_delay_multiplier_hwsw_overhead(tmp_path):
    assert run("sweep", "--policy", "hwsw", "--delay-multiplier", "1,2,4", "--out", tmp_path) == 0
    rows = [r for r in read_csv(tmp_path / "sweep.csv") if r["policy"] == "hwsw"]
    assert sorted(float(r["delay_multiplier"]) for r in rows) == [1, 2, 4]
    for r in rows:
        assert float(r["runtime_overhead"]) <= 0.005, r["delay_multiplier"]


def test_single_cell_sweep_equals_simulate(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("sweep", "--policy", "nopg,hwsw", "--leakage", "0.03", "--out", a) == 0
    assert run("simulate", "--policy", "nopg,hwsw", "--out", b) == 0
    sweep = read_csv(a / "sweep.csv")
    sim = read_csv(b / "comparison.csv")
    assert sweep == sim


def test_sweep_parallel_matches_serial(tmp_path):
    args = ("sweep", "--policy", "hwsw", "--leakage", "0.03,0.10")
    assert run(*args, "--jobs", "1", "--out", tmp_path / "s") == 0
    assert run(*args, "--jobs", "2", "--out", tmp_path / "p") == 0
    assert tree(tmp_path / "s") == tree(tmp_path / "p")


def test_sweep_without_axis_exit_2(tmp_path):
    assert run("sweep", "--out", tmp_path) == 2


# -- carbon, dump-program, validate-config --------------------------------

def test_carbon_from_fixed_energy(tmp_path):
    assert run("carbon", "--energy-kwh-per-year", "1000", "--embodied", "0", "--horizon", "5",
               "--efficiency-ratio", "0.8", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "carbon_nopg.csv")
    assert [int(r["lifespan"]) for r in rows] == [1, 2, 3, 4, 5]
    assert rows[0]["is_optimal"] == "1"
    summary = json.loads((tmp_path / "carbon.json").read_text())
    assert summary["optimal_lifespan_policy"] >= summary["optimal_lifespan_nopg"]


def test_dump_program_listing(capsys):
    assert run("dump-program", "--workload", "llm-decode", "--instrument") == 0
    text = capsys.readouterr().out
    assert "setpm" in text and "sa.push" in text.lower() or "push" in text.lower()


def test_validate_config(capsys):
    paths = [ROOT / "src" / "npupg" / "presets" / "chips" / "npu-d.toml", *MANIFESTS]
    paths = [p for p in paths if p.exists()]
    assert run("validate-config", *paths) == 0
    assert capsys.readouterr().out.count(": ok (") == len(paths)


def test_validate_config_bad_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[chip]\nname = 'x'\n")
    assert run("validate-config", bad) == 2


def test_help_documents_every_flag():
    ap = cli.build_parser()
    for action in ap._subparsers._group_actions:
        for name, sp in action.choices.items():
            for a in sp._actions:
                if a.option_strings and a.dest != "help":
                    assert a.help, f"{name} {a.option_strings} has no help"
    r = subprocess.run([sys.executable, "-m", "npupg", "simulate", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "--bet-override" in r.stdout


# -- bundled manifests -----------------------------------------------------

@pytest.mark.parametrize("manifest", MANIFESTS, ids=lambda p: p.stem)
def test_bundled_manifest_is_deterministic(tmp_path, manifest):
    cmd = manifest_command(manifest)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(cmd, "--manifest", manifest, "--out", out) == 0
        outs.append(tree(out))
    assert outs[0] and outs[0] == outs[1]
