"""Command-line entry point: simulate, analyze, sweep, carbon, dump-program, validate-config."""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli

from . import report as rep
from .carbon import CarbonParams, cooling_cost, lifespan_sweep
from .chip import ConfigError, FleetParams, PowerParams, parse_chip_config, resolve_chip
from .controllers import PolicyViolation
from .program import ProgramError, dumps, lower
from .sim import (POLICIES, SimulationError, compare_policies, duty_cycle_adjust, prepare_program,
                  run_policies)
from .workload import (WorkloadError, build_model_graph, parse_model_spec, resolve_workload,
                       tile_and_fuse)

log = logging.getLogger("npupg")

ENV_OUTPUT_DIR = "NPUPG_OUTPUT_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_SIMULATION = 0, 2, 3
SECONDS_PER_YEAR = 365.25 * 86400
SWEEP_AXES = ("leakage", "sram_sleep", "delay_multiplier")
FORMATS = ("json", "csv")


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    name: str = "run"
    chips: list = field(default_factory=lambda: ["npu-d"])
    workloads: list = field(default_factory=lambda: ["llm-decode"])
    policies: list = field(default_factory=lambda: list(POLICIES))
    vu_granularity: str = "block"
    power: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    fleet: dict = field(default_factory=dict)
    carbon: dict = field(default_factory=dict)
    output_dir: str = ""
    formats: list = field(default_factory=lambda: list(FORMATS))
    events: bool = False
    plot: bool = False
    plot_dir: str = ""
    jobs: int = 1

    def validate(self) -> "RunManifest":
        if not self.policies:
            raise ManifestError("manifest needs at least one policy")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ManifestError(f"unknown policy {bad[0]!r}; expected one of {', '.join(POLICIES)}")
        if not self.chips or not self.workloads:
            raise ManifestError("manifest needs at least one chip and one workload")
        if self.vu_granularity not in ("block", "stream"):
            raise ManifestError("vu_granularity must be 'block' or 'stream'")
        if set(self.formats) - set(FORMATS):
            raise ManifestError(f"formats must be among {', '.join(FORMATS)}")
        unknown = set(self.sweep) - set(SWEEP_AXES) - {"chips", "workloads"}
        if unknown:
            raise ManifestError(f"unknown sweep axis {sorted(unknown)[0]!r}")
        if self.jobs < 1:
            raise ManifestError("jobs must be >= 1")
        for c in self.chips:
            resolve_chip(c)
        for w in self.workloads:
            resolve_workload(w)
        power_params(self, resolve_chip(self.chips[0])[1])
        fleet_params(self, FleetParams())
        return self


def load_manifest(path) -> RunManifest:
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"manifest not found: {p}")
    try:
        doc = tomli.loads(p.read_text())
    except tomli.TOMLDecodeError as e:
        raise ManifestError(f"malformed manifest {p}: {e}") from None
    return manifest_from_doc(doc, base=p.parent)


def manifest_from_doc(doc: dict, base: Path | None = None) -> RunManifest:
    run = doc.get("run", {})
    out = doc.get("output", {})

    def listify(v):
        return [v] if isinstance(v, str) else list(v)

    def resolve_path(s: str) -> str:
        # relative file references resolve against the manifest's directory
        if base is not None and s.endswith(".toml") and not Path(s).is_absolute():
            return str((base / s).resolve())
        return s

    m = RunManifest()
    m.name = str(run.get("name", m.name))
    if "chip" in run or "chips" in run:
        m.chips = [resolve_path(c) for c in listify(run.get("chips", run.get("chip")))]
    if "workload" in run or "workloads" in run:
        m.workloads = [resolve_path(w) for w in listify(run.get("workloads", run.get("workload")))]
    if "policies" in run:
        m.policies = listify(run["policies"])
    m.vu_granularity = str(run.get("vu_granularity", m.vu_granularity))
    m.power = dict(doc.get("power", {}))
    m.sweep = dict(doc.get("sweep", {}))
    m.fleet = dict(doc.get("fleet", {}))
    m.carbon = dict(doc.get("carbon", {}))
    m.output_dir = str(out.get("dir", ""))
    if m.output_dir and base is not None and not Path(m.output_dir).is_absolute():
        m.output_dir = str(base / m.output_dir)
    m.formats = listify(out.get("formats", m.formats))
    m.events = bool(out.get("events", False))
    m.plot = bool(out.get("plot", False))
    m.plot_dir = str(out.get("plot_dir", ""))
    m.jobs = int(run.get("jobs", 1))
    return m


def power_params(m: RunManifest, pp: PowerParams) -> PowerParams:
    kw = {}
    for k, v in m.power.items():
        if k in ("bet", "wakeup_delay", "static_w", "dynamic_pj", "idle_threshold"):
            kw[k] = {**getattr(pp, k), **v}
        else:
            kw[k] = v
    try:
        return pp.with_overrides(**kw) if kw else pp
    except TypeError as e:
        raise ManifestError(f"power override: {e}") from None


def fleet_params(m: RunManifest, fleet: FleetParams) -> FleetParams:
    try:
        return replace(fleet, **m.fleet) if m.fleet else fleet
    except TypeError as e:
        raise ManifestError(f"fleet override: {e}") from None


def _slug(s: str) -> str:
    return Path(s).stem.lower() if s.endswith(".toml") else s.lower()


# -- cells -----------------------------------------------------------------

def run_cell(cell: dict) -> dict:
    """Simulate one (workload, chip, sensitivity) cell under every requested policy."""
    chip, pp, fleet = resolve_chip(cell["chip"])
    m = cell["manifest"]
    pp = power_params(m, pp)
    fleet = fleet_params(m, fleet)
    if cell.get("leakage") is not None:
        pp = pp.with_overrides(leakage_logic_off=float(cell["leakage"]))
    if cell.get("sram_sleep") is not None:
        pp = pp.with_overrides(leakage_sram_sleep=float(cell["sram_sleep"]))
    if cell.get("delay_multiplier") is not None:
        pp = pp.scale_delays(float(cell["delay_multiplier"]))
    spec = resolve_workload(cell["workload"])
    wl = _slug(cell["workload"])
    graph = build_model_graph(spec)
    plans = tile_and_fuse(graph, chip)
    prog = lower(plans, graph, chip, vu_granularity=m.vu_granularity)
    policies = list(m.policies)
    reports = run_policies(prog, chip, pp, policies, wl, plans)
    params = {"workload": wl, "chip": chip.name, "vu_granularity": m.vu_granularity,
              "leakage": pp.leakage_logic_off, "sram_sleep": pp.leakage_sram_sleep,
              "delay_multiplier": float(cell.get("delay_multiplier") or 1.0)}
    comparison = []
    if len(policies) >= 2:
        comparison = compare_policies(prog, chip, pp, policies, wl, plans, reports)
        base = reports.get("nopg")
        fe_base = duty_cycle_adjust(base, fleet, pp, chip) if base else None
        for row in comparison:
            r = reports[row["policy"]]
            fe = duty_cycle_adjust(r, fleet, pp, chip)
            row["fleet_energy_j"] = fe
            if fe_base:
                row["fleet_savings_vs_nopg"] = 1 - fe / fe_base
            row["cooling_usd_per_chip"] = cooling_cost(r.avg_power_w)
            row.update({k: v for k, v in params.items() if k not in row})
    out = {
        "params": params,
        "reports": {p: rep.report_json(reports[p], params) for p in policies},
        "metrics": [rep.metrics_row(reports[p], params) for p in policies],
        "comparison": comparison,
        "utilization": [rep.utilization_row(reports[p]) for p in policies],
        "shares": [row for p in policies for row in rep.energy_share_rows(reports[p])],
        "sram_hist": rep.sram_histogram_rows(reports[policies[0]]),
        "events": {p: rep.events_csv(reports[p]) for p in policies} if m.events else {},
    }
    if cell.get("cell_dir"):
        rep.write_atomic(Path(cell["cell_dir"]) / f"{cell['cell_id']}.json",
                         rep.dumps_json({"params": params, "comparison": comparison,
                                         "metrics": out["metrics"]}))
    return out


def _run_cells(cells: list[dict], jobs: int) -> list[dict]:
    if jobs <= 1 or len(cells) <= 1:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as ex:
        return list(ex.map(run_cell, cells))


# -- commands --------------------------------------------------------------

def _out_dir(m: RunManifest) -> Path:
    d = Path(m.output_dir or os.environ.get(ENV_OUTPUT_DIR) or "npupg-out")
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise ManifestError(f"output directory not writable: {d}")
    return d


def _plot_dir(m: RunManifest, out: Path) -> Path:
    return Path(m.plot_dir) if m.plot_dir else out / "plots"


def cmd_simulate(m: RunManifest) -> list[Path]:
    out = _out_dir(m)
    cells = [{"workload": w, "chip": c, "manifest": m} for w in m.workloads for c in m.chips]
    results = _run_cells(cells, m.jobs)
    written = []
    metrics, comparison = [], []
    for res in results:
        wl, chip = res["params"]["workload"], res["params"]["chip"]
        for pol, text in res["reports"].items():
            if "json" in m.formats:
                written.append(rep.write_atomic(out / "runs" / f"{wl}__{chip.lower()}__{pol}.json", text))
        for pol, text in res["events"].items():
            written.append(rep.write_atomic(out / "events" / f"{wl}__{chip.lower()}__{pol}.csv", text))
        metrics += res["metrics"]
        comparison += res["comparison"]
    if "csv" in m.formats:
        written.append(rep.write_atomic(out / "metrics.csv", rep.dumps_csv(metrics)))
        if comparison:
            written.append(rep.write_atomic(out / "comparison.csv", rep.dumps_csv(comparison)))
    if m.plot and comparison:
        from . import plots
        written.append(plots.policy_energy(comparison, _plot_dir(m, out) / "policy_energy.png"))
    return written


def cmd_analyze(m: RunManifest) -> list[Path]:
    m = replace(m, policies=m.policies[:1] if m.policies else ["nopg"])
    out = _out_dir(m)
    cells = [{"workload": w, "chip": c, "manifest": m} for w in m.workloads for c in m.chips]
    results = _run_cells(cells, m.jobs)
    util = [row for r in results for row in r["utilization"]]
    shares = [row for r in results for row in r["shares"]]
    hist = [row for r in results for row in r["sram_hist"]]
    written = []
    if "csv" in m.formats:
        written.append(rep.write_atomic(out / "utilization.csv", rep.dumps_csv(util)))
        written.append(rep.write_atomic(out / "energy_shares.csv", rep.dumps_csv(shares)))
        written.append(rep.write_atomic(out / "sram_demand.csv", rep.dumps_csv(
            hist, ["workload", "chip", "demand_bytes", "fraction"])))
    if "json" in m.formats:
        written.append(rep.write_atomic(out / "analyze.json", rep.dumps_json(
            {"schema_version": rep.SCHEMA_VERSION, "utilization": util, "energy_shares": shares,
             "sram_demand": hist})))
    if m.plot:
        from . import plots
        pd = _plot_dir(m, out)
        written.append(plots.utilization(util, pd / "utilization.png"))
        if hist:
            written.append(plots.sram_histogram(hist, pd / "sram_demand.png"))
    return written


def _monotone_flags(rows: list[dict]) -> None:
    """Flag each row whose (workload, chip, other axes, policy) series is non-increasing in leakage."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        key = (r["workload"], r["chip"], r["policy"], r.get("sram_sleep"), r.get("delay_multiplier"))
        groups.setdefault(key, []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r["leakage"])
        ok = all(b["savings_vs_nopg"] <= a["savings_vs_nopg"] + 1e-12 for a, b in zip(rs, rs[1:]))
        for r in rs:
            r["monotone_in_leakage"] = ok


def cmd_sweep(m: RunManifest) -> list[Path]:
    axes = {k: list(m.sweep[k]) for k in SWEEP_AXES if k in m.sweep}
    if not axes:
        raise ManifestError("sweep needs at least one axis among " + ", ".join(SWEEP_AXES))
    chips = list(m.sweep.get("chips", m.chips))
    workloads = list(m.sweep.get("workloads", m.workloads))
    if "nopg" not in m.policies:
        m = replace(m, policies=["nopg"] + list(m.policies))
    out = _out_dir(m)
    names = list(axes)
    cells = []
    for i, (w, c, *vals) in enumerate(itertools.product(workloads, chips, *axes.values())):
        cell = {"workload": w, "chip": c, "manifest": m, "cell_dir": str(out / "cells"),
                "cell_id": f"cell{i:04d}"}
        cell.update(dict(zip(names, vals)))
        cells.append(cell)
    results = _run_cells(cells, m.jobs)
    rows = [row for r in results for row in r["comparison"]]
    if "leakage" in axes and len(axes["leakage"]) > 1:
        _monotone_flags(rows)
    written = [rep.write_atomic(out / "sweep.csv", rep.dumps_csv(rows))]
    if m.plot:
        from . import plots
        for ax in names:
            written.append(plots.sweep(rows, ax, _plot_dir(m, out) / f"sweep_{ax}.png"))
    return written


def _fleet_energy_per_year(m: RunManifest, workload: str, chip_spec: str, policy: str) -> tuple[float, float]:
    """(nopg, policy) duty-cycle-adjusted energy per chip-year."""
    mm = replace(m, policies=["nopg", policy] if policy != "nopg" else ["nopg"], events=False)
    chip, pp, fleet = resolve_chip(chip_spec)
    pp, fleet = power_params(mm, pp), fleet_params(mm, fleet)
    graph = build_model_graph(resolve_workload(workload))
    plans = tile_and_fuse(graph, chip)
    prog = lower(plans, graph, chip, vu_granularity=mm.vu_granularity)
    reps = run_policies(prog, chip, pp, mm.policies, _slug(workload), plans)
    out = []
    for pol in ("nopg", policy):
        r = reps[pol]
        if r.seconds == 0:
            raise SimulationError("workload has zero runtime; cannot derive a yearly energy")
        wall = r.seconds / fleet.duty_cycle
        out.append(duty_cycle_adjust(r, fleet, pp, chip) / wall * SECONDS_PER_YEAR)
    return out[0], out[1]


def cmd_carbon(m: RunManifest, policy: str = "hwsw", energy_kwh: float | None = None,
               efficiency_from: list | None = None) -> list[Path]:
    out = _out_dir(m)
    cfg = dict(m.carbon)
    eff_src = efficiency_from or cfg.pop("efficiency_from", None)
    cfg.pop("efficiency_from", None)
    if eff_src:
        if len(eff_src) != 2:
            raise ManifestError("efficiency_from needs exactly two chips (older, newer)")
        old, new = (resolve_chip(c)[0] for c in eff_src)
        e_old = _fleet_energy_per_year(m, m.workloads[0], eff_src[0], "nopg")[0]
        e_new = _fleet_energy_per_year(m, m.workloads[0], eff_src[1], "nopg")[0]
        years = max(1, new.year - old.year)
        cfg["yearly_efficiency_ratio"] = min(1.0, (e_new / e_old) ** (1 / years))
    try:
        cp = CarbonParams(**cfg)
    except TypeError as e:
        raise ManifestError(f"carbon params: {e}") from None
    if energy_kwh is not None:
        base = energy_kwh * 3.6e6
        e_nopg = e_pol = base / cp.chips
        saving = float(cfg.get("saving_fraction", 0.0)) if "saving_fraction" in cfg else 0.0
    else:
        e_nopg, e_pol = _fleet_energy_per_year(m, m.workloads[0], m.chips[0], policy)
        base = e_nopg * cp.chips
        saving = max(0.0, 1 - e_pol / e_nopg)
    without = lifespan_sweep(cp, base, 0.0)
    with_pg = lifespan_sweep(cp, base, saving)
    written = []
    if "csv" in m.formats:
        written.append(rep.write_atomic(out / "carbon_nopg.csv", without.to_csv()))
        written.append(rep.write_atomic(out / f"carbon_{policy}.csv", with_pg.to_csv()))
    summary = {
        "schema_version": rep.SCHEMA_VERSION,
        "workload": _slug(m.workloads[0]),
        "chip": m.chips[0],
        "policy": policy,
        "params": {"carbon_intensity": cp.carbon_intensity, "embodied_per_chip": cp.embodied_per_chip,
                   "horizon_years": cp.horizon_years,
                   "yearly_efficiency_ratio": cp.yearly_efficiency_ratio, "chips": cp.chips},
        "fleet_energy_j_per_year": base,
        "saving_fraction": saving,
        "optimal_lifespan_nopg": without.optimal,
        "optimal_lifespan_policy": with_pg.optimal,
    }
    if "json" in m.formats:
        written.append(rep.write_atomic(out / "carbon.json", rep.dumps_json(summary)))
    if m.plot:
        from . import plots

        def rows(c):
            return [{"lifespan": r.lifespan, "total_kg": r.total_kg, "is_optimal": r.lifespan == c.optimal}
                    for r in c.rows]
        written.append(plots.lifespan({"nopg": rows(without), policy: rows(with_pg)},
                                      _plot_dir(m, out) / "lifespan.png"))
    return written


def cmd_dump_program(m: RunManifest, instrument: bool = False) -> str:
    chip, pp, _ = resolve_chip(m.chips[0])
    pp = power_params(m, pp)
    graph = build_model_graph(resolve_workload(m.workloads[0]))
    prog = lower(tile_and_fuse(graph, chip), graph, chip, vu_granularity=m.vu_granularity)
    if instrument:
        prog = prepare_program(prog, pp, "hwsw")
    return dumps(prog)


def validate_file(path) -> str:
    """Parse a chip config, workload spec or run manifest; returns what it was."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    text = p.read_text()
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed TOML in {p}: {e}") from None
    if "chip" in doc and isinstance(doc["chip"], dict):
        parse_chip_config(text)
        return "chip config"
    if "model" in doc:
        build_model_graph(parse_model_spec(text, p.stem))
        return "workload"
    if "run" in doc:
        load_manifest(p).validate()
        return "manifest"
    raise ConfigError(f"{p}: not a chip config ([chip]), workload ([model]) or manifest ([run])")


# -- argument parsing ------------------------------------------------------

def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _bet_override(s: str) -> tuple[str, int]:
    if "=" not in s:
        raise argparse.ArgumentTypeError("expected KEY=CYCLES, e.g. vu=10")
    k, v = s.split("=", 1)
    try:
        return k.strip(), int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"BET for {k!r} must be an integer") from None


def _common(sp: argparse.ArgumentParser, policies: bool = True) -> None:
    sp.add_argument("--manifest", "-m", help="run manifest (TOML); flags below override it")
    sp.add_argument("--chip", help="chip preset (npu-a..npu-e) or config path; comma list allowed")
    sp.add_argument("--workload", help="workload preset or spec path; comma list allowed")
    if policies:
        sp.add_argument("--policy", help=f"comma list of policies among {','.join(POLICIES)}")
    sp.add_argument("--bet-override", action="append", type=_bet_override, default=[],
                    metavar="KEY=CYCLES", help="override one break-even time (repeatable)")
    sp.add_argument("--vu-granularity", choices=("block", "stream"),
                    help="VU post-processing per SA block or per push")
    sp.add_argument("--out", "-o", help=f"output directory (default ${ENV_OUTPUT_DIR} or ./npupg-out)")
    sp.add_argument("--format", help="comma list among json,csv (default both)")
    sp.add_argument("--jobs", "-j", type=int, help="concurrent simulation cells")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures (data files are always written)")
    sp.add_argument("--plot-dir", help="directory for figures (default <out>/plots)")
    sp.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="npupg", description="NPU power-gating simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run policies and write per-run reports plus a comparison table")
    _common(sp)
    sp.add_argument("--events", action="store_true", help="also write gating-event logs as CSV")

    sp = sub.add_parser("analyze", help="utilization study: temporal/spatial utilization, SRAM demand, energy shares")
    _common(sp)

    sp = sub.add_parser("sweep", help="sensitivity sweep over leakage ratios, delay multipliers and chips")
    _common(sp)
    sp.add_argument("--leakage", help="comma list of logic OFF leakage ratios")
    sp.add_argument("--sram-sleep", help="comma list of SRAM sleep leakage ratios")
    sp.add_argument("--delay-multiplier", help="comma list of wake-up delay multipliers")

    sp = sub.add_parser("carbon", help="operational plus embodied carbon versus device lifespan")
    _common(sp, policies=False)
    sp.add_argument("--policy", default=None, help="gating policy whose savings apply (default hwsw)")
    sp.add_argument("--embodied", type=float, help="embodied kgCO2e per chip per generation")
    sp.add_argument("--intensity", type=float, help="grid carbon intensity, kgCO2e per kWh")
    sp.add_argument("--horizon", type=int, help="planning horizon in years")
    sp.add_argument("--efficiency-ratio", type=float, help="yearly energy ratio of a newer generation")
    sp.add_argument("--efficiency-from", help="derive the ratio from two chips: OLDER,NEWER")
    sp.add_argument("--fleet-chips", type=int, help="number of chips in the fleet")
    sp.add_argument("--energy-kwh-per-year", type=float,
                    help="use this fleet energy instead of simulating the workload")

    sp = sub.add_parser("dump-program", help="lower a workload and print the program listing")
    _common(sp, policies=False)
    sp.add_argument("--instrument", action="store_true", help="insert setpm instructions first")

    sp = sub.add_parser("validate-config", help="check chip configs, workload specs or manifests")
    sp.add_argument("paths", nargs="+", help="files to validate")
    return ap


def manifest_from_args(args) -> RunManifest:
    m = load_manifest(args.manifest) if getattr(args, "manifest", None) else RunManifest()
    if args.chip:
        m.chips = _csv_list(args.chip)
    if args.workload:
        m.workloads = _csv_list(args.workload)
    if getattr(args, "policy", None) and args.command != "carbon":
        m.policies = _csv_list(args.policy)
    for k, v in args.bet_override:
        m.power.setdefault("bet", {})
        m.power["bet"] = {**m.power["bet"], k: v}
    if args.vu_granularity:
        m.vu_granularity = args.vu_granularity
    if args.out:
        m.output_dir = args.out
    if args.format:
        m.formats = _csv_list(args.format)
    if args.jobs is not None:
        m.jobs = args.jobs
    if args.plot:
        m.plot = True
    if args.plot_dir:
        m.plot, m.plot_dir = True, args.plot_dir
    if getattr(args, "events", False):
        m.events = True
    if args.command == "sweep":
        for flag, key in (("leakage", "leakage"), ("sram_sleep", "sram_sleep"),
                          ("delay_multiplier", "delay_multiplier")):
            v = getattr(args, flag)
            if v:
                m.sweep[key] = [float(x) for x in _csv_list(v)]
    if args.command == "carbon":
        for flag, key in (("embodied", "embodied_per_chip"), ("intensity", "carbon_intensity"),
                          ("horizon", "horizon_years"), ("efficiency_ratio", "yearly_efficiency_ratio"),
                          ("fleet_chips", "chips")):
            v = getattr(args, flag)
            if v is not None:
                m.carbon[key] = v
    return m.validate()


def exit_code(e: Exception) -> int:
    """3 for failures while lowering or simulating, 2 for bad inputs."""
    if isinstance(e, (SimulationError, ProgramError, PolicyViolation)):
        return EXIT_SIMULATION
    if isinstance(e, (ConfigError, WorkloadError, ManifestError, ValueError, OSError)):
        return EXIT_VALIDATION
    return EXIT_SIMULATION


def _diag(e: Exception) -> str:
    mod = type(e).__module__.rsplit(".", 1)[-1]
    if mod in ("builtins", "__main__"):
        mod = "cli"
    return f"npupg: error [{mod}.{type(e).__name__}]: {e}"


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate-config":
            for p in args.paths:
                print(f"{p}: ok ({validate_file(p)})")
            return EXIT_OK
        m = manifest_from_args(args)
        if args.command == "simulate":
            written = cmd_simulate(m)
        elif args.command == "analyze":
            written = cmd_analyze(m)
        elif args.command == "sweep":
            written = cmd_sweep(m)
        elif args.command == "carbon":
            written = cmd_carbon(m, args.policy or "hwsw", args.energy_kwh_per_year,
                                 _csv_list(args.efficiency_from) if args.efficiency_from else None)
        else:
            text = cmd_dump_program(m, args.instrument)
            if args.out:
                written = [rep.write_atomic(Path(args.out), text)]
            else:
                sys.stdout.write(text)
                return EXIT_OK
        for p in written:
            print(p)
        return EXIT_OK
    except BrokenPipeError:
        # downstream pager or head closed early; not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (ValueError, RuntimeError, OSError) as e:
        print(_diag(e), file=sys.stderr)
        return exit_code(e)

if __name__ == "__main__":
    sys.exit(main())
