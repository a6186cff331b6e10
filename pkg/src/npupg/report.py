"""Deterministic serialization: JSON reports, flat CSV tables, atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .sim import SCHEMA_VERSION, SimReport


def write_atomic(path, text: str) -> Path:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def dumps_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """Rows to CSV; columns default to first-seen key order across rows."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def report_json(r: SimReport, params: dict | None = None) -> str:
    d = r.to_dict()
    if params:
        d["params"] = params
    return dumps_json(d)


def metrics_row(r: SimReport, params: dict | None = None) -> dict:
    """Flat metrics of one run, prefixed by its full parameter tuple."""
    row = dict(params or {})
    row.update({
        "schema_version": SCHEMA_VERSION,
        "workload": r.workload,
        "chip": r.chip,
        "policy": r.policy,
        "run_cycles": r.run_cycles,
        "seconds": r.seconds,
        "total_j": r.total_j,
        "static_j": r.static_j,
        "dynamic_j": r.dynamic_j,
        "transition_j": r.transition_j,
        "avg_power_w": r.avg_power_w,
        "peak_power_w": r.peak_power_w,
        "peak_op": r.peak_op,
        "setpm_count": r.setpm_count,
    })
    for k, v in sorted(r.utilization.items()):
        row[k] = v
    for k, v in sorted(r.stalls.items()):
        row[f"stall_{k}"] = v
    return row


def events_csv(r: SimReport) -> str:
    rows = [{"cycle": e.cycle, "component": e.component, "from": e.from_mode, "to": e.to_mode,
             "cause": e.cause} for e in r.events]
    return dumps_csv(rows, ["cycle", "component", "from", "to", "cause"])


def utilization_row(r: SimReport) -> dict:
    u = r.utilization
    return {
        "workload": r.workload,
        "chip": r.chip,
        "policy": r.policy,
        "sa_temporal": u["sa_temporal"],
        "sa_spatial": u["sa_spatial"],
        "flops_utilization": u["flops_utilization"],
        "vu_temporal": u["vu_temporal"],
        "hbm_temporal": u["hbm_temporal"],
        "hbm_idle": 1 - u["hbm_temporal"] if r.run_cycles else 0.0,
        "ici_temporal": u["ici_temporal"],
        "ici_idle": 1 - u["ici_temporal"] if r.run_cycles else 0.0,
    }


def energy_share_rows(r: SimReport) -> list[dict]:
    """Per-component static and dynamic shares of the run's total energy."""
    total = r.total_j
    rows = []
    for name, c in sorted(r.ledger.components.items()):
        rows.append({
            "workload": r.workload,
            "chip": r.chip,
            "policy": r.policy,
            "component": name,
            "static_j": c.static_total,
            "dynamic_j": c.dynamic_total,
            "transition_j": c.transition_j,
            "static_share": c.static_total / total if total else 0.0,
            "dynamic_share": c.dynamic_total / total if total else 0.0,
        })
    return rows


def sram_histogram_rows(r: SimReport) -> list[dict]:
    return [{"workload": r.workload, "chip": r.chip, "demand_bytes": k, "fraction": v}
            for k, v in sorted(r.sram_demand_histogram.items())]
