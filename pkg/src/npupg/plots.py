"""Optional matplotlib figures rendered from the same rows written to CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_PNG_META = {"Software": None}
POLICY_ORDER = ("nopg", "comppg", "hw", "hwsw", "ideal")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def _policy_key(p: str) -> int:
    return POLICY_ORDER.index(p) if p in POLICY_ORDER else len(POLICY_ORDER)


def policy_energy(rows: list[dict], path) -> Path:
    """Stacked static/dynamic/transition energy per policy, normalized to nopg when present."""
    rows = sorted(rows, key=lambda r: (r["workload"], r["chip"], _policy_key(r["policy"])))
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["workload"], r["chip"]), []).append(r)
    fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups) + 1, 3.6), squeeze=False)
    for ax, ((wl, chip), rs) in zip(axes[0], sorted(groups.items())):
        base = next((r["energy_j"] for r in rs if r["policy"] == "nopg"), None) or max(
            r["energy_j"] for r in rs)
        names = [r["policy"] for r in rs]
        bottom = [0.0] * len(rs)
        for key, color in (("static_j", "#4c72b0"), ("dynamic_j", "#dd8452"), ("transition_j", "#55a868")):
            vals = [r[key] / base for r in rs]
            ax.bar(names, vals, bottom=bottom, color=color, label=key.replace("_j", ""))
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_title(f"{wl} on {chip}", fontsize=9)
        ax.set_ylabel("energy (normalized)")
        ax.tick_params(axis="x", labelrotation=45, labelsize=8)
    axes[0][0].legend(fontsize=7, frameon=False)
    return _save(fig, path)


def utilization(rows: list[dict], path) -> Path:
    metrics = ("sa_temporal", "sa_spatial", "vu_temporal", "hbm_temporal", "ici_temporal")
    labels = [f"{r['workload']}\n{r['chip']}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(rows) + 1), 3.6))
    width = 0.8 / len(metrics)
    for i, m in enumerate(metrics):
        xs = [j + (i - len(metrics) / 2 + 0.5) * width for j in range(len(rows))]
        ax.bar(xs, [100 * r[m] for r in rows], width, label=m)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("utilization (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, frameon=False, ncol=3)
    return _save(fig, path)


def sram_histogram(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    series: dict[tuple, list[dict]] = {}
    for r in rows:
        series.setdefault((r["workload"], r["chip"]), []).append(r)
    for (wl, chip), rs in sorted(series.items()):
        rs = sorted(rs, key=lambda r: r["demand_bytes"])
        ax.step([r["demand_bytes"] / 2 ** 20 for r in rs], [r["fraction"] for r in rs],
                where="mid", label=f"{wl}/{chip}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("SRAM demand (MiB, power-of-two buckets)")
    ax.set_ylabel("fraction of time")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def sweep(rows: list[dict], axis: str, path) -> Path:
    """Savings vs nopg along one sweep axis, one line per policy and chip."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    lines: dict[tuple, list[tuple]] = {}
    for r in rows:
        if r["policy"] == "nopg":
            continue
        lines.setdefault((r["policy"], r["chip"], r["workload"]), []).append((r[axis], r["savings_vs_nopg"]))
    for (pol, chip, wl), pts in sorted(lines.items(), key=lambda kv: (_policy_key(kv[0][0]), kv[0][1:])):
        pts.sort()
        ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o", label=f"{pol} {chip} {wl}")
    ax.set_xlabel(axis)
    ax.set_ylabel("energy savings vs nopg (%)")
    ax.legend(fontsize=6, frameon=False)
    return _save(fig, path)


def lifespan(curves: dict[str, list[dict]], path) -> Path:
    """Total carbon vs device lifespan; optimal points marked."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for label, rows in curves.items():
        xs = [r["lifespan"] for r in rows]
        ys = [r["total_kg"] / 1000 for r in rows]
        ax.plot(xs, ys, marker=".", label=label)
        best = next(r for r in rows if r["is_optimal"])
        ax.plot([best["lifespan"]], [best["total_kg"] / 1000], "k*", markersize=10)
    ax.set_xlabel("lifespan (years)")
    ax.set_ylabel("total carbon (tCO2e)")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)
