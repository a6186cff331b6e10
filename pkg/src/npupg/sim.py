"""Simulation core: in-order bundle issue, ready-bit hazards, energy ledger.

Timing model.  Bundle ``b`` issues at
``max(actual[b-1] + (sched[b] - sched[b-1]), dependency completions,
unit free, power ready)``, so every exposed wake-up stall shifts the rest of
the program.  SA, VU and SRAM readiness stall issue.  DMA and ICI transfers
are asynchronous: a gated HBM or ICI controller is woken when the transfer
is issued, and the wake overlaps the link latency.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chip import ChipConfig, FleetParams, PowerParams, transition_energy
from .controllers import SRAMSegments, TickController, TickSRAM, UnitController
from .program import (Barrier, DMAOp, ICIOp, Program, SALoadWeights, SAPush, SetPM, VUOp,
                      vu_ids)

POLICIES = ("nopg", "comppg", "hw", "hwsw", "ideal")
EPILOGUE_CYCLES = 2
SCHEMA_VERSION = "1.0"


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Policy:
    name: str
    sa: str          # on | whole | pe | ideal
    detectors: bool  # idle detection for VU, HBM, ICI (and whole SA)
    sram_sweep: bool
    software: bool   # honour setpm (and instrument the program)
    ideal: bool = False

    @classmethod
    def from_name(cls, name: str) -> "Policy":
        name = name.strip().lower()
        table = {
            "nopg": cls("nopg", "on", False, False, False),
            "comppg": cls("comppg", "whole", True, True, False),
            "hw": cls("hw", "pe", True, True, False),
            "hwsw": cls("hwsw", "pe", True, True, True),
            "ideal": cls("ideal", "ideal", False, False, False, True),
        }
        if name not in table:
            raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")
        return table[name]


@dataclass
class ComponentLedger:
    mode_cycles: dict = field(default_factory=dict)  # unit-cycles per mode (SA: PE-cycles / W^2)
    static_j: dict = field(default_factory=dict)
    dynamic_j: dict = field(default_factory=dict)
    transition_j: float = 0.0
    transitions: int = 0
    instances: int = 1

    @property
    def static_total(self) -> float:
        return sum(self.static_j.values())

    @property
    def dynamic_total(self) -> float:
        return sum(self.dynamic_j.values())

    @property
    def total(self) -> float:
        return self.static_total + self.dynamic_total + self.transition_j


@dataclass
class EnergyLedger:
    components: dict = field(default_factory=dict)

    def get(self, name: str, instances: int = 1) -> ComponentLedger:
        if name not in self.components:
            self.components[name] = ComponentLedger(instances=instances)
        return self.components[name]

    @property
    def static_j(self) -> float:
        return sum(c.static_total for c in self.components.values())

    @property
    def dynamic_j(self) -> float:
        return sum(c.dynamic_total for c in self.components.values())

    @property
    def transition_j(self) -> float:
        return sum(c.transition_j for c in self.components.values())

    @property
    def total_j(self) -> float:
        return self.static_j + self.dynamic_j + self.transition_j


@dataclass
class SimReport:
    policy: str
    chip: str
    workload: str
    run_cycles: int
    seconds: float
    ledger: EnergyLedger
    utilization: dict
    stalls: dict
    gating_events: dict
    avg_power_w: float
    peak_power_w: float
    peak_op: str
    op_windows: dict
    sram_demand_histogram: dict
    setpm_count: int = 0
    warnings: list = field(default_factory=list)
    events: list = field(default_factory=list, repr=False)
    sram_segment_off: list = field(default_factory=list, repr=False)  # OFF cycles per segment

    def sram_off_share(self, min_fraction: float = 0.95) -> float:
        """Share of SRAM segments that are OFF for at least ``min_fraction`` of the run."""
        if not self.sram_segment_off or not self.run_cycles:
            return 0.0
        off = np.asarray(self.sram_segment_off) / self.run_cycles
        return float(np.mean(off >= min_fraction))

    @property
    def total_j(self) -> float:
        return self.ledger.total_j

    @property
    def static_j(self) -> float:
        return self.ledger.static_j

    @property
    def dynamic_j(self) -> float:
        return self.ledger.dynamic_j

    @property
    def transition_j(self) -> float:
        return self.ledger.transition_j

    def to_dict(self) -> dict:
        comps = {}
        for name, c in sorted(self.ledger.components.items()):
            comps[name] = {
                "instances": c.instances,
                "mode_cycles": dict(sorted(c.mode_cycles.items())),
                "static_j": dict(sorted(c.static_j.items())),
                "dynamic_j": dict(sorted(c.dynamic_j.items())),
                "transition_j": c.transition_j,
                "transitions": c.transitions,
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "policy": self.policy,
            "chip": self.chip,
            "workload": self.workload,
            "run_cycles": self.run_cycles,
            "epilogue_cycles": EPILOGUE_CYCLES if self.run_cycles else 0,
            "seconds": self.seconds,
            "energy": {
                "total_j": self.total_j,
                "static_j": self.static_j,
                "dynamic_j": self.dynamic_j,
                "transition_j": self.transition_j,
            },
            "power": {"avg_w": self.avg_power_w, "peak_w": self.peak_power_w, "peak_op": self.peak_op},
            "components": comps,
            "utilization": dict(sorted(self.utilization.items())),
            "stalls": dict(sorted(self.stalls.items())),
            "gating_events": dict(sorted(self.gating_events.items())),
            "setpm_count": self.setpm_count,
            "sram_demand_histogram": {str(k): v for k, v in sorted(self.sram_demand_histogram.items())},
            "op_windows": {k: list(v) for k, v in self.op_windows.items()},
            "warnings": list(self.warnings),
        }


# -- helpers ---------------------------------------------------------------

class _Timeline:
    """Energy spread uniformly over [a, b) intervals; integrated over arbitrary windows."""

    def __init__(self):
        self.a: list[int] = []
        self.b: list[int] = []
        self.j: list[float] = []

    def add(self, a: int, b: int, joules: float) -> None:
        if joules:
            self.a.append(a)
            self.b.append(max(b, a + 1))
            self.j.append(joules)

    def integrate(self, windows: list[tuple[int, int]]) -> np.ndarray:
        if not self.a or not windows:
            return np.zeros(len(windows))
        a = np.array(self.a, float)
        b = np.array(self.b, float)
        rate = np.array(self.j) / (b - a)
        out = np.empty(len(windows))
        for i, (w0, w1) in enumerate(windows):
            ov = np.clip(np.minimum(b, w1) - np.maximum(a, w0), 0, None)
            out[i] = float(ov @ rate)
        return out


def _union_length(spans: list[tuple[int, int]]) -> int:
    total, cur_a, cur_b = 0, None, None
    for a, b in sorted(spans):
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


@dataclass
class _Tile:
    sa: int
    k: int
    n: int
    load_start: int
    load_end: int
    first_push: int = -1
    end: int = -1
    rows: int = 0


def _spans_from_events(events, delay: int, run: int) -> list[tuple[int, int]]:
    """Gated (reduced-power) spans of one unit, from its event log."""
    out, g = [], None
    for e in events:
        if e.from_mode == "ON":
            g = e.cycle
        elif g is not None:
            if e.cycle > g + delay:
                out.append((g + delay, min(e.cycle, run)))
            g = None
    if g is not None and run > g + delay:
        out.append((g + delay, run))
    return out


# -- simulation ------------------------------------------------------------

def simulate(p: Program, chip: ChipConfig, pp: PowerParams, policy: str | Policy = "nopg",
             seed: int = 0, workload: str = "", plans=None, reference: bool = False) -> SimReport:
    """Run ``p`` under ``policy``; deterministic (``seed`` is unused by the core).

    ``reference`` swaps the interval-compressed controllers for per-cycle
    steppers; the report must come out identical.
    """
    pol = policy if isinstance(policy, Policy) else Policy.from_name(policy)
    if p.num_sa > chip.num_sa or p.num_vu > chip.num_vu or p.sa_width != chip.sa_width:
        raise SimulationError("program was lowered for a different chip")
    f = chip.frequency_hz
    W = chip.sa_width
    dyn_pj = pp.dynamic_pj
    thr = (lambda k: pp.threshold(k)) if pol.detectors else (lambda k: None)

    Unit, Sram = (TickController, TickSRAM) if reference else (UnitController, SRAMSegments)
    vu_ctl = [Unit(f"vu{v}", pp.wakeup_delay["vu"], thr("vu")) for v in range(chip.num_vu)]
    hbm_ctl = Unit("hbm", pp.wakeup_delay["hbm"], thr("hbm"))
    ici_ctl = Unit("ici", pp.wakeup_delay["ici"], thr("ici"))
    sa_ctl = [Unit(f"sa{s}", pp.wakeup_delay["sa_full"],
                             pp.threshold("sa_full") if pol.sa == "whole" else None)
              for s in range(chip.num_sa)]
    sram = Sram(chip.num_segments, pp.wakeup_delay["sram_sleep"], pp.wakeup_delay["sram_off"],
                        pp.sram_sweep_period, sweep=pol.sram_sweep)
    seg_of = p.segment_ranges()

    n = len(p.instrs)
    done = [0] * n
    starts = [0] * n
    unit_free: dict = {}
    hbm_free = 0
    ici_free = 0
    stalls = {"sa": 0, "vu": 0, "sram": 0, "dependency": 0}
    tiles: list[_Tile] = []
    open_tile: dict[int, _Tile] = {}
    vu_busy = [0] * chip.num_vu
    hbm_spans: list[tuple[int, int]] = []
    ici_spans: list[tuple[int, int]] = []
    sram_access_seg_cycles = 0.0
    sram_live: dict[int, list[int]] = {}
    dyn = {k: 0.0 for k in ("sa_mac", "vu_lane_op", "sram_byte", "hbm_byte", "ici_byte",
                            "instr_issue", "setpm_issue")}
    macs = 0
    setpms = 0
    tl = _Timeline()
    op_win: dict[str, list[int]] = {}

    prev_sched = prev_act = 0
    first = True
    for b in p.bundles():
        nominal = prev_act + (b.cycle - prev_sched) if not first else b.cycle
        first = False
        t0 = nominal
        for idx in b.instrs:
            ins = p.instrs[idx]
            for d in ins.deps:
                t0 = max(t0, done[d])
            u = ins.unit
            if u is not None and u[0] in ("sa", "vu"):
                for uu in ([("vu", v) for v in vu_ids(u[1])] if u[0] == "vu" else [u]):
                    t0 = max(t0, unit_free.get(uu, 0))
        if t0 > nominal:
            stalls["dependency"] += t0 - nominal
        # power readiness for units that stall issue
        t = t0
        for idx in b.instrs:
            ins = p.instrs[idx]
            k = ins.kind
            if isinstance(k, VUOp):
                for v in vu_ids(k.vu_mask):
                    r = vu_ctl[v].request(t0)
                    if r > t:
                        stalls["vu"] += r - t
                        t = r
            elif isinstance(k, (SALoadWeights, SAPush)):
                r = sa_ctl[k.sa_id].request(t0)
                if r > t:
                    stalls["sa"] += r - t
                    t = r
            if isinstance(k, (VUOp, SALoadWeights, SAPush)):
                for acc in ins.sram:
                    a, bb = seg_of[acc.buffer]
                    r = sram.request(a, bb, t0)
                    if r > t:
                        stalls["sram"] += r - t
                        t = r
        # hold the requested segments until issue so the sweep cannot gate them meanwhile
        for idx in b.instrs:
            ins = p.instrs[idx]
            if isinstance(ins.kind, (VUOp, SALoadWeights, SAPush)):
                for acc in ins.sram:
                    a, bb = seg_of[acc.buffer]
                    sram.touch(a, bb, t)
        # execute
        for idx in b.instrs:
            ins = p.instrs[idx]
            k = ins.kind
            start, end = t, t + ins.latency
            if isinstance(k, SetPM):
                setpms += 1
                dyn["setpm_issue"] += dyn_pj["setpm_issue"]
                if pol.software:
                    _apply_setpm(k, t, vu_ctl, sa_ctl, hbm_ctl, ici_ctl, sram, p.segment_bytes)
                done[idx] = end
                starts[idx] = start
                continue
            if isinstance(k, Barrier):
                done[idx] = starts[idx] = t
                continue
            dyn["instr_issue"] += dyn_pj["instr_issue"]
            e_dyn = dyn_pj["instr_issue"]
            if isinstance(k, VUOp):
                for v in vu_ids(k.vu_mask):
                    vu_ctl[v].occupy(t, end)
                    unit_free[("vu", v)] = t + ins.occupancy
                    vu_busy[v] += k.cycles
                e = k.cycles * k.lanes_used * len(vu_ids(k.vu_mask)) * dyn_pj["vu_lane_op"]
                dyn["vu_lane_op"] += e
                e_dyn += e
            elif isinstance(k, SALoadWeights):
                sa_ctl[k.sa_id].occupy(t, end)
                unit_free[("sa", k.sa_id)] = t + ins.occupancy
                tile = _Tile(k.sa_id, k.tile_k, k.tile_n, t, end)
                open_tile[k.sa_id] = tile
                tiles.append(tile)
            elif isinstance(k, SAPush):
                sa_ctl[k.sa_id].occupy(t, end)
                unit_free[("sa", k.sa_id)] = t + ins.occupancy
                tile = open_tile.get(k.sa_id)
                if tile is None:
                    raise SimulationError(f"instruction {idx}: push without loaded weights")
                if tile.first_push < 0:
                    tile.first_push = t
                tile.rows += k.rows
                tile.end = max(tile.end, end)
                m = k.rows * tile.k * tile.n
                macs += m
                dyn["sa_mac"] += m * dyn_pj["sa_mac"]
                e_dyn += m * dyn_pj["sa_mac"]
            elif isinstance(k, DMAOp):
                bw = ins.occupancy
                st = max(t, hbm_free)
                ready = hbm_ctl.request(t)
                end = max(st + chip.hbm_latency, ready) + bw
                hbm_free = st + bw
                hbm_ctl.occupy(st, end)
                hbm_spans.append((st, end))
                for acc in ins.sram:
                    a, bb = seg_of[acc.buffer]
                    sram.request(a, bb, t)
                e = k.bytes * dyn_pj["hbm_byte"]
                dyn["hbm_byte"] += e
                e_dyn += e
            elif isinstance(k, ICIOp):
                st = max(t, ici_free)
                ready = ici_ctl.request(t)
                end = max(st + chip.ici_latency, ready) + ins.occupancy
                ici_free = st + ins.occupancy
                ici_ctl.occupy(st, end)
                ici_spans.append((st, end))
                e = k.bytes * dyn_pj["ici_byte"]
                dyn["ici_byte"] += e
                e_dyn += e
            for acc in ins.sram:
                a, bb = seg_of[acc.buffer]
                sram.touch(a, bb, end)
                sram_access_seg_cycles += (bb - a) * (end - start)
                lv = sram_live.setdefault(acc.buffer, [start, end])
                lv[0] = min(lv[0], start)
                lv[1] = max(lv[1], end)
                e = acc.bytes * dyn_pj["sram_byte"]
                dyn["sram_byte"] += e
                e_dyn += e
            tl.add(start, end, e_dyn * 1e-12)
            done[idx] = end
            starts[idx] = start
            if ins.op_id:
                w = op_win.setdefault(ins.op_id, [start, end])
                w[0] = min(w[0], start)
                w[1] = max(w[1], end)
        prev_sched, prev_act = b.cycle, t

    core = max(done, default=0)
    run = core + EPILOGUE_CYCLES if n else 0

    for c in vu_ctl + sa_ctl + [hbm_ctl, ici_ctl]:
        c.finish(run)
    sram.finish(run)

    ledger = EnergyLedger()
    sw = pp.static_w
    gated_ratio = pp.leakage_logic_off

    def unit_ledger(name, ctls, p_on, key):
        lg = ledger.get(name, len(ctls))
        if pol.ideal:
            return lg
        on = sum(c.on_cycles for c in ctls)
        off = sum(c.off_cycles for c in ctls)
        gates = sum(c.gates for c in ctls)
        lg.mode_cycles = {"ON": on, "OFF": off}
        lg.static_j = {"ON": on * p_on / f, "OFF": off * p_on * gated_ratio / f}
        lg.transitions = gates
        lg.transition_j = gates * transition_energy(chip, pp, key)
        for c in ctls:
            spans = _spans_from_events(c.events, c.delay, run)
            tl.add(0, run, run * p_on / f)
            for a, b in spans:
                tl.add(a, b, -(b - a) * p_on * (1 - gated_ratio) / f)
            for e in c.events:
                if e.from_mode == "ON":
                    tl.add(e.cycle, e.cycle + 1, transition_energy(chip, pp, key))
        return lg

    # VU / HBM / ICI
    vu_l = unit_ledger("vu", vu_ctl, sw["vu"], "vu")
    hbm_l = unit_ledger("hbm_ctrl", [hbm_ctl], sw["hbm_ctrl"], "hbm")
    ici_l = unit_ledger("ici_ctrl", [ici_ctl], sw["ici_ctrl"], "ici")
    if pol.ideal:
        busy_vu = sum(vu_busy)
        hb = _union_length(hbm_spans)
        ib = _union_length(ici_spans)
        for lg, busy, cnt, pw in ((vu_l, busy_vu, chip.num_vu, sw["vu"]), (hbm_l, hb, 1, sw["hbm_ctrl"]),
                                  (ici_l, ib, 1, sw["ici_ctrl"])):
            lg.mode_cycles = {"ON": busy, "OFF": cnt * run - busy}
            lg.static_j = {"ON": busy * pw / f, "OFF": 0.0}
            tl.add(0, max(run, 1), busy * pw / f)

    # SA
    sa_l = ledger.get("sa", chip.num_sa)
    p_sa = sw["sa"]
    if pol.sa in ("on", "whole"):
        if pol.sa == "on":
            sa_l.mode_cycles = {"ON": run * chip.num_sa, "OFF": 0}
            sa_l.static_j = {"ON": run * chip.num_sa * p_sa / f, "OFF": 0.0}
            tl.add(0, max(run, 1), run * chip.num_sa * p_sa / f)
        else:
            tmp = unit_ledger("sa", sa_ctl, p_sa, "sa_full")
            sa_l = tmp
    else:
        pe_p = p_sa / W ** 2
        tot_on = tot_won = 0.0
        wakes = 0
        for tile in tiles:
            rc = tile.k * tile.n
            if tile.first_push < 0:
                span, on, won_stream = 0, 0, 0
                gap = 0
            else:
                span = tile.end - tile.first_push
                on = rc * (tile.rows + 1)
                won_stream = rc * span - on
                gap = tile.first_push - tile.load_end
            won = rc * (tile.load_end - tile.load_start) + rc * max(0, gap) + won_stream
            tot_on += on
            tot_won += won
            wakes += rc
            if pol.ideal:
                tl.add(tile.load_start, max(tile.end, tile.load_end),
                       (on + won * pp.pe_weight_fraction) * pe_p / f)
            else:
                tl.add(tile.load_start, max(tile.end, tile.load_end),
                       (on * (1 - gated_ratio) + won * (pp.pe_weight_fraction - gated_ratio)) * pe_p / f)
        total_pe = run * W ** 2 * chip.num_sa
        off = total_pe - tot_on - tot_won
        sa_l.mode_cycles = {"ON": tot_on / W ** 2, "W_ON": tot_won / W ** 2, "OFF": off / W ** 2}
        if pol.ideal:
            sa_l.static_j = {"ON": tot_on * pe_p / f, "W_ON": tot_won * pe_p * pp.pe_weight_fraction / f,
                             "OFF": 0.0}
        else:
            sa_l.static_j = {"ON": tot_on * pe_p / f, "W_ON": tot_won * pe_p * pp.pe_weight_fraction / f,
                             "OFF": off * pe_p * gated_ratio / f}
            sa_l.transitions = wakes
            sa_l.transition_j = wakes * (transition_energy(chip, pp, "sa_pe_won")
                                         + transition_energy(chip, pp, "sa_pe"))
            tl.add(0, max(run, 1), total_pe * gated_ratio * pe_p / f)
            for tile in tiles:
                tl.add(tile.load_start, tile.load_start + 1, tile.k * tile.n * (
                    transition_energy(chip, pp, "sa_pe_won") + transition_energy(chip, pp, "sa_pe")))

    # SRAM
    sr_l = ledger.get("sram", chip.num_segments)
    p_seg = sw["sram"] / chip.num_segments
    if pol.ideal:
        live = sum((v[1] - v[0]) * (seg_of[b][1] - seg_of[b][0]) for b, v in sram_live.items())
        acc = min(sram_access_seg_cycles, live) if live else sram_access_seg_cycles
        sr_l.mode_cycles = {"ON": acc, "SLEEP": max(0, live - acc),
                            "OFF": run * chip.num_segments - max(live, acc)}
        sr_l.static_j = {"ON": acc * p_seg / f, "SLEEP": max(0, live - acc) * p_seg * pp.leakage_sram_sleep / f,
                         "OFF": 0.0}
    else:
        mc = sram.mode_cycles()
        sr_l.mode_cycles = mc
        sr_l.static_j = {"ON": mc["ON"] * p_seg / f,
                         "SLEEP": mc["SLEEP"] * p_seg * pp.leakage_sram_sleep / f,
                         "OFF": mc["OFF"] * p_seg * pp.leakage_sram_off / f}
        sr_l.transitions = sram.gate_counts[1] + sram.gate_counts[2]
        sr_l.transition_j = (sram.gate_counts[1] * transition_energy(chip, pp, "sram_sleep")
                             + sram.gate_counts[2] * transition_energy(chip, pp, "sram_off"))
    tl.add(0, max(run, 1), sr_l.static_total + sr_l.transition_j)  # SRAM spread uniformly

    # uncore
    un = ledger.get("uncore")
    un.mode_cycles = {"ON": run}
    un.static_j = {"ON": run * sw["uncore"] / f}
    tl.add(0, max(run, 1), un.static_total)

    # dynamic energy attributed by component
    for name, keys in (("sa", ["sa_mac"]), ("vu", ["vu_lane_op"]), ("sram", ["sram_byte"]),
                       ("hbm_ctrl", ["hbm_byte"]), ("ici_ctrl", ["ici_byte"]),
                       ("uncore", ["instr_issue", "setpm_issue"])):
        ledger.get(name).dynamic_j = {k: dyn[k] * 1e-12 for k in keys}

    seconds = run / f
    total = ledger.total_j
    windows = sorted((k, (v[0], v[1])) for k, v in op_win.items() if v[1] > v[0])
    peak, peak_op = 0.0, ""
    if windows:
        en = tl.integrate([w for _, w in windows])
        pw = en / np.array([(w[1] - w[0]) / f for _, w in windows])
        i = int(np.argmax(pw))
        peak, peak_op = float(pw[i]), windows[i][0]

    sa_busy = [0] * chip.num_sa
    for tile in tiles:
        sa_busy[tile.sa] += max(tile.end, tile.load_end) - tile.load_start
    util = {
        "sa_temporal": (sum(sa_busy) / (chip.num_sa * core)) if core else 0.0,
        "sa_spatial": (macs / (sum(sa_busy) * W ** 2)) if sum(sa_busy) else 0.0,
        "vu_temporal": (sum(vu_busy) / (chip.num_vu * core)) if core else 0.0,
        "hbm_temporal": (min(core, _union_length(hbm_spans)) / core) if core else 0.0,
        "ici_temporal": (min(core, _union_length(ici_spans)) / core) if core else 0.0,
        "flops_utilization": (macs / (chip.peak_macs_per_cycle * core)) if core else 0.0,
    }
    events = []
    if not pol.ideal:
        for c in vu_ctl + ([] if pol.sa != "whole" else sa_ctl) + [hbm_ctl, ici_ctl]:
            events.extend(c.events)
        events.extend(sram.events)
    events.sort(key=lambda e: (e.cycle, e.component))
    ev_counts = {}
    for e in events:
        comp = e.component.rstrip("0123456789").split("[")[0]
        key = f"{comp}:{e.to_mode}"
        n_units = 1
        if "[" in e.component:  # SRAM events cover a segment range
            a, b = e.component[e.component.index("[") + 1:-1].split(":")
            n_units = int(b) - int(a)
        ev_counts[key] = ev_counts.get(key, 0) + n_units
    hist = {}
    if plans:
        from .workload import sram_demand_histogram
        durs = {k: v[1] - v[0] for k, v in op_win.items()}
        hist = sram_demand_histogram(plans, durs if sum(durs.values()) > 0 else None)
    return SimReport(
        policy=pol.name, chip=chip.name, workload=workload, run_cycles=run, seconds=seconds,
        ledger=ledger, utilization=util, stalls=stalls, gating_events=ev_counts,
        avg_power_w=(total / seconds) if seconds else 0.0, peak_power_w=peak, peak_op=peak_op,
        op_windows={k: tuple(v) for k, v in sorted(op_win.items())}, sram_demand_histogram=hist,
        setpm_count=setpms, warnings=list(p.warnings), events=events,
        sram_segment_off=[] if pol.ideal else [int(x) for x in sram.cycles[2]],
    )


def _apply_setpm(s: SetPM, t, vu_ctl, sa_ctl, hbm_ctl, ici_ctl, sram: SRAMSegments, seg_bytes: int):
    if s.variant == "sram_range":
        a, b = s.start // seg_bytes, -(-s.end // seg_bytes)
        sram.setpm(a, min(b, sram.n), t, s.mode)
        return
    if s.variant == "fu_reg":
        raise SimulationError("register-operand setpm must be resolved to an immediate before simulation")
    pool = {"vu": vu_ctl, "sa": sa_ctl, "hbm": [hbm_ctl], "ici": [ici_ctl]}[s.fu_type]
    for i in vu_ids(s.fu_id):
        if i >= len(pool):
            raise SimulationError(f"setpm targets {s.fu_type}{i} but only {len(pool)} exist")
        pool[i].setpm(t, s.mode)


# -- fleet and comparison --------------------------------------------------

def idle_power(chip: ChipConfig, pp: PowerParams, policy: str) -> float:
    """Chip power while powered on without a job, in the policy's quiescent state."""
    sw = pp.static_w
    logic = sw["sa"] * chip.num_sa + sw["vu"] * chip.num_vu + sw["hbm_ctrl"] + sw["ici_ctrl"]
    if policy == "nopg":
        return logic + sw["sram"] + sw["uncore"]
    if policy == "ideal":
        return sw["uncore"]
    sram_ratio = pp.leakage_sram_off if policy == "hwsw" else pp.leakage_sram_sleep
    return logic * pp.leakage_logic_off + sw["sram"] * sram_ratio + sw["uncore"]


def duty_cycle_adjust(r: SimReport, fleet: FleetParams, pp: PowerParams, chip: ChipConfig) -> float:
    """Fleet energy: PUE x (busy energy + energy while idle between jobs)."""
    d = fleet.duty_cycle
    if d <= 0:
        raise ValueError("duty_cycle must be > 0")
    idle_s = r.seconds * (1 - d) / d
    return fleet.pue * (r.total_j + idle_s * idle_power(chip, pp, r.policy))


def prepare_program(p: Program, pp: PowerParams, policy: str) -> Program:
    """The program a policy executes: hwsw runs the instrumented version."""
    if Policy.from_name(policy).software and not any(isinstance(i.kind, SetPM) for i in p.instrs):
        from .passes import instrument_program
        return instrument_program(p, pp)
    return p


def run_policies(p: Program, chip: ChipConfig, pp: PowerParams, policies, workload: str = "",
                 plans=None) -> dict[str, SimReport]:
    out = {}
    for name in policies:
        prog = prepare_program(p, pp, name)
        out[name] = simulate(prog, chip, pp, name, workload=workload, plans=plans)
    return out


def compare_policies(p: Program, chip: ChipConfig, pp: PowerParams, policies, workload: str = "",
                     plans=None, reports: dict | None = None) -> list[dict]:
    """Per-policy energy, savings and runtime overhead relative to nopg, and gap to ideal."""
    policies = list(policies)
    if len(policies) < 2:
        raise ValueError("compare_policies needs at least two policies")
    need = list(dict.fromkeys(policies + ["nopg"]))
    reps = dict(reports or {})
    missing = [x for x in need if x not in reps]
    reps.update(run_policies(p, chip, pp, missing, workload, plans))
    base = reps["nopg"]
    ideal = reps.get("ideal")
    rows = []
    for name in policies:
        r = reps[name]
        row = {
            "workload": workload,
            "chip": chip.name,
            "policy": name,
            "energy_j": r.total_j,
            "static_j": r.static_j,
            "dynamic_j": r.dynamic_j,
            "transition_j": r.transition_j,
            "savings_vs_nopg": 1 - r.total_j / base.total_j if base.total_j else 0.0,
            "runtime_cycles": r.run_cycles,
            "runtime_overhead": r.run_cycles / base.run_cycles - 1 if base.run_cycles else 0.0,
            "avg_power_w": r.avg_power_w,
            "peak_power_w": r.peak_power_w,
            "setpm_count": r.setpm_count,
        }
        if ideal is not None and base.total_j:
            row["gap_to_ideal_pp"] = 100 * (r.total_j - ideal.total_j) / base.total_j
        rows.append(row)
    return rows


def ledger_total(r: SimReport) -> float:
    return math.fsum(c.total for c in r.ledger.components.values())
