"""Compiler power-gating passes: VU and SRAM idleness analysis, setpm instrumentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .chip import PowerParams
from .program import (INF, BufferAllocation, Instr, Program, SALoadWeights, SAPush, SetPM, VUOp,
                      vu_ids, vu_slot_distances)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdleInterval:
    unit: str  # "vu3" or "sram"
    start: int
    end: int
    length: float  # cycles, or infinity
    vu: int = -1
    seg_start: int = 0
    seg_end: int = 0
    trailing: bool = False  # runs to the end of the program: no wake needed

    @property
    def span(self) -> int:
        return self.end - self.start


def analyze_vu_idleness(p: Program) -> list[IdleInterval]:
    out = []
    for v, gaps in sorted(vu_slot_distances(p).items()):
        for g in gaps:
            if g.end > g.start:
                out.append(IdleInterval(f"vu{v}", g.start, g.end, g.distance, vu=v))
    return out


def analyze_sram_idleness(allocs: list[BufferAllocation], num_segments: int, segment_bytes: int,
                          horizon: int | None = None) -> list[IdleInterval]:
    """Rectangles (segment range x cycle range) during which no live buffer touches the segments."""
    if horizon is None:
        horizon = max((a.end_cycle for a in allocs), default=0)
    if horizon <= 0:
        return []
    spans = []
    cuts = {0, num_segments}
    for a in allocs:
        s0, s1 = a.start_addr // segment_bytes, -(-a.end_addr // segment_bytes)
        spans.append((s0, s1, a.start_cycle, a.end_cycle))
        cuts.update((s0, s1))
    cuts = sorted(c for c in cuts if 0 <= c <= num_segments)
    slabs = []
    for x, y in zip(cuts, cuts[1:]):
        live = sorted((c0, c1) for s0, s1, c0, c1 in spans if s0 < y and x < s1 and c1 > c0)
        idle, t = [], 0
        for c0, c1 in live:
            if c0 > t:
                idle.append((t, c0))
            t = max(t, c1)
        if t < horizon:
            idle.append((t, horizon))
        slabs.append([x, y, tuple(idle)])
    merged = []
    for s in slabs:
        if merged and merged[-1][1] == s[0] and merged[-1][2] == s[2]:
            merged[-1][1] = s[1]
        else:
            merged.append(s)
    out = []
    for x, y, idle in merged:
        for a, b in idle:
            out.append(IdleInterval("sram", a, b, b - a, seg_start=x, seg_end=y,
                                    trailing=b == horizon))
    out.sort(key=lambda i: (i.start, i.seg_start))
    return out


def passes_gate_test(length: float, span: int, bet: int, delay: int) -> bool:
    """Idle longer than the BET (or unbounded) and longer than a full off/on round trip."""
    return (length == INF or length > bet) and span > 2 * delay


class _Misc:
    """Misc-slot occupancy: one setpm per cycle, same-cycle VU setpms merge."""

    def __init__(self, busy: set[int]):
        self.busy = busy  # cycles whose misc slot is taken by an existing setpm
        self.groups: dict[int, list] = {}  # cycle -> [fu, mode, bitmap or (a, b)]

    def place(self, c: int, fu: str, mode: str, payload, direction: int, lo: int, hi: int):
        """Place at c or shift in ``direction`` within [lo, hi]; returns (cycle, undo) or None."""
        while lo <= c <= hi:
            g = self.groups.get(c)
            if g is None and c not in self.busy:
                self.groups[c] = [fu, mode, payload]
                return c, ("new", c)
            if g is not None and g[0] == fu == "vu" and g[1] == mode:
                old = g[2]
                g[2] = old | payload
                return c, ("bits", c, old)
            if g is not None and g[0] == fu == "sram" and g[1] == mode and g[2][1] == payload[0]:
                old = g[2]
                g[2] = (old[0], payload[1])
                return c, ("bits", c, old)
            c += direction
        return None

    def undo(self, u) -> None:
        if u[0] == "new":
            del self.groups[u[1]]
        else:
            self.groups[u[1]][2] = u[2]


def instrument(p: Program, intervals: list[IdleInterval], pp: PowerParams,
               vu_edges: bool = True, sweep_wake: bool = False) -> Program:
    """Insert setpm pairs around idle intervals that pass the BET test.

    VU intervals get ``off`` at the start and ``on`` exactly one wake-up delay
    before the next use.  SRAM ranges get ``off`` and are handed back to the
    hardware with ``auto`` one delay before their next use.  With
    ``vu_edges`` each instrumented VU is pinned on before its first use and
    released (off or auto) after its last.  With ``sweep_wake`` a live
    buffer whose next access follows a gap the sleep sweep could catch gets
    an ``auto`` one sleep delay ahead, so the wake overlaps the gap.
    """
    misc = _Misc({ins.cycle for ins in p.instrs if isinstance(ins.kind, SetPM)})
    warnings = list(p.warnings)
    d_vu, bet_vu = pp.wakeup_delay["vu"], pp.bet["vu"]
    d_sr, bet_sr = pp.wakeup_delay["sram_off"], pp.bet["sram_off"]
    horizon = p.length
    vus_done: set[int] = set()

    def pair(iv: IdleInterval, fu, payload, off_mode, on_mode, delay):
        got = misc.place(iv.start, fu, off_mode, payload, +1, iv.start, iv.end)
        if got is None:
            return False
        off_c, u1 = got
        if iv.trailing and on_mode is None:
            return True
        deadline = iv.end - delay
        got2 = misc.place(deadline, fu, on_mode, payload, -1, off_c + delay, deadline)
        if got2 is None:
            misc.undo(u1)
            return False
        return True

    for iv in sorted(intervals, key=lambda i: (i.start, i.unit, i.seg_start)):
        if iv.unit == "sram":
            if not passes_gate_test(iv.length, iv.span, bet_sr, d_sr):
                continue
            seg = p.segment_bytes
            payload = (iv.seg_start * seg, iv.seg_end * seg)
            ok = pair(iv, "sram", payload, "off", None if iv.trailing else "auto", d_sr)
        else:
            if not passes_gate_test(iv.length, iv.span, bet_vu, d_vu):
                continue
            ok = pair(iv, "vu", 1 << iv.vu, "off", "on", d_vu)
            if ok:
                vus_done.add(iv.vu)
        if not ok:
            msg = f"setpm for {iv.unit} [{iv.start},{iv.end}) unschedulable; interval skipped"
            log.warning(msg)
            warnings.append(msg)

    if vu_edges and vus_done:
        first: dict[int, Instr] = {}
        last: dict[int, Instr] = {}
        for ins in p.instrs:
            if isinstance(ins.kind, VUOp):
                for v in vu_ids(ins.kind.vu_mask):
                    first.setdefault(v, ins)
                    last[v] = ins
        for v in sorted(vus_done):
            f, l = first[v].cycle, last[v].end
            head = IdleInterval(f"vu{v}", 0, f, f, vu=v)
            if f > 0 and passes_gate_test(head.length, head.span, bet_vu, d_vu):
                pair(head, "vu", 1 << v, "off", "on", d_vu)
            else:
                misc.place(0, "vu", "on", 1 << v, +1, 0, max(0, f - d_vu))
            tail = horizon - l
            if tail > bet_vu and tail > d_vu:
                misc.place(l, "vu", "off", 1 << v, +1, l, horizon)
            else:
                misc.place(l, "vu", "auto", 1 << v, +1, l, horizon)

    if sweep_wake:
        _wake_ahead(p, misc, pp)

    new = []
    for c, (fu, mode, payload) in misc.groups.items():
        if fu == "vu":
            s = SetPM("fu_imm", "vu", mode, fu_id=payload)
        else:
            s = SetPM("sram_range", "sram", mode, start=payload[0], end=payload[1])
        new.append(Instr(s, 1, 1, c))
    return _merge(p, new, warnings)


def _wake_ahead(p: Program, misc: _Misc, pp: PowerParams) -> None:
    seg = p.segment_bytes
    ranges = p.segment_ranges()
    d = pp.wakeup_delay["sram_sleep"]
    # half a period of slack absorbs stalls that stretch gaps at run time
    gap = pp.sram_sweep_period // 2
    events = [(c, 0, g[2][0] // seg, -(-g[2][1] // seg)) for c, g in misc.groups.items()
              if g[0] == "sram" and g[1] == "auto"]
    for ins in p.instrs:
        if isinstance(ins.kind, (VUOp, SALoadWeights, SAPush)):
            events += [(ins.cycle, 1, *ranges[acc.buffer]) for acc in ins.sram]
    last = np.zeros(p.sram_bytes // seg, np.int64)
    for c, is_access, a, b in sorted(events):
        if is_access and c - int(last[a:b].min()) >= gap and c >= d:
            lo = int(last[a:b].max())
            misc.place(c - d, "sram", "auto", (a * seg, b * seg), -1, lo, c - d)
        last[a:b] = c


def _merge(p: Program, new: list[Instr], warnings: list[str]) -> Program:
    """Insert setpm instructions, placing each after the existing instructions of its bundle."""
    tagged = [(ins.cycle, 0, i, ins) for i, ins in enumerate(p.instrs)]
    tagged += [(ins.cycle, 1, i, ins) for i, ins in enumerate(new)]
    tagged.sort(key=lambda x: (x[0], x[1], x[2]))
    remap = {}
    for pos, (_, src, i, _) in enumerate(tagged):
        if src == 0:
            remap[i] = pos
    instrs = [replace(ins, deps=tuple(remap[d] for d in ins.deps)) if src == 0 else ins
              for _, src, _, ins in tagged]
    allocs = [replace(a, live_start=remap[a.live_start], live_end=remap[a.live_end])
              for a in p.allocations]
    out = Program(p.chip_name, p.num_sa, p.num_vu, p.sa_width, p.sram_bytes, p.segment_bytes,
                  instrs, allocs, list(p.op_order), warnings)
    return out


def instrument_program(p: Program, pp: PowerParams, vu: bool = True, sram: bool = True) -> Program:
    intervals = []
    if vu:
        intervals += analyze_vu_idleness(p)
    if sram:
        intervals += analyze_sram_idleness(p.allocations, p.sram_bytes // p.segment_bytes,
                                           p.segment_bytes, p.length)
    return instrument(p, intervals, pp, sweep_wake=sram)


def setpm_rate(p: Program, fu_type: str | None = None) -> float:
    """setpm instructions per 1000 schedule cycles (optionally only those targeting ``fu_type``)."""
    n = sum(1 for i in p.instrs if isinstance(i.kind, SetPM)
            and (fu_type is None or i.kind.fu_type == fu_type))
    length = p.length
    if length == 0:
        return 0.0
    return n * 1000.0 / length


def gated_cycles_estimate(intervals: list[IdleInterval], delay: int) -> int:
    """OFF cycles the instrumented intervals should yield: span minus power-down and wake."""
    return sum(max(0, iv.span - 2 * delay) for iv in intervals if not math.isinf(iv.span))
