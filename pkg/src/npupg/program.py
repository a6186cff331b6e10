"""Tile-level VLIW program: instructions, static schedule, SRAM buffers, setpm codec.

A bundle is one issue cycle of the static schedule.  Multi-cycle
instructions hold their unit without blocking issue to other units.  DMA and
ICI instructions are asynchronous: they occupy their engine for the
bandwidth-limited transfer time and complete after the link latency.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Union

from .chip import ChipConfig, ceil_div
from .workload import (Collective, Elementwise, EmbeddingLookup, HostDMA, LayerNorm, MatMul,
                       OperatorGraph, Softmax, TilePlan, collective_cycles, fused_edges)

PUSH_ROWS = 8
FU_TYPES = ("sa", "vu", "hbm", "ici", "sram")
MODES = ("auto", "on", "off", "sleep")
VARIANTS = ("sram_range", "fu_reg", "fu_imm")
INF = math.inf


class ProgramError(ValueError):
    pass


class MalformedInstruction(ValueError):
    pass


class AllocationError(ProgramError):
    pass


# -- instruction payloads --------------------------------------------------

@dataclass(frozen=True)
class SALoadWeights:
    sa_id: int
    tile_k: int
    tile_n: int
    tile_rows: int = 0  # input rows that will stream through this weight block
    weight_mask_ref: str = ""


@dataclass(frozen=True)
class SAPush:
    sa_id: int
    rows: int
    last: bool = False  # last push of a weight block; carries the array drain


@dataclass(frozen=True)
class VUOp:
    vu_mask: int
    cycles: int
    lanes_used: int = 0


@dataclass(frozen=True)
class DMAOp:
    bytes: int
    direction: str = "in"  # in | out | host | rdma


@dataclass(frozen=True)
class ICIOp:
    bytes: int
    step: str = "AllReduce"
    cycles: int = 0


@dataclass(frozen=True)
class SetPM:
    variant: str
    fu_type: str
    mode: str
    fu_id: int = 0  # bitmap (fu_imm) or register index (fu_reg)
    start: int = 0  # sram_range: byte address, or register index when encoded
    end: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise MalformedInstruction(f"unknown setpm variant {self.variant!r}")
        if self.mode not in MODES:
            raise MalformedInstruction(f"unknown setpm mode {self.mode!r}")
        if self.fu_type not in FU_TYPES:
            raise MalformedInstruction(f"unknown fu_type {self.fu_type!r}")
        if self.variant == "sram_range":
            if self.fu_type != "sram":
                raise MalformedInstruction("sram_range variant must target sram")
            if not 0 <= self.start < self.end:
                raise MalformedInstruction("sram_range needs start < end")
        else:
            if self.fu_type == "sram":
                raise MalformedInstruction("sram is addressed only by the sram_range variant")
            if self.mode == "sleep":
                raise MalformedInstruction("sleep mode is valid only for sram")
            if not 0 <= self.fu_id < 256:
                raise MalformedInstruction("fu_id must fit 8 bits")
            if self.variant == "fu_imm" and self.fu_id == 0:
                raise MalformedInstruction("empty fu_id bitmap")

    def __str__(self):
        if self.variant == "sram_range":
            return f"setpm [{self.start:#x},{self.end:#x}),sram,{self.mode}"
        if self.variant == "fu_reg":
            return f"setpm %r{self.fu_id},{self.fu_type},{self.mode}"
        return f"setpm {self.fu_id:#b},{self.fu_type},{self.mode}"


@dataclass(frozen=True)
class Barrier:
    pass


Payload = Union[SALoadWeights, SAPush, VUOp, DMAOp, ICIOp, SetPM, Barrier]


@dataclass(frozen=True)
class SRAMAccess:
    buffer: int
    bytes: int
    write: bool = False


@dataclass
class Instr:
    kind: Payload
    latency: int
    occupancy: int
    cycle: int = 0
    deps: tuple[int, ...] = ()
    op_id: str = ""
    sram: tuple[SRAMAccess, ...] = ()

    @property
    def unit(self) -> tuple[str, int] | None:
        k = self.kind
        if isinstance(k, (SALoadWeights, SAPush)):
            return ("sa", k.sa_id)
        if isinstance(k, VUOp):
            return ("vu", k.vu_mask)
        if isinstance(k, DMAOp):
            return ("hbm", 0)
        if isinstance(k, ICIOp):
            return ("ici", 0)
        if isinstance(k, SetPM):
            return ("misc", 0)
        return None

    @property
    def end(self) -> int:
        return self.cycle + self.latency


def vu_ids(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


@dataclass(frozen=True)
class BufferAllocation:
    buffer: int
    start_addr: int
    size: int
    live_start: int  # instruction indices (inclusive)
    live_end: int
    start_cycle: int = 0  # schedule cycles [start_cycle, end_cycle)
    end_cycle: int = 0
    name: str = ""

    @property
    def end_addr(self) -> int:
        return self.start_addr + self.size


@dataclass
class Bundle:
    cycle: int
    instrs: list[int]  # indices into Program.instrs


@dataclass
class Program:
    chip_name: str
    num_sa: int
    num_vu: int
    sa_width: int
    sram_bytes: int
    segment_bytes: int
    instrs: list[Instr] = field(default_factory=list)
    allocations: list[BufferAllocation] = field(default_factory=list)
    op_order: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def length(self) -> int:
        """Schedule length: cycle at which the last instruction completes."""
        return max((i.end for i in self.instrs), default=0)

    def bundles(self) -> list[Bundle]:
        out: list[Bundle] = []
        for idx, ins in enumerate(self.instrs):
            if out and out[-1].cycle == ins.cycle:
                out[-1].instrs.append(idx)
            else:
                out.append(Bundle(ins.cycle, [idx]))
        return out

    def alloc_by_buffer(self) -> dict[int, BufferAllocation]:
        return {a.buffer: a for a in self.allocations}

    def segment_ranges(self) -> dict[int, tuple[int, int]]:
        seg = self.segment_bytes
        return {a.buffer: (a.start_addr // seg, ceil_div(a.end_addr, seg)) for a in self.allocations}

    def count(self, kind) -> int:
        return sum(isinstance(i.kind, kind) for i in self.instrs)

    def validate(self) -> None:
        """Slot exclusivity, one setpm per bundle, dependency order, buffer liveness."""
        allocs = self.alloc_by_buffer()
        for b in self.bundles():
            seen: set = set()
            for idx in b.instrs:
                ins = self.instrs[idx]
                u = ins.unit
                if u is None:
                    continue
                units = [("vu", v) for v in vu_ids(u[1])] if u[0] == "vu" else [u]
                for uu in units:
                    if uu in seen and uu[0] not in ("hbm", "ici"):
                        raise ProgramError(f"bundle at cycle {b.cycle}: two instructions for {uu}")
                    seen.add(uu)
                if isinstance(ins.kind, VUOp) and not 0 < ins.kind.vu_mask < (1 << self.num_vu):
                    raise ProgramError(f"instruction {idx}: vu_mask outside {self.num_vu} VUs")
        for idx, ins in enumerate(self.instrs):
            for d in ins.deps:
                if not 0 <= d < idx:
                    raise ProgramError(f"instruction {idx}: dependency {d} does not precede it")
            for acc in ins.sram:
                a = allocs.get(acc.buffer)
                if a is None or not a.live_start <= idx <= a.live_end:
                    raise ProgramError(f"instruction {idx}: SRAM access outside a live allocation")
        live = sorted(self.allocations, key=lambda a: a.start_addr)
        for i, a in enumerate(live):
            if a.start_addr % self.segment_bytes:
                raise ProgramError(f"buffer {a.buffer} not segment aligned")
            if a.end_addr > self.sram_bytes:
                raise ProgramError(f"buffer {a.buffer} exceeds SRAM")
            for b in live[i + 1:]:
                if b.start_addr >= a.end_addr:
                    break
                if a.live_start <= b.live_end and b.live_start <= a.live_end:
                    raise ProgramError(f"buffers {a.buffer} and {b.buffer} overlap while live")


# -- lowering --------------------------------------------------------------

class _Buffer:
    __slots__ = ("id", "size", "name")

    def __init__(self, bid, size, name):
        self.id, self.size, self.name = bid, size, name


class _Lowerer:
    def __init__(self, chip: ChipConfig, vu_granularity: str):
        self.chip = chip
        self.gran = vu_granularity
        self.instrs: list[Instr] = []
        self.unit_free: dict = {}  # unit -> sorted disjoint busy intervals
        self.buffers: list[_Buffer] = []
        self.sa_rr = 0
        self.vu_rr = 0
        self.op = ""

    # scheduling: ASAP list scheduling in emission order
    def emit(self, kind, latency, occupancy=None, deps=(), sram=(), grid=0, lead=0) -> int:
        occ = latency if occupancy is None else occupancy
        ins = Instr(kind, latency, occ, 0, tuple(sorted(set(d for d in deps if d is not None))),
                    self.op, tuple(sram))
        t = max([self.instrs[d].end for d in ins.deps], default=0)
        units = self._units(ins)
        if grid:
            t += -(t + lead) % grid
        if occ > 0 and units:
            # earliest slot free on every unit (backfills gaps left by earlier emission)
            while True:
                t2 = max(self._slot(u, t, occ) for u in units)
                if grid:
                    t2 += -(t2 + lead) % grid
                if t2 == t:
                    break
                t = t2
            for u in units:
                self._reserve(u, t, t + occ)
        ins.cycle = t
        self.instrs.append(ins)
        return len(self.instrs) - 1

    def _slot(self, u, t: int, occ: int) -> int:
        busy = self.unit_free.setdefault(u, [])
        i = max(0, bisect.bisect_right(busy, (t, math.inf)) - 1)
        while i < len(busy):
            a, b = busy[i]
            if b <= t:
                i += 1
                continue
            if a >= t + occ:
                break
            t = b
            i += 1
        return t

    def _reserve(self, u, a: int, b: int) -> None:
        busy = self.unit_free[u]
        i = bisect.bisect_left(busy, (a, b))
        if i > 0 and busy[i - 1][1] == a:
            i -= 1
            a = busy[i][0]
            del busy[i]
        if i < len(busy) and busy[i][0] == b:
            b = busy[i][1]
            del busy[i]
        busy.insert(i, (a, b))

    @staticmethod
    def _units(ins: Instr):
        u = ins.unit
        if u is None:
            return []
        if u[0] == "vu":
            return [("vu", v) for v in vu_ids(u[1])]
        return [u]

    def buffer(self, size: int, name: str) -> int:
        b = _Buffer(len(self.buffers), max(1, size), name)
        self.buffers.append(b)
        return b.id

    def barrier(self, deps) -> int | None:
        deps = [d for d in deps if d is not None]
        if not deps:
            return None
        if len(deps) == 1:
            return deps[0]
        return self.emit(Barrier(), 0, deps=deps)

    def dma(self, nbytes, direction, deps=(), sram=()) -> int:
        bw = max(1, math.ceil(nbytes / self.chip.hbm_bytes_per_cycle))
        return self.emit(DMAOp(int(nbytes), direction), self.chip.hbm_latency + bw, bw, deps, sram)

    def vu_spread(self, elems_ops: int, deps, sram=()) -> list[int]:
        """Split element work evenly across every VU."""
        c = self.chip
        per_vu = max(1, ceil_div(elems_ops, c.num_vu * c.vu_width))
        lanes = min(c.vu_width, ceil_div(elems_ops, c.num_vu * per_vu))
        return [self.emit(VUOp(1 << v, per_vu, lanes), per_vu, deps=deps, sram=sram)
                for v in range(c.num_vu)]


def _matmul(lw: _Lowerer, op, plan: TilePlan, in_dep, in_buf, out_buf, fused_out):
    """Returns the list of instructions that complete the operator."""
    k, c, d = op.kind, lw.chip, op.dtype_bytes
    W = c.sa_width
    tm, tn, tk = plan.tile_m, plan.tile_n, plan.tile_k
    a_in = in_buf[0] if in_buf else None
    b_in = in_buf[1] if len(in_buf) > 1 else None
    in_dep = list(in_dep) + [None, None]
    done: list[int] = []
    tile_done: list[int | None] = []  # last compute instruction per SRAM tile
    for inst in range(k.count):
        for m0 in range(0, k.M, tm):
            mt = min(tm, k.M - m0)
            for n0 in range(0, k.N, tn):
                nt = min(tn, k.N - n0)
                acc = out_buf if fused_out else lw.buffer(mt * nt * d, f"{op.id}.acc")
                acc_last: dict[int, int] = {}  # last block per output column block
                for k0 in range(0, k.K, tk):
                    kt = min(tk, k.K - k0)
                    db = tile_done[-2] if len(tile_done) >= 2 else None
                    if a_in is None:
                        abuf = lw.buffer(mt * kt * d, f"{op.id}.a")
                        a_dma = lw.dma(mt * kt * d, "in", [in_dep[0], db],
                                       [SRAMAccess(abuf, mt * kt * d, True)])
                    else:
                        abuf, a_dma = a_in, in_dep[0]
                    if b_in is None:
                        bbuf = lw.buffer(kt * nt * d, f"{op.id}.b")
                        b_dma = lw.dma(kt * nt * d, "in", [in_dep[1], db],
                                       [SRAMAccess(bbuf, kt * nt * d, True)])
                    else:
                        bbuf, b_dma = b_in, in_dep[1]
                    for kb in range(0, kt, W):
                        kr = min(W, kt - kb)
                        for nb in range(0, nt, W):
                            nc = min(W, nt - nb)
                            prev = [acc_last[nb]] if nb in acc_last else []
                            acc_last[nb] = _sa_block(lw, mt, kr, nc, d, abuf, bbuf, acc,
                                                     [a_dma, b_dma] + prev)
                    blocks = list(acc_last.values())
                    tile_done.append(blocks[0] if len(blocks) == 1 else lw.barrier(blocks))
                if not fused_out:
                    done.append(lw.dma(mt * nt * d, "out", tile_done[-1:],
                                       [SRAMAccess(acc, mt * nt * d)]))
                else:
                    done.append(tile_done[-1])
    return done


def _sa_block(lw: _Lowerer, rows, kr, nc, d, abuf, bbuf, acc, deps) -> int:
    c = lw.chip
    W = c.sa_width
    sa = lw.sa_rr % c.num_sa
    lw.sa_rr += 1
    # pushes of every SA run on one global PUSH_ROWS grid so concurrent blocks share bundles
    load = lw.emit(SALoadWeights(sa, kr, nc, rows, f"k{kr}n{nc}"), kr, deps=deps[:2],
                   sram=[SRAMAccess(bbuf, kr * nc * d)], grid=PUSH_ROWS, lead=kr)
    pushes = []
    prev = load
    n_push = ceil_div(rows, PUSH_ROWS)
    for p in range(n_push):
        r = min(PUSH_ROWS, rows - p * PUSH_ROWS)
        last = p == n_push - 1
        lat = r + 2 * W - 1 if last else r
        prev = lw.emit(SAPush(sa, r, last), lat, deps=[prev],
                       sram=[SRAMAccess(abuf, r * kr * d)])
        pushes.append(prev)
    if lw.gran == "stream":
        # one 1-cycle vadd per push, all SAs of a round on one VU
        outs = []
        for p, pi in enumerate(pushes):
            v = (p % c.num_vu)
            outs.append(lw.emit(VUOp(1 << v, 1, c.vu_width), 1, deps=[pi],
                                sram=[SRAMAccess(acc, PUSH_ROWS * nc * 4, True)]))
        return lw.barrier(outs) if len(outs) > 1 else outs[0]
    vus = lw.vu_spread(rows * nc, [pushes[-1]] + deps[2:],
                       [SRAMAccess(acc, rows * nc * 4, True)])
    return lw.barrier(vus)


def _streaming(lw: _Lowerer, op, plan: TilePlan, in_dep, in_buf, out_buf, fused_out):
    k, d = op.kind, op.dtype_bytes
    c = lw.chip
    n_tiles = plan.num_tiles
    if isinstance(k, Elementwise):
        total, unit_bytes, arity = k.elems, d, k.arity
        work_per = k.arity
    elif isinstance(k, (Softmax, LayerNorm)):
        total, unit_bytes, arity = k.rows, k.cols * d, 1
        work_per = 4 * k.cols
    else:
        total, unit_bytes, arity = k.num_lookups, k.vector_bytes, 1
        work_per = k.vector_bytes // 4 or 1
    out_per = (lambda n: ceil_div(n, k.pooling) * k.vector_bytes) if isinstance(k, EmbeddingLookup) \
        else (lambda n: n * unit_bytes)
    done: list[int] = []
    compute_done: list[int] = []
    for t in range(n_tiles):
        n = min(plan.tile_m, total - t * plan.tile_m)
        db = compute_done[-2] if len(compute_done) >= 2 else None
        in_bufs, deps = [], []
        for j in range(arity):
            if j < len(in_buf) and in_buf[j] is not None:
                in_bufs.append(in_buf[j])
                deps.append(in_dep[j])
            else:
                b = lw.buffer(n * unit_bytes, f"{op.id}.in{j}")
                dep = in_dep[j] if j < len(in_dep) else None
                deps.append(lw.dma(n * unit_bytes, "in", [dep, db],
                                   [SRAMAccess(b, n * unit_bytes, True)]))
                in_bufs.append(b)
        ob = out_buf if fused_out else lw.buffer(out_per(n), f"{op.id}.out")
        acc = [SRAMAccess(b, n * unit_bytes) for b in in_bufs] + [SRAMAccess(ob, out_per(n), True)]
        vus = lw.vu_spread(n * work_per, deps, acc)
        cd = lw.barrier(vus)
        compute_done.append(cd)
        if fused_out:
            done.append(cd)
        else:
            done.append(lw.dma(out_per(n), "out", [cd], [SRAMAccess(ob, out_per(n))]))
    return done


def lower(plans: list[TilePlan], graph: OperatorGraph, chip: ChipConfig,
          vu_granularity: str = "block") -> Program:
    """Lower tiled operators to a statically scheduled program with SRAM allocations."""
    if vu_granularity not in ("block", "stream"):
        raise ProgramError(f"unknown VU granularity {vu_granularity!r}")
    by_op = {p.op_id: p for p in plans}
    missing = [o.id for o in graph if o.id not in by_op]
    if missing:
        raise ProgramError(f"plans do not cover operators {missing}")
    fused = fused_edges(plans)
    lw = _Lowerer(chip, vu_granularity)
    done: dict[str, int | None] = {}
    fused_buf: dict[str, int] = {}
    for op in graph:
        lw.op = op.id
        plan = by_op[op.id]
        k = op.kind
        out_fused = any(e[0] == op.id for e in fused)
        out_buf = lw.buffer(op.output_bytes, f"{op.id}.fused") if out_fused else None
        if out_fused:
            fused_buf[op.id] = out_buf
        in_dep = [done.get(p) for p in op.predecessors]
        in_buf = [fused_buf[p] if (p, op.id) in fused else None for p in op.predecessors]
        if isinstance(k, MatMul):
            ends = _matmul(lw, op, plan, in_dep, in_buf, out_buf, out_fused)
        elif isinstance(k, (Elementwise, Softmax, LayerNorm, EmbeddingLookup)):
            ends = _streaming(lw, op, plan, in_dep, in_buf, out_buf, out_fused)
        elif isinstance(k, Collective):
            if k.participants <= 1:
                ends = [lw.barrier(in_dep)] if any(d is not None for d in in_dep) else []
            else:
                cyc = max(1, collective_cycles(k, chip))
                ends = [lw.emit(ICIOp(k.bytes, k.op, cyc), chip.ici_latency + cyc, cyc, in_dep)]
        else:  # HostDMA
            ends = [lw.dma(k.bytes, "host", in_dep)]
        done[op.id] = lw.barrier(ends)
    prog = _finalize(lw, chip)
    prog.op_order = [o.id for o in graph]
    return prog


def _finalize(lw: _Lowerer, chip: ChipConfig) -> Program:
    order = sorted(range(len(lw.instrs)), key=lambda i: (lw.instrs[i].cycle, i))
    remap = {old: new for new, old in enumerate(order)}
    instrs = []
    for old in order:
        ins = lw.instrs[old]
        instrs.append(replace(ins, deps=tuple(sorted(remap[d] for d in ins.deps))))
    prog = Program(chip.name, chip.num_sa, chip.num_vu, chip.sa_width, chip.sram_bytes,
                   chip.sram_segment_bytes, instrs)
    prog.allocations = allocate(prog, {b.id: (b.size, b.name) for b in lw.buffers})
    return prog


def allocate(prog: Program, buffers: dict[int, tuple[int, str]]) -> list[BufferAllocation]:
    """First-fit linear scan over buffer live ranges; segment-aligned; addresses reused after death."""
    first: dict[int, int] = {}
    last: dict[int, int] = {}
    for idx, ins in enumerate(prog.instrs):
        for a in ins.sram:
            first.setdefault(a.buffer, idx)
            last[a.buffer] = idx
    seg = prog.segment_bytes
    ranges = []
    for b, s in first.items():
        e = last[b]
        start_c = prog.instrs[s].cycle
        end_c = max(prog.instrs[i].end for i in range(s, e + 1)
                    if any(a.buffer == b for a in prog.instrs[i].sram))
        ranges.append((start_c, s, b, e, end_c))
    ranges.sort()
    active: list[tuple[int, int, int]] = []  # (end_cycle, start_addr, size)
    out = []
    for start_c, s, b, e, end_c in ranges:
        active = [x for x in active if x[0] > start_c]
        size = ceil_div(buffers[b][0], seg) * seg
        addr = 0
        for _, a0, sz in sorted(active, key=lambda x: x[1]):
            if a0 - addr >= size:
                break
            addr = max(addr, a0 + sz)
        if addr + size > prog.sram_bytes:
            raise AllocationError(
                f"SRAM over capacity: buffer {buffers[b][1]} ({size} B) at cycle {start_c}")
        active.append((end_c, addr, size))
        out.append(BufferAllocation(b, addr, size, s, e, start_c, end_c, buffers[b][1]))
    out.sort(key=lambda a: a.buffer)
    return out


# -- setpm codec -----------------------------------------------------------

_MODE_BITS = {m: i for i, m in enumerate(MODES)}
_FU_BITS = {"sa": 0, "vu": 1, "hbm": 2, "ici": 3}


def encode_setpm(s: SetPM) -> int:
    """[1:0] mode, [3:2] variant, [6:4] fu_type, [15:8] fu_id; sram_range: [9:4] start reg, [15:10] end reg."""
    word = _MODE_BITS[s.mode] | (VARIANTS.index(s.variant) << 2)
    if s.variant == "sram_range":
        if not (0 <= s.start < 64 and 0 <= s.end < 64):
            raise MalformedInstruction("sram_range encodes register indices < 64")
        return word | (s.start << 4) | (s.end << 10)
    return word | (_FU_BITS[s.fu_type] << 4) | (s.fu_id << 8)


def decode_setpm(word: int) -> SetPM:
    if not 0 <= word < 1 << 32:
        raise MalformedInstruction("setpm word must be 32 bits")
    mode = MODES[word & 3]
    variant = (word >> 2) & 3
    if variant == 3:
        raise MalformedInstruction("reserved setpm variant 3")
    if word >> 16:
        raise MalformedInstruction("reserved high bits set")
    if variant == 0:
        return SetPM("sram_range", "sram", mode, start=(word >> 4) & 63, end=(word >> 10) & 63)
    fu = (word >> 4) & 7
    if fu >= 4 or word & 0x80:
        raise MalformedInstruction(f"reserved fu_type {fu}")
    return SetPM(VARIANTS[variant], FU_TYPES[fu], mode, fu_id=(word >> 8) & 0xFF)


def parse_setpm(text: str) -> SetPM:
    """Assembly form, e.g. ``setpm 0b1011,vu,off`` or ``setpm [0x0,0x800000),sram,off``."""
    m = re.fullmatch(r"\s*setpm\s+(.+?),\s*(\w+)\s*,\s*(\w+)\s*", text)
    if not m:
        raise MalformedInstruction(f"cannot parse {text!r}")
    target, fu, mode = m.groups()
    if fu == "sram":
        r = re.fullmatch(r"\[\s*(\w+)\s*,\s*(\w+)\s*\)", target)
        if not r:
            raise MalformedInstruction("sram target must be [start,end)")
        return SetPM("sram_range", "sram", mode, start=int(r.group(1), 0), end=int(r.group(2), 0))
    if target.startswith("%r"):
        return SetPM("fu_reg", fu, mode, fu_id=int(target[2:]))
    return SetPM("fu_imm", fu, mode, fu_id=int(target, 0))


# -- analysis helpers ------------------------------------------------------

@dataclass(frozen=True)
class SlotGap:
    vu: int
    start: int  # end of the earlier VUOp
    end: int    # issue of the later VUOp
    distance: float  # idle cycles, or infinity across a DMA

    @property
    def length(self) -> int:
        return self.end - self.start


def _dma_ancestor(prog: Program) -> list[int]:
    """Index of the latest DMA each instruction depends on (transitively), -1 if none."""
    out = [-1] * len(prog.instrs)
    for i, ins in enumerate(prog.instrs):
        best = -1
        for d in ins.deps:
            cand = d if isinstance(prog.instrs[d].kind, DMAOp) else out[d]
            best = max(best, cand)
        out[i] = best
    return out


def vu_slot_distances(p: Program) -> dict[int, list[SlotGap]]:
    """Idle cycles between consecutive instructions of each VU slot.

    The distance is infinite when the later VUOp waits on a DMA issued after
    the earlier one: that gap is bounded below by the HBM latency.
    """
    anc = _dma_ancestor(p)
    last: dict[int, int] = {}
    out: dict[int, list[SlotGap]] = {v: [] for v in range(p.num_vu)}
    for idx, ins in enumerate(p.instrs):
        if not isinstance(ins.kind, VUOp):
            continue
        for v in vu_ids(ins.kind.vu_mask):
            if v in last:
                prev = p.instrs[last[v]]
                dist = INF if anc[idx] > last[v] else ins.cycle - prev.end
                out.setdefault(v, []).append(SlotGap(v, prev.end, ins.cycle, dist))
            last[v] = idx
    return out


# -- text dump / load ------------------------------------------------------

_KINDS = {c.__name__: c for c in (SALoadWeights, SAPush, VUOp, DMAOp, ICIOp, SetPM, Barrier)}


def _fmt_payload(k) -> str:
    args = ",".join(f"{f.name}={getattr(k, f.name)}" for f in fields(k))
    return f"{type(k).__name__}({args})"


def _parse_payload(s: str):
    m = re.fullmatch(r"(\w+)\((.*)\)", s)
    if not m or m.group(1) not in _KINDS:
        raise ProgramError(f"bad instruction {s!r}")
    cls = _KINDS[m.group(1)]
    kw = {}
    types = {f.name: f.type for f in fields(cls)}
    for part in filter(None, m.group(2).split(",")):
        key, val = part.split("=", 1)
        t = types[key]
        kw[key] = (val == "True") if t in ("bool", bool) else int(val) if t in ("int", int) else val
    return cls(**kw)


def dumps(p: Program) -> str:
    """One bundle per line; instructions separated by `` ; ``."""
    lines = [
        "# npupg program v1",
        f"chip {p.chip_name} sa={p.num_sa} vu={p.num_vu} width={p.sa_width} "
        f"sram={p.sram_bytes} seg={p.segment_bytes}",
    ]
    for a in p.allocations:
        lines.append(f"alloc {a.buffer} addr={a.start_addr} size={a.size} live={a.live_start}:{a.live_end} "
                     f"cycles={a.start_cycle}:{a.end_cycle} name={a.name}")
    for b in p.bundles():
        parts = []
        for idx in b.instrs:
            ins = p.instrs[idx]
            s = f"{_fmt_payload(ins.kind)} lat={ins.latency} occ={ins.occupancy}"
            if ins.deps:
                s += " deps=" + ",".join(map(str, ins.deps))
            if ins.sram:
                s += " sram=" + ",".join(f"{a.buffer}:{a.bytes}:{'w' if a.write else 'r'}" for a in ins.sram)
            if ins.op_id:
                s += f" op={ins.op_id}"
            parts.append(s)
        lines.append(f"@{b.cycle} " + " ; ".join(parts))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Program:
    prog = None
    allocs = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("chip "):
                name, *kv = line[5:].split()
                d = dict(x.split("=") for x in kv)
                prog = Program(name, int(d["sa"]), int(d["vu"]), int(d["width"]), int(d["sram"]), int(d["seg"]))
            elif line.startswith("alloc "):
                bid, *kv = line[6:].split()
                d = dict(x.split("=", 1) for x in kv)
                ls, le = map(int, d["live"].split(":"))
                cs, ce = map(int, d["cycles"].split(":"))
                allocs.append(BufferAllocation(int(bid), int(d["addr"]), int(d["size"]), ls, le, cs, ce,
                                               d.get("name", "")))
            elif line.startswith("@"):
                head, _, rest = line.partition(" ")
                cycle = int(head[1:])
                for part in rest.split(" ; "):
                    tokens = part.split(" ")
                    payload = _parse_payload(tokens[0])
                    kv = dict(t.split("=", 1) for t in tokens[1:])
                    sram = tuple(SRAMAccess(int(b), int(n), rw == "w")
                                 for b, n, rw in (x.split(":") for x in kv["sram"].split(","))) \
                        if "sram" in kv else ()
                    deps = tuple(int(x) for x in kv["deps"].split(",")) if "deps" in kv else ()
                    prog.instrs.append(Instr(payload, int(kv["lat"]), int(kv["occ"]), cycle, deps,
                                             kv.get("op", ""), sram))
            else:
                raise ProgramError("unknown line")
        except (KeyError, ValueError, AttributeError, TypeError) as e:
            raise ProgramError(f"line {ln}: {e}") from None
    if prog is None:
        raise ProgramError("missing chip header")
    prog.allocations = allocs
    return prog
