"""Spatially power-gated systolic array (weight stationary).

PE(k, n) sits in row k (weight row / K index) and column n (output / N
index).  Inputs stream left to right along rows and partial sums flow down
columns.  Three PE modes: ON (everything powered), W_on (only the weight
register) and OFF.

Bitmaps are written as strings with the leftmost character for index 0,
e.g. ``"0100"`` marks column 1.

Stream timing used by both the oracle and the closed form: cycle 0 of a tile
window is the exposed single-PE wake-up cycle; input row ``m`` reaches
PE(k, n) at cycle ``1 + m + (k - k0) + n`` where ``k0`` is the first ON row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .chip import ChipConfig, PowerParams, transition_energy

ORACLE_MAX_WIDTH = 16


def parse_bitmap(s: str) -> np.ndarray:
    s = s.strip()
    if s.startswith(("0b", "4'b", "'b")):
        s = s.split("b", 1)[1]
    s = s.replace("_", "")
    if not s or set(s) - {"0", "1"}:
        raise ValueError(f"not a bitmap: {s!r}")
    return np.array([c == "1" for c in s], dtype=bool)


def format_bitmap(bits) -> str:
    return "".join("1" if b else "0" for b in bits)


@dataclass(frozen=True)
class WeightMask:
    row_nz: np.ndarray
    col_nz: np.ndarray

    @property
    def width(self) -> int:
        return len(self.row_nz)

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> "WeightMask":
        nz = np.asarray(weights) != 0
        return cls(row_nz=nz.any(axis=1), col_nz=nz.any(axis=0))


@dataclass(frozen=True)
class GateMasks:
    row_on: np.ndarray
    col_on: np.ndarray

    @property
    def width(self) -> int:
        return len(self.row_on)

    @property
    def rows_on(self) -> int:
        return int(self.row_on.sum())

    @property
    def cols_on(self) -> int:
        return int(self.col_on.sum())


def compute_gate_masks(row_nz, col_nz) -> GateMasks:
    """A row stays on if it or any row above is non-zero; a column if it or any column right of it is."""
    row_nz = np.asarray(row_nz, dtype=bool)
    col_nz = np.asarray(col_nz, dtype=bool)
    row_on = np.logical_or.accumulate(row_nz)
    col_on = np.logical_or.accumulate(col_nz[::-1])[::-1]
    return GateMasks(row_on=row_on, col_on=col_on)


def masks_for_tile(width: int, k_rows: int, n_cols: int) -> GateMasks:
    """Gate masks for a dense k_rows x n_cols weight block, bottom/left aligned in the array."""
    if not (0 <= k_rows <= width and 0 <= n_cols <= width):
        raise ValueError("weight block larger than the array")
    row_nz = np.zeros(width, dtype=bool)
    if k_rows:
        row_nz[width - k_rows:] = True
    col_nz = np.zeros(width, dtype=bool)
    col_nz[:n_cols] = True
    return compute_gate_masks(row_nz, col_nz)


@dataclass(frozen=True)
class SATileExec:
    rows: int  # M_t: input rows streamed through the array
    masks: GateMasks

    @property
    def width(self) -> int:
        return self.masks.width

    @property
    def latency(self) -> int:
        """Cycles from the first PE wake until every active PE has drained."""
        if self.rows == 0:
            return 0
        r, c = self.masks.rows_on, self.masks.cols_on
        if r * c == 0:
            return self.rows
        return self.rows + r + c - 1

    @staticmethod
    def ungated_latency(rows: int, width: int) -> int:
        return rows + 2 * width - 2 if rows else 0


@dataclass
class PEModeTrace:
    on: int = 0
    won: int = 0
    off: int = 0
    cycles: int = 0
    wakes: int = 0  # W_on -> ON transitions
    macs: int = 0   # PE compute cycles
    width: int = 0
    per_cycle: np.ndarray | None = field(default=None, repr=False)  # (cycles, 3)

    def aggregates(self) -> tuple[int, int, int, int]:
        return self.on, self.won, self.off, self.cycles

    def to_csv(self) -> str:
        if self.per_cycle is None:
            raise ValueError("trace carries no per-cycle data")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle", "n_on", "n_won", "n_off"])
        for t, row in enumerate(self.per_cycle):
            w.writerow([t, *map(int, row)])
        return buf.getvalue()


def per_pe_oracle(exe: SATileExec, coverage: set | None = None) -> PEModeTrace:
    """Cycle-by-cycle, PE-by-PE simulation of the gated wavefront.

    If ``coverage`` is given, every (k, n, m) computed by an ON PE is added
    as ``(k, n, m, cycle)``.
    """
    W = exe.width
    if W > ORACLE_MAX_WIDTH:
        raise ValueError(f"oracle limited to width <= {ORACLE_MAX_WIDTH}")
    M = exe.rows
    L = exe.latency
    row_on, col_on = exe.masks.row_on, exe.masks.col_on
    active = np.outer(row_on, col_on)
    trace = PEModeTrace(cycles=L, width=W)
    if L == 0:
        trace.per_cycle = np.zeros((0, 3), dtype=np.int64)
        return trace
    on_rows = np.flatnonzero(row_on)
    k0 = int(on_rows[0]) if len(on_rows) else 0

    # I-register occupancy: occ[t][k, n] = input row held at cycle t, or -1;
    # cycle 0 is the wake-up cycle and row L is an empty look-ahead.
    occ = np.full((L + 1, W, W), -1, dtype=np.int64)
    reg = np.full((W, W), -1, dtype=np.int64)
    for t in range(1, L):
        reg = np.roll(reg, 1, axis=1)
        reg[:, 0] = -1
        for k in on_rows:
            m = (t - 1) - (k - k0)  # front of row k's staging queue
            if 0 <= m < M:
                reg[k, 0] = m
        reg[:, ~col_on] = -1
        occ[t] = reg

    per = np.zeros((L, 3), dtype=np.int64)
    computing = occ >= 0
    prev_on = np.zeros((W, W), dtype=bool)
    for t in range(L):
        on = active & (computing[t] | computing[t + 1])
        won = active & ~on
        per[t] = (on.sum(), won.sum(), W * W - on.sum() - won.sum())
        trace.wakes += int((on & ~prev_on).sum())
        trace.macs += int((active & computing[t]).sum())
        if coverage is not None:
            for k, n in zip(*np.nonzero(active & computing[t])):
                coverage.add((int(k), int(n), int(occ[t, k, n]), t))
        prev_on = on
    trace.per_cycle = per
    trace.on, trace.won, trace.off = (int(x) for x in per.sum(axis=0))
    return trace


def analytic_pe_trace(exe: SATileExec) -> PEModeTrace:
    W, M = exe.width, exe.rows
    L = exe.latency
    if M == 0:
        return PEModeTrace(width=W)
    active = exe.masks.rows_on * exe.masks.cols_on
    if active == 0:
        return PEModeTrace(off=W * W * L, cycles=L, width=W)
    on = active * M + active  # compute cycles plus one wake-ahead cycle per PE
    return PEModeTrace(
        on=on,
        won=active * L - on,
        off=(W * W - active) * L,
        cycles=L,
        wakes=active,
        macs=active * M,
        width=W,
    )


def sa_energy(trace: PEModeTrace, chip: ChipConfig, pp: PowerParams) -> tuple[dict, float]:
    """Static joules by PE mode and dynamic joules for one traced tile."""
    pe_w = pp.static_w["sa"] / trace.width ** 2 if trace.width else 0.0
    f = chip.frequency_hz
    static = {
        "ON": trace.on * pe_w / f,
        "W_ON": trace.won * pe_w * pp.pe_weight_fraction / f,
        "OFF": trace.off * pe_w * pp.leakage_logic_off / f,
    }
    dynamic = trace.macs * pp.dynamic_pj["sa_mac"] * 1e-12
    if trace.wakes:
        dynamic += trace.wakes * transition_energy(chip, pp, "sa_pe_won")
    return static, dynamic
