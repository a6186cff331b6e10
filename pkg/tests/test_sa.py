import itertools
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from npupg.chip import preset
from npupg.sa import (GateMasks, PEModeTrace, SATileExec, WeightMask, analytic_pe_trace, compute_gate_masks,
                      format_bitmap, masks_for_tile, parse_bitmap, per_pe_oracle, sa_energy)


def naive_masks(row_nz, col_nz):
    """Rows below a non-zero row carry partial sums; columns left of a non-zero column carry inputs."""
    W = len(row_nz)
    row_on = [any(row_nz[: k + 1]) for k in range(W)]
    col_on = [any(col_nz[n:]) for n in range(W)]
    return row_on, col_on


def bits(x: int, w: int) -> list[bool]:
    # leftmost character (most significant bit) is index 0
    return [bool(x >> (w - 1 - i) & 1) for i in range(w)]


def test_col_mask_example():
    m = compute_gate_masks(parse_bitmap("0000"), parse_bitmap("0b0100"))
    assert format_bitmap(m.col_on) == "1100"


def test_row_mask_example():
    m = compute_gate_masks(parse_bitmap("0010"), parse_bitmap("0000"))
    assert format_bitmap(m.row_on) == "0011"


def test_all_zero_masks():
    m = compute_gate_masks(np.zeros(4, bool), np.zeros(4, bool))
    assert not m.row_on.any() and not m.col_on.any()


def test_gate_masks_exhaustive_w4():
    t0 = time.perf_counter()
    for r, c in itertools.product(range(16), repeat=2):
        rn, cn = bits(r, 4), bits(c, 4)
        m = compute_gate_masks(rn, cn)
        er, ec = naive_masks(rn, cn)
        assert list(m.row_on) == er and list(m.col_on) == ec
    assert time.perf_counter() - t0 < 1.0


@given(st.lists(st.booleans(), min_size=1, max_size=64), st.data())
def test_gate_masks_are_monotone_closures(row_nz, data):
    col_nz = data.draw(st.lists(st.booleans(), min_size=len(row_nz), max_size=len(row_nz)))
    m = compute_gate_masks(row_nz, col_nz)
    # every non-zero row/column stays on, and the on-sets are a suffix/prefix
    assert all(m.row_on[i] for i, b in enumerate(row_nz) if b)
    assert all(m.col_on[i] for i, b in enumerate(col_nz) if b)
    assert list(m.row_on) == sorted(m.row_on)
    assert list(m.col_on) == sorted(m.col_on, reverse=True)


def test_weight_mask_from_weights():
    w = np.zeros((4, 4))
    w[2, 1] = 3.0
    wm = WeightMask.from_weights(w)
    assert format_bitmap(wm.row_nz) == "0010" and format_bitmap(wm.col_nz) == "0100"


def _exe(W, M, weights):
    wm = WeightMask.from_weights(weights)
    return SATileExec(M, compute_gate_masks(wm.row_nz, wm.col_nz))


def _assert_equivalent(exe):
    o, a = per_pe_oracle(exe), analytic_pe_trace(exe)
    assert o.aggregates() == a.aggregates()
    assert (o.wakes, o.macs) == (a.wakes, a.macs)


def test_oracle_sweep_random_patterns():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    for W in (2, 4, 8):
        for M in range(1, 2 * W + 1):
            for _ in range(1000):
                density = rng.uniform(0, 1)
                _assert_equivalent(_exe(W, M, rng.random((W, W)) < density))
    assert time.perf_counter() - t0 < 60


@pytest.mark.parametrize("M", [1, 2, 4])
def test_oracle_exhaustive_patterns_w4(M):
    # Both traces depend on a pattern only through its gate masks, so each of
    # the 2^16 patterns is checked via its (row_on, col_on) class.
    pats = np.arange(1 << 16)[:, None] >> np.arange(15, -1, -1) & 1
    w = pats.reshape(-1, 4, 4).astype(bool)
    rows = np.logical_or.accumulate(w.any(axis=2), axis=1)
    cols = np.logical_or.accumulate(w.any(axis=1)[:, ::-1], axis=1)[:, ::-1]
    classes = {(tuple(r), tuple(c)) for r, c in zip(rows, cols)}
    assert len(classes) == 17  # 4 row prefixes x 4 column suffixes, plus the empty tile
    for r, c in classes:
        _assert_equivalent(SATileExec(M, GateMasks(np.array(r), np.array(c))))


def test_latency_preserved_across_sweep():
    for W in (2, 4, 8):
        for M in range(1, 2 * W + 1):
            for k in range(W + 1):
                for n in range(W + 1):
                    exe = SATileExec(M, masks_for_tile(W, k, n))
                    assert exe.latency <= SATileExec.ungated_latency(M, W) + 1


def test_two_by_two_single_row():
    exe = SATileExec(1, masks_for_tile(2, 2, 2))
    t = per_pe_oracle(exe)
    assert t.macs == 4 and t.off == 0
    assert t.cycles == 4
    # one compute cycle plus one wake-ahead cycle per PE; the first PE's wake
    # is the exposed cycle 0 of the tile window
    assert t.on == 8 and t.wakes == 4


@pytest.mark.parametrize("W", [2, 3, 4, 8])
def test_full_tile_wavefront(W):
    M = W
    cov: set = set()
    t = per_pe_oracle(SATileExec(M, masks_for_tile(W, W, W)), coverage=cov)
    assert t.cycles == M + 2 * W - 1
    per_pe = {}
    for k, n, m, c in cov:
        assert c == 1 + m + k + n
        per_pe[k, n] = per_pe.get((k, n), 0) + 1
    assert len(per_pe) == W * W and set(per_pe.values()) == {M}
    assert t.on == W * W * (M + 1)


def test_masks_all_zero_trace_all_off():
    exe = SATileExec(5, GateMasks(np.zeros(4, bool), np.zeros(4, bool)))
    for t in (per_pe_oracle(exe), analytic_pe_trace(exe)):
        assert t.on == t.won == 0 and t.off == 16 * t.cycles


def test_zero_rows_zero_trace():
    t = analytic_pe_trace(SATileExec(0, masks_for_tile(8, 8, 8)))
    assert t.aggregates() == (0, 0, 0, 0)


def test_narrow_head_spatial_fraction():
    M = 64
    full = analytic_pe_trace(SATileExec(M, masks_for_tile(128, 128, 128)))
    narrow = analytic_pe_trace(SATileExec(M, masks_for_tile(128, 128, 72)))
    assert masks_for_tile(128, 128, 72).cols_on == 72
    assert narrow.on / full.on == pytest.approx(72 / 128)


def test_per_cycle_csv():
    t = per_pe_oracle(SATileExec(2, masks_for_tile(2, 1, 1)))
    lines = t.to_csv().splitlines()
    assert lines[0] == "cycle,n_on,n_won,n_off" and len(lines) == t.cycles + 1


def test_sa_energy_all_off_is_leakage_floor():
    chip, pp = preset("NPU-D")
    W, L = 128, 300
    on, _ = sa_energy(_full_on(W, L), chip, pp)
    off, _ = sa_energy(_all_off(W, L), chip, pp)
    assert sum(off.values()) == pytest.approx(0.03 * sum(on.values()), rel=1e-12)


def _full_on(W, L):
    return PEModeTrace(on=W * W * L, cycles=L, width=W)


def _all_off(W, L):
    return PEModeTrace(off=W * W * L, cycles=L, width=W)


def test_sa_energy_zero_cycles():
    chip, pp = preset("NPU-D")
    static, dyn = sa_energy(PEModeTrace(width=128), chip, pp)
    assert sum(static.values()) == 0 and dyn == 0


def test_sa_energy_gated_narrow_tile_lower():
    chip, pp = preset("NPU-D")
    exe = SATileExec(256, masks_for_tile(128, 128, 72))
    gated, _ = sa_energy(analytic_pe_trace(exe), chip, pp)
    ungated, _ = sa_energy(_full_on(128, exe.latency), chip, pp)
    assert sum(gated.values()) < sum(ungated.values())


@given(W=st.sampled_from([2, 3, 4, 5]), M=st.integers(1, 10), k=st.integers(0, 5), n=st.integers(0, 5))
def test_trace_conserves_pe_cycles(W, M, k, n):
    exe = SATileExec(M, masks_for_tile(W, min(k, W), min(n, W)))
    t = per_pe_oracle(exe)
    assert t.on + t.won + t.off == W * W * t.cycles
    assert t.macs == exe.masks.rows_on * exe.masks.cols_on * M
