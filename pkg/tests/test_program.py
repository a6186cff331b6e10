import math

import pytest
from hypothesis import given, strategies as st

from npupg.chip import preset
from npupg.program import (INF, DMAOp, Instr, MalformedInstruction, Program, ProgramError,
                           SALoadWeights, SAPush, SetPM, VUOp, decode_setpm, dumps, encode_setpm,
                           loads, lower, parse_setpm, vu_slot_distances)
from npupg.workload import (MatMul, ModelSpec, Operator, OperatorGraph, build_model_graph,
                            resolve_workload, tile_and_fuse)

from helpers import bare_program


def _blocks(cycles, max_step=16):
    """Split sorted issue cycles where the gap exceeds one push period (weight reloads)."""
    out = [[cycles[0]]]
    for c in cycles[1:]:
        if c - out[-1][-1] > max_step:
            out.append([])
        out[-1].append(c)
    return out


def test_stream_mm_vu_pattern(stream_mm):
    _, _, p = stream_mm
    vus = [i for i in p.instrs if isinstance(i.kind, VUOp)]
    assert all(i.latency == 1 for i in vus)
    for v in (1, 2):
        cycles = sorted(i.cycle for i in vus if i.kind.vu_mask == v)
        blocks = _blocks(cycles)
        # steady state, then at most one trailing pair after the array drain
        assert len(blocks) <= 2 and all(len(b) == 2 for b in blocks[1:])
        for blk in blocks[:1]:
            # two one-cycle vadds per 16-cycle period on each VU
            assert len(blk) % 2 == 0 and len(blk) >= 8
            for a in range(0, len(blk), 2):
                assert blk[a + 1] - blk[a] == 1
                if a + 2 < len(blk):
                    assert blk[a + 2] - blk[a] == 16
    starts = sorted(min(i.cycle for i in vus if i.kind.vu_mask == v) for v in (1, 2))
    assert starts[1] - starts[0] == 8  # VU1 lags by one push


def test_stream_mm_slot_distances(stream_mm):
    _, _, p = stream_mm
    for v, gaps in vu_slot_distances(p).items():
        within = [g.distance for g in gaps if 0 < g.distance <= 16]
        between = [g.distance for g in gaps if g.distance > 16]
        assert within and set(within) == {14}
        assert len(between) <= 1  # waiting out the drain of the last push


def test_empty_graph_empty_program(npu_d):
    chip, _ = npu_d
    g = build_model_graph(ModelSpec("synthetic"))
    p = lower(tile_and_fuse(g, chip), g, chip)
    assert p.instrs == [] and p.length == 0 and p.allocations == []


def test_independent_ops_interleave(npu_d):
    chip, _ = npu_d
    a, b = Operator("a", MatMul(256, 256, 256)), Operator("b", MatMul(256, 256, 256))
    both = OperatorGraph([a, b])
    p = lower(tile_and_fuse(both, chip), both, chip)
    serial_len = serial_bundles = 0
    for op in (a, b):
        g = OperatorGraph([op])
        q = lower(tile_and_fuse(g, chip), g, chip)
        serial_len += q.length
        serial_bundles += len(q.bundles())
    pushes = {op: [i for i in p.instrs if i.op_id == op and isinstance(i.kind, SAPush)] for op in "ab"}
    sa = {op: {i.kind.sa_id for i in pushes[op]} for op in "ab"}
    assert sa["a"] and sa["b"] and not sa["a"] & sa["b"]
    span = {op: (min(i.cycle for i in pushes[op]), max(i.end for i in pushes[op])) for op in "ab"}
    assert span["b"][0] < span["a"][1]  # b streams while a is still streaming
    assert p.length < serial_len
    assert len(p.bundles()) < serial_bundles


@pytest.mark.parametrize("name", ["llm-decode", "dlrm"])
def test_lowered_presets_validate(npu_d, name):
    chip, _ = npu_d
    g = build_model_graph(resolve_workload(name))
    p = lower(tile_and_fuse(g, chip), g, chip)
    p.validate()
    assert p.count(SAPush) > 0 and p.count(SALoadWeights) > 0


def test_dump_load_round_trip(stream_mm):
    _, _, p = stream_mm
    text = dumps(p)
    q = loads(text)
    assert dumps(q) == text
    assert [i.kind for i in q.instrs] == [i.kind for i in p.instrs]


def test_validate_rejects_slot_conflict(npu_d):
    chip, _ = npu_d
    p = bare_program(chip, [Instr(VUOp(1, 1), 1, 1, cycle=0), Instr(VUOp(3, 1), 1, 1, cycle=0)])
    with pytest.raises(ProgramError):
        p.validate()


def test_setpm_example_word():
    s = parse_setpm("setpm 0b1011,vu,off")
    assert (s.variant, s.fu_type, s.fu_id, s.mode) == ("fu_imm", "vu", 0x0B, "off")
    assert decode_setpm(encode_setpm(s)) == s


def test_reserved_variant_rejected():
    with pytest.raises(MalformedInstruction):
        decode_setpm(3 << 2)


def test_malformed_setpm_rejected():
    with pytest.raises(MalformedInstruction):
        SetPM("fu_imm", "vu", "sleep", fu_id=1)
    with pytest.raises(MalformedInstruction):
        SetPM("sram_range", "sram", "off", start=8, end=8)
    with pytest.raises(MalformedInstruction):
        parse_setpm("setpm vu off")


fu_setpm = st.builds(SetPM, st.sampled_from(["fu_imm", "fu_reg"]),
                     st.sampled_from(["sa", "vu", "hbm", "ici"]), st.sampled_from(["auto", "on", "off"]),
                     fu_id=st.integers(1, 255))
sram_setpm = st.integers(0, 62).flatmap(lambda a: st.builds(
    SetPM, st.just("sram_range"), st.just("sram"), st.sampled_from(["auto", "on", "off", "sleep"]),
    start=st.just(a), end=st.integers(a + 1, 63)))


@given(st.one_of(fu_setpm, sram_setpm))
def test_setpm_codec_round_trip(s):
    w = encode_setpm(s)
    assert 0 <= w < 1 << 16
    assert decode_setpm(w) == s


@given(st.integers(0, (1 << 32) - 1))
def test_decode_total(word):
    # every 32-bit word either decodes to something that re-encodes identically or is rejected
    try:
        s = decode_setpm(word)
    except MalformedInstruction:
        return
    assert encode_setpm(s) == word


def test_adjacent_vu_ops_distance(npu_d):
    chip, _ = npu_d
    p = bare_program(chip, [Instr(VUOp(1, 1), 1, 1, cycle=0), Instr(VUOp(1, 1), 1, 1, cycle=1)])
    (g,) = vu_slot_distances(p)[0]
    # distance counts idle cycles between the two ops: back-to-back ops leave none
    assert g.distance == 0 and g.end - g.start == 0


def test_dma_between_vu_ops_is_infinite(npu_d):
    chip, _ = npu_d
    p = bare_program(chip, [
        Instr(VUOp(1, 1), 1, 1, cycle=0),
        Instr(DMAOp(4096), 520, 1, cycle=1),
        Instr(VUOp(1, 1), 1, 1, cycle=521, deps=(1,)),
    ])
    (g,) = vu_slot_distances(p)[0]
    assert math.isinf(g.distance) and g.distance == INF


def test_dma_before_both_ops_is_finite(npu_d):
    chip, _ = npu_d
    p = bare_program(chip, [
        Instr(DMAOp(4096), 520, 1, cycle=0),
        Instr(VUOp(1, 1), 1, 1, cycle=520, deps=(0,)),
        Instr(VUOp(1, 1), 1, 1, cycle=530, deps=(0,)),
    ])
    (g,) = vu_slot_distances(p)[0]
    assert g.distance == 9
