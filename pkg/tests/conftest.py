from dataclasses import replace

import pytest

from npupg.chip import MB, preset
from npupg.program import lower
from npupg.workload import (Collective, Elementwise, LayerNorm, MatMul, Operator, OperatorGraph,
                            Softmax, tile_and_fuse)


@pytest.fixture(scope="session")
def npu_d():
    return preset("NPU-D")


@pytest.fixture(scope="session")
def stream_mm(npu_d):
    """One 128x256x128 MatMul streamed over 2 SAs and 2 VUs, one VU op per push."""
    chip, pp = npu_d
    chip = replace(chip, num_sa=2, num_vu=2)
    g = OperatorGraph([Operator("mm", MatMul(128, 256, 128))], "stream_mm")
    prog = lower(tile_and_fuse(g, chip), g, chip, vu_granularity="stream")
    return chip, pp, prog


def tiny_graph() -> OperatorGraph:
    ops = [
        Operator("ln", LayerNorm(64, 256)),
        Operator("mm1", MatMul(64, 256, 256), predecessors=("ln",)),
        Operator("act", Elementwise(64 * 256), predecessors=("mm1",)),
        Operator("ar", Collective("AllReduce", 64 * 256 * 2, 2), predecessors=("act",)),
        Operator("mm2", MatMul(64, 128, 256), predecessors=("ar",)),
        Operator("sm", Softmax(64, 128), predecessors=("mm2",)),
    ]
    return OperatorGraph(ops, "tiny")


@pytest.fixture(scope="session")
def tiny(npu_d):
    """Small chip and six-operator graph; cheap enough for per-cycle reference runs."""
    chip, pp = npu_d
    chip = replace(chip, sram_bytes=1 * MB, sram_segment_bytes=16384, num_sa=2, num_vu=2)
    g = tiny_graph()
    plans = tile_and_fuse(g, chip)
    return chip, pp, g, plans


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
