import pytest
from hypothesis import given, strategies as st

from npupg.chip import MB, ConfigError, preset
from npupg.workload import (WORKLOAD_PRESETS, Collective, Elementwise, MatMul, ModelSpec, Operator,
                            OperatorGraph, TilePlan, WorkloadError, build_model_graph,
                            latency_hiding_bytes, parse_model_spec, resolve_workload,
                            sram_demand_histogram, tile_and_fuse)


def test_decode_matmuls_have_one_row():
    spec = ModelSpec("llm_decode", hidden_dim=1024, num_heads=8, head_dim=128, num_layers=2,
                     batch=1, seq_len=1)
    g = build_model_graph(spec)
    mms = [o for o in g if isinstance(o.kind, MatMul)]
    assert mms and all(o.kind.M == 1 for o in mms)
    chip, _ = preset("NPU-D")
    assert all(o.kind.M < chip.sa_width for o in mms)
    assert {o.id.split(".")[0] for o in g} == {"l0", "l1"}


def test_synthetic_single_node():
    spec = ModelSpec("synthetic", ops=(Operator("mm", MatMul(128, 128, 128)),))
    g = build_model_graph(spec)
    assert len(g) == 1 and g.ops[0].kind == MatMul(128, 128, 128)


def test_prefill_tensor_parallel_split():
    spec = ModelSpec("llm_prefill", hidden_dim=1024, num_heads=8, head_dim=128, ffn_dim=4096,
                     num_layers=2, seq_len=64, batch=2, parallelism={"tensor": 2})
    g = build_model_graph(spec)
    tokens, h, d = 2 * 64, 1024, 2
    for li in range(2):
        ars = [o for o in g if o.id.startswith(f"l{li}.") and isinstance(o.kind, Collective)]
        # attention output and FFN output are each all-reduced over the activation
        assert [o.kind for o in ars] == [Collective("AllReduce", tokens * h * d, 2)] * 2
        qkv = g.by_id[f"l{li}.qkv"].kind
        assert qkv.N == 3 * 4 * 128  # 4 of 8 heads on this chip
        assert g.by_id[f"l{li}.scores"].kind.count == 2 * 4
        assert g.by_id[f"l{li}.ffn_up"].kind.N == 4096 // 2


def test_bad_parallel_split():
    with pytest.raises(WorkloadError, match="parallelism"):
        ModelSpec("llm_prefill", num_heads=6, parallelism={"tensor": 4})


def test_unknown_family():
    with pytest.raises(WorkloadError):
        ModelSpec("cnn")


def test_graph_must_be_topological():
    with pytest.raises(WorkloadError):
        OperatorGraph([Operator("b", Elementwise(4), predecessors=("a",)), Operator("a", Elementwise(4))])


def test_nonpositive_dims():
    with pytest.raises(WorkloadError):
        Operator("x", MatMul(0, 4, 4))


def _best_pow2_tile(M, N, K, W, sram, d):
    """Independent enumeration: largest power-of-two cube tile (clamped to dims) that fits double-buffered."""
    best = None
    t = W
    while True:
        tm, tn, tk = min(t, M), min(t, N), min(t, K)
        if 2 * (tm * tk + tk * tn + tm * tn) * d <= sram:
            best = (tm, tn, tk)
        if t >= max(M, N, K):
            return best
        t *= 2


def test_big_matmul_tile():
    chip, _ = preset("NPU-D")
    g = OperatorGraph([Operator("mm", MatMul(4096, 4096, 4096))])
    (p,) = tile_and_fuse(g, chip)
    assert (p.tile_m, p.tile_n, p.tile_k) == (2048, 2048, 2048)
    assert p.tile_bytes == 2 * 3 * 2048 ** 2 * 2 == 48 * MB
    assert _best_pow2_tile(4096, 4096, 4096, 128, chip.sram_bytes, 2) == (2048, 2048, 2048)


@given(M=st.integers(1, 20000), N=st.integers(1, 20000), K=st.integers(1, 20000),
       chip=st.sampled_from(["NPU-A", "NPU-D", "NPU-E"]))
def test_matmul_tile_matches_enumeration(M, N, K, chip):
    c, _ = preset(chip)
    g = OperatorGraph([Operator("mm", MatMul(M, N, K))])
    (p,) = tile_and_fuse(g, c)
    exp = _best_pow2_tile(M, N, K, c.sa_width, c.sram_bytes, 2)
    assert (p.tile_m, p.tile_n, p.tile_k) == exp
    assert p.sram_demand <= c.sram_bytes


def test_streaming_demand_independent_of_size():
    chip, _ = preset("NPU-D")
    demands = []
    for n in (10 ** 7, 10 ** 9):
        (p,) = tile_and_fuse(OperatorGraph([Operator("e", Elementwise(n))]), chip)
        demands.append(p.sram_demand)
    assert demands[0] == demands[1]
    hide = latency_hiding_bytes(chip)
    # double-buffered input and output tiles, each one latency-hiding buffer (rounded to 2^k)
    tile = 1 << (hide // 2 - 1).bit_length()
    assert demands[0] == 2 * 2 * tile * 2


def test_dlrm_demand_at_most_8mb():
    chip, _ = preset("NPU-D")
    g = build_model_graph(resolve_workload("dlrm"))
    plans = tile_and_fuse(g, chip)
    assert max(p.sram_demand for p in plans) <= 8 * MB


def test_histogram_single_operator():
    assert sram_demand_histogram([TilePlan("a", 1, 1, 1, 5 * MB, 1, ("a",), est_cycles=10)]) == {8 * MB: 1.0}


def test_histogram_two_equal_operators():
    plans = [TilePlan("a", 1, 1, 1, 8 * MB, 1, ("a",), est_cycles=100),
             TilePlan("b", 1, 1, 1, 64 * MB, 1, ("b",), est_cycles=100)]
    assert sram_demand_histogram(plans) == {8 * MB: 0.5, 64 * MB: 0.5}


def test_dlrm_histogram_mostly_small():
    chip, _ = preset("NPU-D")
    g = build_model_graph(resolve_workload("dlrm"))
    h = sram_demand_histogram(tile_and_fuse(g, chip))
    assert sum(v for b, v in h.items() if b <= 8 * MB) >= 0.9


@pytest.mark.parametrize("name", WORKLOAD_PRESETS)
def test_presets_build_and_tile(name):
    chip, _ = preset("NPU-D")
    g = build_model_graph(resolve_workload(name))
    plans = tile_and_fuse(g, chip)
    assert {p.op_id for p in plans} == {o.id for o in g}
    assert all(p.sram_demand <= chip.sram_bytes for p in plans)


def test_fusion_groups_cover_graph():
    chip, _ = preset("NPU-D")
    g = build_model_graph(resolve_workload("llm-prefill"))
    plans = tile_and_fuse(g, chip)
    fused = [p for p in plans if len(p.fused_group) > 1]
    assert fused, "expected at least one producer/consumer fusion"
    for p in fused:
        assert p.op_id in p.fused_group


def test_spec_file_parsing(tmp_path):
    text = """
[model]
family = "synthetic"
[[op]]
id = "a"
kind = "matmul"
m = 64
n = 64
k = 64
[[op]]
id = "b"
kind = "elementwise"
elems = 4096
preds = ["a"]
"""
    spec = parse_model_spec(text, "two")
    g = build_model_graph(spec)
    assert [o.id for o in g] == ["a", "b"] and g.consumers("a") == ["b"]


def test_spec_file_errors():
    with pytest.raises(ConfigError):
        parse_model_spec("[model]\nhidden_dim = 4\n")
    with pytest.raises(WorkloadError):
        parse_model_spec('[model]\nfamily="synthetic"\n[[op]]\nid="x"\nkind="conv"\n')
    with pytest.raises(ConfigError):
        resolve_workload("/no/such/workload.toml")
