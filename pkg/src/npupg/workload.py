"""Operator graphs for desk-scale ML workloads, tiling and fusion.

Convolutions are expected to be lowered to MatMul (im2col) before they
reach this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Union

import tomli

from .chip import ChipConfig, ConfigError, ceil_div

COLLECTIVES = ("AllReduce", "AllGather", "ReduceScatter", "AllToAll", "SendRecv")
FAMILIES = ("llm_prefill", "llm_decode", "llm_train_step", "dlrm_infer", "synthetic")


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class MatMul:
    M: int
    N: int
    K: int
    count: int = 1  # independent instances (batch x heads)


@dataclass(frozen=True)
class Elementwise:
    elems: int
    arity: int = 1


@dataclass(frozen=True)
class Softmax:
    rows: int
    cols: int


@dataclass(frozen=True)
class LayerNorm:
    rows: int
    cols: int


@dataclass(frozen=True)
class EmbeddingLookup:
    num_lookups: int
    vector_bytes: int
    pooling: int = 1  # lookups summed into one output vector


@dataclass(frozen=True)
class Collective:
    op: str
    bytes: int
    participants: int


@dataclass(frozen=True)
class HostDMA:
    bytes: int


OpKind = Union[MatMul, Elementwise, Softmax, LayerNorm, EmbeddingLookup, Collective, HostDMA]
STREAMING = (Elementwise, Softmax, LayerNorm, EmbeddingLookup)


@dataclass(frozen=True)
class Operator:
    id: str
    kind: OpKind
    dtype_bytes: int = 2
    predecessors: tuple[str, ...] = ()

    def __post_init__(self):
        k = self.kind
        dims = [getattr(k, f) for f in k.__dataclass_fields__ if f != "op"]
        if any(not isinstance(d, int) or d < 1 for d in dims):
            raise WorkloadError(f"operator {self.id}: all dimensions must be integers >= 1")
        if isinstance(k, Collective) and k.op not in COLLECTIVES:
            raise WorkloadError(f"operator {self.id}: unknown collective {k.op!r}")
        if self.dtype_bytes < 1:
            raise WorkloadError(f"operator {self.id}: dtype_bytes must be >= 1")

    @property
    def output_bytes(self) -> int:
        k, d = self.kind, self.dtype_bytes
        if isinstance(k, MatMul):
            return k.count * k.M * k.N * d
        if isinstance(k, Elementwise):
            return k.elems * d
        if isinstance(k, (Softmax, LayerNorm)):
            return k.rows * k.cols * d
        if isinstance(k, EmbeddingLookup):
            return k.num_lookups // k.pooling * k.vector_bytes
        if isinstance(k, Collective):
            return k.bytes
        return k.bytes


class OperatorGraph:
    """Operators in topological order; predecessors must precede their consumers."""

    def __init__(self, ops=(), name: str = ""):
        self.name = name
        self.ops: list[Operator] = list(ops)
        self.by_id: dict[str, Operator] = {}
        for op in self.ops:
            if op.id in self.by_id:
                raise WorkloadError(f"duplicate operator id {op.id!r}")
            for p in op.predecessors:
                if p not in self.by_id:
                    raise WorkloadError(f"operator {op.id!r}: predecessor {p!r} missing or not earlier (graph must be a DAG in topological order)")
            self.by_id[op.id] = op

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def consumers(self, op_id: str) -> list[str]:
        return [o.id for o in self.ops if op_id in o.predecessors]


@dataclass(frozen=True)
class ModelSpec:
    family: str
    name: str = ""
    hidden_dim: int = 512
    num_heads: int = 4
    head_dim: int = 128
    ffn_dim: int = 2048
    num_layers: int = 1
    seq_len: int = 256
    batch: int = 1
    parallelism: dict = field(default_factory=lambda: {"data": 1, "tensor": 1, "pipeline": 1})
    dtype_bytes: int = 2
    # dlrm
    table_bytes: int = 0
    num_tables: int = 8
    pooling: int = 1
    embedding_dim: int = 64
    dense_features: int = 256
    bottom_mlp: tuple[int, ...] = (256, 64)
    top_mlp: tuple[int, ...] = (256, 1)
    # synthetic
    ops: tuple[Operator, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise WorkloadError(f"unknown model family {self.family!r}")
        par = {"data": 1, "tensor": 1, "pipeline": 1, **self.parallelism}
        object.__setattr__(self, "parallelism", par)
        if any(v < 1 for v in par.values()):
            raise WorkloadError("parallelism degrees must be >= 1")
        tp = par["tensor"]
        if self.family.startswith("llm"):
            if self.num_heads % tp or self.ffn_dim % tp:
                raise WorkloadError(f"invalid parallelism split: tensor degree {tp} must divide num_heads ({self.num_heads}) and ffn_dim ({self.ffn_dim})")


# -- graph construction ----------------------------------------------------

class _Builder:
    def __init__(self, dtype: int):
        self.ops: list[Operator] = []
        self.dtype = dtype

    def add(self, oid, kind, *preds, dtype=None) -> str:
        self.ops.append(Operator(oid, kind, dtype or self.dtype, tuple(p for p in preds if p)))
        return oid


def _llm_layer(b: _Builder, spec: ModelSpec, li: int, x: str | None, decode: bool) -> str:
    tp = spec.parallelism["tensor"]
    heads = spec.num_heads // tp
    hd = spec.head_dim
    h = spec.hidden_dim
    ffn = spec.ffn_dim // tp
    q_rows = 1 if decode else spec.seq_len
    tokens = spec.batch * q_rows
    ctx = spec.seq_len
    inst = spec.batch * heads
    p = f"l{li}."
    d = spec.dtype_bytes

    ln1 = b.add(p + "ln1", LayerNorm(tokens, h), x)
    qkv = b.add(p + "qkv", MatMul(tokens, 3 * heads * hd, h), ln1)
    scores = b.add(p + "scores", MatMul(q_rows, ctx, hd, count=inst), qkv)
    sm = b.add(p + "softmax", Softmax(inst * q_rows, ctx), scores)
    context = b.add(p + "context", MatMul(q_rows, hd, ctx, count=inst), sm)
    out = b.add(p + "attn_out", MatMul(tokens, h, heads * hd), context)
    if tp > 1:
        out = b.add(p + "attn_allreduce", Collective("AllReduce", tokens * h * d, tp), out)
    res1 = b.add(p + "residual1", Elementwise(tokens * h, 2), out)
    ln2 = b.add(p + "ln2", LayerNorm(tokens, h), res1)
    up = b.add(p + "ffn_up", MatMul(tokens, ffn, h), ln2)
    act = b.add(p + "gelu", Elementwise(tokens * ffn, 1), up)
    down = b.add(p + "ffn_down", MatMul(tokens, h, ffn), act)
    if tp > 1:
        down = b.add(p + "ffn_allreduce", Collective("AllReduce", tokens * h * d, tp), down)
    return b.add(p + "residual2", Elementwise(tokens * h, 2), down, res1)


def _llm_backward(b: _Builder, spec: ModelSpec, forward: list[Operator], x: str) -> str:
    """Data and weight gradients for every forward MatMul, in reverse order."""
    tp = spec.parallelism["tensor"]
    d = spec.dtype_bytes
    params = 0
    for op in reversed(forward):
        k = op.kind
        if isinstance(k, MatMul):
            x = b.add(op.id + ".dgrad", MatMul(k.M, k.K, k.N, k.count), x)
            if k.count == 1:
                b.add(op.id + ".wgrad", MatMul(k.K, k.N, k.M), x)
                params += k.K * k.N
            else:
                b.add(op.id + ".wgrad", MatMul(k.K, k.N, k.M, k.count), x)
        elif isinstance(k, (Softmax, LayerNorm)):
            x = b.add(op.id + ".bwd", Elementwise(k.rows * k.cols, 2), x)
        elif isinstance(k, Elementwise):
            x = b.add(op.id + ".bwd", Elementwise(k.elems, 2), x)
        elif isinstance(k, Collective) and tp > 1:
            x = b.add(op.id + ".bwd", Collective(k.op, k.bytes, k.participants), x)
    dp = spec.parallelism["data"]
    if dp > 1:
        x = b.add("grad_allreduce", Collective("AllReduce", params * d, dp), x)
    return b.add("optimizer", Elementwise(max(params, 1), 3), x)


def _build_llm(spec: ModelSpec) -> list[Operator]:
    b = _Builder(spec.dtype_bytes)
    decode = spec.family == "llm_decode"
    x = None
    for li in range(spec.num_layers):
        x = _llm_layer(b, spec, li, x, decode)
    if spec.family == "llm_train_step":
        forward = list(b.ops)
        x = _llm_backward(b, spec, forward, x)
    pp = spec.parallelism["pipeline"]
    if pp > 1:
        tokens = spec.batch * (1 if decode else spec.seq_len)
        b.add("stage_send", Collective("SendRecv", tokens * spec.hidden_dim * spec.dtype_bytes, 2), x)
    return b.ops


def _build_dlrm(spec: ModelSpec) -> list[Operator]:
    b = _Builder(spec.dtype_bytes)
    B = spec.batch
    x = None
    width = spec.dense_features
    for i, n in enumerate(spec.bottom_mlp):
        x = b.add(f"bottom{i}", MatMul(B, n, width), x)
        x = b.add(f"bottom{i}.relu", Elementwise(B * n, 1), x)
        width = n
    vec = spec.embedding_dim * 4  # fp32 tables
    emb = b.add("embedding", EmbeddingLookup(B * spec.num_tables * spec.pooling, vec, spec.pooling))
    dp = spec.parallelism["data"]
    if dp > 1:
        emb = b.add("emb_alltoall", Collective("AllToAll", B * spec.num_tables * vec, dp), emb)
    f = spec.num_tables + 1
    inter = b.add("interaction", MatMul(f, f, spec.embedding_dim, count=B), x, emb)
    width = f * f
    x = inter
    for i, n in enumerate(spec.top_mlp):
        x = b.add(f"top{i}", MatMul(B, n, width), x)
        x = b.add(f"top{i}.act", Elementwise(B * n, 1), x)
        width = n
    return b.ops


def build_model_graph(spec: ModelSpec) -> OperatorGraph:
    if spec.family == "synthetic":
        return OperatorGraph(spec.ops, spec.name)
    if spec.family == "dlrm_infer":
        return OperatorGraph(_build_dlrm(spec), spec.name)
    return OperatorGraph(_build_llm(spec), spec.name)


# -- model spec files ------------------------------------------------------

_KIND_PARSERS = {
    "matmul": lambda t: MatMul(int(t["m"]), int(t["n"]), int(t["k"]), int(t.get("count", 1))),
    "elementwise": lambda t: Elementwise(int(t["elems"]), int(t.get("arity", 1))),
    "softmax": lambda t: Softmax(int(t["rows"]), int(t["cols"])),
    "layernorm": lambda t: LayerNorm(int(t["rows"]), int(t["cols"])),
    "embedding": lambda t: EmbeddingLookup(int(t["num_lookups"]), int(t["vector_bytes"]), int(t.get("pooling", 1))),
    "collective": lambda t: Collective(str(t["op"]), int(t["bytes"]), int(t["participants"])),
    "hostdma": lambda t: HostDMA(int(t["bytes"])),
}


def parse_operator(t: dict, default_dtype: int = 2) -> Operator:
    kind = str(t.get("kind", "")).lower()
    if kind not in _KIND_PARSERS:
        raise WorkloadError(f"operator {t.get('id')!r}: unknown kind {kind!r}")
    try:
        k = _KIND_PARSERS[kind](t)
        return Operator(str(t["id"]), k, int(t.get("dtype_bytes", default_dtype)),
                        tuple(t.get("preds", ())))
    except KeyError as e:
        raise WorkloadError(f"operator {t.get('id')!r}: missing field {e.args[0]!r}") from None


def parse_model_spec(text: str, name: str = "") -> ModelSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed workload file: {e}") from None
    m = dict(doc.get("model", {}))
    if "family" not in m:
        raise ConfigError("workload file needs [model] with a family")
    dtype = int(m.get("dtype_bytes", 2))
    ops = tuple(parse_operator(t, dtype) for t in doc.get("op", ()))
    for key in ("bottom_mlp", "top_mlp"):
        if key in m:
            m[key] = tuple(int(v) for v in m[key])
    m.setdefault("name", name)
    try:
        return ModelSpec(ops=ops, **m)
    except TypeError as e:
        raise ConfigError(f"workload file: {e}") from None


WORKLOAD_PRESETS = ("llm-prefill", "llm-decode", "llm-train", "dlrm", "diffusion")


def resolve_workload(spec: str) -> ModelSpec:
    """Bundled preset name or path to a workload file."""
    key = spec.strip().lower()
    if key in WORKLOAD_PRESETS:
        path = resources.files("npupg") / "presets" / "workloads" / f"{key}.toml"
        return parse_model_spec(path.read_text(), key)
    p = Path(spec)
    if not p.is_file():
        raise ConfigError(f"workload not found: {spec}")
    return parse_model_spec(p.read_text(), p.stem)


# -- tiling and fusion -----------------------------------------------------

@dataclass(frozen=True)
class TilePlan:
    op_id: str
    tile_m: int
    tile_n: int
    tile_k: int
    sram_demand: int  # bytes held while this operator runs (fused group included)
    num_tiles: int
    fused_group: tuple[str, ...]
    tile_bytes: int = 0  # double-buffered tile footprint of this operator alone
    est_cycles: int = 0


def _pow2_ceil(n: float) -> int:
    return 1 << max(0, math.ceil(math.log2(n))) if n > 1 else 1


def latency_hiding_bytes(chip: ChipConfig) -> int:
    return int(math.ceil(chip.hbm_latency * chip.hbm_bytes_per_cycle))


def matmul_footprint(tm: int, tn: int, tk: int, dtype: int) -> int:
    return 2 * (tm * tk + tk * tn + tm * tn) * dtype


def _tile_matmul(op: Operator, chip: ChipConfig) -> tuple[int, int, int, int]:
    k = op.kind
    W = chip.sa_width
    d = op.dtype_bytes
    lo = [min(W, k.M), min(W, k.N), min(W, k.K)]
    if matmul_footprint(*lo, d) > chip.sram_bytes:
        raise WorkloadError(f"operator {op.id}: minimal tile exceeds SRAM capacity")
    best = lo
    t = W
    top = _pow2_ceil(max(k.M, k.N, k.K))
    while t <= top:
        cand = [max(min(t, k.M), lo[0]), max(min(t, k.N), lo[1]), max(min(t, k.K), lo[2])]
        if matmul_footprint(*cand, d) <= chip.sram_bytes:
            best = cand
        else:
            break
        t *= 2
    tm, tn, tk = best
    return tm, tn, tk, matmul_footprint(tm, tn, tk, d)


def _tile_streaming(op: Operator, chip: ChipConfig) -> tuple[int, int, int, int]:
    k, d = op.kind, op.dtype_bytes
    hide = latency_hiding_bytes(chip)
    if isinstance(k, Elementwise):
        t = min(_pow2_ceil(hide / d), k.elems)
        return t, 1, 1, 2 * (k.arity + 1) * t * d
    if isinstance(k, (Softmax, LayerNorm)):
        row_bytes = k.cols * d
        t = min(_pow2_ceil(hide / row_bytes), k.rows)
        return t, k.cols, 1, 2 * 2 * t * row_bytes
    t = min(_pow2_ceil(hide / k.vector_bytes), k.num_lookups)
    t = max(t, min(k.pooling, k.num_lookups))
    out = ceil_div(t, k.pooling) * k.vector_bytes
    return t, 1, 1, 2 * (t * k.vector_bytes + out)


def num_tiles(op: Operator, tm: int, tn: int, tk: int) -> int:
    k = op.kind
    if isinstance(k, MatMul):
        return k.count * ceil_div(k.M, tm) * ceil_div(k.N, tn) * ceil_div(k.K, tk)
    if isinstance(k, Elementwise):
        return ceil_div(k.elems, tm)
    if isinstance(k, (Softmax, LayerNorm)):
        return ceil_div(k.rows, tm)
    if isinstance(k, EmbeddingLookup):
        return ceil_div(k.num_lookups, tm)
    return 1


def collective_cycles(c: Collective, chip: ChipConfig) -> int:
    """Ring / torus collective transfer time in cycles (excluding link latency)."""
    p = c.participants
    if p <= 1:
        return 0
    factor = {
        "AllReduce": 2 * (p - 1) / p,
        "AllGather": (p - 1) / p,
        "ReduceScatter": (p - 1) / p,
        "AllToAll": (p - 1) / p,
        "SendRecv": 1.0,
    }[c.op]
    seconds = c.bytes * factor / (chip.ici_links * chip.ici_link_bandwidth)
    return int(math.ceil(seconds * chip.frequency_hz))


def estimate_cycles(op: Operator, chip: ChipConfig, hbm_bytes: int) -> int:
    """Roofline estimate used only for weighting histograms before simulation."""
    k = op.kind
    mem = hbm_bytes / chip.hbm_bytes_per_cycle
    if isinstance(k, MatMul):
        comp = k.count * k.M * k.N * k.K / chip.peak_macs_per_cycle
    elif isinstance(k, Elementwise):
        comp = k.elems * k.arity / (chip.num_vu * chip.vu_width)
    elif isinstance(k, (Softmax, LayerNorm)):
        comp = 4 * k.rows * k.cols / (chip.num_vu * chip.vu_width)
    elif isinstance(k, EmbeddingLookup):
        comp = k.num_lookups * k.vector_bytes / 4 / (chip.num_vu * chip.vu_width)
    elif isinstance(k, Collective):
        comp = collective_cycles(k, chip)
    else:
        comp = 0
    return max(1, int(math.ceil(max(comp, mem))))


def _fusable(op: Operator) -> bool:
    return isinstance(op.kind, (MatMul,) + STREAMING)


def tile_and_fuse(graph: OperatorGraph, chip: ChipConfig, fuse: bool = True) -> list[TilePlan]:
    tiles: dict[str, tuple[int, int, int, int]] = {}
    for op in graph:
        if isinstance(op.kind, MatMul):
            tiles[op.id] = _tile_matmul(op, chip)
        elif isinstance(op.kind, STREAMING):
            tm, tn, tk, fp = _tile_streaming(op, chip)
            if fp > chip.sram_bytes:
                raise WorkloadError(f"operator {op.id}: minimal tile exceeds SRAM capacity")
            tiles[op.id] = (tm, tn, tk, fp)
        else:
            tiles[op.id] = (1, 1, 1, 0)

    # greedy chain fusion: producer with a single consumer that directly follows it
    groups: list[list[str]] = []
    group_bytes: list[int] = []
    ops = graph.ops
    for i, op in enumerate(ops):
        if fuse and groups and i > 0 and _fusable(op):
            prev = ops[i - 1]
            if (prev.id in groups[-1] and _fusable(prev) and prev.id in op.predecessors
                    and graph.consumers(prev.id) == [op.id]):
                need = group_bytes[-1] + tiles[op.id][3] + prev.output_bytes
                if need <= chip.sram_bytes:
                    groups[-1].append(op.id)
                    group_bytes[-1] = need
                    continue
        groups.append([op.id])
        group_bytes.append(tiles[op.id][3])

    plans = []
    fused = fused_edges_from_groups(groups)
    for g, gb in zip(groups, group_bytes):
        for oid in g:
            op = graph.by_id[oid]
            tm, tn, tk, fp = tiles[oid]
            hb = op_hbm_bytes(op, tm, tn, tk, fused)
            plans.append(TilePlan(oid, tm, tn, tk, gb, num_tiles(op, tm, tn, tk), tuple(g),
                                  fp, estimate_cycles(op, chip, hb)))
    return plans


def fused_edges_from_groups(groups) -> set[tuple[str, str]]:
    edges = set()
    for g in groups:
        for a, b in zip(g, g[1:]):
            edges.add((a, b))
    return edges


def fused_edges(plans: list[TilePlan]) -> set[tuple[str, str]]:
    seen, groups = set(), []
    for p in plans:
        if p.fused_group not in seen:
            seen.add(p.fused_group)
            groups.append(p.fused_group)
    return fused_edges_from_groups(groups)


def op_hbm_bytes(op: Operator, tm: int, tn: int, tk: int, fused: set) -> int:
    """HBM bytes moved by one operator under its tiling; fused edges stay in SRAM."""
    k, d = op.kind, op.dtype_bytes
    preds = op.predecessors
    in_sram = [(p, op.id) in fused for p in preds]
    writes_out = not any(e[0] == op.id for e in fused)
    if isinstance(k, MatMul):
        a = 0 if (in_sram and in_sram[0]) else k.M * k.K * ceil_div(k.N, tn)
        b = 0 if (len(in_sram) > 1 and in_sram[1]) else k.K * k.N * ceil_div(k.M, tm)
        c = k.M * k.N if writes_out else 0
        return k.count * (a + b + c) * d
    if isinstance(k, Elementwise):
        ins = k.arity - sum(in_sram[:k.arity])
        return (ins * k.elems + (k.elems if writes_out else 0)) * d
    if isinstance(k, (Softmax, LayerNorm)):
        n = k.rows * k.cols * d
        return (0 if (in_sram and in_sram[0]) else n) + (n if writes_out else 0)
    if isinstance(k, EmbeddingLookup):
        return k.num_lookups * k.vector_bytes + (op.output_bytes if writes_out else 0)
    if isinstance(k, HostDMA):
        return k.bytes
    return 0


def plan_hbm_bytes(graph: OperatorGraph, plans: list[TilePlan]) -> int:
    fused = fused_edges(plans)
    return sum(op_hbm_bytes(graph.by_id[p.op_id], p.tile_m, p.tile_n, p.tile_k, fused)
               for p in plans)


def demand_bucket(nbytes: int) -> int:
    return 0 if nbytes <= 0 else _pow2_ceil(nbytes)


def sram_demand_histogram(plans: list[TilePlan], durations: dict | None = None) -> dict[int, float]:
    """Fraction of (simulated or estimated) time spent at each power-of-two demand bucket."""
    if not plans:
        raise WorkloadError("no plans")
    weights: dict[int, float] = {}
    for p in plans:
        w = durations.get(p.op_id, 0) if durations is not None else p.est_cycles
        b = demand_bucket(p.sram_demand)
        weights[b] = weights.get(b, 0.0) + w
    total = sum(weights.values())
    if total <= 0:
        return {b: 1.0 / len(weights) for b in sorted(weights)}
    return {b: weights[b] / total for b in sorted(weights)}
