"""Stage state machine that drives one transformer block through the kernels.

The stage list is fixed; every MP stage reuses the single fused MP kernel,
so per node no two MP activations can overlap in time.

    id  name         kernel   sync after (n_nodes > 1)
    1   ln_res_attn  LN_RES   -
    2   qkv          MP       -     local heads only, no gather needed
    3   mha          MHA      yes   context of local heads
    4   out_proj     MP       yes
    5   ln_res_ffn   LN_RES   -
    6   fc1          MP       yes
    7   gelu         AUX      -
    8   fc2          MP       yes
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import Flags, HardwareConfig, ModelConfig, NodeShard, ShardPlan
from .engine import STAGE, Engine, RingGather, Timeline
from .timing import (AUX, LN_RES, MHA, MP, cached_aux_cost, cached_ln_res_cost,
                     cached_mha_cost, cached_mp_block_times)


@dataclass(frozen=True)
class Stage:
    id: int
    name: str
    kernel_kind: str
    work: tuple
    depends_on: tuple[int, ...]
    sync_after: bool
    layers: tuple[str, ...] = ()

    @property
    def sync_bytes(self) -> int:
        """Bytes one node contributes to the gather after this stage."""
        if not self.sync_after:
            return 0
        if self.kernel_kind == MP:
            return self.work[0]
        lh, hd = self.work[1], self.work[2]
        return lh * hd


@dataclass(frozen=True)
class BlockPlan:
    stages: tuple[Stage, ...]
    mode: str
    t: int
    n_layers: int

    def by_kind(self, kind: str) -> list[Stage]:
        return [s for s in self.stages if s.kernel_kind == kind]


def build_block_plan(model: ModelConfig, hw: HardwareConfig, shard: ShardPlan,
                     mode: str, t: int) -> BlockPlan:
    """Canonical eight-stage plan for one block with ``t`` cached tokens."""
    if mode not in ("prefill", "decode"):
        raise ValueError(f"mode must be prefill or decode, got {mode!r}")
    node = shard[0]
    d, f = model.l_embed, model.ffn_dim
    lh = node.n_local_heads
    qkv_rows = node.n_rows("q") + node.n_rows("k") + node.n_rows("v")
    stages = (
        Stage(1, "ln_res_attn", LN_RES, (d,), (), False),
        Stage(2, "qkv", MP, (qkv_rows, d), (1,), False, ("q", "k", "v")),
        Stage(3, "mha", MHA, (t, lh, model.head_dim), (2,), True),
        Stage(4, "out_proj", MP, (node.n_rows("o"), d), (3,), True, ("o",)),
        Stage(5, "ln_res_ffn", LN_RES, (d,), (4,), False),
        Stage(6, "fc1", MP, (node.n_rows("fc1"), d), (5,), True, ("fc1",)),
        Stage(7, "gelu", AUX, ("gelu", f), (6,), False),
        Stage(8, "fc2", MP, (node.n_rows("fc2"), f), (7,), True, ("fc2",)),
    )
    return BlockPlan(stages, mode, t, model.n_layers)


class NodeScheduler:
    """Runs block plans for one node on the shared engine.

    ``compute`` is a ``NodeCompute`` for functional runs or ``None`` for
    timing-only runs. ``gathers`` is shared by all nodes so they join the
    same ring transfer for a stage activation.
    """

    def __init__(self, node: NodeShard, engine: Engine, timeline: Timeline, hw: HardwareConfig,
                 flags: Flags, gathers: dict, compute=None):
        self.node = node
        self.id = node.node_id
        self.eng = engine
        self.tl = timeline
        self.hw = hw
        self.flags = flags
        self.gathers = gathers
        self.compute = compute

    def _gather(self, key, n_blocks, tag, stage_id) -> RingGather:
        g = self.gathers.get(key)
        if g is None:
            g = self.gathers[key] = RingGather(self.eng, self.tl, self.hw, n_blocks, tag, stage_id)
        return g

    def run_block(self, plan: BlockPlan, token: int, layer: int):
        """Generator executing every stage of ``plan`` for one layer."""
        eng, tl, hw, node, c = self.eng, self.tl, self.hw, self.id, self.compute
        networked = hw.n_nodes > 1
        if c is not None:
            c.begin_layer(layer)
        for st in plan.stages:
            tag = f"t{token}.L{layer}.{st.name}"
            begin = eng.now
            kind = st.kernel_kind
            if kind == MP:
                rows, cols = st.work
                blocks = cached_mp_block_times(rows, cols, hw)
                out = None
                if c is not None:
                    out = self._mp_compute(st)
                if st.sync_after and networked:
                    g = self._gather((token, layer, st.id), len(blocks), tag, st.id)
                    step = hw.mp_block_rows
                    for b, dt in enumerate(blocks):
                        s = eng.now
                        yield dt
                        tl.add(s, eng.now, node, MP, f"{tag}.b{b}")
                        if out is not None:
                            g.post(node, b, out[b * step:(b + 1) * step])
                        else:
                            g.post(node, b, nbytes=min(step, rows - b * step))
                        if not self.flags.sync_overlap:
                            yield g.block_done[b][node]
                    yield g.node_done[node]
                    if c is not None:
                        c.accept(g.gathered(node))
                else:
                    s = eng.now
                    yield sum(blocks)
                    tl.add(s, eng.now, node, MP, tag)
                    if c is not None and st.sync_after:
                        c.accept(out)
                if c is not None and st.name in ("out_proj", "fc2"):
                    c.finish_linear("o" if st.name == "out_proj" else "fc2")
            elif kind == MHA:
                t, lh, hd = st.work
                cost = cached_mha_cost(t, lh, hw, hd, self.flags.headwise_pipeline)
                s = eng.now
                yield cost.total_time
                tl.add(s, eng.now, node, MHA, tag)
                chunk = c.mha() if c is not None else None
                if networked:
                    g = self._gather((token, layer, st.id), 1, tag, st.id)
                    g.post(node, 0, chunk, nbytes=lh * hd)
                    yield g.node_done[node]
                    if c is not None:
                        c.accept(g.gathered(node))
                elif c is not None:
                    c.accept(chunk)
            elif kind == LN_RES:
                cost = cached_ln_res_cost(st.work[0], hw, self.flags.fused_ln_res)
                s = eng.now
                yield cost.total_time
                tl.add(s, eng.now, node, LN_RES, tag)
                if c is not None:
                    c.ln_res("attn" if st.id == 1 else "ffn")
            else:
                cost = cached_aux_cost(st.work[0], st.work[1], hw)
                s = eng.now
                yield cost.total_time
                tl.add(s, eng.now, node, AUX, tag)
                if c is not None:
                    c.gelu()
            tl.add(begin, eng.now, node, STAGE, tag)
        if networked:
            for sid in (3, 4, 6, 8):
                g = self.gathers.get((token, layer, sid))
                if g is not None and _all_done(g):
                    del self.gathers[(token, layer, sid)]

    def _mp_compute(self, st: Stage):
        c = self.compute
        if st.name == "qkv":
            c.qkv()
            return None
        return c.linear(st.layers[0])


def _all_done(g: RingGather) -> bool:
    return all(s.fired for s in g.node_done)

