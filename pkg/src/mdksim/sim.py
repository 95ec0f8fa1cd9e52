"""Run orchestration: prefill then decode across all nodes on one clock."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig, check_config, make_shard_plan
from .engine import Engine, Timeline
from .model import NodeCompute, QModel, logits as lm_head
from .scheduler import NodeScheduler, build_block_plan


@dataclass
class RunResult:
    timeline: Timeline
    n_generated: int
    prompt: list[int] = field(default_factory=list)
    tokens: list[int] = field(default_factory=list)
    logits: list[np.ndarray] = field(default_factory=list)


def default_prompt(cfg: SimConfig) -> list[int]:
    rng = np.random.default_rng(cfg.run.seed)
    return [int(x) for x in rng.integers(0, cfg.model.vocab_size, cfg.run.prompt_len)]


def simulate(cfg: SimConfig, weights: QModel | None = None, prompt=None,
             keep_tokens: int | None = None) -> RunResult:
    """Simulate ``prompt_len`` prefill tokens then ``gen_len`` decode tokens.

    With ``weights`` the numerics run alongside the timing and greedy decoding
    picks each next token; without them only timing is simulated.
    """
    model, hw, run, flags = cfg.model, cfg.hardware, cfg.run, cfg.flags
    check_config(model, hw)
    if weights is not None and weights.cfg != model:
        raise ValueError("weights do not match the model config")
    prompt = list(prompt) if prompt is not None else default_prompt(cfg)
    if len(prompt) != run.prompt_len:
        raise ValueError(f"prompt has {len(prompt)} tokens, expected {run.prompt_len}")
    if run.prompt_len + run.gen_len > model.max_seq_len:
        raise ValueError("prompt_len + gen_len exceeds max_seq_len")
    if run.prompt_len < 1:
        raise ValueError("prompt_len must be >= 1")

    shard = make_shard_plan(model, hw)
    eng = Engine()
    tl = Timeline(hw.n_nodes, keep_tokens)
    gathers: dict = {}
    scheds = []
    for nd in shard.nodes:
        comp = NodeCompute(weights, nd) if weights is not None else None
        scheds.append(NodeScheduler(nd, eng, tl, hw, flags, gathers, comp))
    plans: dict = {}
    result = RunResult(tl, 0, prompt)
    seq = list(prompt)
    n_steps = run.prompt_len + run.gen_len

    def node_proc(s: NodeScheduler, pos: int, plan):
        if s.compute is not None:
            s.compute.begin_token(seq[pos], pos)
        for layer in range(model.n_layers):
            yield from s.run_block(plan, pos, layer)

    def host():
        for pos in range(n_steps):
            phase = "prefill" if pos < run.prompt_len else "decode"
            key = (phase, pos + 1)
            plan = plans.get(key)
            if plan is None:
                plan = plans[key] = build_block_plan(model, hw, shard, phase, pos + 1)
            start = eng.now
            procs = [eng.spawn(node_proc(s, pos, plan), (s.id, 0, 1)) for s in scheds]
            for p in procs:
                yield p.done
            tl.close_token(pos, phase, start, eng.now)
            if phase == "decode":
                result.n_generated += 1
            if weights is not None and pos >= run.prompt_len - 1:
                lg = lm_head(weights, scheds[0].compute.final_hidden())
                result.logits.append(lg)
                if pos + 1 < n_steps:
                    seq.append(int(np.argmax(lg)))
        result.tokens = seq[run.prompt_len:]

    eng.spawn(host(), (-1, 0, 0))
    eng.run()
    return result
