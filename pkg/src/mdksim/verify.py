"""Oracle-equivalence checks run by ``mdksim verify`` and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import KVCache, append_kv, mha_decode
from .config import HardwareConfig, SimConfig
from .model import (FloatBlockState, QModel, build_quantized, embed, float_block, quant_block,
                    reference_forward)
from .quant import QTensor, cosine, matvec_i8
from .ring import all_gather
from .sim import default_prompt, simulate


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def brute_matvec(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(w.shape[0], dtype=np.int64)
    for i in range(w.shape[0]):
        acc = 0
        for j in range(w.shape[1]):
            acc += int(w[i, j]) * int(v[j])
        out[i] = acc
    return out


def check_matvec(n_cases: int = 2000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        r, c = rng.integers(1, 9, 2)
        w = rng.integers(-127, 128, (r, c), dtype=np.int8)
        v = rng.integers(-127, 128, c, dtype=np.int8)
        got = matvec_i8(QTensor(w, 1.0), QTensor(v, 1.0))
        if not np.array_equal(got.astype(np.int64), brute_matvec(w, v)):
            return Check("matvec_i8 vs brute force", False, f"mismatch in case {case}")
    return Check("matvec_i8 vs brute force", True, f"{n_cases} cases")


def block_cosine(cfg, seed: int, n_tokens: int = 8) -> float:
    """Worst per-position cosine between the W8A8 block and the float block (layer 0)."""
    fm, qm = build_quantized(cfg, seed)
    fstate = FloatBlockState(cfg)
    cache = KVCache(cfg.n_heads, cfg.head_dim, cfg.max_seq_len)
    toks = np.random.default_rng(seed + 1).integers(0, cfg.vocab_size, min(n_tokens, cfg.max_seq_len))
    worst = 1.0
    for pos, tok in enumerate(toks):
        x = embed(fm, int(tok), pos)
        yf, _ = float_block(fm.layers[0], cfg, fstate, x, np.zeros(cfg.l_embed))
        yq, _ = quant_block(qm.layers[0], cfg, cache, x, np.zeros(cfg.l_embed))
        worst = min(worst, cosine(yf, yq))
    return worst


def check_block_cosine(cfg, seeds=range(5), threshold: float = 0.99) -> Check:
    worst = min(block_cosine(cfg, s) for s in seeds)
    return Check("W8A8 block vs float block", worst >= threshold, f"min cosine {worst:.5f}")


def check_sharded_attention(cfg, n_nodes: int, t: int = 8, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    H, hd = cfg.n_heads, cfg.head_dim
    full = KVCache(H, hd, cfg.max_seq_len)
    per = H // n_nodes
    parts = [KVCache(per, hd, cfg.max_seq_len, i * per) for i in range(n_nodes)]
    for _ in range(t):
        k, v = rng.normal(size=(H, hd)), rng.normal(size=(H, hd))
        append_kv(full, k, v)
        for i, c in enumerate(parts):
            append_kv(c, k[i * per:(i + 1) * per], v[i * per:(i + 1) * per])
    q = rng.normal(size=(H, hd))
    ref = mha_decode(full, q)
    got = np.concatenate([mha_decode(c, q[i * per:(i + 1) * per]) for i, c in enumerate(parts)])
    return Check(f"sharded attention ({n_nodes} nodes)", np.array_equal(ref, got))


def check_all_gather(n_nodes: int, size: int = 256, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    chunks = [rng.integers(-127, 128, size, dtype=np.int8) for _ in range(n_nodes)]
    res = all_gather(chunks, HardwareConfig(n_nodes=n_nodes))
    want = np.concatenate(chunks)
    ok = res.rounds == n_nodes and all(np.array_equal(b, want) for b in res.buffers)
    return Check(f"all_gather vs concat ({n_nodes} nodes)", ok)


def _logits_equal(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_functional(cfg: SimConfig, qm: QModel, node_counts=(1, 2, 4)) -> list[Check]:
    """Simulated functional path vs the direct path, and n-node vs 1-node logits."""
    prompt = default_prompt(cfg)
    ref = reference_forward(qm, prompt, cfg.run.gen_len)
    out = []
    base = None
    for n in node_counts:
        if cfg.model.n_heads % n:
            continue
        c = cfg.replace(hardware={"n_nodes": n})
        r = simulate(c, qm, prompt)
        if n == 1:
            base = r
            ok = r.tokens == ref.tokens and _logits_equal(r.logits, ref.logits)
            out.append(Check("simulated path vs direct path", ok))
        else:
            ok = base is not None and r.tokens == base.tokens and _logits_equal(r.logits, base.logits)
            out.append(Check(f"{n}-node vs 1-node logits bitwise", ok))
    return out


def run_all(cfg: SimConfig, qm: QModel | None = None) -> list[Check]:
    if qm is None:
        _, qm = build_quantized(cfg.model, cfg.run.seed)
    checks = [check_matvec(), check_block_cosine(cfg.model)]
    for n in (2, 4):
        if cfg.model.n_heads % n == 0:
            checks.append(check_sharded_attention(cfg.model, n))
    checks += [check_all_gather(n) for n in (1, 2, 4, 8)]
    checks += check_functional(cfg, qm)
    return checks
