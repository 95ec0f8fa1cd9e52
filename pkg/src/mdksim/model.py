"""GPT-2-style transformer weights and the functional forward paths.

Three paths live here:

* ``FloatModel`` / ``float_forward``: the float oracle with the original weights.
* ``reference_forward``: the plain W8A8 composition of quant and attention
  kernels on one node, no simulator involved.
* ``NodeCompute``: the same arithmetic split into scheduler stages for one
  node of a sharded run; the simulator drives it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import KVCache, append_kv, default_scale, mha_decode
from .config import LINEAR_LAYERS, ModelConfig, NodeShard, linear_shapes
from .quant import (QTensor, dequant_full, fused_ln_res, gelu, linear_i8, maxabs_scale,
                    quantize)

# activation quantization points of one block, in dataflow order
ACT_POINTS = ("ln1", "q", "k", "v", "attn", "o", "ln2", "fc1", "gelu", "fc2")
LN_EPS = 1e-5


@dataclass
class FloatLayer:
    w: dict[str, np.ndarray]
    b: dict[str, np.ndarray]
    ln1: tuple[np.ndarray, np.ndarray]
    ln2: tuple[np.ndarray, np.ndarray]


@dataclass
class FloatModel:
    cfg: ModelConfig
    wte: np.ndarray
    wpe: np.ndarray
    lnf: tuple[np.ndarray, np.ndarray]
    layers: list[FloatLayer]


@dataclass
class QLayer:
    w: dict[str, QTensor]
    b: dict[str, np.ndarray]
    ln1: tuple[np.ndarray, np.ndarray]
    ln2: tuple[np.ndarray, np.ndarray]
    act: dict[str, float]


@dataclass
class QModel:
    cfg: ModelConfig
    wte: np.ndarray
    wpe: np.ndarray
    lnf: tuple[np.ndarray, np.ndarray]
    layers: list[QLayer] = field(default_factory=list)


def _f32(x) -> np.ndarray:
    # every float parameter lives on the float32 grid so files round-trip exactly
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def random_float_model(cfg: ModelConfig, seed: int = 0, std: float = 0.02) -> FloatModel:
    rng = np.random.default_rng(seed)
    d = cfg.l_embed
    layers = []
    for _ in range(cfg.n_layers):
        w, b = {}, {}
        for name, (out_dim, in_dim) in linear_shapes(cfg).items():
            w[name] = _f32(rng.normal(0.0, std, (out_dim, in_dim)))
            b[name] = _f32(rng.normal(0.0, std, out_dim))
        ln1 = (_f32(1.0 + 0.1 * rng.normal(size=d)), _f32(0.1 * rng.normal(size=d)))
        ln2 = (_f32(1.0 + 0.1 * rng.normal(size=d)), _f32(0.1 * rng.normal(size=d)))
        layers.append(FloatLayer(w, b, ln1, ln2))
    wte = _f32(rng.normal(0.0, std, (cfg.vocab_size, d)))
    wpe = _f32(rng.normal(0.0, std / 2, (cfg.max_seq_len, d)))
    lnf = (_f32(1.0 + 0.1 * rng.normal(size=d)), _f32(0.1 * rng.normal(size=d)))
    return FloatModel(cfg, wte, wpe, lnf, layers)


def embed(m, token: int, pos: int) -> np.ndarray:
    return m.wte[token] + m.wpe[pos]


def logits(m, hidden: np.ndarray) -> np.ndarray:
    return m.wte @ hidden


# ---------------------------------------------------------------------------
# float oracle

class FloatBlockState:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.k: list[np.ndarray] = []
        self.v: list[np.ndarray] = []


def float_block(layer: FloatLayer, cfg: ModelConfig, state: FloatBlockState, delta, resid,
                record: dict | None = None):
    """One pre-LN block on one token in float; returns (new_delta, new_resid)."""
    H, hd = cfg.n_heads, cfg.head_dim

    def rec(name, x):
        if record is not None:
            record[name] = max(record.get(name, 0.0), float(np.max(np.abs(x))))
        return x

    x, resid = fused_ln_res(delta, resid, *layer.ln1, LN_EPS)
    rec("ln1", x)
    q = rec("q", layer.w["q"] @ x + layer.b["q"]).reshape(H, hd)
    k = rec("k", layer.w["k"] @ x + layer.b["k"]).reshape(H, hd)
    v = rec("v", layer.w["v"] @ x + layer.b["v"]).reshape(H, hd)
    state.k.append(k)
    state.v.append(v)
    K = np.stack(state.k, axis=1)
    V = np.stack(state.v, axis=1)
    s = np.einsum("hd,htd->ht", q, K) * default_scale(hd)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    ctx = rec("attn", np.einsum("ht,htd->hd", p, V).reshape(-1))
    o = rec("o", layer.w["o"] @ ctx + layer.b["o"])
    x, resid = fused_ln_res(o, resid, *layer.ln2, LN_EPS)
    rec("ln2", x)
    h = rec("fc1", layer.w["fc1"] @ x + layer.b["fc1"])
    g = rec("gelu", gelu(h))
    y = rec("fc2", layer.w["fc2"] @ g + layer.b["fc2"])
    return y, resid


def float_forward(m: FloatModel, tokens, record: list[dict] | None = None) -> list[np.ndarray]:
    """Run ``tokens`` one at a time; returns the final hidden state per position."""
    cfg = m.cfg
    states = [FloatBlockState(cfg) for _ in m.layers]
    hidden = []
    for pos, tok in enumerate(tokens):
        delta, resid = embed(m, tok, pos), np.zeros(cfg.l_embed)
        for li, layer in enumerate(m.layers):
            rec = record[li] if record is not None else None
            delta, resid = float_block(layer, cfg, states[li], delta, resid, rec)
        h, _ = fused_ln_res(delta, resid, *m.lnf, LN_EPS)
        hidden.append(h)
    return hidden


# ---------------------------------------------------------------------------
# quantization

def calibrate(m: FloatModel, tokens) -> list[dict[str, float]]:
    """Max-abs activation scales per quantization point from a float run."""
    record = [dict() for _ in m.layers]
    float_forward(m, tokens, record)
    out = []
    for rec in record:
        out.append({p: float(np.float32(rec[p] / 127 if rec.get(p, 0) > 0 else 1 / 127))
                    for p in ACT_POINTS})
    return out


def quantize_model(m: FloatModel, act_scales: list[dict[str, float]]) -> QModel:
    layers = []
    for layer, act in zip(m.layers, act_scales):
        w = {name: quantize(layer.w[name], maxabs_scale(layer.w[name])) for name in LINEAR_LAYERS}
        layers.append(QLayer(w, dict(layer.b), layer.ln1, layer.ln2, dict(act)))
    return QModel(m.cfg, m.wte, m.wpe, m.lnf, layers)


def calibration_tokens(cfg: ModelConfig, seed: int, n: int | None = None) -> np.ndarray:
    n = min(cfg.max_seq_len, n or 16)
    return np.random.default_rng(seed + 1).integers(0, cfg.vocab_size, n)


def build_quantized(cfg: ModelConfig, seed: int = 0) -> tuple[FloatModel, QModel]:
    fm = random_float_model(cfg, seed)
    return fm, quantize_model(fm, calibrate(fm, calibration_tokens(cfg, seed)))


# ---------------------------------------------------------------------------
# direct W8A8 path (single node, no simulator)

def quant_block(layer: QLayer, cfg: ModelConfig, cache: KVCache, delta, resid):
    a = layer.act
    H, hd = cfg.n_heads, cfg.head_dim
    x, resid = fused_ln_res(delta, resid, *layer.ln1, LN_EPS)
    xq = quantize(x, a["ln1"])
    q, k, v = (linear_i8(layer.w[n], layer.b[n], xq, a[n]).dequantize().reshape(H, hd)
               for n in ("q", "k", "v"))
    append_kv(cache, k, v)
    ctx = quantize(mha_decode(cache, q).reshape(-1), a["attn"])
    o = linear_i8(layer.w["o"], layer.b["o"], ctx, a["o"]).dequantize()
    x, resid = fused_ln_res(o, resid, *layer.ln2, LN_EPS)
    xq = quantize(x, a["ln2"])
    h = linear_i8(layer.w["fc1"], layer.b["fc1"], xq, a["fc1"]).dequantize()
    g = quantize(gelu(h), a["gelu"])
    y = linear_i8(layer.w["fc2"], layer.b["fc2"], g, a["fc2"]).dequantize()
    return y, resid


@dataclass
class ForwardResult:
    tokens: list[int]
    logits: list[np.ndarray]
    hidden: list[np.ndarray]


def reference_forward(m: QModel, prompt, gen_len: int) -> ForwardResult:
    """Prefill ``prompt`` then greedily generate ``gen_len`` tokens.

    ``logits`` holds the last prefill position followed by every decode step.
    """
    cfg = m.cfg
    caches = [KVCache(cfg.n_heads, cfg.head_dim, cfg.max_seq_len) for _ in m.layers]
    seq = [int(t) for t in prompt]
    out_logits, out_hidden = [], []
    n_steps = len(seq) + gen_len
    for pos in range(n_steps):
        delta, resid = embed(m, seq[pos], pos), np.zeros(cfg.l_embed)
        for li, layer in enumerate(m.layers):
            delta, resid = quant_block(layer, cfg, caches[li], delta, resid)
        if pos >= len(prompt) - 1:
            h, _ = fused_ln_res(delta, resid, *m.lnf, LN_EPS)
            lg = logits(m, h)
            out_hidden.append(h)
            out_logits.append(lg)
            if pos + 1 < n_steps:
                seq.append(int(np.argmax(lg)))
    return ForwardResult(seq[len(prompt):], out_logits, out_hidden)


# ---------------------------------------------------------------------------
# per-node staged computation for the simulator

class NodeCompute:
    """Functional state of one node; one method per scheduler stage.

    Stages that end in a ring all-gather return the node's local int8 chunk;
    the simulator hands the gathered full vector back via ``accept``.
    """

    def __init__(self, m: QModel, shard: NodeShard):
        self.m = m
        self.cfg = cfg = m.cfg
        self.shard = shard
        lo, hi = shard.heads
        self.caches = [KVCache(hi - lo, cfg.head_dim, cfg.max_seq_len, lo) for _ in m.layers]
        self.delta = None
        self.resid = None
        self.layer = 0
        self._x = None
        self._qkv = None
        self._gathered = None

    def _w(self, name):
        lo, hi = self.shard.rows[name]
        L = self.m.layers[self.layer]
        return QTensor(L.w[name].data[lo:hi], L.w[name].scale), L.b[name][lo:hi]

    def begin_token(self, token: int, pos: int):
        self.delta = embed(self.m, token, pos)
        self.resid = np.zeros(self.cfg.l_embed)

    def begin_layer(self, layer: int):
        self.layer = layer

    @property
    def act(self):
        return self.m.layers[self.layer].act

    def ln_res(self, which: str):
        L = self.m.layers[self.layer]
        ln = L.ln1 if which == "attn" else L.ln2
        x, self.resid = fused_ln_res(self.delta, self.resid, *ln, LN_EPS)
        self._x = quantize(x, self.act["ln1" if which == "attn" else "ln2"])

    def qkv(self):
        lh, hd = self.shard.n_local_heads, self.cfg.head_dim
        out = []
        for n in ("q", "k", "v"):
            w, b = self._w(n)
            out.append(linear_i8(w, b, self._x, self.act[n]).dequantize().reshape(lh, hd))
        self._qkv = out

    def mha(self) -> np.ndarray:
        q, k, v = self._qkv
        cache = self.caches[self.layer]
        append_kv(cache, k, v)
        return quantize(mha_decode(cache, q).reshape(-1), self.act["attn"]).data

    def linear(self, name: str) -> np.ndarray:
        w, b = self._w(name)
        # out-proj reads the gathered attention context; fc1/fc2 read the local full vector
        x = QTensor(self._gathered, self.act["attn"]) if name == "o" else self._x
        return linear_i8(w, b, x, self.act[name]).data

    def accept(self, full: np.ndarray):
        self._gathered = full

    def finish_linear(self, point: str):
        """Dequantize the gathered output of an o / fc2 projection into the residual branch."""
        self.delta = dequant_full(self._gathered, self.act[point])

    def gelu(self):
        h = dequant_full(self._gathered, self.act["fc1"])
        self._x = quantize(gelu(h), self.act["gelu"])

    def final_hidden(self) -> np.ndarray:
        h, _ = fused_ln_res(self.delta, self.resid, *self.m.lnf, LN_EPS)
        return h
