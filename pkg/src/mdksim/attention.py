"""Masked multi-head attention over a node-local, head-partitioned KV cache."""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class CacheFull(RuntimeError):
    pass


class KVCache:
    """Keys and values for the heads ``[head_lo, head_hi)`` held by one node."""

    def __init__(self, n_heads: int, head_dim: int, max_seq_len: int, head_lo: int = 0):
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.max_seq_len = max_seq_len
        self.head_lo = head_lo
        self.k = np.zeros((n_heads, max_seq_len, head_dim))
        self.v = np.zeros((n_heads, max_seq_len, head_dim))
        self.t = 0

    @property
    def heads(self) -> tuple[int, int]:
        return self.head_lo, self.head_lo + self.n_heads


def append_kv(cache: KVCache, k, v) -> KVCache:
    """Append one token ``[heads, dim]`` or a batch ``[seq, heads, dim]``."""
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if k.shape != v.shape:
        raise ValueError(f"k{k.shape} and v{v.shape} differ")
    if k.ndim == 2:
        k, v = k[None], v[None]
    if k.shape[1:] != (cache.n_heads, cache.head_dim):
        raise ValueError(f"expected [*, {cache.n_heads}, {cache.head_dim}], got {k.shape}")
    seq = k.shape[0]
    if cache.t + seq > cache.max_seq_len:
        raise CacheFull(f"KV cache holds {cache.t}/{cache.max_seq_len}, cannot add {seq}")
    t0 = cache.t
    cache.k[:, t0:t0 + seq] = k.transpose(1, 0, 2)
    cache.v[:, t0:t0 + seq] = v.transpose(1, 0, 2)
    cache.t += seq
    return cache


def default_scale(head_dim: int) -> float:
    return 1.0 / math.sqrt(head_dim)


def _attend(cache: KVCache, q, t: int, valid: int, scale: float) -> np.ndarray:
    out = np.empty((cache.n_heads, cache.head_dim))
    for h in range(cache.n_heads):
        out[h] = kernels.attend_head(cache.k[h], cache.v[h], np.ascontiguousarray(q[h]), scale, t, valid)
    return out


def mha_decode(cache: KVCache, q, scale: float | None = None) -> np.ndarray:
    """Attention of the current token; its K/V must already be appended."""
    if cache.t < 1:
        raise ValueError("mha_decode on empty cache")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (cache.n_heads, cache.head_dim):
        raise ValueError(f"q shape {q.shape} != ({cache.n_heads}, {cache.head_dim})")
    if scale is None:
        scale = default_scale(cache.head_dim)
    return _attend(cache, q, cache.t, cache.t, scale)


def mha_prefill(cache: KVCache, q, k, v, scale: float | None = None) -> np.ndarray:
    """Append ``seq`` tokens and attend causally; returns ``[seq, heads, dim]``.

    Every row is scored against the whole appended window and the positions
    after it are masked, the way the mask unit sits between score and softmax.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 3 or q.shape[1:] != (cache.n_heads, cache.head_dim):
        raise ValueError(f"q shape {q.shape} does not match cache heads")
    if np.shape(k) != q.shape or np.shape(v) != q.shape:
        raise ValueError("q, k, v shapes differ")
    if scale is None:
        scale = default_scale(cache.head_dim)
    t0 = cache.t
    append_kv(cache, k, v)
    seq = q.shape[0]
    out = np.empty_like(q)
    for i in range(seq):
        out[i] = _attend(cache, q[i], t0 + seq, t0 + i + 1, scale)
    return out


def dense_masked_attention(q, k, v, scale: float) -> np.ndarray:
    """Textbook causal attention on full ``[seq, heads, dim]`` tensors (test oracle)."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    seq = q.shape[0]
    scores = np.einsum("ihd,jhd->hij", q, k) * scale
    mask = np.triu(np.ones((seq, seq), dtype=bool), k=1)
    scores = np.where(mask[None], -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    return np.einsum("hij,jhd->ihd", p, v)
