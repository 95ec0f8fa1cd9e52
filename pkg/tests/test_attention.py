import numpy as np
import pytest

from mdksim import kernels
from mdksim.attention import (CacheFull, KVCache, append_kv, default_scale,
                              dense_masked_attention, mha_decode, mha_prefill)


def _rand(rng, *shape):
    return rng.normal(size=shape)


def test_append_one_token():
    c = KVCache(2, 4, 8)
    append_kv(c, np.ones((2, 4)), np.ones((2, 4)))
    assert c.t == 1


def test_append_at_capacity_fails():
    c = KVCache(1, 2, 2)
    append_kv(c, np.zeros((2, 1, 2)), np.zeros((2, 1, 2)))
    with pytest.raises(CacheFull):
        append_kv(c, np.zeros((1, 2)), np.zeros((1, 2)))


def test_prefill_then_decode_count():
    rng = np.random.default_rng(0)
    c = KVCache(2, 4, 16)
    mha_prefill(c, *(_rand(rng, 8, 2, 4) for _ in range(3)))
    append_kv(c, _rand(rng, 2, 4), _rand(rng, 2, 4))
    assert c.t == 9


def test_append_keeps_earlier_entries():
    rng = np.random.default_rng(1)
    c = KVCache(2, 4, 8)
    k0 = _rand(rng, 2, 4)
    append_kv(c, k0, k0)
    append_kv(c, _rand(rng, 2, 4), _rand(rng, 2, 4))
    assert np.array_equal(c.k[:, 0], k0)


def test_append_shape_checked():
    with pytest.raises(ValueError):
        append_kv(KVCache(2, 4, 8), np.zeros((3, 4)), np.zeros((3, 4)))


def test_decode_single_token_returns_v():
    rng = np.random.default_rng(2)
    c = KVCache(3, 4, 8)
    v = _rand(rng, 3, 4)
    append_kv(c, _rand(rng, 3, 4), v)
    assert np.array_equal(mha_decode(c, _rand(rng, 3, 4)), v)


def test_decode_identical_keys_give_mean():
    rng = np.random.default_rng(3)
    c = KVCache(1, 4, 8)
    k = _rand(rng, 1, 4)
    vs = [_rand(rng, 1, 4) for _ in range(5)]
    for v in vs:
        append_kv(c, k, v)
    assert np.allclose(mha_decode(c, _rand(rng, 1, 4)), np.mean(vs, axis=0))


def test_decode_matches_dense_oracle():
    rng = np.random.default_rng(4)
    q, k, v = (_rand(rng, 4, 2, 4) for _ in range(3))
    c = KVCache(2, 4, 8)
    append_kv(c, k, v)
    ref = dense_masked_attention(q, k, v, default_scale(4))
    assert np.allclose(mha_decode(c, q[-1]), ref[-1], atol=1e-12)


def test_decode_empty_cache():
    with pytest.raises(ValueError):
        mha_decode(KVCache(1, 2, 4), np.zeros((1, 2)))


def test_prefill_seq1_equals_decode():
    rng = np.random.default_rng(5)
    q, k, v = (_rand(rng, 1, 2, 4) for _ in range(3))
    a = mha_prefill(KVCache(2, 4, 8), q, k, v)
    c = KVCache(2, 4, 8)
    append_kv(c, k[0], v[0])
    assert np.array_equal(a[0], mha_decode(c, q[0]))


def test_prefill_row0_ignores_later_tokens():
    rng = np.random.default_rng(6)
    q, k, v = (_rand(rng, 5, 2, 4) for _ in range(3))
    a = mha_prefill(KVCache(2, 4, 8), q, k, v)
    k2, v2 = k.copy(), v.copy()
    k2[1:] += 10.0
    v2[1:] -= 10.0
    b = mha_prefill(KVCache(2, 4, 8), q, k2, v2)
    assert np.array_equal(a[0], b[0])


def test_prefill_matches_dense_oracle():
    rng = np.random.default_rng(7)
    q, k, v = (_rand(rng, 5, 3, 4) for _ in range(3))
    out = mha_prefill(KVCache(3, 4, 8), q, k, v)
    assert np.allclose(out, dense_masked_attention(q, k, v, default_scale(4)), atol=1e-12)


def test_prefill_shape_mismatch():
    with pytest.raises(ValueError):
        mha_prefill(KVCache(2, 4, 8), np.zeros((2, 2, 4)), np.zeros((3, 2, 4)), np.zeros((2, 2, 4)))


@pytest.mark.parametrize("n", [1, 4, 9, 16])
def test_prefill_then_decode_equals_full_prefill(n):
    rng = np.random.default_rng(n)
    q, k, v = (_rand(rng, n + 1, 2, 4) for _ in range(3))
    full = mha_prefill(KVCache(2, 4, 32), q, k, v)[-1]
    c = KVCache(2, 4, 32)
    mha_prefill(c, q[:n], k[:n], v[:n])
    append_kv(c, k[n], v[n])
    assert np.allclose(mha_decode(c, q[n]), full, atol=1e-5)


@pytest.mark.parametrize("n_nodes", [2, 4, 8])
def test_headwise_sharding_is_bitwise(n_nodes):
    rng = np.random.default_rng(n_nodes)
    H, hd, t = 8, 8, 12
    ks, vs = _rand(rng, t, H, hd), _rand(rng, t, H, hd)
    full = KVCache(H, hd, 16)
    append_kv(full, ks, vs)
    per = H // n_nodes
    q = _rand(rng, H, hd)
    parts = []
    for i in range(n_nodes):
        c = KVCache(per, hd, 16, i * per)
        append_kv(c, ks[:, i * per:(i + 1) * per], vs[:, i * per:(i + 1) * per])
        assert c.heads == (i * per, (i + 1) * per)
        parts.append(mha_decode(c, q[i * per:(i + 1) * per]))
    assert np.array_equal(np.concatenate(parts), mha_decode(full, q))


def test_backends_agree_bitwise():
    backends = kernels.available_backends()
    rng = np.random.default_rng(9)
    k, v = _rand(rng, 40, 16), _rand(rng, 40, 16)
    q = _rand(rng, 16)
    x = _rand(rng, 300)
    outs = [m.attend_head(k, v, q, 0.25, 40, 33) for m in backends.values()]
    sums = [m.sum_ltr(x) for m in backends.values()]
    assert all(np.array_equal(o, outs[0]) for o in outs)
    assert len(set(sums)) == 1
