import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdksim.config import HardwareConfig
from mdksim.ring import (Datapack, RingError, RouterState, all_gather, overlapped_sync_schedule,
                         packetize, serial_sync_schedule)


def _hw(n, **kw):
    return HardwareConfig(n_nodes=n, **kw)


def test_single_node_identity():
    chunk = np.arange(10, dtype=np.int8)
    r = all_gather([chunk], _hw(1))
    assert np.array_equal(r.buffers[0], chunk)
    assert r.events == [] and r.rounds == 1


def test_four_nodes_constant_chunks():
    chunks = [np.full(64, i, dtype=np.int8) for i in range(4)]
    r = all_gather(chunks, _hw(4))
    want = np.repeat(np.arange(4, dtype=np.int8), 64)
    assert r.rounds == 4
    assert all(np.array_equal(b, want) for b in r.buffers)


def test_two_nodes_random_concat():
    rng = np.random.default_rng(0)
    chunks = [rng.integers(-127, 128, 100, dtype=np.int8) for _ in range(2)]
    r = all_gather(chunks, _hw(2))
    assert all(np.array_equal(b, np.concatenate(chunks)) for b in r.buffers)


def test_unequal_lengths_rejected():
    with pytest.raises(RingError):
        all_gather([np.zeros(4, np.int8), np.zeros(5, np.int8)], _hw(2))


def test_one_event_per_round_and_link():
    r = all_gather([np.zeros(64, np.int8)] * 4, _hw(4))
    assert len(r.events) == 16
    pairs = {(e.round, e.src, e.dst) for e in r.events}
    assert pairs == {(rnd, s, (s + 1) % 4) for rnd in range(4) for s in range(4)}
    assert all(e.nbytes == 64 for e in r.events)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_bytes_sent_per_node(n):
    r = all_gather([np.zeros(96, np.int8)] * n, _hw(n))
    assert r.bytes_sent == [n * 96] * n


def test_router_holds_after_each_round():
    n = 4
    chunks = [np.full(32, i, dtype=np.int8) for i in range(n)]
    routers = [RouterState(i, n, c, 32) for i, c in enumerate(chunks)]
    for rnd in range(n):
        out = [r.send() for r in routers]
        for src in range(n):
            routers[(src + 1) % n].receive(rnd, out[src])
        for r in routers:
            held = r.holds()
            assert held[1:] == [(r.node_id - k) % n for k in range(1, rnd + 2)]
            for origin in set(held):
                assert np.all(r.buffer[origin * 32:(origin + 1) * 32] == origin)


def test_altered_own_chunk_detected():
    r = RouterState(0, 2, np.ones(32, np.int8), 32)
    r.receive(0, [Datapack(1, 0, bytes(32))])
    with pytest.raises(RingError, match="altered"):
        r.receive(1, [Datapack(0, 0, bytes(32))])


def test_wrong_origin_detected():
    r = RouterState(0, 4, np.ones(32, np.int8), 32)
    with pytest.raises(RingError, match="origin"):
        r.receive(0, [Datapack(2, 0, bytes(32))])


def test_round_out_of_order_detected():
    r = RouterState(0, 4, np.ones(32, np.int8), 32)
    with pytest.raises(RingError, match="round"):
        r.receive(1, [Datapack(2, 0, bytes(32))])


def test_packetize_pads_to_fixed_size():
    packs = packetize(np.arange(40, dtype=np.int8), 3, 32)
    assert len(packs) == 2
    assert all(len(p.payload) == 32 and p.origin_node == 3 for p in packs)
    assert [p.seq_no for p in packs] == [0, 1]


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_convergence_property(n, size, seed):
    rng = np.random.default_rng(seed)
    chunks = [rng.integers(-127, 128, size, dtype=np.int8) for _ in range(n)]
    r = all_gather(chunks, _hw(n))
    want = np.concatenate(chunks)
    assert r.rounds == n
    assert all(np.array_equal(b, want) for b in r.buffers)


# -- latency hiding ------------------------------------------------------------

def test_overlap_single_block():
    s = overlapped_sync_schedule([3.0], [2.0])
    assert s.total == 5.0 and s.exposed_sync == 2.0


def test_overlap_compute_bound():
    s = overlapped_sync_schedule([10, 10, 10], [2, 2, 2])
    assert s.total == 32 and s.exposed_sync == 2


def test_overlap_sync_bound():
    s = overlapped_sync_schedule([1, 1, 1], [5, 5, 5])
    assert s.total == 16 and s.exposed_sync == 13


def test_overlap_length_mismatch():
    with pytest.raises(ValueError):
        overlapped_sync_schedule([1, 2], [1])


def test_serial_schedule():
    s = serial_sync_schedule([10, 10, 10], [2, 2, 2])
    assert s.total == 36 and s.exposed_sync == 6


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=12))
def test_hiding_bounds(pairs):
    comp = [c for c, _ in pairs]
    sync = [s for _, s in pairs]
    s = overlapped_sync_schedule(comp, sync)
    eps = 1e-9 * (1 + sum(comp) + sum(sync))
    assert s.exposed_sync <= sum(sync) + eps
    assert s.exposed_sync >= min(sync) - eps
    assert s.exposed_sync >= sync[-1] - eps
    if all(c == 0 for c in comp):
        assert s.exposed_sync == pytest.approx(sum(sync))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 100), st.floats(0, 100)), min_size=1, max_size=12))
def test_only_last_sync_exposed_when_hidden(pairs):
    comp = [c for c, _ in pairs]
    sync = [min(s, comp[i + 1]) if i + 1 < len(comp) else s for i, (_, s) in enumerate(pairs)]
    s = overlapped_sync_schedule(comp, sync)
    assert s.exposed_sync == pytest.approx(sync[-1], abs=1e-9 * (1 + sum(comp)))
