"""Simplex ring all-gather with node-ID buffer offsets, and the block-pipelined
sync schedule used to hide transmission latency behind computation.

Each round every node forwards one chunk's worth of datapacks to its
successor and receives one from its predecessor. In round ``r`` (0-based)
node ``i`` receives the chunk that originated at ``(i - 1 - r) mod N`` and
writes it at that origin's offset. ``N`` rounds are run; the last delivers a
node's own chunk back to it and is checked to be a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import HardwareConfig
from .timing import sync_cost


class RingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Datapack:
    origin_node: int
    seq_no: int
    payload: bytes


@dataclass(frozen=True)
class NetEvent:
    src: int
    dst: int
    nbytes: int
    start: float
    end: float
    round: int = 0
    tag: str = ""


def packetize(chunk: np.ndarray, origin: int, pack_bytes: int) -> list[Datapack]:
    raw = np.ascontiguousarray(chunk, dtype=np.int8).tobytes()
    packs = []
    for seq, off in enumerate(range(0, max(len(raw), 1), pack_bytes)):
        body = raw[off:off + pack_bytes]
        packs.append(Datapack(origin, seq, body.ljust(pack_bytes, b"\0")))
    return packs


class RouterState:
    """One node's router for a single all-gather."""

    def __init__(self, node_id: int, n_nodes: int, chunk: np.ndarray, pack_bytes: int):
        self.node_id = node_id
        self.n_nodes = n_nodes
        self.pack_bytes = pack_bytes
        self.chunk_len = int(chunk.size)
        self.buffer = np.zeros(n_nodes * self.chunk_len, dtype=np.int8)
        self.buffer[self._offset(node_id):self._offset(node_id) + self.chunk_len] = chunk
        self.round = 0
        self.outgoing = packetize(chunk, node_id, pack_bytes)
        self.bytes_sent = 0

    @property
    def wire_bytes(self) -> int:
        return len(self.outgoing) * self.pack_bytes

    def _offset(self, origin: int) -> int:
        return origin * self.chunk_len

    def expected_origin(self, rnd: int) -> int:
        return (self.node_id - 1 - rnd) % self.n_nodes

    def send(self) -> list[Datapack]:
        self.bytes_sent += len(self.outgoing) * self.pack_bytes
        return self.outgoing

    def receive(self, rnd: int, packs: list[Datapack]) -> None:
        if rnd != self.round:
            raise RingError(f"node {self.node_id}: got round {rnd}, expected {self.round}")
        origin = self.expected_origin(rnd)
        base = self._offset(origin)
        view = self.buffer[base:base + self.chunk_len]
        data = np.frombuffer(b"".join(p.payload for p in packs), dtype=np.int8)[:self.chunk_len]
        if any(p.origin_node != origin for p in packs):
            raise RingError(f"node {self.node_id}: datapack origin mismatch in round {rnd}")
        if origin == self.node_id:
            if not np.array_equal(view, data):
                raise RingError(f"node {self.node_id}: own chunk came back altered")
        else:
            view[:] = data
        self.outgoing = packs
        self.round += 1

    def holds(self) -> list[int]:
        """Origins present in the buffer after the rounds completed so far."""
        return [self.node_id] + [(self.node_id - 1 - r) % self.n_nodes for r in range(self.round)]


@dataclass
class GatherResult:
    buffers: list[np.ndarray]
    events: list[NetEvent]
    rounds: int
    bytes_sent: list[int]


def all_gather(chunks, hw: HardwareConfig, start: float = 0.0, tag: str = "") -> GatherResult:
    """Barrier-synchronized ring all-gather of equal-length int8 chunks."""
    n = len(chunks)
    if n < 1:
        raise RingError("no chunks")
    sizes = {int(np.asarray(c).size) for c in chunks}
    if len(sizes) != 1:
        raise RingError(f"unequal chunk lengths: {sorted(sizes)}")
    routers = [RouterState(i, n, np.asarray(c, dtype=np.int8), hw.datapack_bytes) for i, c in enumerate(chunks)]
    events: list[NetEvent] = []
    t = start
    for rnd in range(n):
        if n == 1:
            routers[0].round += 1  # self-delivery, no link
            continue
        outgoing = [r.send() for r in routers]
        nbytes = len(outgoing[0]) * hw.datapack_bytes
        dt = sync_cost(nbytes, hw)
        for src in range(n):
            dst = (src + 1) % n
            routers[dst].receive(rnd, outgoing[src])
            events.append(NetEvent(src, dst, nbytes, t, t + dt, rnd, tag))
        t += dt
    return GatherResult([r.buffer for r in routers], events, n, [r.bytes_sent for r in routers])


@dataclass(frozen=True)
class SyncSchedule:
    total: float
    exposed_sync: float
    compute_end: tuple[float, ...]
    sync_end: tuple[float, ...]


def overlapped_sync_schedule(block_compute_times, block_sync_times) -> SyncSchedule:
    """Two-stage pipeline: block i's sync overlaps block i+1's compute."""
    comp = list(block_compute_times)
    sync = list(block_sync_times)
    if len(comp) != len(sync) or not comp:
        raise ValueError("need equal, non-empty compute and sync lists")
    c_end, s_end = [], []
    c = s = 0.0
    for ci, si in zip(comp, sync):
        c += ci
        s = max(c, s) + si
        c_end.append(c)
        s_end.append(s)
    total = s_end[-1]
    return SyncSchedule(total, total - c_end[-1], tuple(c_end), tuple(s_end))


def serial_sync_schedule(block_compute_times, block_sync_times) -> SyncSchedule:
    """No overlap: every block waits for its own sync before the next computes."""
    c_end, s_end = [], []
    t = 0.0
    for ci, si in zip(block_compute_times, block_sync_times):
        t += ci
        c_end.append(t)
        t += si
        s_end.append(t)
    return SyncSchedule(t, t - sum(block_compute_times), tuple(c_end), tuple(s_end))
