"""Discrete-event core: virtual clock, processes, ring transfers, timeline.

Processes are generators. Yielding a float sleeps for that many seconds of
virtual time; yielding a ``Signal`` waits until it fires. Simultaneous
events are ordered by (node, stage, kind) and then by insertion, which makes
every replay identical.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .config import HardwareConfig
from .ring import RouterState
from .timing import AUX, KERNEL_KINDS, LN_RES, MHA, MP, sync_cost

NET = "NET"
STAGE = "STAGE"
# one event-resolution tick of the virtual clock (seconds)
TICK = 1e-12


class Signal:
    __slots__ = ("fired", "time", "waiters")

    def __init__(self):
        self.fired = False
        self.time = None
        self.waiters = []


class Engine:
    def __init__(self):
        self.now = 0.0
        self._heap = []
        self._seq = count()

    def at(self, time: float, fn, prio=(0, 0, 0)):
        heapq.heappush(self._heap, (time, prio, next(self._seq), fn))

    def spawn(self, gen, prio=(0, 0, 0)):
        proc = _Process(self, gen, prio)
        self.at(self.now, proc.step, prio)
        return proc

    def fire(self, sig: Signal):
        if sig.fired:
            return
        sig.fired = True
        sig.time = self.now
        for proc in sig.waiters:
            self.at(self.now, proc.step, proc.prio)
        sig.waiters = []

    def run(self):
        heap = self._heap
        while heap:
            time, _, _, fn = heapq.heappop(heap)
            self.now = time
            fn()


class _Process:
    __slots__ = ("engine", "gen", "prio", "done")

    def __init__(self, engine, gen, prio):
        self.engine = engine
        self.gen = gen
        self.prio = prio
        self.done = Signal()

    def step(self):
        eng = self.engine
        try:
            req = next(self.gen)
        except StopIteration:
            eng.fire(self.done)
            return
        if isinstance(req, Signal):
            if req.fired:
                eng.at(eng.now, self.step, self.prio)
            else:
                req.waiters.append(self)
        else:
            eng.at(eng.now + req, self.step, self.prio)


# ---------------------------------------------------------------------------
# timeline

@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    node: int
    tag: str


_START_KIND = {STAGE: "stage_begin", NET: "net_start"}
_END_KIND = {STAGE: "stage_end", NET: "net_end"}
_KIND_RANK = {"stage_end": 0, "kernel_end": 1, "net_end": 2, "token_done": 3,
              "stage_begin": 4, "kernel_start": 5, "net_start": 6}


def _union(spans):
    """Merge (start, end) spans; returns list of disjoint spans."""
    out = []
    for s, e in sorted(spans):
        if out and s <= out[-1][1]:
            if e > out[-1][1]:
                out[-1][1] = e
        else:
            out.append([s, e])
    return out


def _length(spans) -> float:
    return sum(e - s for s, e in spans)


def _subtract(a, b) -> float:
    """Length of union(a) minus union(b), both already merged."""
    total = 0.0
    j = 0
    for s, e in a:
        cur = s
        while j < len(b) and b[j][1] <= cur:
            j += 1
        k = j
        while k < len(b) and b[k][0] < e:
            if b[k][0] > cur:
                total += b[k][0] - cur
            cur = max(cur, b[k][1])
            k += 1
        if cur < e:
            total += e - cur
    return total


@dataclass
class TokenRecord:
    index: int
    phase: str
    start: float
    end: float
    times: dict

    @property
    def latency(self) -> float:
        return self.end - self.start


CATEGORIES = (MP, MHA, LN_RES, AUX, "NET_EXPOSED")


@dataclass
class Timeline:
    """Intervals recorded by the simulator plus per-token aggregates.

    Interval tuples are ``(start, end, node, category, tag, peer)`` where
    ``peer`` is the destination node for network transfers and -1 otherwise.
    ``keep_tokens`` bounds how many tokens keep their raw intervals (``None``
    keeps all); aggregates are always computed.
    """

    n_nodes: int = 1
    keep_tokens: int | None = None
    intervals: list = field(default_factory=list)
    tokens: list = field(default_factory=list)
    _pending: list = field(default_factory=list)

    def add(self, start, end, node, cat, tag, peer=-1):
        self._pending.append((start, end, node, cat, tag, peer))

    def close_token(self, index: int, phase: str, start: float, end: float):
        if self.tokens and end <= self.tokens[-1].end:
            raise RuntimeError("token_done times must strictly increase")
        times = self._aggregate(self._pending)
        self.tokens.append(TokenRecord(index, phase, start, end, times))
        if self.keep_tokens is None or len(self.tokens) <= self.keep_tokens:
            self.intervals.extend(self._pending)
        self._pending = []

    def _aggregate(self, ivs) -> dict:
        per_node = [{c: [] for c in (*KERNEL_KINDS, NET)} for _ in range(self.n_nodes)]
        for s, e, node, cat, _, peer in ivs:
            if cat == STAGE:
                continue
            per_node[node][cat].append((s, e))
            if peer >= 0:
                per_node[peer][cat].append((s, e))
        acc = dict.fromkeys(CATEGORIES, 0.0)
        for spans in per_node:
            kern = _union([x for k in KERNEL_KINDS for x in spans[k]])
            for k in KERNEL_KINDS:
                acc[k] += _length(_union(spans[k]))
            acc["NET_EXPOSED"] += _subtract(_union(spans[NET]), kern)
        return {k: v / self.n_nodes for k, v in acc.items()}

    # -- queries ---------------------------------------------------------
    def phase_tokens(self, phase: str) -> list[TokenRecord]:
        return [t for t in self.tokens if t.phase == phase]

    def latencies(self, phase: str) -> np.ndarray:
        return np.array([t.latency for t in self.phase_tokens(phase)])

    def events(self) -> list[Event]:
        """Time-ordered start/end events of every retained interval."""
        out = []
        for s, e, node, cat, tag, _ in self.intervals:
            out.append(Event(s, _START_KIND.get(cat, "kernel_start"), node, tag))
            out.append(Event(e, _END_KIND.get(cat, "kernel_end"), node, tag))
        for t in self.tokens:
            out.append(Event(t.end, "token_done", -1, f"token{t.index}"))
        out.sort(key=lambda ev: (ev.time, _KIND_RANK[ev.kind], ev.node, ev.tag))
        return out

    def select(self, node=None, cat=None, prefix=None):
        return [iv for iv in self.intervals
                if (node is None or iv[2] == node or iv[5] == node)
                and (cat is None or iv[3] == cat)
                and (prefix is None or iv[4].startswith(prefix))]

    def exposed_network(self, node: int, start: float, end: float) -> float:
        """Network time touching ``node`` inside [start, end] not covered by its kernels."""
        net = []
        kern = []
        for s, e, n, cat, _, peer in self.intervals:
            if e <= start or s >= end:
                continue
            s, e = max(s, start), min(e, end)
            if cat == NET and (n == node or peer == node):
                net.append((s, e))
            elif cat in KERNEL_KINDS and n == node:
                kern.append((s, e))
        return _subtract(_union(net), _union(kern))


class EmptyTimeline(ValueError):
    pass


def breakdown(timeline: Timeline, phase: str | None = "decode") -> dict[str, float]:
    """Percent of time in linear+MHA, critical-path ops and exposed sync."""
    toks = timeline.tokens if phase is None else timeline.phase_tokens(phase)
    if not toks:
        raise EmptyTimeline(f"no tokens for phase {phase!r}")
    tot = dict.fromkeys(CATEGORIES, 0.0)
    for t in toks:
        for k in CATEGORIES:
            tot[k] += t.times[k]
    groups = {
        "linear+MHA": tot[MP] + tot[MHA],
        "critical-path": tot[LN_RES] + tot[AUX],
        "exposed-sync": tot["NET_EXPOSED"],
    }
    s = sum(groups.values())
    if s <= 0:
        raise EmptyTimeline("timeline has no busy time")
    return {k: 100.0 * v / s for k, v in groups.items()}


# ---------------------------------------------------------------------------
# ring transfers on the virtual clock

class RingGather:
    """Block-wise ring all-gather of one stage activation across all nodes.

    Each link (i -> i+1) is simplex and serves one transfer at a time in
    arrival order. A node forwards round r+1 of a block as soon as it has
    received round r of it.
    """

    def __init__(self, engine: Engine, timeline: Timeline, hw: HardwareConfig,
                 n_blocks: int, tag: str, stage_id: int):
        self.eng = engine
        self.tl = timeline
        self.hw = hw
        self.n = hw.n_nodes
        self.n_blocks = n_blocks
        self.tag = tag
        self.stage_id = stage_id
        n = self.n
        self.routers = [[None] * n for _ in range(n_blocks)]
        self._early = [[[] for _ in range(n)] for _ in range(n_blocks)]
        self.block_done = [[Signal() for _ in range(n)] for _ in range(n_blocks)]
        self.node_done = [Signal() for _ in range(n)]
        self._left = [n_blocks] * n
        self._queue = [deque() for _ in range(n)]
        self._busy = [False] * n

    def post(self, node: int, block: int, chunk=None, nbytes: int = 0):
        """Node ``node`` has block ``block`` ready. Timing-only runs pass ``nbytes``."""
        if chunk is not None:
            router = RouterState(node, self.n, np.asarray(chunk, dtype=np.int8), self.hw.datapack_bytes)
        else:
            router = _PhantomRouter(self.n, nbytes, self.hw.datapack_bytes)
        self.routers[block][node] = router
        if self.n == 1:
            router.round = 1
            self._complete(node, block)
            return
        for rnd, packs in self._early[block][node]:
            self._deliver(node, block, rnd, packs)
        self._early[block][node] = []
        self._enqueue(node, block, 0)

    def _enqueue(self, src: int, block: int, rnd: int):
        # take the payload now; a later receive replaces the router's outgoing packs
        router = self.routers[block][src]
        self._queue[src].append((block, rnd, router.send(), router.wire_bytes))
        self._kick(src)

    def _kick(self, src: int):
        if self._busy[src] or not self._queue[src]:
            return
        block, rnd, packs, nbytes = self._queue[src].popleft()
        dt = sync_cost(nbytes, self.hw)
        start = self.eng.now
        dst = (src + 1) % self.n
        self._busy[src] = True
        self.tl.add(start, start + dt, src, NET, f"{self.tag}.b{block}.r{rnd}", dst)

        def finish():
            self._busy[src] = False
            if self.routers[block][dst] is None:
                self._early[block][dst].append((rnd, packs))
            else:
                self._deliver(dst, block, rnd, packs)
            self._kick(src)

        self.eng.at(start + dt, finish, (dst, self.stage_id, 2))

    def _deliver(self, node, block, rnd, packs):
        self.routers[block][node].receive(rnd, packs)
        if rnd + 1 < self.n:
            self._enqueue(node, block, rnd + 1)
        else:
            self._complete(node, block)

    def _complete(self, node, block):
        self.eng.fire(self.block_done[block][node])
        self._left[node] -= 1
        if self._left[node] == 0:
            self.eng.fire(self.node_done[node])

    def gathered(self, node: int) -> np.ndarray:
        """Full vector at ``node``: every origin's blocks in node-ID order."""
        parts = []
        for origin in range(self.n):
            for block in range(self.n_blocks):
                r = self.routers[block][node]
                parts.append(r.buffer[origin * r.chunk_len:(origin + 1) * r.chunk_len])
        return np.concatenate(parts)


class _PhantomRouter:
    """Stands in for ``RouterState`` when only timing is simulated."""

    __slots__ = ("n_nodes", "wire_bytes", "round")

    def __init__(self, n_nodes, nbytes, pack_bytes):
        self.n_nodes = n_nodes
        self.wire_bytes = -(-nbytes // pack_bytes) * pack_bytes
        self.round = 0

    def send(self):
        return None

    def receive(self, rnd, packs):
        self.round += 1
