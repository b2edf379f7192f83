"""Deterministic synthetic workloads.

Every generator is a pure function of its spec: the same spec always yields
the same event list.  Written values are ``(tid << 48) | seq`` so any word
in a final memory image can be traced back to the store that produced it.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass

from ..memory.cache import LINE_SIZE, WORD_SIZE
from .events import (
    ACQUIRE, FENCE, RELEASE, AllocPim, Compute, PimBegin, PimEnd, Read, Sync, TraceEvent, Write,
)
from .tracefile import parse_trace

PAGE = 4096
REGION_BASE = 0x1000_0000
PRIVATE_BASE = 0x4000_0000
PRIVATE_STRIDE = 0x10_0000
LOCK_BASE = 0x7000_0000
VERTEX_STRIDE = 17 * LINE_SIZE  # odd line count spreads vertices over cache sets


def _page_align(n: int) -> int:
    return (n + PAGE - 1) // PAGE * PAGE


class _Emitter:
    def __init__(self, tid: int):
        self.tid = tid
        self.seq = 0
        self.events: list[TraceEvent] = []

    def r(self, addr: int) -> None:
        self.events.append(Read(self.tid, addr))

    def w(self, addr: int) -> None:
        self.seq += 1
        self.events.append(Write(self.tid, addr, (self.tid << 48) | self.seq))

    def cp(self, cycles: int) -> None:
        if cycles > 0:
            self.events.append(Compute(self.tid, cycles))

    def begin(self, kid: int) -> None:
        self.events.append(PimBegin(self.tid, kid))

    def end(self) -> None:
        self.events.append(PimEnd(self.tid))

    def sync(self, kind: str, addr: int) -> None:
        self.events.append(Sync(self.tid, kind, addr))


def _interleave(rng: random.Random, streams: list[list[TraceEvent]]) -> list[TraceEvent]:
    """Random merge that keeps each stream's order (file order is cosmetic)."""
    out: list[TraceEvent] = []
    cursors = [0] * len(streams)
    live = [i for i, s in enumerate(streams) if s]
    while live:
        i = rng.choice(live)
        s = streams[i]
        n = min(len(s) - cursors[i], rng.randint(1, 16))
        out.extend(s[cursors[i]:cursors[i] + n])
        cursors[i] += n
        if cursors[i] == len(s):
            live.remove(i)
    return out


def _skewed(rng: random.Random, n: int, alpha: float):
    weights = [1.0 / (i + 1) ** alpha for i in range(n)]
    order = list(range(n))
    rng.shuffle(order)
    cum = []
    total = 0.0
    for w in weights:
        total += w
        cum.append(total)
    return order, cum


@dataclass(frozen=True)
class PointerChaseSpec:
    nodes: int = 1024
    edges: int = 8192
    iterations: int = 2
    cpu_share_fraction: float = 0.3
    cpu_threads: int = 4
    pim_kernels: int = 4
    visits: int = 64
    cpu_ops: int = 2000
    cpu_write_fraction: float = 0.5
    value_write_fraction: float = 1.0
    compute_cycles: int = 8
    host_cycles: int = 32
    skew: float = 0.8
    private_lines: int = 512
    seed: int = 1


@dataclass(frozen=True)
class PointerChaseLayout:
    vertex_base: int
    next_base: int
    edge_base: int
    end: int
    offsets: tuple[int, ...]
    neighbors: tuple[int, ...]

    def vertex(self, v: int) -> int:
        return self.vertex_base + v * VERTEX_STRIDE

    def next_slot(self, v: int) -> int:
        return self.next_base + v * LINE_SIZE

    def edge(self, i: int) -> int:
        return self.edge_base + i * WORD_SIZE


def pointer_chase_layout(spec: PointerChaseSpec) -> PointerChaseLayout:
    rng = random.Random(f"pc-graph/{spec.seed}/{spec.nodes}/{spec.edges}")
    order, cum = _skewed(rng, spec.nodes, spec.skew)
    adj: list[list[int]] = [[] for _ in range(spec.nodes)]
    for _ in range(spec.edges):
        src = rng.randrange(spec.nodes)
        dst = order[rng.choices(range(spec.nodes), cum_weights=cum)[0]]
        adj[src].append(dst)
    offsets, neighbors = [0], []
    for lst in adj:
        neighbors.extend(lst)
        offsets.append(len(neighbors))
    vbase = REGION_BASE
    nbase = vbase + _page_align(spec.nodes * VERTEX_STRIDE)
    ebase = nbase + _page_align(spec.nodes * LINE_SIZE)
    end = ebase + _page_align(max(1, len(neighbors)) * WORD_SIZE)
    return PointerChaseLayout(vbase, nbase, ebase, end, tuple(offsets), tuple(neighbors))


def generate_pointer_chase(spec: PointerChaseSpec) -> list[TraceEvent]:
    """Graph kernels on PIM, CPU threads poking at shared vertex data.

    Vertices sit 17 lines apart, so each page holds about four and a traversal touches
    many pages but few lines per page.  Kernels pull neighbour values from
    the current array and write their own slot of the next array; CPU
    threads read and update current values with probability
    ``cpu_share_fraction`` per operation and otherwise work on private data.
    Each vertex is updated only by its owning CPU thread, so the final
    memory image does not depend on timing.  An update hits the value line
    kernels read with probability ``value_write_fraction`` and the vertex's
    second (bookkeeping) line otherwise.
    """
    if spec.nodes < 1:
        raise ValueError("nodes must be >= 1")
    lay = pointer_chase_layout(spec)
    rng = random.Random(f"pc-trace/{spec.seed}")
    order, cum = _skewed(random.Random(f"pc-hot/{spec.seed}"), spec.nodes, spec.skew)
    head = [AllocPim(0, lay.vertex_base, lay.end - lay.vertex_base)]
    streams: list[list[TraceEvent]] = []

    def hot_vertex(r: random.Random) -> int:
        return order[r.choices(range(spec.nodes), cum_weights=cum)[0]]

    for t in range(spec.cpu_threads):
        r = random.Random(f"pc-cpu/{spec.seed}/{t}")
        e = _Emitter(t)
        priv = PRIVATE_BASE + t * PRIVATE_STRIDE
        for _ in range(spec.cpu_ops):
            if r.random() < spec.cpu_share_fraction:
                v = hot_vertex(r)
                e.r(lay.vertex(v))
                if r.random() < spec.cpu_write_fraction:
                    # owner computes: no two threads ever store to the same word
                    v = v - v % spec.cpu_threads + t
                    if v < spec.nodes:
                        addr = lay.vertex(v)
                        if r.random() >= spec.value_write_fraction:
                            addr += LINE_SIZE
                            e.r(addr)
                        e.w(addr)
            else:
                addr = priv + r.randrange(spec.private_lines) * LINE_SIZE
                if r.random() < 0.3:
                    e.w(addr)
                else:
                    e.r(addr)
            e.cp(spec.compute_cycles)
        streams.append(e.events)

    for k in range(spec.pim_kernels):
        tid = spec.cpu_threads + k
        r = random.Random(f"pc-pim/{spec.seed}/{k}")
        e = _Emitter(tid)
        lo = k * spec.nodes // spec.pim_kernels
        part = list(range(lo, (k + 1) * spec.nodes // spec.pim_kernels))
        for it in range(spec.iterations):
            e.cp(spec.host_cycles)
            e.begin((k << 8) | it)
            for v in r.sample(part, min(spec.visits, len(part))):
                e.r(lay.vertex(v))
                last_line = None
                for i in range(lay.offsets[v], lay.offsets[v + 1]):
                    a = lay.edge(i)
                    if a // LINE_SIZE != last_line:
                        e.r(a)
                        last_line = a // LINE_SIZE
                    e.r(lay.vertex(lay.neighbors[i]))
                    e.cp(2)
                e.w(lay.next_slot(v))
            e.end()
        streams.append(e.events)
    return head + _interleave(rng, streams)


@dataclass(frozen=True)
class HtapSpec:
    tables: int = 4
    tuples: int = 256
    tuple_bytes: int = 128
    txn_count: int = 200
    analytic_query_count: int = 2
    read_write_ratio: float = 0.5
    rows_per_txn: int = 2
    cpu_threads: int = 4
    pim_kernels: int = 2
    compute_cycles: int = 16
    seed: int = 1


def htap_table_base(spec: HtapSpec, table: int) -> int:
    return REGION_BASE + table * _page_align(spec.tuples * spec.tuple_bytes)


def generate_htap(spec: HtapSpec) -> list[TraceEvent]:
    """Short locked CPU transactions against PIM scans and hash-join probes.

    ``read_write_ratio`` is the fraction of transactional row touches that
    also update the row.
    """
    if spec.tables < 1 or spec.tuples < 1:
        raise ValueError("need at least one table with one tuple")
    rng = random.Random(f"htap/{spec.seed}")
    table_span = _page_align(spec.tuples * spec.tuple_bytes)
    results = htap_table_base(spec, spec.tables)
    head = [AllocPim(0, REGION_BASE, spec.tables * table_span + _page_align(
        max(1, spec.pim_kernels) * spec.analytic_query_count * LINE_SIZE))]
    streams = []

    def row(table: int, t: int, field: int = 0) -> int:
        return htap_table_base(spec, table) + t * spec.tuple_bytes + field * WORD_SIZE

    for t in range(spec.cpu_threads):
        r = random.Random(f"htap-cpu/{spec.seed}/{t}")
        e = _Emitter(t)
        for _ in range(spec.txn_count):
            table = r.randrange(spec.tables)
            lock = LOCK_BASE + table * LINE_SIZE
            e.sync(ACQUIRE, lock)
            for _ in range(spec.rows_per_txn):
                addr = row(table, r.randrange(spec.tuples), r.randrange(spec.tuple_bytes // WORD_SIZE))
                e.r(addr)
                if r.random() < spec.read_write_ratio:
                    e.w(addr)
            e.sync(RELEASE, lock)
            e.cp(spec.compute_cycles)
        streams.append(e.events)

    lines_per_tuple = max(1, spec.tuple_bytes // LINE_SIZE)
    for k in range(spec.pim_kernels):
        tid = spec.cpu_threads + k
        r = random.Random(f"htap-pim/{spec.seed}/{k}")
        e = _Emitter(tid)
        for q in range(spec.analytic_query_count):
            a, b = r.randrange(spec.tables), r.randrange(spec.tables)
            e.begin((k << 8) | q)
            for t in range(spec.tuples):
                for ln in range(lines_per_tuple):
                    e.r(row(a, t) + ln * LINE_SIZE)
                if q % 2:
                    e.r(row(b, r.randrange(spec.tuples), 1))
                e.cp(2)
            e.w(results + (k * spec.analytic_query_count + q) * LINE_SIZE)
            e.sync(FENCE, results)
            e.end()
            e.cp(spec.compute_cycles)
        streams.append(e.events)
    return head + _interleave(rng, streams)


@dataclass(frozen=True)
class RandomSpec:
    """Small adversarial traces for the serializability oracle."""

    cpu_threads: int = 3
    pim_kernels: int = 2
    events: int = 400
    region_lines: int = 24
    private_lines: int = 8
    locks: int = 2
    pim_fraction: float = 0.5
    seed: int = 1


def generate_random(spec: RandomSpec) -> list[TraceEvent]:
    rng = random.Random(f"rand/{spec.seed}")
    locks = [REGION_BASE + i * LINE_SIZE for i in range(spec.locks)]
    data_base = REGION_BASE + spec.locks * LINE_SIZE
    head = [AllocPim(0, REGION_BASE, (spec.locks + spec.region_lines) * LINE_SIZE)]
    threads = spec.cpu_threads + spec.pim_kernels
    budget = max(1, spec.events // max(1, threads))
    streams = []

    def region_addr(r: random.Random) -> int:
        return data_base + r.randrange(spec.region_lines) * LINE_SIZE + r.randrange(8) * WORD_SIZE

    def body(e: _Emitter, r: random.Random, n: int, pim: bool) -> None:
        for _ in range(n):
            x = r.random()
            if pim or x < 0.7:
                addr = region_addr(r)
            else:
                addr = PRIVATE_BASE + e.tid * PRIVATE_STRIDE + r.randrange(spec.private_lines) * LINE_SIZE
            if r.random() < 0.45:
                e.w(addr)
            else:
                e.r(addr)
            if r.random() < 0.1:
                e.cp(r.randint(1, 40))

    def critical(e: _Emitter, r: random.Random, pim: bool) -> None:
        lock = r.choice(locks)
        e.sync(ACQUIRE, lock)
        body(e, r, r.randint(1, 4), pim)
        e.sync(RELEASE, lock)

    for t in range(threads):
        r = random.Random(f"rand/{spec.seed}/{t}")
        e = _Emitter(t)
        has_pim = t >= spec.cpu_threads
        while len(e.events) < budget:
            if has_pim and r.random() < spec.pim_fraction:
                e.begin(r.randrange(256))
                for _ in range(r.randint(1, 4)):
                    body(e, r, r.randint(5, 60), pim=True)
                    y = r.random()
                    if y < 0.15 and spec.locks:
                        critical(e, r, pim=True)
                    elif y < 0.25:
                        e.sync(FENCE, r.choice(locks) if locks else data_base)
                e.end()
            else:
                body(e, r, r.randint(3, 30), pim=False)
                if r.random() < 0.2 and spec.locks:
                    critical(e, r, pim=False)
        streams.append(e.events)
    return head + _interleave(rng, streams)


GENERATORS = {
    "pointer-chase": (PointerChaseSpec, generate_pointer_chase),
    "htap": (HtapSpec, generate_htap),
    "random": (RandomSpec, generate_random),
}


def spec_from_dict(data: dict) -> tuple[str, object]:
    data = dict(data)
    name = data.pop("generator", "pointer-chase")
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; expected one of {sorted(GENERATORS)}")
    cls = GENERATORS[name][0]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {name} parameters: {sorted(unknown)}")
    return name, cls(**data)


def generate(data: dict, seed: int | None = None) -> list[TraceEvent]:
    """Run the generator a ``[workload]`` table names; ``seed`` fills in a missing seed."""
    if seed is not None and "seed" not in data:
        data = {**data, "seed": seed}
    name, spec = spec_from_dict(data)
    return GENERATORS[name][1](spec)


def load_workload(data: dict, seed: int | None = None) -> list[TraceEvent]:
    """Events for a ``[workload]`` table: either ``trace = path`` or generator parameters."""
    if "trace" in data:
        if len(data) > 1:
            raise ValueError("a workload with a trace file takes no generator parameters")
        return parse_trace(data["trace"])
    if not data:
        raise ValueError("empty workload: give a trace file or generator parameters")
    return generate(data, seed)
