from __future__ import annotations

from dataclasses import dataclass

READ, WRITE, PIM_BEGIN, PIM_END, SYNC, ALLOC, COMPUTE = "R", "W", "PB", "PE", "SY", "AL", "CP"
OPS = (READ, WRITE, PIM_BEGIN, PIM_END, SYNC, ALLOC, COMPUTE)

ACQUIRE, RELEASE, FENCE = "acquire", "release", "fence"
SYNC_KINDS = (ACQUIRE, RELEASE, FENCE)

WORD_MASK = (1 << 64) - 1


@dataclass(frozen=True, slots=True)
class TraceEvent:
    """One trace record.

    ``addr`` holds the address (R, W, SY) or base (AL); ``value`` holds the
    written value (W), kernel id (PB), length (AL) or cycle count (CP).
    """

    tid: int
    op: str
    addr: int = 0
    value: int = 0
    sync: str = ""

    @property
    def is_access(self) -> bool:
        return self.op == READ or self.op == WRITE


def Read(tid: int, addr: int) -> TraceEvent:
    return TraceEvent(tid, READ, addr)


def Write(tid: int, addr: int, value: int) -> TraceEvent:
    return TraceEvent(tid, WRITE, addr, value & WORD_MASK)


def PimBegin(tid: int, kernel_id: int) -> TraceEvent:
    return TraceEvent(tid, PIM_BEGIN, 0, kernel_id)


def PimEnd(tid: int) -> TraceEvent:
    return TraceEvent(tid, PIM_END)


def Sync(tid: int, kind: str, addr: int) -> TraceEvent:
    if kind not in SYNC_KINDS:
        raise ValueError(f"unknown sync kind {kind!r}")
    return TraceEvent(tid, SYNC, addr, 0, kind)


def AllocPim(tid: int, base: int, length: int) -> TraceEvent:
    return TraceEvent(tid, ALLOC, base, length)


def Compute(tid: int, cycles: int) -> TraceEvent:
    return TraceEvent(tid, COMPUTE, 0, cycles)


def split_threads(events) -> dict[int, list[TraceEvent]]:
    """Per-thread event lists in file order; allocations are kept out."""
    out: dict[int, list[TraceEvent]] = {}
    for ev in events:
        if ev.op != ALLOC:
            out.setdefault(ev.tid, []).append(ev)
    return dict(sorted(out.items()))


def allocations(events) -> list[tuple[int, int]]:
    return [(ev.addr, ev.value) for ev in events if ev.op == ALLOC]
