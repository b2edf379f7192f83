from __future__ import annotations

from ..memory.cache import WORD_SIZE
from ..memory.dram import PimDataRegion
from .events import ALLOC, COMPUTE, PIM_BEGIN, PIM_END, READ, SYNC, WRITE, TraceEvent


class TraceStructureError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems[:5]) + (f" (+{len(problems) - 5} more)"
                                                   if len(problems) > 5 else ""))
        self.problems = problems


def region_of(events) -> PimDataRegion:
    region = PimDataRegion()
    for ev in events:
        if ev.op == ALLOC:
            region.allocate(ev.addr, ev.value)
    return region


def check_trace(events: list[TraceEvent]) -> list[str]:
    """Return every structural problem found; an empty list means valid.

    Rules: PB/PE pair up per thread without nesting, accesses are word
    aligned, anything a PIM kernel touches (including its lock words) was
    allocated earlier in the file, and no thread ends inside a kernel.
    """
    problems: list[str] = []
    region = PimDataRegion()
    open_kernel: dict[int, int] = {}
    for i, ev in enumerate(events, 1):
        where = f"event {i} (thread {ev.tid})"
        op = ev.op
        if op == ALLOC:
            if ev.tid in open_kernel:
                problems.append(f"{where}: AL inside a PIM kernel")
            region.allocate(ev.addr, ev.value)
        elif op == PIM_BEGIN:
            if ev.tid in open_kernel:
                problems.append(f"{where}: PB nested inside kernel {open_kernel[ev.tid]:#x}")
            open_kernel[ev.tid] = ev.value
        elif op == PIM_END:
            if open_kernel.pop(ev.tid, None) is None:
                problems.append(f"{where}: PE without a matching PB")
        elif op in (READ, WRITE, SYNC):
            if ev.addr % WORD_SIZE:
                problems.append(f"{where}: address {ev.addr:#x} is not word aligned")
            if ev.tid in open_kernel and ev.addr not in region:
                problems.append(f"{where}: PIM kernel touches {ev.addr:#x} outside allocated PIM data")
        elif op == COMPUTE:
            pass
    for tid, kid in sorted(open_kernel.items()):
        problems.append(f"thread {tid}: kernel {kid:#x} never ends")
    return problems


def validate_trace(events: list[TraceEvent]) -> list[TraceEvent]:
    problems = check_trace(events)
    if problems:
        raise TraceStructureError(problems)
    return events
