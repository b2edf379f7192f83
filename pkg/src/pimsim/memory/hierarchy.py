"""Processor-side caches: private L1s and a shared non-inclusive victim L2.

Line data lives once per line in a ``CpuEntry`` (MESI keeps all copies equal);
the set-associative structures only decide presence and replacement.  A dirty
line has exactly one Modified holder: the sole L1 that wrote it, or the L2
once a second core has read it.
"""

from __future__ import annotations

from typing import Callable

from .cache import EXCLUSIVE, INVALID, MODIFIED, SHARED, CacheLine, SetAssociativeCache

L2_ID = -1

LOCAL, ONCHIP, MISS = "l1", "onchip", "miss"


class CpuEntry:
    __slots__ = ("data", "dirty", "holders")

    def __init__(self, data: list[int], dirty: bool = False):
        self.data = data
        self.dirty = dirty
        self.holders: set[int] = set()


class CpuHierarchy:
    def __init__(self, cores: int, region, l1_size: int = 64 * 1024, l1_ways: int = 4,
                 l2_size: int = 2 * 1024 * 1024, l2_ways: int = 8,
                 writeback: Callable[[int, list[int]], None] | None = None):
        self.region = region
        self.l1 = [SetAssociativeCache(l1_size, l1_ways, level=f"CPU-L1.{c}") for c in range(cores)]
        self.l2 = SetAssociativeCache(l2_size, l2_ways, level="CPU-L2")
        self.entries: dict[int, CpuEntry] = {}
        self.dirty_region: dict[int, None] = {}
        self.writeback = writeback or (lambda line, data: None)
        self.on_dirty: Callable[[int], None] | None = None
        self.on_clean: Callable[[int], None] | None = None
        self.l1_accesses = 0
        self.l2_accesses = 0

    def _cache(self, holder: int) -> SetAssociativeCache:
        return self.l2 if holder == L2_ID else self.l1[holder]

    # dirty bookkeeping -------------------------------------------------
    def _mark_dirty(self, line: int, e: CpuEntry) -> None:
        if not e.dirty:
            e.dirty = True
            if line in self.region:
                self.dirty_region[line] = None
                if self.on_dirty:
                    self.on_dirty(line)

    def _mark_clean(self, line: int, e: CpuEntry) -> None:
        if e.dirty:
            e.dirty = False
            if self.dirty_region.pop(line, 0) is None and self.on_clean:
                self.on_clean(line)

    def _restate(self, line: int, e: CpuEntry) -> None:
        sole = len(e.holders) == 1
        for h in e.holders:
            cl = self._cache(h).lookup(line, touch=False)
            if h == L2_ID:
                cl.mesi = MODIFIED if e.dirty else (EXCLUSIVE if sole else SHARED)
            elif sole:
                cl.mesi = MODIFIED if e.dirty else EXCLUSIVE
            else:
                cl.mesi = SHARED

    # placement -----------------------------------------------------------
    def _install(self, holder: int, line: int, e: CpuEntry) -> None:
        cache = self._cache(holder)
        victim = cache.insert(CacheLine(line, SHARED))
        e.holders.add(holder)
        if victim is not None:
            if holder == L2_ID:
                self._l2_evicted(victim.tag)
            else:
                self._l1_evicted(holder, victim.tag)

    def _l1_evicted(self, core: int, line: int) -> None:
        e = self.entries[line]
        e.holders.discard(core)
        if not e.holders:
            self.l2_accesses += 1
            self._install(L2_ID, line, e)
        self._restate(line, e)

    def _l2_evicted(self, line: int) -> None:
        e = self.entries[line]
        e.holders.discard(L2_ID)
        if e.dirty:
            self.writeback(line, list(e.data))
            self._mark_clean(line, e)
        if not e.holders:
            del self.entries[line]
        else:
            self._restate(line, e)

    def _drop_all(self, line: int, e: CpuEntry) -> None:
        for h in e.holders:
            cl = self._cache(h).remove(line)
            if cl is not None:
                cl.invalidate()
        e.holders.clear()
        del self.entries[line]

    # accesses ------------------------------------------------------------
    def holds(self, core: int, line: int) -> bool:
        return line in self.l1[core]

    def read(self, core: int, line: int) -> str:
        """Serve a read from on-chip caches. ``MISS`` means the caller must fill()."""
        self.l1_accesses += 1
        cache = self.l1[core]
        if cache.lookup(line) is not None:
            return LOCAL
        e = self.entries.get(line)
        if e is None:
            return MISS
        self.l2_accesses += 1
        others = [h for h in e.holders if h != L2_ID]
        if e.dirty and others:
            # remote Modified copy: dirty data moves to L2, cores share clean copies
            if L2_ID not in e.holders:
                self._install(L2_ID, line, e)
        elif not others and L2_ID in e.holders:
            # victim-cache hit moves the line back up
            e.holders.discard(L2_ID)
            self.l2.remove(line)
        if line in self.entries:
            self._install(core, line, e)
            self._restate(line, e)
            return ONCHIP
        return MISS

    def write(self, core: int, line: int) -> str:
        """Gain ownership for a write. ``MISS`` means the caller must fill()."""
        self.l1_accesses += 1
        e = self.entries.get(line)
        if e is None:
            return MISS
        level = LOCAL
        for h in list(e.holders):
            if h != core:
                self._cache(h).remove(line)
                e.holders.discard(h)
                level = ONCHIP
        if core not in e.holders:
            self.l2_accesses += 1
            self._install(core, line, e)
            level = ONCHIP
        else:
            self.l1[core].lookup(line)
        if line not in self.entries:  # lost to a self-eviction cascade; refill
            return MISS
        self._mark_dirty(line, e)
        self._restate(line, e)
        return level

    def fill(self, core: int, line: int, data: list[int], for_write: bool) -> None:
        e = CpuEntry(list(data))
        self.entries[line] = e
        self._install(core, line, e)
        if line not in self.entries:
            raise AssertionError("fill evicted its own line")
        if for_write:
            self._mark_dirty(line, e)
        self._restate(line, e)

    def load_word(self, line: int, idx: int) -> int:
        return self.entries[line].data[idx]

    def store_word(self, line: int, idx: int, value: int) -> None:
        self.entries[line].data[idx] = value

    # coherence actions from outside the processor ---------------------------
    def is_dirty(self, line: int) -> bool:
        e = self.entries.get(line)
        return e is not None and e.dirty

    def present(self, line: int) -> bool:
        return line in self.entries

    def dirty_region_lines(self) -> list[int]:
        return list(self.dirty_region)

    def flush_line(self, line: int) -> list[int] | None:
        """Remove a dirty line from every cache and return its data."""
        e = self.entries.get(line)
        if e is None or not e.dirty:
            return None
        data = list(e.data)
        self._mark_clean(line, e)
        self._drop_all(line, e)
        return data

    def clean_line(self, line: int) -> list[int] | None:
        """Return dirty data and keep the copies, now clean (M -> E/S)."""
        e = self.entries.get(line)
        if e is None or not e.dirty:
            return None
        self._mark_clean(line, e)
        self._restate(line, e)
        return list(e.data)

    def invalidate_line(self, line: int) -> bool:
        """Drop clean copies. Dirty lines are left alone."""
        e = self.entries.get(line)
        if e is None or e.dirty:
            return False
        self._drop_all(line, e)
        return True

    def clean_lines(self, region_only: bool = True) -> list[int]:
        return [ln for ln, e in self.entries.items()
                if not e.dirty and (not region_only or ln in self.region)]

    def drain(self) -> dict[int, list[int]]:
        """Every dirty line's data, without changing state (end-of-run extraction)."""
        return {ln: list(e.data) for ln, e in self.entries.items() if e.dirty}

    # validation ------------------------------------------------------------
    def check(self) -> None:
        for line, e in self.entries.items():
            if not e.holders:
                raise AssertionError(f"entry {line:#x} has no holders")
            owners = 0
            for h in e.holders:
                cl = self._cache(h).lookup(line, touch=False)
                if cl is None:
                    raise AssertionError(f"holder {h} lost line {line:#x}")
                if h != L2_ID and cl.mesi in (MODIFIED, EXCLUSIVE):
                    owners += 1
            l1_holders = [h for h in e.holders if h != L2_ID]
            if owners > 1 or (owners == 1 and len(e.holders) > 1 and len(l1_holders) > 1):
                raise AssertionError(f"MESI violation on {line:#x}: holders {e.holders}")
            if e.dirty and len(e.holders) > 1 and L2_ID not in e.holders:
                raise AssertionError(f"shared dirty line {line:#x} without an L2 owner")
            if e.dirty != (line in self.dirty_region) and line in self.region:
                raise AssertionError(f"dirty index out of sync for {line:#x}")
        for h, cache in [(L2_ID, self.l2)] + list(enumerate(self.l1)):
            for cl in cache.lines():
                e = self.entries.get(cl.tag)
                if e is None or h not in e.holders or cl.mesi == INVALID:
                    raise AssertionError(f"stale tag {cl.tag:#x} in {cache.level}")

    def dump(self) -> list[str]:
        rows = []
        for cache in self.l1 + [self.l2]:
            rows.extend(cache.dump())
        return rows
