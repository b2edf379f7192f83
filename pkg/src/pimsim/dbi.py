"""Dirty-block index for PIM-region lines held dirty in processor caches.

Each row covers one 4 KB page: a page-frame tag plus a 64-bit vector with one
bit per line.  Rows are replaced LRU; a displaced row's lines are handed back
to the caller for writeback.
"""

from __future__ import annotations

from collections import OrderedDict

from .memory.cache import LINE_SHIFT

ROW_SHIFT = 12


class DbiStore:
    def __init__(self, rows: int = 16, row_blocks: int = 64, interval: int = 800_000,
                 tag_bits: int = 48):
        if row_blocks << LINE_SHIFT != 1 << ROW_SHIFT:
            raise ValueError("a row must cover exactly one 4 KB page")
        self.rows = rows
        self.row_blocks = row_blocks
        self.interval = interval
        self.tag_bits = tag_bits
        self.table: OrderedDict[int, int] = OrderedDict()
        self.last_trigger = 0
        self.accesses = 0
        self.row_evictions = 0
        self.triggers = 0

    @property
    def capacity(self) -> int:
        return self.rows * self.row_blocks

    @property
    def storage_bytes(self) -> float:
        return self.rows * (self.tag_bits + self.row_blocks) / 8

    @property
    def next_trigger(self) -> int:
        return self.last_trigger + self.interval

    @staticmethod
    def _split(line: int) -> tuple[int, int]:
        return line >> ROW_SHIFT, (line >> LINE_SHIFT) & 63

    @staticmethod
    def _lines(tag: int, vector: int) -> list[int]:
        return [(tag << ROW_SHIFT) | (b << LINE_SHIFT) for b in range(64) if (vector >> b) & 1]

    def record(self, line: int) -> list[int]:
        """Mark ``line`` dirty; returns lines of a displaced row, if any."""
        self.accesses += 1
        tag, bit = self._split(line)
        out: list[int] = []
        if tag in self.table:
            self.table.move_to_end(tag)
        elif len(self.table) >= self.rows:
            old_tag, vec = self.table.popitem(last=False)
            self.row_evictions += 1
            out = self._lines(old_tag, vec)
        self.table[tag] = self.table.get(tag, 0) | (1 << bit)
        return out

    def clear(self, line: int) -> None:
        tag, bit = self._split(line)
        vec = self.table.get(tag)
        if vec is None:
            return
        vec &= ~(1 << bit)
        if vec:
            self.table[tag] = vec
        else:
            del self.table[tag]

    def contains(self, line: int) -> bool:
        tag, bit = self._split(line)
        return bool((self.table.get(tag, 0) >> bit) & 1)

    def tracked_lines(self) -> list[int]:
        out = []
        for tag, vec in self.table.items():
            out.extend(self._lines(tag, vec))
        return out

    def tick(self, cycle: int) -> list[int]:
        if cycle - self.last_trigger < self.interval:
            return []
        self.last_trigger = cycle
        self.triggers += 1
        out = self.tracked_lines()
        self.accesses += len(self.table)
        self.table.clear()
        return out


def dbi_record(store: DbiStore, line: int) -> list[int]:
    return store.record(line)


def dbi_tick(store: DbiStore, cycle: int) -> list[int]:
    return store.tick(cycle)
