from __future__ import annotations

from .cache import LINE_SIZE, PAGE_SHIFT, WORDS_PER_LINE, line_of, word_index

ZERO_LINE = (0,) * WORDS_PER_LINE


class PimDataRegion:
    """Per-page PIM-data flags, set while the workload loads."""

    def __init__(self):
        self.pages: set[int] = set()
        self.extents: list[tuple[int, int]] = []
        self.frozen = False

    def allocate(self, base: int, length: int) -> None:
        if self.frozen:
            raise RuntimeError("PIM region flags are immutable once simulation starts")
        if length <= 0:
            return
        self.extents.append((base, length))
        first = base >> PAGE_SHIFT
        last = (base + length - 1) >> PAGE_SHIFT
        self.pages.update(range(first, last + 1))

    def freeze(self) -> None:
        self.frozen = True

    def __contains__(self, address: int) -> bool:
        return (address >> PAGE_SHIFT) in self.pages

    def page_count(self) -> int:
        return len(self.pages)


class MainMemory:
    """Committed architectural state, one 8-word tuple per line, default zero."""

    def __init__(self):
        self.lines: dict[int, tuple[int, ...]] = {}
        self.line_reads = 0
        self.line_writes = 0

    def read_line(self, line: int) -> list[int]:
        self.line_reads += 1
        return list(self.lines.get(line, ZERO_LINE))

    def peek_line(self, line: int) -> tuple[int, ...]:
        return self.lines.get(line, ZERO_LINE)

    def write_line(self, line: int, data) -> None:
        self.line_writes += 1
        t = tuple(data)
        if t == ZERO_LINE:
            self.lines.pop(line, None)
        else:
            self.lines[line] = t

    def read_word(self, address: int) -> int:
        return self.lines.get(line_of(address), ZERO_LINE)[word_index(address)]

    def write_word(self, address: int, value: int) -> None:
        line = line_of(address)
        data = list(self.lines.get(line, ZERO_LINE))
        data[word_index(address)] = value
        self.write_line(line, data)

    def snapshot(self) -> dict[int, tuple[int, ...]]:
        return dict(self.lines)

    def to_bytes(self) -> bytes:
        out = bytearray()
        for line in sorted(self.lines):
            out += line.to_bytes(8, "little")
            for w in self.lines[line]:
                out += (w & ((1 << 64) - 1)).to_bytes(8, "little")
        return bytes(out)


__all__ = ["PimDataRegion", "MainMemory", "ZERO_LINE", "LINE_SIZE"]
