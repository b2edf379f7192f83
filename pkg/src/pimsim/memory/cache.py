from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

LINE_SIZE = 64
LINE_SHIFT = 6
WORD_SIZE = 8
WORDS_PER_LINE = LINE_SIZE // WORD_SIZE
PAGE_SHIFT = 12

MODIFIED, EXCLUSIVE, SHARED, INVALID = "M", "E", "S", "I"


def line_of(address: int) -> int:
    return address & ~(LINE_SIZE - 1)


def word_index(address: int) -> int:
    return (address >> 3) & (WORDS_PER_LINE - 1)


def page_of(address: int) -> int:
    return address >> PAGE_SHIFT


class Address(int):
    """Byte address with line/word helpers."""

    def line(self) -> int:
        return line_of(self)

    def word_index(self) -> int:
        return word_index(self)


class CacheLine:
    __slots__ = ("tag", "mesi", "speculative", "word_dirty_mask", "data", "lru_stamp")

    def __init__(self, tag: int, mesi: str = EXCLUSIVE, data: list[int] | None = None,
                 speculative: bool = False, word_dirty_mask: int = 0):
        self.tag = tag
        self.mesi = mesi
        self.data = data
        self.speculative = speculative
        self.word_dirty_mask = word_dirty_mask
        self.lru_stamp = 0

    @property
    def dirty(self) -> bool:
        return self.mesi == MODIFIED

    def invalidate(self) -> None:
        self.mesi = INVALID
        self.speculative = False
        self.word_dirty_mask = 0

    def __repr__(self) -> str:
        return (f"CacheLine({self.tag:#x}, {self.mesi}, spec={self.speculative}, "
                f"mask={self.word_dirty_mask:#04x})")


@dataclass
class AccessResult:
    hit: bool
    victim: CacheLine | None = None


class SetAssociativeCache:
    """LRU set-associative tag store; each set is an insertion-ordered dict."""

    def __init__(self, size_bytes: int, ways: int, line_size: int = LINE_SIZE,
                 level: str = "L1"):
        if size_bytes % (ways * line_size):
            raise ValueError("cache size must be a multiple of ways * line_size")
        self.size_bytes = size_bytes
        self.ways = ways
        self.line_size = line_size
        self.level = level
        self.num_sets = size_bytes // (ways * line_size)
        self.sets: list[dict[int, CacheLine]] = [{} for _ in range(self.num_sets)]
        self._stamp = 0
        self.accesses = 0

    @property
    def num_lines(self) -> int:
        return self.num_sets * self.ways

    def set_index(self, line: int) -> int:
        return (line // self.line_size) % self.num_sets

    def lookup(self, line: int, touch: bool = True) -> CacheLine | None:
        s = self.sets[(line // self.line_size) % self.num_sets]
        cl = s.get(line)
        if cl is not None and touch:
            del s[line]
            s[line] = cl
            self._stamp += 1
            cl.lru_stamp = self._stamp
        return cl

    def __contains__(self, line: int) -> bool:
        return line in self.sets[(line // self.line_size) % self.num_sets]

    def victim_for(self, line: int) -> CacheLine | None:
        """The line an insert of ``line`` would evict, if any."""
        s = self.sets[(line // self.line_size) % self.num_sets]
        if line in s or len(s) < self.ways:
            return None
        return next(iter(s.values()))

    def insert(self, cl: CacheLine) -> CacheLine | None:
        s = self.sets[(cl.tag // self.line_size) % self.num_sets]
        victim = None
        if cl.tag in s:
            del s[cl.tag]
        elif len(s) >= self.ways:
            victim_tag = next(iter(s))
            victim = s.pop(victim_tag)
        s[cl.tag] = cl
        self._stamp += 1
        cl.lru_stamp = self._stamp
        return victim

    def remove(self, line: int) -> CacheLine | None:
        return self.sets[(line // self.line_size) % self.num_sets].pop(line, None)

    def access(self, address: int, kind: str = "read") -> AccessResult:
        """Lookup with fill on miss; returns the LRU victim when one is evicted."""
        self.accesses += 1
        line = line_of(address)
        cl = self.lookup(line)
        if cl is not None:
            if kind == "write":
                cl.mesi = MODIFIED
            return AccessResult(True, None)
        victim = self.insert(CacheLine(line, MODIFIED if kind == "write" else EXCLUSIVE))
        return AccessResult(False, victim)

    def lines(self) -> Iterator[CacheLine]:
        for s in self.sets:
            yield from s.values()

    def dump(self) -> list[str]:
        """``level set way tag mesi spec mask``, way 0 being the LRU way."""
        rows = []
        for si, s in enumerate(self.sets):
            for way, cl in enumerate(s.values()):
                rows.append(f"{self.level} {si} {way} {cl.tag:#x} {cl.mesi} "
                            f"{int(cl.speculative)} {cl.word_dirty_mask:02x}")
        return rows


def cache_access(cache: SetAssociativeCache, address: int, kind: str = "read") -> AccessResult:
    return cache.access(address, kind)


def merge_waw(cpu_line_data: list[int], pim_line: CacheLine) -> list[int]:
    """Words the PIM line marked dirty win; the rest come from the CPU copy."""
    mask = pim_line.word_dirty_mask
    if not mask:
        raise ValueError("merge_waw called on a line with an empty dirty mask")
    pim = pim_line.data
    return [pim[i] if (mask >> i) & 1 else cpu_line_data[i] for i in range(WORDS_PER_LINE)]


def scan_dirty_in_region(cache: SetAssociativeCache, region) -> list[int]:
    return [cl.tag for cl in cache.lines() if cl.mesi == MODIFIED and cl.tag in region]


def flush_matching(cache: SetAssociativeCache, predicate: Callable[[int], bool],
                   memory) -> int:
    """Write back and invalidate every Modified line the predicate accepts."""
    hits = [cl for cl in cache.lines() if cl.mesi == MODIFIED and predicate(cl.tag)]
    for cl in hits:
        if cl.speculative:
            raise AssertionError(f"speculative line {cl.tag:#x} reached the writeback path")
        memory.write_line(cl.tag, cl.data)
        cache.remove(cl.tag)
        cl.invalidate()
    return len(hits)


def invalidate_matching(cache: SetAssociativeCache, predicate: Callable[[int], bool]) -> int:
    """Drop clean (S/E) lines the predicate accepts. Modified lines are untouched."""
    hits = [cl for cl in cache.lines()
            if cl.mesi in (SHARED, EXCLUSIVE) and predicate(cl.tag)]
    for cl in hits:
        cache.remove(cl.tag)
        cl.invalidate()
    return len(hits)


def lines_in(addresses: Iterable[int]) -> set[int]:
    return {line_of(a) for a in addresses}
