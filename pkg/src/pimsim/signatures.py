"""Parallel Bloom-filter signatures with H3 hashing.

A signature of ``total_bits`` bits is split into ``segment_count`` equal
segments; every segment owns one H3 hash that maps a cache-line address to a
single bit inside it.  Segments are stored as Python ints used as bit sets.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

LINE_SHIFT = 6
ADDRESS_BITS = 64 - LINE_SHIFT

MASK64 = (1 << 64) - 1


class SignatureParameterError(ValueError):
    pass


class SignatureCapacityError(RuntimeError):
    pass


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class H3HashFamily:
    """One H3 hash per segment, generated from a 64-bit seed with splitmix64.

    ``matrices[s][i]`` is the ``index_bits``-wide row XORed into the result
    when bit ``i`` of the line address is set.  Lookups go through per-byte
    tables so a hash costs eight table reads instead of 58 parity checks.
    """

    def __init__(self, seed: int, segment_count: int, segment_bits: int,
                 address_bits: int = ADDRESS_BITS):
        if segment_count < 1:
            raise SignatureParameterError("segment_count must be >= 1")
        if segment_bits < 1 or segment_bits & (segment_bits - 1):
            raise SignatureParameterError(
                f"segment width {segment_bits} is not a power of two")
        self.seed = seed & MASK64
        self.segment_count = segment_count
        self.segment_bits = segment_bits
        self.index_bits = segment_bits.bit_length() - 1
        self.address_bits = address_bits

        state = self.seed
        row_mask = segment_bits - 1
        matrices: list[tuple[int, ...]] = []
        while len(matrices) < segment_count:
            rows = []
            for _ in range(address_bits):
                state, out = splitmix64(state)
                rows.append(out & row_mask)
            rows_t = tuple(rows)
            # unique hash per segment; a repeat is astronomically unlikely
            # for index_bits > 1 but trivially possible for tiny segments
            if rows_t in matrices and row_mask > 1:
                continue
            matrices.append(rows_t)
        self.matrices = tuple(matrices)
        self._tables = tuple(self._byte_tables(m) for m in self.matrices)
        self._memo: dict[int, tuple[int, ...]] = {}

    @property
    def params(self) -> tuple[int, int, int, int]:
        return (self.seed, self.segment_count, self.segment_bits, self.address_bits)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, H3HashFamily) and self.params == other.params

    def __hash__(self) -> int:
        return hash(self.params)

    def _byte_tables(self, rows: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
        tables = []
        for byte_pos in range(0, self.address_bits, 8):
            table = [0] * 256
            for value in range(1, 256):
                low = value & -value
                bit = low.bit_length() - 1
                i = byte_pos + bit
                row = rows[i] if i < self.address_bits else 0
                table[value] = table[value ^ low] ^ row
            tables.append(tuple(table))
        return tuple(tables)

    def index(self, segment: int, address: int) -> int:
        if not 0 <= segment < self.segment_count:
            raise SignatureParameterError(
                f"segment {segment} out of range [0, {self.segment_count})")
        line = (address >> LINE_SHIFT) & ((1 << self.address_bits) - 1)
        out = 0
        for table in self._tables[segment]:
            out ^= table[line & 0xFF]
            line >>= 8
            if not line:
                break
        return out

    def indices(self, address: int) -> tuple[int, ...]:
        line = address >> LINE_SHIFT
        hit = self._memo.get(line)
        if hit is None:
            if len(self._memo) > 1 << 20:
                self._memo.clear()
            hit = self._memo[line] = tuple(self.index(s, address)
                                           for s in range(self.segment_count))
        return hit


def h3_index(family: H3HashFamily, segment: int, address: int) -> int:
    return family.index(segment, address)


_FAMILY_CACHE: dict[tuple[int, int, int], H3HashFamily] = {}


def shared_family(seed: int, segment_count: int, segment_bits: int) -> H3HashFamily:
    """Families are immutable, so equal parameters can share one instance."""
    key = (seed, segment_count, segment_bits)
    fam = _FAMILY_CACHE.get(key)
    if fam is None:
        fam = _FAMILY_CACHE[key] = H3HashFamily(seed, segment_count, segment_bits)
    return fam


@dataclass
class ParallelBloomSignature:
    total_bits: int = 2048
    segment_count: int = 4
    capacity: int = 250
    seed: int = 0
    family: H3HashFamily | None = None
    segments: list[int] = field(default_factory=list)
    insert_count: int = 0

    def __post_init__(self):
        if self.total_bits < 1 or self.segment_count < 1:
            raise SignatureParameterError("signature dimensions must be positive")
        if self.total_bits % self.segment_count:
            raise SignatureParameterError(
                f"N={self.total_bits} not divisible by M={self.segment_count}")
        if self.family is None:
            self.family = shared_family(self.seed, self.segment_count, self.segment_bits)
        elif (self.family.segment_count, self.family.segment_bits) != (
                self.segment_count, self.segment_bits):
            raise SignatureParameterError("hash family does not match signature shape")
        if not self.segments:
            self.segments = [0] * self.segment_count

    @property
    def segment_bits(self) -> int:
        return self.total_bits // self.segment_count

    @property
    def capacity_reached(self) -> bool:
        return self.insert_count >= self.capacity

    def empty_like(self) -> "ParallelBloomSignature":
        return ParallelBloomSignature(self.total_bits, self.segment_count,
                                      self.capacity, self.seed, self.family)

    def insert(self, address: int) -> None:
        if self.insert_count >= self.capacity:
            raise SignatureCapacityError(
                f"signature holds {self.insert_count} of {self.capacity} addresses")
        segs = self.segments
        for s, idx in enumerate(self.family.indices(address)):
            segs[s] |= 1 << idx
        self.insert_count += 1

    def may_contain(self, address: int) -> bool:
        segs = self.segments
        fam = self.family
        for s in range(self.segment_count):
            if not (segs[s] >> fam.index(s, address)) & 1:
                return False
        return True

    def __contains__(self, address: int) -> bool:
        return self.may_contain(address)

    def _check_compatible(self, other: "ParallelBloomSignature") -> None:
        if self.family is other.family and self.total_bits == other.total_bits:
            return
        if (self.total_bits, self.segment_count) != (other.total_bits, other.segment_count) \
                or self.family != other.family:
            raise SignatureParameterError("signatures have different parameters")

    def intersect(self, other: "ParallelBloomSignature") -> "ParallelBloomSignature":
        self._check_compatible(other)
        out = self.empty_like()
        out.segments = [a & b for a, b in zip(self.segments, other.segments)]
        return out

    def intersection_nonempty(self, other: "ParallelBloomSignature") -> bool:
        """False means the two inserted sets are certainly disjoint."""
        self._check_compatible(other)
        return all(a & b for a, b in zip(self.segments, other.segments))

    def popcounts(self) -> list[int]:
        return [s.bit_count() for s in self.segments]

    def is_empty(self) -> bool:
        return not any(self.segments)

    def clear(self) -> None:
        self.segments = [0] * self.segment_count
        self.insert_count = 0

    def to_int(self) -> int:
        """Bit array as one integer, segment 0 in the low bits."""
        w = self.segment_bits
        out = 0
        for s, bits in enumerate(self.segments):
            out |= bits << (s * w)
        return out

    def to_hex(self) -> str:
        return f"{self.to_int():0{self.total_bits // 4}x}"

    def copy(self) -> "ParallelBloomSignature":
        out = self.empty_like()
        out.segments = list(self.segments)
        out.insert_count = self.insert_count
        return out


def insert(sig: ParallelBloomSignature, address: int) -> ParallelBloomSignature:
    sig.insert(address)
    return sig


def may_contain(sig: ParallelBloomSignature, address: int) -> bool:
    return sig.may_contain(address)


def intersect(a: ParallelBloomSignature, b: ParallelBloomSignature) -> ParallelBloomSignature:
    return a.intersect(b)


def intersection_nonempty(a: ParallelBloomSignature, b: ParallelBloomSignature) -> bool:
    return a.intersection_nonempty(b)


def clear(sig: ParallelBloomSignature) -> None:
    sig.clear()


class SignatureBank:
    """K same-shaped registers filled round-robin (the processor-side write set).

    A register at capacity still accepts the insert; the bank is then flagged
    saturated and conflict tests against it answer True.
    """

    def __init__(self, registers: int = 16, total_bits: int = 2048,
                 segment_count: int = 4, capacity: int = 250, seed: int = 0):
        if registers < 1:
            raise SignatureParameterError("bank needs at least one register")
        self.registers = [ParallelBloomSignature(total_bits, segment_count, capacity, seed)
                          for _ in range(registers)]
        self.cursor = 0
        self.saturated = False

    @property
    def family(self) -> H3HashFamily:
        return self.registers[0].family

    def insert(self, address: int) -> None:
        reg = self.registers[self.cursor]
        if reg.insert_count >= reg.capacity:
            self.saturated = True
            # bypass the capacity guard: the CPU side cannot stall the PIM core
            for s, idx in enumerate(reg.family.indices(address)):
                reg.segments[s] |= 1 << idx
            reg.insert_count += 1
        else:
            reg.insert(address)
        self.cursor = (self.cursor + 1) % len(self.registers)

    def may_contain(self, address: int) -> bool:
        idx = self.family.indices(address)
        for reg in self.registers:
            segs = reg.segments
            if all((segs[s] >> i) & 1 for s, i in enumerate(idx)):
                return True
        return False

    def conflicts_with(self, sig: ParallelBloomSignature) -> bool:
        if self.saturated:
            return True
        return any(reg.intersection_nonempty(sig) for reg in self.registers)

    def is_empty(self) -> bool:
        return all(reg.is_empty() for reg in self.registers)

    @property
    def insert_count(self) -> int:
        return sum(r.insert_count for r in self.registers)

    def clear(self) -> None:
        for reg in self.registers:
            reg.clear()
        self.cursor = 0
        self.saturated = False


def bank_insert(bank: SignatureBank, address: int) -> SignatureBank:
    bank.insert(address)
    return bank


def bank_conflict(bank: SignatureBank, sig: ParallelBloomSignature) -> bool:
    return bank.conflicts_with(sig)


def bank_may_contain(bank: SignatureBank, address: int) -> bool:
    return bank.may_contain(address)


def clear_bank(bank: SignatureBank) -> None:
    bank.clear()


def analytic_fp_rate(n: int, segment_bits: int, m: int) -> float:
    """Per-query false-positive probability of a one-bit-per-segment filter."""
    if n < 0 or segment_bits < 1 or m < 1:
        raise SignatureParameterError("need n >= 0, segment_bits >= 1, m >= 1")
    return (1.0 - (1.0 - 1.0 / segment_bits) ** n) ** m


def measure_fp(total_bits: int, segment_count: int, n: int, queries: int,
               trials: int = 0, seed: int = 0, fills: int = 50) -> dict[str, float]:
    """Monte-Carlo false-positive rates for random line addresses.

    ``membership`` is the fraction of ``queries`` never-inserted addresses
    that signatures holding ``n`` addresses claim to contain, spread over
    ``fills`` independently filled signatures (one filling alone strays
    noticeably from the mean).  ``intersection`` is the fraction of
    ``trials`` pairs of disjoint ``n``-address signatures whose segment-wise
    AND is non-empty in every segment.
    """
    rng = random.Random(f"fp/{seed}/{total_bits}/{segment_count}/{n}")
    proto = ParallelBloomSignature(total_bits, segment_count, max(n, 1), seed)

    def filled(count: int, taken: set[int]) -> ParallelBloomSignature:
        sig = proto.empty_like()
        while sig.insert_count < count:
            a = rng.getrandbits(32) << LINE_SHIFT
            if a not in taken:
                taken.add(a)
                sig.insert(a)
        return sig

    fills = max(1, min(fills, queries or 1))
    hits = 0
    for k in range(fills):
        taken: set[int] = set()
        sig = filled(n, taken)
        share = queries // fills + (k < queries % fills)
        done = 0
        while done < share:
            a = rng.getrandbits(32) << LINE_SHIFT
            if a not in taken:
                hits += sig.may_contain(a)
                done += 1
    overlaps = 0
    for _ in range(trials):
        taken = set()
        overlaps += filled(n, taken).intersection_nonempty(filled(n, taken))
    return {
        "membership": hits / queries if queries else 0.0,
        "intersection": overlaps / trials if trials else 0.0,
        "analytic": analytic_fp_rate(n, total_bits // segment_count, segment_count),
    }
