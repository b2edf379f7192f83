import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimsim.signatures import (
    H3HashFamily, ParallelBloomSignature, SignatureBank, SignatureCapacityError,
    SignatureParameterError, analytic_fp_rate, measure_fp, splitmix64,
)

lines = st.integers(min_value=0, max_value=(1 << 40) - 1).map(lambda n: n << 6)


def h3_bitwise(family, segment, address):
    """Reference H3: XOR of the matrix rows selected by the address bits."""
    line = (address >> 6) & ((1 << family.address_bits) - 1)
    out = 0
    for i in range(family.address_bits):
        if (line >> i) & 1:
            out ^= family.matrices[segment][i]
    return out


def test_splitmix64_reference_vector():
    # published outputs for seed 0
    state, a = splitmix64(0)
    _, b = splitmix64(state)
    assert (a, b) == (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4)


@pytest.mark.parametrize("bits", [2048, 8192])
def test_table_hash_matches_bitwise_h3(bits):
    fam = H3HashFamily(0x5EED, 4, bits // 4)
    rng = random.Random(7)
    for _ in range(2000):
        addr = rng.getrandbits(64)
        for s in range(4):
            assert fam.index(s, addr) == h3_bitwise(fam, s, addr)


def test_same_line_same_index():
    fam = H3HashFamily(1, 4, 512)
    assert fam.indices(0x1000) == fam.indices(0x103F)
    assert fam.indices(0x1000) != fam.indices(0x1040)


def test_family_is_seed_deterministic():
    a, b, c = H3HashFamily(9, 4, 512), H3HashFamily(9, 4, 512), H3HashFamily(10, 4, 512)
    assert a.matrices == b.matrices
    assert a.matrices != c.matrices
    assert len(set(a.matrices)) == 4


@pytest.mark.parametrize("bits,segs", [(2048, 3), (2000, 4), (24, 4)])
def test_bad_shapes_rejected(bits, segs):
    with pytest.raises(SignatureParameterError):
        ParallelBloomSignature(bits, segs)


def test_capacity_guard_counts_calls():
    sig = ParallelBloomSignature(2048, 4, capacity=3)
    for _ in range(3):
        sig.insert(0x40)
    assert sig.insert_count == 3 and sig.capacity_reached
    with pytest.raises(SignatureCapacityError):
        sig.insert(0x80)


def test_empty_signature():
    sig = ParallelBloomSignature()
    assert not sig.may_contain(0x1234)
    assert not sig.intersection_nonempty(sig.empty_like())
    assert sig.to_hex() == "0" * 512


def test_incompatible_intersection_rejected():
    with pytest.raises(SignatureParameterError):
        ParallelBloomSignature(2048).intersect(ParallelBloomSignature(8192))
    with pytest.raises(SignatureParameterError):
        ParallelBloomSignature(2048, seed=1).intersection_nonempty(ParallelBloomSignature(2048, seed=2))


@settings(max_examples=200, deadline=None)
@given(st.lists(lines, max_size=250), st.sampled_from([2048, 8192]))
def test_no_false_negatives(addrs, bits):
    sig = ParallelBloomSignature(bits, 4, 250)
    for a in addrs:
        sig.insert(a)
    assert all(sig.may_contain(a) for a in addrs)


@settings(max_examples=200, deadline=None)
@given(st.lists(lines, max_size=40), st.lists(lines, max_size=40))
def test_disjoint_when_intersection_empty(xs, ys):
    a, b = ParallelBloomSignature(256, 4), ParallelBloomSignature(256, 4)
    for x in xs:
        a.insert(x)
    for y in ys:
        b.insert(y)
    if not a.intersection_nonempty(b):
        assert not {x >> 6 for x in xs} & {y >> 6 for y in ys}
    if {x >> 6 for x in xs} & {y >> 6 for y in ys}:
        assert a.intersection_nonempty(b)


@settings(max_examples=100, deadline=None)
@given(st.lists(lines, min_size=1, max_size=60))
def test_bits_only_grow(addrs):
    sig = ParallelBloomSignature(512, 4, 100)
    before = sig.popcounts()
    for a in addrs:
        sig.insert(a)
        now = sig.popcounts()
        assert all(n >= b for n, b in zip(now, before))
        before = now


def test_identical_inserts_identical_bits():
    rng = random.Random(3)
    addrs = [rng.getrandbits(40) << 6 for _ in range(100)]
    a, b = ParallelBloomSignature(seed=4), ParallelBloomSignature(seed=4)
    for x in addrs:
        a.insert(x)
        b.insert(x)
    assert a.to_hex() == b.to_hex()


def test_clear_and_copy():
    sig = ParallelBloomSignature()
    sig.insert(0x40)
    dup = sig.copy()
    sig.clear()
    assert sig.is_empty() and sig.insert_count == 0
    assert dup.may_contain(0x40)


def test_analytic_rate():
    assert analytic_fp_rate(0, 512, 4) == 0
    assert analytic_fp_rate(250, 512, 4) == pytest.approx((1 - (1 - 1 / 512) ** 250) ** 4)
    assert analytic_fp_rate(250, 512, 4) == pytest.approx(0.02234, abs=1e-4)


def test_measured_fp_zero_when_empty():
    assert measure_fp(2048, 4, 0, 1000, trials=10)["membership"] == 0


def test_measured_fp_larger_signature_lower():
    small = measure_fp(2048, 4, 250, 20_000, seed=1)["membership"]
    large = measure_fp(8192, 4, 250, 20_000, seed=1)["membership"]
    assert large < small


class TestBank:
    def test_round_robin(self):
        bank = SignatureBank(registers=4, capacity=10)
        for i in range(8):
            bank.insert(i << 6)
        assert [r.insert_count for r in bank.registers] == [2, 2, 2, 2]
        assert all(bank.may_contain(i << 6) for i in range(8))

    def test_saturation_is_conservative(self):
        bank = SignatureBank(registers=2, capacity=1)
        bank.insert(0x40)
        bank.insert(0x80)
        assert not bank.saturated
        bank.insert(0xC0)
        assert bank.saturated and bank.may_contain(0xC0)
        assert bank.conflicts_with(ParallelBloomSignature(capacity=1))
        bank.clear()
        assert not bank.saturated and bank.is_empty() and bank.cursor == 0

    def test_conflict_via_any_register(self):
        bank = SignatureBank(registers=16)
        for i in range(16):
            bank.insert((1000 + i) << 6)
        probe = ParallelBloomSignature()
        probe.insert(1009 << 6)
        assert bank.conflicts_with(probe)
