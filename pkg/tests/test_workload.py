import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimsim import SimConfig, run
from pimsim.config import DATA_DIR, load_config
from pimsim.workload import (
    AllocPim, Compute, PimBegin, PimEnd, Read, Sync, TraceEvent, TraceParseError,
    TraceStructureError, Write, check_trace, generate, load_workload, parse_trace,
    read_binary, serialize_trace, split_threads, trace_digest, validate_trace, write_binary,
)
from pimsim.workload.events import OPS, SYNC_KINDS
from pimsim.workload.generators import (
    HtapSpec, PointerChaseSpec, generate_htap, generate_pointer_chase, pointer_chase_layout,
)

u64 = st.integers(0, 2**64 - 1)


@st.composite
def events(draw):
    op = draw(st.sampled_from(OPS))
    tid = draw(st.integers(0, 0xFFFF))
    if op == "SY":
        return TraceEvent(tid, op, draw(u64), 0, draw(st.sampled_from(SYNC_KINDS)))
    if op in ("R",):
        return TraceEvent(tid, op, draw(u64))
    if op == "PE":
        return TraceEvent(tid, op)
    if op in ("PB", "CP"):
        return TraceEvent(tid, op, 0, draw(u64))
    return TraceEvent(tid, op, draw(u64), draw(u64))


@settings(max_examples=200)
@given(st.lists(events(), max_size=30))
def test_text_round_trip(evs):
    assert parse_trace(serialize_trace(evs, header="x")) == evs


@settings(max_examples=50, deadline=None)
@given(st.lists(events(), max_size=30))
def test_binary_round_trip(tmp_path_factory, evs):
    path = tmp_path_factory.mktemp("bin") / "t.bin"
    write_binary(evs, path)
    assert read_binary(path) == evs
    assert parse_trace(path) == evs  # sniffed by magic


@settings(max_examples=300)
@given(st.text(max_size=60))
def test_parser_rejects_cleanly(text):
    try:
        parse_trace(io.StringIO(text))
    except TraceParseError:
        pass


@pytest.mark.parametrize("line,msg", [
    ("x R 10", "bad thread id"),
    ("0 Q 10", "unknown op"),
    ("0 W 10", "takes 2"),
    ("0 R zz", "bad hex"),
    ("0 SY lock 10", "unknown sync kind"),
    ("0 R 1" + "0" * 17, "64-bit range"),
])
def test_parse_errors_name_the_line(line, msg):
    with pytest.raises(TraceParseError, match=f"line 2: .*{msg}"):
        parse_trace(io.StringIO("# header\n" + line + "\n"))


def test_comments_and_hex_prefix():
    evs = parse_trace(io.StringIO("0 W 0x40 0xff  # trailing\n\n1 PB 3\n1 PE\n"))
    assert evs == [Write(0, 0x40, 0xFF), PimBegin(1, 3), PimEnd(1)]


def test_digest_stable():
    evs = [Read(0, 0x40)]
    assert trace_digest(evs) == trace_digest(list(evs))
    assert trace_digest(evs) != trace_digest([Read(0, 0x48)])


class TestValidator:
    def test_good(self):
        evs = [AllocPim(0, 0x1000, 0x1000), PimBegin(1, 0), Read(1, 0x1008),
               Sync(1, "acquire", 0x1040), PimEnd(1), Read(0, 0x40), Compute(0, 3)]
        assert check_trace(evs) == []
        assert validate_trace(evs) is evs
        assert list(split_threads(evs)) == [0, 1]

    @pytest.mark.parametrize("evs,msg", [
        ([PimBegin(0, 0), PimBegin(0, 1), PimEnd(0), PimEnd(0)], "nested"),
        ([PimEnd(0)], "without a matching"),
        ([Read(0, 0x41)], "not word aligned"),
        ([PimBegin(0, 0), Read(0, 0x40), PimEnd(0)], "outside allocated"),
        ([PimBegin(0, 0)], "never ends"),
        ([PimBegin(0, 0), AllocPim(0, 0, 64), PimEnd(0)], "AL inside"),
        ([PimBegin(0, 0), Read(0, 0x40), PimEnd(0), AllocPim(0, 0, 64)], "outside allocated"),
    ])
    def test_bad(self, evs, msg):
        assert any(msg in p for p in check_trace(evs))
        with pytest.raises(TraceStructureError):
            validate_trace(evs)


@pytest.mark.parametrize("name", ["pointer-chase", "htap", "random"])
def test_generators_valid_and_seeded(name):
    a = generate({"generator": name, "seed": 4})
    assert check_trace(a) == []
    assert a == generate({"generator": name, "seed": 4})
    assert a != generate({"generator": name, "seed": 5})


def test_generator_seed_default_and_override():
    assert generate({"generator": "random"}, seed=3) == generate({"generator": "random", "seed": 3})
    # an explicit seed in the table wins
    assert generate({"generator": "random", "seed": 3}, seed=9) == generate({"generator": "random", "seed": 3})


def test_generator_rejects_unknown():
    with pytest.raises(ValueError, match="unknown generator"):
        generate({"generator": "nope"})
    with pytest.raises(ValueError, match="unknown random parameters"):
        generate({"generator": "random", "colour": 1})


def test_pointer_chase_shape():
    evs = generate({"generator": "pointer-chase", "cpu_threads": 2, "pim_kernels": 3,
                    "iterations": 2, "nodes": 64, "edges": 256, "visits": 4, "cpu_ops": 10})
    threads = split_threads(evs)
    assert len(threads) == 5
    kernels = sum(1 for e in evs if e.op == "PB")
    assert kernels == 3 * 2


def test_load_workload_forms(tmp_path):
    trace = tmp_path / "t.trc"
    serialize_trace([Read(0, 0x40)], trace)
    assert load_workload({"trace": str(trace)}) == [Read(0, 0x40)]
    with pytest.raises(ValueError):
        load_workload({})
    with pytest.raises(ValueError):
        load_workload({"trace": str(trace), "nodes": 3})


@pytest.mark.parametrize("name", ["high-sharing", "conflict-heavy", "no-sharing", "fig3-timeline"])
def test_shipped_workloads_valid(name):
    cfg = load_config(name)
    assert check_trace(load_workload(cfg.workload, cfg.seed)) == []


def test_shipped_trace_file_parses():
    evs = parse_trace(DATA_DIR / "fig3-timeline.trc")
    assert len(evs) == 18


def test_pointer_chase_touches_many_pages_few_lines_each():
    spec = PointerChaseSpec(nodes=64, edges=256, seed=1)
    lay = pointer_chase_layout(spec)
    in_kernel: set[int] = set()
    lines = set()
    for ev in generate_pointer_chase(spec):
        if ev.op == "PB":
            in_kernel.add(ev.tid)
        elif ev.op == "PE":
            in_kernel.discard(ev.tid)
        elif ev.is_access and ev.tid in in_kernel and lay.vertex_base <= ev.addr < lay.next_base:
            lines.add(ev.addr >> 6)
    per_page: dict[int, int] = {}
    for ln in lines:
        per_page[ln >> 6] = per_page.get(ln >> 6, 0) + 1
    assert len(per_page) >= 2
    assert len(lines) / len(per_page) <= 4


def test_htap_shapes():
    spec = HtapSpec(tuples=64, rows_per_txn=2, cpu_threads=1, pim_kernels=1, txn_count=50,
                    analytic_query_count=1, seed=2)
    events = generate_htap(spec)
    assert check_trace(events) == []
    # CPU transactions: accesses between acquire and release
    txn, sizes = None, []
    for ev in events:
        if ev.tid != 0:
            continue
        if ev.op == "SY" and ev.sync == "acquire":
            txn = 0
        elif ev.op == "SY" and ev.sync == "release":
            sizes.append(txn)
        elif ev.is_access and txn is not None:
            txn += 1
    assert len(sizes) == 50 and max(sizes) <= 4
    scan_reads = sum(1 for ev in events if ev.tid == 1 and ev.op == "R")
    assert scan_reads >= 64 * (spec.tuple_bytes // 64)


def test_conflicts_grow_with_sharing():
    totals = []
    for frac in (0.0, 0.1, 0.5):
        n = 0
        for seed in range(1, 11):
            spec = PointerChaseSpec(cpu_share_fraction=frac, nodes=128, edges=512, visits=16,
                                    cpu_ops=300, seed=seed)
            n += run(SimConfig(seed=seed), generate_pointer_chase(spec)).metrics.counters["conflicts"]
        totals.append(n)
    assert totals[0] == 0
    assert totals == sorted(totals) and totals[-1] > 0
