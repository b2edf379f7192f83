"""One-step protocol tests: drive the machine directly, no event loop."""

import pytest

from pimsim.channel import Channel
from pimsim.config import SimConfig
from pimsim.memory.dram import PimDataRegion
from pimsim.metrics import TRAFFIC_CATEGORIES, Metrics
from pimsim.protocol import COMMIT, DONE, Machine, Phase, SimulationError

BASE = 0x10000000
A, B, C = BASE, BASE + 0x40, BASE + 0x80
PRIVATE = 0x40000000


def machine(protocol="lazypim", **overrides) -> Machine:
    cfg = SimConfig(protocol=protocol, debug=True).replace(**overrides)
    region = PimDataRegion()
    region.allocate(BASE, 0x1000)
    region.freeze()
    ch = Channel(8, 50, TRAFFIC_CATEGORIES)
    return Machine(cfg, region, 2, ch, Metrics(protocol=protocol))


def test_launch_seeds_bank_with_dirty_lines():
    m = machine()
    m.cpu_write(0, 0, A, 1, 0)
    m.cpu_write(0, 0, PRIVATE, 1, 0)
    ctx = m.launch_kernel(0, cursor=0)
    assert ctx.phase is Phase.RUNNING
    assert ctx.bank.may_contain(A) and ctx.seed_bank.may_contain(A)
    assert ctx.seeded == {A}


def test_clean_run_commits():
    m = machine()
    ctx = m.launch_kernel(0, 0)
    assert m.pim_read(ctx, B)[0] == DONE
    assert m.pim_write(ctx, C, 7)[0] == DONE
    ok, _ = m.attempt_commit(ctx)
    assert ok
    assert m.final_memory() == {C: (7,) + (0,) * 7}
    assert m.m.counters["partial_commits"] == 1 and m.m.counters["conflicts"] == 0


def test_in_kernel_write_to_read_line_conflicts():
    m = machine()
    ctx = m.launch_kernel(0, 0)
    m.pim_read(ctx, C)
    m.pim_write(ctx, B, 5)
    m.cpu_write(0, 0, C, 9, 0)
    ok, _ = m.attempt_commit(ctx)
    assert not ok
    assert m.conflict_log[-1]["lines"] == {C: "in-kernel"}
    assert "read_sig" in m.conflict_log[-1]  # debug runs keep the signature
    # the kernel's write never became visible
    assert m.final_memory() == {C: (9,) + (0,) * 7}
    assert m.m.counters["rollbacks"] == 1


def test_launch_dirty_line_read_conflicts():
    m = machine()
    m.cpu_write(0, 0, A, 1, 0)
    ctx = m.launch_kernel(0, 0)
    m.pim_read(ctx, A)
    ok, _ = m.attempt_commit(ctx)
    assert not ok
    assert m.conflict_log[-1]["lines"] == {A: "dirty"}
    assert m.m.counters["dirty_conflicts"] == 1


def test_write_only_sharing_merges_words():
    m = machine()
    ctx = m.launch_kernel(0, 0)
    m.pim_write(ctx, B, 0xB1)
    m.cpu_write(0, 0, B + 16, 0xB0, 0)
    ok, _ = m.attempt_commit(ctx)
    assert ok
    assert m.waw_log == [{"pim_core": 0, "line": B, "mask": 1}]
    assert m.final_memory()[B] == (0xB1, 0, 0xB0, 0, 0, 0, 0, 0)


def test_speculative_data_invisible_to_cpu():
    m = machine()
    m.cpu_write(0, 0, B, 1, 0)
    m.dram.write_line(B, m.cpu.flush_line(B))
    ctx = m.launch_kernel(0, 0)
    m.pim_write(ctx, B, 2)
    assert not m.cpu.present(B)
    _, seen = m.cpu_read(1, 1, B, 0)
    assert seen == 1
    m.rollback(ctx)
    assert m.final_memory()[B][0] == 1


def test_three_rollbacks_then_escalation_commits():
    m = machine()
    ctx = m.launch_kernel(0, 0)
    for i in range(3):
        assert not ctx.escalated
        m.pim_read(ctx, C)
        m.cpu_write(0, 0, C, i + 1, 0)
        ok, _ = m.attempt_commit(ctx)
        assert not ok
    assert ctx.escalated and ctx.rollback_count == 3
    assert m.m.counters["escalations"] == 1
    # the re-executed partial kernel holds C locked; CPU writes must wait
    assert m.cpu_stall(C, True, 0) == ("wait", ("line", C))
    assert m.pim_read(ctx, C)[2] == 3
    ok, _ = m.attempt_commit(ctx)
    assert ok and not ctx.escalated
    assert m.cpu_stall(C, True, 10_000) is None
    assert m.m.counters["max_executions"] == 4


def test_capacity_cap_requests_commit():
    m = machine(signature__capacity=2)
    ctx = m.launch_kernel(0, 0)
    m.pim_read(ctx, A)
    m.pim_read(ctx, B)
    assert m.pim_read(ctx, C) == (COMMIT, "capacity")


def test_instruction_cap_requests_commit():
    m = machine(kernel__instruction_cap=1)
    ctx = m.launch_kernel(0, 0)
    m.pim_read(ctx, A)
    assert m.pim_write(ctx, A, 1) == (COMMIT, "instructions")


def test_pim_cores_sharing_speculative_data_are_coupled():
    m = machine()
    a = m.launch_kernel(0, 0, tid=2)
    b = m.launch_kernel(1, 0, tid=3)
    m.pim_write(a, B, 4)
    assert m.pim_read(b, B)[2] == 4  # forwarded uncommitted data
    assert b.spec_read_bits == 1 << 0
    assert m.group_of(b) == [a, b]
    m.cpu_write(0, 0, B, 1, 0)  # a did not read B, but b did
    ok, _ = m.attempt_commit(a)
    assert not ok  # both roll back together
    assert a.rollback_count == b.rollback_count == 1


def test_launch_on_busy_core():
    m = machine()
    m.launch_kernel(0, 0)
    with pytest.raises(SimulationError):
        m.launch_kernel(0, 0)


@pytest.mark.parametrize("protocol", ["fg", "ideal"])
def test_fg_pim_access_pulls_dirty_line(protocol):
    m = machine(protocol)
    m.cpu_write(0, 0, A, 3, 0)
    ctx = m.launch_kernel(0, 0)
    status, t, value = m.pim_read(ctx, A, now=0)
    assert status == DONE and value == 3
    assert not m.cpu.is_dirty(A)
    if protocol == "ideal":
        assert m.channel.bytes.get("flushes", 0) == 0
    else:
        assert m.channel.bytes["flushes"] > 0


def test_cg_launch_flushes_region():
    m = machine("cg")
    m.cpu_write(0, 0, A, 3, 0)
    m.cpu_read(1, 1, B, 0)
    m.launch_kernel(0, 0)
    assert not m.cpu.present(A) and not m.cpu.present(B)
    assert m.cpu_stall(A, False, 0) == ("wait", "cg")


def test_nc_cpu_access_bypasses_caches():
    m = machine("nc")
    m.cpu_write(0, 0, A, 5, 0)
    assert not m.cpu.present(A)
    assert m.dram.read_word(A) == 5
    assert m.channel.bytes["nc_accesses"] == 16
