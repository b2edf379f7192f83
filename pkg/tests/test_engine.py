import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pimsim import PROTOCOLS, SimConfig, check_serializable, load_config, load_workload, run
from pimsim.engine import SimulationDeadlock
from pimsim.oracle import replay
from pimsim.workload import (
    AllocPim, Compute, PimBegin, PimEnd, RandomSpec, Read, Sync, Write, generate_random,
)

BASE = 0x10000000

random_specs = st.builds(
    RandomSpec,
    cpu_threads=st.integers(1, 4),
    pim_kernels=st.integers(1, 2),
    events=st.integers(20, 400),
    region_lines=st.integers(2, 24),
    private_lines=st.integers(1, 8),
    locks=st.integers(0, 2),
    pim_fraction=st.floats(0.2, 1.0),
    seed=st.integers(0, 2**32),
)

stress = st.sampled_from([
    {},
    {"signature.capacity": 4, "kernel.rollback_threshold": 1},
    {"caches.pim_l1_size": 1024, "caches.pim_cores": 3, "kernel.instruction_cap": 16},
    {"kernel.partial_commits": False, "dbi.interval_cycles": 500},
])


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(random_specs, stress, st.sampled_from(PROTOCOLS))
def test_every_protocol_is_serializable(spec, extra, protocol):
    cfg = SimConfig(protocol=protocol, debug=True).replace(**extra)
    result = run(cfg, generate_random(spec))
    assert check_serializable(result) == []


@st.composite
def single_writer_traces(draw):
    """Each word has at most one writing thread, so the final image is order-free."""
    threads = draw(st.integers(2, 5))
    pim = set(draw(st.lists(st.integers(0, threads - 1), max_size=2, unique=True)))
    r = random.Random(draw(st.integers(0, 2**32)))
    events = [AllocPim(0, BASE, 0x1000)]
    streams = []
    for t in range(threads):
        own = [BASE + (i * threads + t) * 8 for i in range(8)]  # interleaved words of shared lines
        body = []
        for _ in range(r.randint(1, 40)):
            if r.random() < 0.5:
                body.append(Write(t, r.choice(own), r.getrandbits(16) + 1))
            else:
                body.append(Read(t, BASE + r.randrange(64) * 8))
            if r.random() < 0.1:
                body.append(Compute(t, r.randint(1, 50)))
        if t in pim:
            body = [PimBegin(t, t)] + body + [PimEnd(t)]
        streams.append(body)
    while any(streams):
        s = r.choice([s for s in streams if s])
        events.append(s.pop(0))
    return events


@settings(max_examples=40, deadline=None)
@given(single_writer_traces())
def test_protocols_agree_on_single_writer_traces(events):
    images = {p: run(SimConfig(protocol=p, debug=True), events).memory for p in PROTOCOLS}
    assert len({tuple(sorted(img.items())) for img in images.values()}) == 1


def test_replay_oracle_applies_atomically():
    log = [("cpu", 0, "W", 0x40, 1), ("pim", [(1, 2, "R", 0x40, 1), (2, 2, "W", 0x48, 5)]),
           ("cpu", 0, "R", 0x48, 5)]
    mem, problems = replay(log)
    assert mem == {0x40: 1, 0x48: 5} and problems == []
    _, problems = replay([("cpu", 0, "R", 0x40, 3)])
    assert problems


def test_fig3_timeline():
    cfg = load_config("fig3-timeline")
    result = run(cfg, load_workload(cfg.workload))
    first = result.conflict_log[0]
    assert first["lines"] == {BASE: "dirty", BASE + 0x80: "in-kernel"}
    assert all(BASE + 0x40 not in c["lines"] for c in result.conflict_log)
    assert result.waw_log == [{"pim_core": 0, "line": BASE + 0x40, "mask": 0b11}]
    assert result.memory[BASE + 0x40] == (0xB1, 0xB2, 0xB0, 0, 0, 0, 0, 0)
    assert check_serializable(result) == []


def test_no_sharing_has_no_conflicts():
    cfg = load_config("no-sharing")
    m = run(cfg, load_workload(cfg.workload, cfg.seed)).metrics
    assert m.counters["conflicts"] == 0 and m.counters["kernels"] > 0


def test_runs_are_deterministic():
    events = generate_random(RandomSpec(seed=11, events=300))
    a = run(SimConfig(), events).metrics.to_dict()
    b = run(SimConfig(), events).metrics.to_dict()
    assert a == b


def test_cpu_only_moves_no_coherence_bytes():
    events = generate_random(RandomSpec(seed=2))
    m = run(SimConfig(protocol="cpu-only"), events).metrics
    assert m.offchip_bytes["signatures"] == 0 and m.counters["kernels"] == 0


def test_ideal_is_fastest_pim_protocol():
    events = generate_random(RandomSpec(seed=5, events=600, pim_fraction=0.9))
    cycles = {p: run(SimConfig(protocol=p), events).metrics.total_cycles
              for p in ("ideal", "lazypim", "fg")}
    assert cycles["ideal"] <= min(cycles["lazypim"], cycles["fg"])


def test_unreleased_lock_deadlocks():
    events = [AllocPim(0, BASE, 64), Sync(0, "acquire", BASE), Sync(1, "acquire", BASE)]
    with pytest.raises(SimulationDeadlock):
        run(SimConfig(), events)
