"""Deterministic event loop.

Agents (CPU threads and PIM cores) sit in a heap keyed by
``(cycle, kind, id, seq)``; each step consumes at most one trace event.  An
agent that cannot proceed either reschedules itself at a known cycle or
blocks on a key that some later action wakes.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field

from .channel import Channel, channel_send
from .config import SimConfig, TimingConfig
from .memory.dram import PimDataRegion
from .metrics import TRAFFIC_CATEGORIES, Metrics, energy_total
from .protocol.kernel import KernelContext, Phase, ProtocolKind
from .protocol.machine import COMMIT, DONE, WAIT, Machine, SimulationError
from .workload.events import (
    ACQUIRE, COMPUTE, PIM_BEGIN, PIM_END, READ, RELEASE, SYNC, WRITE, TraceEvent,
    split_threads,
)
from .workload.validate import region_of, validate_trace

log = logging.getLogger(__name__)

__all__ = ["Channel", "channel_send", "TimingConfig", "SimResult", "Simulator", "run",
           "cpu_only_reference", "SimulationDeadlock"]

CPU, PIM = 1, 0


class SimulationDeadlock(SimulationError):
    pass


@dataclass
class SimResult:
    metrics: Metrics
    memory: dict[int, tuple[int, ...]]
    log: list[tuple] = field(default_factory=list)
    conflict_log: list[dict] = field(default_factory=list)
    waw_log: list[dict] = field(default_factory=list)
    region: PimDataRegion | None = None


class Simulator:
    def __init__(self, cfg: SimConfig, events: list[TraceEvent]):
        cfg.validate()
        validate_trace(events)
        self.cfg = cfg
        self.kind = ProtocolKind.parse(cfg.protocol)
        self.region = region_of(events)
        self.region.freeze()
        self.threads = split_threads(events)
        self.tids = list(self.threads)
        self.core_of = {tid: i for i, tid in enumerate(self.tids)}
        self.metrics = Metrics(protocol=cfg.protocol, seed=cfg.seed)
        t = cfg.timing
        self.channel = Channel(t.offchip_link_bytes_per_cycle, t.offchip_latency_cycles,
                               TRAFFIC_CATEGORIES)
        self.machine = Machine(cfg, self.region, max(1, len(self.tids)), self.channel, self.metrics)
        self.cpu_ipc = t.cpu_ipc
        self.pim_ipc = t.pim_ipc
        self.cursor = {tid: 0 for tid in self.tids}
        self.heap: list[tuple[int, int, int, int]] = []
        self._n = 0
        self.scheduled: set[tuple[int, int]] = set()
        self.blocked: dict[tuple[int, int], tuple[object, int, str]] = {}
        self.waiters: dict[object, list[tuple[int, int]]] = {}
        self.free_pim = list(range(cfg.caches.pim_cores))
        self.launch_queue: deque[tuple[int, int]] = deque()
        self.finished: set[int] = set()
        self.end_time = 0
        self.busy: dict[str, int] = {}
        self.stall: dict[str, int] = {}
        self.cpu_only = self.kind is ProtocolKind.CPU_ONLY
        self.steps = 0

    # scheduling --------------------------------------------------------
    @staticmethod
    def _name(agent: tuple[int, int]) -> str:
        return f"{'cpu' if agent[0] == CPU else 'pim'}{agent[1]}"

    def schedule(self, agent: tuple[int, int], when: int) -> None:
        if agent in self.scheduled:
            raise SimulationError(f"{self._name(agent)} scheduled twice")
        self.scheduled.add(agent)
        self._n += 1
        heapq.heappush(self.heap, (when, agent[0], agent[1], self._n))

    def _advance(self, agent, now: int, t: int) -> None:
        name = self._name(agent)
        self.busy[name] = self.busy.get(name, 0) + (t - now)
        self.schedule(agent, t)

    def _stall_until(self, agent, now: int, t: int, reason: str) -> None:
        name = self._name(agent)
        self.stall[name] = self.stall.get(name, 0) + (t - now)
        if reason == "cg":
            self.metrics.bump("cg_blocked_cycles", t - now)
        self.schedule(agent, t)

    def block(self, agent, key, now: int, reason: str = "") -> None:
        self.blocked[agent] = (key, now, reason)
        self.waiters.setdefault(key, []).append(agent)

    def wake(self, key, when: int) -> None:
        for agent in self.waiters.pop(key, []):
            _, since, reason = self.blocked.pop(agent)
            self._stall_until(agent, since, max(when, since), reason)

    def _drain_wakeups(self) -> None:
        wk = self.machine.wakeups
        while wk:
            key, when = wk.pop(0)
            self.wake(key, when)

    # main loop -----------------------------------------------------------
    def run(self) -> SimResult:
        for tid in self.tids:
            self.schedule((CPU, tid), 0)
        dbi = self.machine.dbi
        while self.heap:
            now, kind, ident, _ = heapq.heappop(self.heap)
            agent = (kind, ident)
            self.scheduled.discard(agent)
            while dbi is not None and dbi.next_trigger <= now:
                at = dbi.next_trigger
                self.machine.dbi_writeback(dbi.tick(at), at)
            if kind == CPU:
                self.step_cpu(ident, now)
            else:
                self.step_pim(ident, now)
            self._drain_wakeups()
            self.steps += 1
            if self.cfg.debug and self.steps % 64 == 0:
                self.machine.check()
        if len(self.finished) != len(self.tids):
            raise SimulationDeadlock("no agent can advance:\n" + "\n".join(self.dump()))
        return self._result()

    def dump(self) -> list[str]:
        rows = [f"{self._name(a)} blocked on {k!r} since {since} ({r})"
                for a, (k, since, r) in sorted(self.blocked.items())]
        rows += [f"thread {tid} cursor {self.cursor[tid]}/{len(self.threads[tid])}"
                 for tid in self.tids if tid not in self.finished]
        return rows + self.machine.dump()

    def _result(self) -> SimResult:
        m = self.metrics
        m.total_cycles = max([self.end_time] + ([self.channel.last_delivery]
                                                 if self.channel.messages else []))
        m.offchip_bytes = {c: self.channel.bytes.get(c, 0) for c in TRAFFIC_CATEGORIES}
        m.offchip_messages = self.channel.messages
        cpu = self.machine.cpu
        m.accesses["cpu_l1"] = cpu.l1_accesses
        m.accesses["cpu_l2"] = cpu.l2_accesses
        if self.machine.dbi is not None:
            m.accesses["dbi"] = self.machine.dbi.accesses
        m.core_busy = dict(sorted(self.busy.items()))
        m.core_stall = dict(sorted(self.stall.items()))
        energy_total(m, self.cfg.energy)
        m.check()
        mach = self.machine
        if self.cfg.debug:
            m.conflict_log = [{**e, "lines": {f"{ln:#x}": why for ln, why in e["lines"].items()}}
                              for e in mach.conflict_log]
        return SimResult(m, mach.final_memory(), mach.log, mach.conflict_log, mach.waw_log,
                         self.region)

    # CPU threads ---------------------------------------------------------
    def _cpu_sync(self, agent, tid: int, ev: TraceEvent, now: int) -> None:
        mach = self.machine
        core = self.core_of[tid]
        if ev.sync == ACQUIRE or ev.sync == RELEASE:
            if ev.sync == ACQUIRE:
                holder = mach.lock_table.get(ev.addr)
                if holder is not None and holder != tid:
                    self.block(agent, ("lock", ev.addr), now, "lock")
                    return
            stall = mach.cpu_stall(ev.addr & ~63, True, now)
            if stall is not None:
                self._handle_cpu_stall(agent, stall, now)
                return
            if ev.sync == ACQUIRE:
                mach.lock_table[ev.addr] = tid
                t = mach.cpu_write(core, tid, ev.addr, tid + 1, now)
            else:
                if mach.lock_table.get(ev.addr) != tid:
                    raise SimulationError(f"thread {tid} releases lock {ev.addr:#x} it does not hold")
                t = mach.cpu_write(core, tid, ev.addr, 0, now)
                del mach.lock_table[ev.addr]
                mach.wakeups.append((("lock", ev.addr), t))
        else:
            t = now + 1
        self.cursor[tid] += 1
        self._advance(agent, now, t)

    def _handle_cpu_stall(self, agent, stall, now: int) -> None:
        kind, arg = stall
        if kind == "until":
            self._stall_until(agent, now, arg, "commit")
        else:
            self.block(agent, arg, now, "cg" if arg == "cg" else "lock")

    def step_cpu(self, tid: int, now: int) -> None:
        agent = (CPU, tid)
        evs = self.threads[tid]
        cur = self.cursor[tid]
        if cur >= len(evs):
            self.finished.add(tid)
            self.end_time = max(self.end_time, now)
            return
        ev = evs[cur]
        op = ev.op
        mach = self.machine
        if op == READ or op == WRITE:
            stall = mach.cpu_stall(ev.addr & ~63, op == WRITE, now)
            if stall is not None:
                self._handle_cpu_stall(agent, stall, now)
                return
            core = self.core_of[tid]
            if op == READ:
                t, _ = mach.cpu_read(core, tid, ev.addr, now)
            else:
                t = mach.cpu_write(core, tid, ev.addr, ev.value, now)
            self.cursor[tid] = cur + 1
            self._advance(agent, now, t)
        elif op == COMPUTE:
            self.cursor[tid] = cur + 1
            self._advance(agent, now, now + -(-ev.value // self.cpu_ipc))
        elif op == SYNC:
            self._cpu_sync(agent, tid, ev, now)
        elif op == PIM_BEGIN:
            if self.cpu_only:
                self.cursor[tid] = cur + 1
                self.schedule(agent, now)
                return
            if self.free_pim:
                self._launch(self.free_pim.pop(0), tid, cur, now)
            else:
                self.launch_queue.append((tid, cur))
            self.block(agent, ("kernel", tid), now, "kernel")
        elif op == PIM_END:
            if not self.cpu_only:
                raise SimulationError(f"thread {tid} reached PE outside a kernel")
            self.cursor[tid] = cur + 1
            self.schedule(agent, now)

    # PIM cores -------------------------------------------------------------
    def _launch(self, p: int, tid: int, pb_index: int, now: int) -> None:
        ev = self.threads[tid][pb_index]
        ctx, t = self.machine.launch(p, tid, ev.value, pb_index + 1, now)
        self.schedule((PIM, p), t)

    def _kernel_done(self, ctx: KernelContext, now: int) -> None:
        p = ctx.pim_core_id
        t = self.machine.finish_kernel(ctx, now)
        self.end_time = max(self.end_time, now)
        self.cursor[ctx.tid] = ctx.cursor + 1
        self.wake(("kernel", ctx.tid), t)
        self.machine.wakeups.append((("pk", p), now))
        if self.launch_queue:
            tid, pb = self.launch_queue.popleft()
            self._launch(p, tid, pb, now)
        else:
            self.free_pim.append(p)
            self.free_pim.sort()

    def step_pim(self, p: int, now: int) -> None:
        ctx = self.machine.contexts[p]
        if ctx is None or ctx.phase is Phase.DONE:
            return
        if ctx.phase is Phase.WAITING:
            ctx.phase = Phase.RUNNING
        ev = self.threads[ctx.tid][ctx.cursor]
        if self.machine.lazy:
            self._step_lazy(ctx, ev, now)
        else:
            self._step_plain(ctx, ev, now)

    def _step_plain(self, ctx: KernelContext, ev: TraceEvent, now: int) -> None:
        agent = (PIM, ctx.pim_core_id)
        mach = self.machine
        op = ev.op
        if op == READ or op == WRITE:
            t, _ = mach.pim_access(ctx, op == WRITE, ev.addr, ev.value, now)
            ctx.cursor += 1
            self._advance(agent, now, t)
        elif op == COMPUTE:
            ctx.cursor += 1
            self._advance(agent, now, now + -(-ev.value // self.pim_ipc))
        elif op == SYNC:
            if ev.sync == ACQUIRE:
                holder = mach.lock_table.get(ev.addr)
                if holder is not None and holder != ctx.tid:
                    if self.kind is ProtocolKind.COARSE_GRAINED_LOCK:
                        mach.cg_release(ctx.pim_core_id, now)
                        ctx.sync_stage = 1
                    self.block(agent, ("lock", ev.addr), now, "lock")
                    return
                t = now
                if ctx.sync_stage == 1:
                    t = mach.cg_acquire(ctx.pim_core_id, now)
                    ctx.sync_stage = 0
                mach.lock_table[ev.addr] = ctx.tid
                t, _ = mach.pim_access(ctx, True, ev.addr, ctx.tid + 1, t)
            elif ev.sync == RELEASE:
                t, _ = mach.pim_access(ctx, True, ev.addr, 0, now)
                del mach.lock_table[ev.addr]
                mach.wakeups.append((("lock", ev.addr), t))
            else:
                t = now + 1
            ctx.cursor += 1
            self._advance(agent, now, t)
        elif op == PIM_END:
            self._kernel_done(ctx, now)
        else:
            raise SimulationError(f"unexpected {op} inside kernel on thread {ctx.tid}")

    def _step_lazy(self, ctx: KernelContext, ev: TraceEvent, now: int) -> None:
        agent = (PIM, ctx.pim_core_id)
        mach = self.machine
        op = ev.op
        if op == READ or op == WRITE:
            res = mach.lazy_access(ctx, op == WRITE, ev.addr, ev.value, now)
            if res[0] == DONE:
                ctx.cursor += 1
                self._advance(agent, now, res[1])
            else:
                self._not_done(ctx, res, now)
        elif op == COMPUTE:
            if ctx.instruction_count >= mach.instr_cap:
                self.request_commit(ctx, "instructions", now)
                return
            ctx.instruction_count += ev.value
            ctx.cursor += 1
            self._advance(agent, now, now + -(-ev.value // self.pim_ipc))
        elif op == SYNC:
            if ctx.sync_stage == 0:
                self.request_commit(ctx, "sync", now)
            elif ctx.sync_stage == 1:
                if ev.sync == ACQUIRE:
                    holder = mach.lock_table.get(ev.addr)
                    if holder is not None and holder != ctx.tid:
                        ctx.phase = Phase.WAITING
                        self.block(agent, ("lock", ev.addr), now, "lock")
                        return
                    if holder is None:
                        mach.lock_table[ev.addr] = ctx.tid
                        ctx.reservations.append(ev.addr)
                    value = ctx.tid + 1
                elif ev.sync == RELEASE:
                    value = 0
                else:
                    ctx.cursor += 1
                    ctx.sync_stage = 0
                    self._advance(agent, now, now + 1)
                    return
                res = mach.lazy_access(ctx, True, ev.addr, value, now)
                if res[0] == DONE:
                    ctx.sync_stage = 2
                    self.request_commit(ctx, "sync", res[1])
                else:
                    self._not_done(ctx, res, now)
            else:
                self.request_commit(ctx, "sync", now)
        elif op == PIM_END:
            self.request_commit(ctx, "end", now)
        else:
            raise SimulationError(f"unexpected {op} inside kernel on thread {ctx.tid}")

    def _not_done(self, ctx: KernelContext, res, now: int) -> None:
        if res[0] == COMMIT:
            self.request_commit(ctx, res[1], now)
        elif res[0] == WAIT:
            ctx.phase = Phase.WAITING
            self.metrics.bump("pim_waits")
            self.block((PIM, ctx.pim_core_id), ("pk", res[1]), now, "pim")
        else:
            raise SimulationError(f"bad access result {res!r}")

    def request_commit(self, ctx: KernelContext, reason: str, now: int) -> None:
        mach = self.machine
        ctx.phase = Phase.COMMITTING
        ctx.commit_reason = reason
        ctx.ready_at = now
        reasons = self.metrics.commit_reasons
        reasons[reason] = reasons.get(reason, 0) + 1
        group = mach.group_of(ctx)
        if any(c.phase is not Phase.COMMITTING for c in group):
            return
        why = {c.pim_core_id: c.commit_reason for c in group}
        ok, t_end = mach.commit_group(group, now)
        for c in group:
            agent = (PIM, c.pim_core_id)
            waited = now - c.ready_at
            if waited:
                name = self._name(agent)
                self.stall[name] = self.stall.get(name, 0) + waited
            if ok:
                if why[c.pim_core_id] == "end":
                    self._kernel_done(c, t_end)
                    continue
                if why[c.pim_core_id] == "sync":
                    ev = self.threads[c.tid][c.cursor]
                    if c.sync_stage == 0:
                        c.sync_stage = 1
                    elif c.sync_stage == 2:
                        if ev.sync == RELEASE:
                            if mach.lock_table.get(ev.addr) == c.tid:
                                del mach.lock_table[ev.addr]
                            mach.wakeups.append((("lock", ev.addr), t_end))
                        c.cursor += 1
                        c.sync_stage = 0
            t = mach.begin_partial(c, now)
            self._advance(agent, now, max(t, t_end))


def run(config: SimConfig, trace: list[TraceEvent], protocol: str | None = None) -> SimResult:
    """Simulate ``trace`` to completion; ``protocol`` overrides the config."""
    cfg = config if protocol is None else config.replace(protocol=protocol)
    return Simulator(cfg, trace).run()


def cpu_only_reference(config: SimConfig, trace: list[TraceEvent]) -> SimResult:
    return run(config, trace, "cpu-only")
