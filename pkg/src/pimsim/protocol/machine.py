"""Coherence state and actions for every protocol.

The engine owns time and scheduling; this module owns every cache, the
directories, DRAM, the signatures and the serialization log.  Calls take the
current cycle and return completion cycles.  Keys the engine should wake are
pushed onto ``wakeups`` as ``(key, cycle)``.
"""

from __future__ import annotations

from ..channel import TO_CPU, TO_MEM, Channel
from ..config import SimConfig
from ..dbi import DbiStore
from ..memory.cache import (
    EXCLUSIVE, MODIFIED, SHARED, CacheLine, SetAssociativeCache, merge_waw,
)
from ..memory.directory import Directory
from ..memory.dram import MainMemory, PimDataRegion
from ..memory.hierarchy import LOCAL, MISS, CpuHierarchy
from ..metrics import Metrics
from ..signatures import ParallelBloomSignature, SignatureBank
from .kernel import READ_FLAG, WRITE_FLAG, KernelContext, Phase, ProtocolKind

DONE, COMMIT, WAIT = "done", "commit", "wait"

UNBOUNDED = 1 << 62


class SimulationError(RuntimeError):
    pass


class Machine:
    def __init__(self, cfg: SimConfig, region: PimDataRegion, cpu_cores: int,
                 channel: Channel, metrics: Metrics):
        self.cfg = cfg
        self.kind = ProtocolKind.parse(cfg.protocol)
        self.lazy = self.kind is ProtocolKind.LAZYPIM
        self.ideal = self.kind is ProtocolKind.IDEAL_PIM
        self.region = region
        self.channel = channel
        self.m = metrics
        self.dram = MainMemory()
        t = cfg.timing
        self.l1_hit = t.l1_hit_cycles
        self.l2_hit = t.l2_hit_cycles
        self.dram_lat = t.dram_access_cycles
        self.pim_fill = t.pim_dram_access_cycles + -(-64 // t.pim_internal_bytes_per_cycle)
        self.msg = cfg.messages
        self.sig_msg = cfg.signature.bits // 8 + cfg.messages.header
        cc = cfg.caches
        self.cpu = CpuHierarchy(cpu_cores, region, cc.cpu_l1_size, cc.cpu_l1_ways,
                                cc.cpu_l2_size, cc.cpu_l2_ways, writeback=self._cpu_writeback)
        self.pim_l1 = [SetAssociativeCache(cc.pim_l1_size, cc.pim_l1_ways, level=f"PIM-L1.{p}")
                       for p in range(cc.pim_cores)]
        self.pim_holders: dict[int, set[int]] = {}
        self.proc_dir = Directory("processor")
        self.contexts: list[KernelContext | None] = [None] * cc.pim_cores
        self.touches: dict[int, dict[int, int]] = {}
        self.lock_table: dict[int, int] = {}
        self.cg_holders: set[int] = set()
        self.windows: list[tuple[int, int, list[ParallelBloomSignature]]] = []
        self.wakeups: list[tuple[object, int]] = []
        self.log: list[tuple] = []
        self.conflict_log: list[dict] = []
        self.waw_log: list[dict] = []
        self.seq = 0
        kc = cfg.kernel
        self.sig_capacity = cfg.signature.capacity if kc.partial_commits else UNBOUNDED
        self.instr_cap = kc.instruction_cap if kc.partial_commits else UNBOUNDED
        self.rollback_threshold = kc.rollback_threshold
        self.dbi: DbiStore | None = None
        self._dbi_pending: list[int] = []
        if self.lazy and cfg.dbi.enabled:
            d = cfg.dbi
            self.dbi = DbiStore(d.rows, d.row_blocks, d.interval_cycles, d.tag_bits)
            self.cpu.on_dirty = self._dbi_dirty
            self.cpu.on_clean = self.dbi.clear
        self.shadow: dict[int, int] | None = {} if cfg.debug else None

    # helpers ------------------------------------------------------------
    def _send(self, direction: str, nbytes: int, now: int, category: str) -> int:
        return self.channel.send(direction, nbytes, now, category)

    def _coherence_round_trip(self, now: int, to: str = TO_CPU) -> int:
        if self.ideal:
            return now
        back = TO_MEM if to == TO_CPU else TO_CPU
        d = self._send(to, self.msg.request, now, "coherence_msgs")
        return self._send(back, self.msg.response, d + self.l2_hit, "coherence_msgs")

    def _cpu_writeback(self, line: int, data: list[int]) -> None:
        self.dram.write_line(line, data)
        self.m.accesses["dram_bytes"] += 64
        self._send(TO_MEM, self.msg.data, self._now, "writebacks")

    _now = 0

    def _dbi_dirty(self, line: int) -> None:
        self._dbi_pending.extend(self.dbi.record(line))

    def _drain_dbi_pending(self, now: int) -> None:
        if self._dbi_pending:
            lines, self._dbi_pending = self._dbi_pending, []
            self.dbi_writeback(lines, now)

    def dbi_writeback(self, lines: list[int], now: int) -> int:
        t = now
        for line in lines:
            data = self.cpu.flush_line(line)
            if data is None:
                continue
            self.dram.write_line(line, data)
            self.m.accesses["dram_bytes"] += 64
            self.m.bump("dbi_writebacks")
            t = self._send(TO_MEM, self.msg.data, now, "writebacks")
        return t

    def _log_cpu(self, tid: int, op: str, addr: int, value: int) -> None:
        self.seq += 1
        self.log.append(("cpu", tid, op, addr, value))
        if self.shadow is not None:
            if op == "W":
                self.shadow[addr] = value
            elif self.shadow.get(addr, 0) != value:
                raise SimulationError(
                    f"thread {tid} read {value:#x} at {addr:#x}, committed value is "
                    f"{self.shadow.get(addr, 0):#x}")

    def _check_escalated_read(self, ctx: KernelContext, addr: int, value: int, cl) -> None:
        own = [op for op in ctx.pending if op[2] == "W" and op[3] == addr]
        expected = own[-1][4] if own else self.shadow.get(addr, 0)
        if value != expected:
            raise SimulationError(
                f"escalated PIM{ctx.pim_core_id} read {value:#x} at {addr:#x}, committed value "
                f"is {expected:#x} (spec={cl.speculative} mask={cl.word_dirty_mask:#x} "
                f"filled={cl.tag in ctx.filled} locked={cl.tag in ctx.locked_lines})")

    def _apply_shadow(self, ops) -> None:
        if self.shadow is None:
            return
        for _, tid, op, addr, value in ops:
            if op == "W":
                self.shadow[addr] = value

    # PIM cache plumbing -----------------------------------------------------
    def _pim_install(self, p: int, cl: CacheLine) -> None:
        victim = self.pim_l1[p].insert(cl)
        self.pim_holders.setdefault(cl.tag, set()).add(p)
        if victim is not None:
            if victim.speculative:
                raise SimulationError(f"speculative line {victim.tag:#x} evicted from PIM{p}")
            self._forget_holder(victim.tag, p)
            if victim.mesi == MODIFIED:
                self.dram.write_line(victim.tag, victim.data)
                self.m.accesses["dram_bytes"] += 64

    def _forget_holder(self, line: int, p: int) -> None:
        hs = self.pim_holders.get(line)
        if hs is not None:
            hs.discard(p)
            if not hs:
                del self.pim_holders[line]
        self.proc_dir.revoke(line, p)

    def _pim_remove(self, p: int, line: int) -> CacheLine | None:
        cl = self.pim_l1[p].remove(line)
        self._forget_holder(line, p)
        return cl

    def _other_holders(self, line: int, p: int) -> list[int]:
        return sorted(h for h in self.pim_holders.get(line, ()) if h != p)

    def _settle_pim_owner(self, line: int, exclusive: bool, skip: int = -1) -> None:
        """Make DRAM current for ``line`` if a PIM core holds it committed-dirty."""
        for h in self._other_holders(line, skip):
            cl = self.pim_l1[h].lookup(line, touch=False)
            if cl is None or cl.speculative:
                continue
            if cl.mesi == MODIFIED:
                self.dram.write_line(line, cl.data)
                self.m.accesses["dram_bytes"] += 64
            if exclusive:
                self._pim_remove(h, line)
            elif cl.mesi != SHARED:
                cl.mesi = SHARED
                self.proc_dir.downgrade(line, h)

    # CPU side -------------------------------------------------------------
    def cpu_stall(self, line: int, is_write: bool, now: int):
        """``None`` or ``("until", cycle)`` or ``("wait", key)``."""
        if line not in self.region or self.kind is ProtocolKind.CPU_ONLY:
            return None
        if self.cg_holders:
            return ("wait", "cg")
        if self.lazy:
            if is_write and self.proc_dir.is_locked(line):
                return ("wait", ("line", line))
            if self.windows:
                self.windows = [w for w in self.windows if w[1] > now]
                for start, end, sigs in self.windows:
                    if start <= now and any(s.may_contain(line) for s in sigs):
                        return ("until", end)
        return None

    def _cpu_fill(self, line: int, now: int, exclusive: bool) -> tuple[list[int], int]:
        d = self._send(TO_MEM, self.msg.request, now, "data")
        if self.kind is not ProtocolKind.CPU_ONLY and line in self.pim_holders:
            self._settle_pim_owner(line, exclusive)
        data = self.dram.read_line(line)
        self.m.accesses["dram_bytes"] += 64
        return data, self._send(TO_CPU, self.msg.data, d + self.dram_lat, "data")

    def _invalidate_pim_copies(self, line: int, now: int) -> int:
        holders = self.proc_dir.holders(line)
        t = now
        for h in sorted(holders):
            cl = self.pim_l1[h].lookup(line, touch=False)
            if cl is not None and cl.speculative:
                continue
            if cl is not None:
                if cl.mesi == MODIFIED:
                    self.dram.write_line(line, cl.data)
                    self.m.accesses["dram_bytes"] += 64
                self._pim_remove(h, line)
                t = max(t, self._coherence_round_trip(now, TO_MEM))
            self.proc_dir.revoke(line, h)
        return t

    def cpu_read(self, core: int, tid: int, addr: int, now: int) -> tuple[int, int]:
        self._now = now
        line = addr & ~63
        if self.kind is ProtocolKind.NON_CACHEABLE and line in self.region:
            return self._nc_access(tid, addr, False, 0, now)
        level = self.cpu.read(core, line)
        if level == LOCAL:
            t = now + self.l1_hit
        elif level == MISS:
            data, t = self._cpu_fill(line, now, False)
            self.cpu.fill(core, line, data, for_write=False)
        else:
            t = now + self.l2_hit
        value = self.cpu.load_word(line, (addr >> 3) & 7)
        self._log_cpu(tid, "R", addr, value)
        self._drain_dbi_pending(t)
        return t, value

    def cpu_write(self, core: int, tid: int, addr: int, value: int, now: int) -> int:
        self._now = now
        line = addr & ~63
        in_region = line in self.region
        if self.kind is ProtocolKind.NON_CACHEABLE and in_region:
            return self._nc_access(tid, addr, True, value, now)[0]
        level = self.cpu.write(core, line)
        if level == MISS:
            data, t = self._cpu_fill(line, now, True)
            self.cpu.fill(core, line, data, for_write=True)
        else:
            t = now + (self.l1_hit if level == LOCAL else self.l2_hit)
        if in_region and self.kind is not ProtocolKind.CPU_ONLY:
            if line in self.proc_dir.entries:
                t = max(t, self._invalidate_pim_copies(line, now))
            if self.lazy:
                for ctx in self.contexts:
                    if ctx is not None and ctx.phase is not Phase.DONE:
                        # repeat writes would only spread the line over more registers
                        if not ctx.bank.may_contain(line):
                            ctx.bank.insert(line)
                        ctx.cpu_written.add(line)
        self.cpu.store_word(line, (addr >> 3) & 7, value)
        self._log_cpu(tid, "W", addr, value)
        self._drain_dbi_pending(t)
        return t

    def _nc_access(self, tid: int, addr: int, is_write: bool, value: int, now: int):
        line = addr & ~63
        self.m.accesses["dram_bytes"] += 8
        word_msg = self.msg.header + self.msg.word
        if is_write:
            t = self._send(TO_MEM, word_msg, now, "nc_accesses")
            for h in self._other_holders(line, -1):
                cl = self.pim_l1[h].lookup(line, touch=False)
                if cl.mesi == MODIFIED:
                    self.dram.write_line(line, cl.data)
                self._pim_remove(h, line)
            self.dram.write_word(addr, value)
            self._log_cpu(tid, "W", addr, value)
            return t, value
        d = self._send(TO_MEM, self.msg.request, now, "nc_accesses")
        self._settle_pim_owner(line, False)
        value = self.dram.read_word(addr)
        self._log_cpu(tid, "R", addr, value)
        return self._send(TO_CPU, word_msg, d + self.dram_lat, "nc_accesses"), value

    # kernel lifecycle -------------------------------------------------------
    def _new_sig(self, capacity: int) -> ParallelBloomSignature:
        s = self.cfg.signature
        return ParallelBloomSignature(s.bits, s.segments, capacity, s.seed)

    def _new_bank(self) -> SignatureBank:
        s = self.cfg.signature
        return SignatureBank(s.cpu_registers, s.bits, s.segments, s.capacity, s.seed)

    def launch(self, p: int, tid: int, kernel_id: int, cursor: int, now: int
               ) -> tuple[KernelContext, int]:
        if self.contexts[p] is not None and self.contexts[p].phase is not Phase.DONE:
            raise SimulationError(f"PIM core {p} is busy")
        ctx = KernelContext(p, tid, kernel_id, cursor)
        self.contexts[p] = ctx
        self.m.bump("kernels")
        t = self._send(TO_MEM, self.msg.launch, now, "data") + self.cfg.timing.launch_cycles
        ctx.phase = Phase.RUNNING
        if self.lazy:
            ctx.read_sig = self._new_sig(self.sig_capacity)
            ctx.write_sig = self._new_sig(self.sig_capacity)
            ctx.bank = self._new_bank()
            ctx.seed_bank = self._new_bank()
            t = max(t, self.begin_partial(ctx, now))
        elif self.kind is ProtocolKind.COARSE_GRAINED_LOCK:
            t = max(t, self.cg_acquire(p, now))
        return ctx, t

    def cg_acquire(self, p: int, now: int) -> int:
        """Flush dirty region lines and drop clean ones, then hold the region."""
        t = now
        for line in self.cpu.dirty_region_lines():
            data = self.cpu.flush_line(line)
            self.dram.write_line(line, data)
            self.m.accesses["dram_bytes"] += 64
            self.m.bump("flushed_lines")
            t = self._send(TO_MEM, self.msg.data, now, "flushes")
        for line in self.cpu.clean_lines():
            self.cpu.invalidate_line(line)
            self.m.bump("invalidated_lines")
        self.cg_holders.add(p)
        return t

    def cg_release(self, p: int, now: int) -> None:
        self.cg_holders.discard(p)
        if not self.cg_holders:
            self.wakeups.append(("cg", now))

    def finish_kernel(self, ctx: KernelContext, now: int) -> int:
        ctx.phase = Phase.DONE
        if self.kind is ProtocolKind.COARSE_GRAINED_LOCK:
            self.cg_release(ctx.pim_core_id, now)
        return self._send(TO_CPU, self.msg.response, now, "data")

    def begin_partial(self, ctx: KernelContext, now: int) -> int:
        ctx.checkpoint = ctx.cursor
        ctx.checkpoint_sync_stage = ctx.sync_stage
        ctx.phase = Phase.RUNNING
        ctx.bank.clear()
        ctx.seed_bank.clear()
        for line in self.cpu.dirty_region_lines():
            ctx.bank.insert(line)
            ctx.seed_bank.insert(line)
            ctx.seeded.add(line)
        ctx.partial_index += 1
        ctx.executions += 1
        ctx.max_executions = max(ctx.max_executions, ctx.executions)
        if ctx.executions > self.m.counters["max_executions"]:
            self.m.counters["max_executions"] = ctx.executions
        t = now
        if ctx.escalated:
            for line in ctx.escalation_lines:
                t = max(t, self._escalation_lock(ctx, line, now))
        return t

    def _escalation_lock(self, ctx: KernelContext, line: int, now: int) -> int:
        if line in ctx.locked_lines:
            return now
        d = self._send(TO_CPU, self.msg.request, now, "coherence_msgs")
        data = self.cpu.flush_line(line)
        if data is not None:
            self.dram.write_line(line, data)
            self.m.accesses["dram_bytes"] += 64
            self.m.bump("flushed_lines")
            t = self._send(TO_MEM, self.msg.data, d + self.l2_hit, "flushes")
        else:
            t = self._send(TO_MEM, self.msg.response, d + self.l2_hit, "coherence_msgs")
        self.proc_dir.lock(line)
        ctx.locked_lines.add(line)
        return t

    def _end_partial(self, ctx: KernelContext, now: int) -> None:
        p = ctx.pim_core_id
        for line in ctx.touched:
            t = self.touches.get(line)
            if t is not None:
                t.pop(p, None)
                if not t:
                    del self.touches[line]
        for line in sorted(ctx.locked_lines):
            self.proc_dir.unlock(line)
            self.wakeups.append((("line", line), now))
        ctx.locked_lines.clear()
        ctx.reset_partial()
        self.wakeups.append((("pk", p), now))

    # LazyPIM accesses ---------------------------------------------------------
    def _interacting(self, p: int, line: int, is_write: bool) -> list[int]:
        t = self.touches.get(line)
        if not t:
            return []
        return sorted(c for c, f in t.items() if c != p and (is_write or f & WRITE_FLAG))

    def group_of(self, ctx: KernelContext) -> list[KernelContext]:
        seen = {ctx.pim_core_id}
        todo = [ctx.pim_core_id]
        while todo:
            c = todo.pop()
            for o in self.contexts[c].coupled:
                if o not in seen:
                    seen.add(o)
                    todo.append(o)
        return [self.contexts[c] for c in sorted(seen)]

    def lazy_access(self, ctx: KernelContext, is_write: bool, addr: int, value: int, now: int):
        """``(DONE, cycle, value)``, ``(COMMIT, reason)`` or ``(WAIT, core)``."""
        self._now = now
        p = ctx.pim_core_id
        line = addr & ~63
        if ctx.instruction_count >= self.instr_cap:
            return (COMMIT, "instructions")
        sig = ctx.write_sig if is_write else ctx.read_sig
        if sig.insert_count >= sig.capacity:
            return (COMMIT, "capacity")
        others = self._interacting(p, line, is_write)
        if others and (ctx.escalated or any(self.contexts[o].escalated for o in others)):
            if not ctx.empty:
                return (COMMIT, "pim-contention")
            return (WAIT, others[0])
        cache = self.pim_l1[p]
        victim = cache.victim_for(line)
        if victim is not None and victim.speculative:
            return (COMMIT, "eviction")
        for o in others:
            ctx.coupled.add(o)
            self.contexts[o].coupled.add(p)
            if not is_write:
                ctx.spec_read_bits |= 1 << o
        t = now
        if ctx.escalated:
            t = self._escalation_lock(ctx, line, now)
        self.m.accesses["pim_l1"] += 1
        cl = cache.lookup(line)
        if is_write:
            if cl is None:
                data, mask = self._lazy_fill(p, line, True)
                cl = CacheLine(line, MODIFIED, data, True, mask)
                self._pim_install(p, cl)
                ctx.filled.add(line)
                t += self.pim_fill
            else:
                if not cl.speculative:
                    self._make_speculative(p, cl)
                else:
                    for h in self._other_holders(line, p):
                        self._pim_remove(h, line)
                t += self.l1_hit
            idx = (addr >> 3) & 7
            cl.data[idx] = value
            cl.word_dirty_mask |= 1 << idx
            ctx.spec_lines.add(line)
            ctx.write_sig.insert(line)
            ctx.write_log[line] = None
            flag = WRITE_FLAG
        else:
            if cl is None:
                data, _ = self._lazy_fill(p, line, False)
                cl = CacheLine(line, SHARED, data)
                self._pim_install(p, cl)
                ctx.filled.add(line)
                t += self.pim_fill
            else:
                t += self.l1_hit
            value = cl.data[(addr >> 3) & 7]
            if ctx.escalated and self.shadow is not None:
                self._check_escalated_read(ctx, addr, value, cl)
            ctx.read_sig.insert(line)
            ctx.read_log[line] = None
            flag = READ_FLAG
        ctx.instruction_count += 1
        ctx.touched[line] = ctx.touched.get(line, 0) | flag
        tl = self.touches.setdefault(line, {})
        tl[p] = tl.get(p, 0) | flag
        self.seq += 1
        ctx.pending.append((self.seq, ctx.tid, "W" if is_write else "R", addr, value))
        return (DONE, t, value)

    def _lazy_fill(self, p: int, line: int, for_write: bool) -> tuple[list[int], int]:
        spec_src = None
        for h in self._other_holders(line, p):
            cl = self.pim_l1[h].lookup(line, touch=False)
            if cl.speculative:
                spec_src = (h, cl)
        mask = 0
        if spec_src is not None:
            h, cl = spec_src
            data = list(cl.data)
            if for_write:
                mask = cl.word_dirty_mask
                self._pim_remove(h, line)
                self.contexts[h].spec_lines.discard(line)
        else:
            self._settle_pim_owner(line, for_write, skip=p)
            data = self.dram.read_line(line)
            self.m.accesses["dram_bytes"] += 64
        if for_write:
            for h in self._other_holders(line, p):
                self._pim_remove(h, line)
        return data, mask

    def _make_speculative(self, p: int, cl: CacheLine) -> None:
        line = cl.tag
        if cl.mesi == MODIFIED:
            # committed data must stay visible while this copy is speculative
            self.dram.write_line(line, cl.data)
            self.m.accesses["dram_bytes"] += 64
        self.proc_dir.revoke(line, p)
        mask = 0
        for h in self._other_holders(line, p):
            other = self.pim_l1[h].lookup(line, touch=False)
            if other.speculative:
                # our copy was forwarded from h; take the line over, masks and all
                mask = other.word_dirty_mask
                cl.data = list(other.data)
                self.contexts[h].spec_lines.discard(line)
            self._pim_remove(h, line)
        cl.speculative = True
        cl.mesi = MODIFIED
        cl.word_dirty_mask = mask

    # commit / rollback ----------------------------------------------------------
    def commit_group(self, group: list[KernelContext], now: int) -> tuple[bool, int]:
        self._now = now
        m = self.m
        m.bump("commit_attempts", len(group))
        t = now
        for c in group:
            c.phase = Phase.COMMITTING
            self._send(TO_CPU, self.sig_msg, now, "signatures")
            t = max(t, self._send(TO_CPU, self.sig_msg, now, "signatures"))
        t += self.cfg.timing.commit_check_cycles
        detected = [c for c in group if not c.escalated and c.bank.conflicts_with(c.read_sig)]
        if detected:
            return False, self._conflict(group, detected, t)
        return True, self._commit(group, t)

    def _conflict(self, group, detected, t: int) -> int:
        m = self.m
        m.bump("conflicts", len(group))
        for c in group:
            reasons = {}
            for line in c.read_log:
                if line in c.cpu_written:
                    reasons[line] = "in-kernel"
                elif line in c.seeded:
                    reasons[line] = "dirty"
            hit = c in detected
            if hit and c.seed_bank.conflicts_with(c.read_sig):
                m.bump("dirty_conflicts")
            if hit and not reasons:
                m.bump("false_positive_conflicts")
            entry = {
                "pim_core": c.pim_core_id, "tid": c.tid, "kernel": c.kernel_id,
                "partial": c.partial_index, "detected": hit, "lines": reasons,
                "false_positive": hit and not reasons,
            }
            if self.shadow is not None:
                entry["read_sig"] = c.read_sig.to_hex()
            self.conflict_log.append(entry)
        t_f = t
        sigs = [c.read_sig for c in group]
        for line in self.cpu.dirty_region_lines():
            if any(s.may_contain(line) for s in sigs):
                data = self.cpu.flush_line(line)
                self.dram.write_line(line, data)
                m.accesses["dram_bytes"] += 64
                m.bump("flushed_lines")
                t_f = self._send(TO_MEM, self.msg.data, t, "flushes")
        if t_f > t:
            self.windows.append((t, t_f, [s.copy() for s in sigs]))
        t_end = self._send(TO_MEM, self.msg.response, t_f, "coherence_msgs")
        for c in group:
            self._rollback(c, t_end)
        return t_end

    def _rollback(self, c: KernelContext, now: int) -> None:
        c.phase = Phase.ROLLING_BACK
        p = c.pim_core_id
        cache = self.pim_l1[p]
        for line in list(c.spec_lines) + sorted(c.filled):
            cl = cache.lookup(line, touch=False)
            if cl is not None and (cl.speculative or line in c.filled):
                self._pim_remove(p, line)
        for addr in c.reservations:
            if self.lock_table.get(addr) == c.tid:
                del self.lock_table[addr]
                self.wakeups.append((("lock", addr), now))
        c.cursor = c.checkpoint
        c.sync_stage = c.checkpoint_sync_stage
        c.rollback_count += 1
        self.m.bump("rollbacks")
        if c.rollback_count >= self.rollback_threshold and not c.escalated:
            c.escalated = True
            c.escalation_lines = list(c.read_log)
            self.m.bump("escalations")
        self._end_partial(c, now)

    def _commit(self, group, t: int) -> int:
        m = self.m
        wsigs = [c.write_sig for c in group]
        spec: dict[int, tuple[KernelContext, CacheLine]] = {}
        for c in group:
            cache = self.pim_l1[c.pim_core_id]
            for line in c.spec_lines:
                cl = cache.lookup(line, touch=False)
                if cl is None or not cl.speculative:
                    raise SimulationError(f"lost speculative line {line:#x} on PIM{c.pim_core_id}")
                spec[line] = (c, cl)
        t_w = t
        merged: set[int] = set()
        for line in self.cpu.dirty_region_lines():
            if not any(s.may_contain(line) for s in wsigs):
                continue
            data = self.cpu.flush_line(line)
            t_w = self._send(TO_MEM, self.msg.data, t, "flushes")
            owner = spec.get(line)
            if owner is not None:
                c, cl = owner
                self.waw_log.append({"pim_core": c.pim_core_id, "line": line,
                                     "mask": cl.word_dirty_mask})
                cl.data = merge_waw(data, cl)
                merged.add(line)
                m.bump("waw_merges")
            else:
                self.dram.write_line(line, data)
                m.accesses["dram_bytes"] += 64
                m.bump("flushed_lines")
        n_inv = 0
        for line in self.cpu.clean_lines():
            if any(s.may_contain(line) for s in wsigs):
                self.cpu.invalidate_line(line)
                n_inv += 1
        m.bump("invalidated_lines", n_inv)
        eager = self.cfg.kernel.eager_writeback
        for line, (c, cl) in spec.items():
            if line not in merged:
                base = self.dram.peek_line(line)
                mask = cl.word_dirty_mask
                cl.data = [cl.data[i] if (mask >> i) & 1 else base[i] for i in range(8)]
            cl.speculative = False
            cl.word_dirty_mask = 0
            if eager or self._other_holders(line, c.pim_core_id):
                self.dram.write_line(line, cl.data)
                m.accesses["dram_bytes"] += 64
                cl.mesi = SHARED
                for h in self._other_holders(line, c.pim_core_id):
                    self.pim_l1[h].lookup(line, touch=False).data = list(cl.data)
            else:
                cl.mesi = MODIFIED
        for c in group:
            p = c.pim_core_id
            cache = self.pim_l1[p]
            for line in sorted(c.filled | c.spec_lines):
                cl = cache.lookup(line, touch=False)
                if cl is not None:
                    self.proc_dir.grant(line, p, exclusive=cl.mesi == MODIFIED, ignore_lock=True)
        self.windows.append((t, t_w + 1, [s.copy() for s in wsigs]
                             + [c.read_sig.copy() for c in group]))
        t_end = self._send(TO_MEM, self.msg.response,
                           t_w + n_inv * self.cfg.timing.invalidation_cycles_per_line,
                           "coherence_msgs")
        ops = sorted(op for c in group for op in c.pending)
        self.log.append(("pim", ops))
        self._apply_shadow(ops)
        m.bump("partial_commits", len(group))
        for c in group:
            c.reservations.clear()
            c.rollback_count = 0
            c.escalated = False
            c.escalation_lines = []
            c.executions = 0
            self._end_partial(c, t_end)
        return t_end

    # non-speculative PIM accesses (FG, CG, NC, Ideal) --------------------------
    def _processor_permission(self, line: int, is_write: bool, now: int) -> int:
        if self.kind not in (ProtocolKind.FINE_GRAINED, ProtocolKind.IDEAL_PIM):
            return now
        data = None
        if self.cpu.is_dirty(line):
            data = self.cpu.flush_line(line) if is_write else self.cpu.clean_line(line)
            self.dram.write_line(line, data)
            self.m.accesses["dram_bytes"] += 64
            self.m.bump("flushed_lines")
        elif is_write and self.cpu.invalidate_line(line):
            self.m.bump("invalidated_lines")
        if self.ideal:
            return now
        d = self._send(TO_CPU, self.msg.request, now, "coherence_msgs")
        if data is not None:
            return self._send(TO_MEM, self.msg.data, d + self.l2_hit, "flushes")
        return self._send(TO_MEM, self.msg.response, d + self.l2_hit, "coherence_msgs")

    def pim_access(self, ctx: KernelContext, is_write: bool, addr: int, value: int, now: int
                   ) -> tuple[int, int]:
        self._now = now
        p = ctx.pim_core_id
        line = addr & ~63
        cache = self.pim_l1[p]
        self.m.accesses["pim_l1"] += 1
        cl = cache.lookup(line)
        if cl is None or (is_write and cl.mesi == SHARED):
            t = self._processor_permission(line, is_write, now)
            if is_write:
                for h in self._other_holders(line, p):
                    other = self.pim_l1[h].lookup(line, touch=False)
                    if other.mesi == MODIFIED:
                        self.dram.write_line(line, other.data)
                        self.m.accesses["dram_bytes"] += 64
                    self._pim_remove(h, line)
            if cl is None:
                self._settle_pim_owner(line, is_write, skip=p)
                sole = not self._other_holders(line, p) and not self.cpu.present(line)
                cl = CacheLine(line, EXCLUSIVE if sole else SHARED, self.dram.read_line(line))
                self.m.accesses["dram_bytes"] += 64
                self._pim_install(p, cl)
                t += self.pim_fill
            else:
                t += self.l1_hit
        else:
            t = now + self.l1_hit
        if is_write:
            cl.mesi = MODIFIED
            cl.data[(addr >> 3) & 7] = value
        else:
            value = cl.data[(addr >> 3) & 7]
        if self.kind is not ProtocolKind.NON_CACHEABLE:
            self.proc_dir.grant(line, p, exclusive=cl.mesi != SHARED, ignore_lock=True)
        self.seq += 1
        ops = [(self.seq, ctx.tid, "W" if is_write else "R", addr, value)]
        self.log.append(("pim", ops))
        self._apply_shadow(ops)
        return t, value

    # one-step interface (the engine drives the methods above directly) ----------
    def launch_kernel(self, p: int, cursor: int, tid: int = 0, kernel_id: int = 0,
                      now: int = 0) -> KernelContext:
        return self.launch(p, tid, kernel_id, cursor, now)[0]

    def pim_read(self, ctx: KernelContext, addr: int, now: int = 0):
        """``(DONE, cycle, value)``; under LazyPIM also ``(COMMIT, why)`` or ``(WAIT, core)``."""
        if self.lazy:
            return self.lazy_access(ctx, False, addr, 0, now)
        return (DONE, *self.pim_access(ctx, False, addr, 0, now))

    def pim_write(self, ctx: KernelContext, addr: int, value: int, now: int = 0):
        if self.lazy:
            return self.lazy_access(ctx, True, addr, value, now)
        return (DONE, *self.pim_access(ctx, True, addr, value, now))

    def attempt_commit(self, ctx: KernelContext, now: int = 0) -> tuple[bool, int]:
        """Commit ``ctx`` with every core it is coupled to; False means all rolled back."""
        group = self.group_of(ctx)
        ok, t = self.commit_group(group, now)
        for c in group:
            self.begin_partial(c, t)
        return ok, t

    def rollback(self, ctx: KernelContext, now: int = 0) -> None:
        self._rollback(ctx, now)
        self.begin_partial(ctx, now)

    fg_coherence_miss = _processor_permission

    # end of run -------------------------------------------------------------
    def final_memory(self) -> dict[int, tuple[int, ...]]:
        """Committed memory image with every cache drained (state untouched)."""
        image = dict(self.dram.lines)
        for line, data in self.cpu.drain().items():
            image[line] = tuple(data)
        for p, cache in enumerate(self.pim_l1):
            for cl in cache.lines():
                if cl.speculative:
                    raise SimulationError(f"PIM{p} still holds speculative line {cl.tag:#x}")
                if cl.mesi == MODIFIED:
                    image[cl.tag] = tuple(cl.data)
        return {k: v for k, v in image.items() if any(v)}

    def check(self) -> None:
        self.cpu.check()
        for p, cache in enumerate(self.pim_l1):
            for cl in cache.lines():
                if p not in self.pim_holders.get(cl.tag, ()):
                    raise AssertionError(f"PIM{p} holds {cl.tag:#x} without a holder record")
        for line, hs in self.pim_holders.items():
            mods = [h for h in hs if self.pim_l1[h].lookup(line, touch=False).mesi == MODIFIED]
            if len(mods) > 1:
                raise AssertionError(f"line {line:#x} Modified in PIM cores {mods}")
            if self.cpu.is_dirty(line) and any(
                    not self.pim_l1[h].lookup(line, touch=False).speculative
                    and self.pim_l1[h].lookup(line, touch=False).mesi == MODIFIED for h in hs):
                raise AssertionError(f"line {line:#x} dirty on both sides")

    def dump(self) -> list[str]:
        rows = [c.describe() for c in self.contexts if c is not None]
        rows.append(f"locks={self.lock_table} cg={sorted(self.cg_holders)} "
                    f"locked_lines={len(self.proc_dir.locked_lines)}")
        return rows
