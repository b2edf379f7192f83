from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..signatures import ParallelBloomSignature, SignatureBank

READ_FLAG, WRITE_FLAG = 1, 2


class ProtocolKind(enum.Enum):
    LAZYPIM = "lazypim"
    FINE_GRAINED = "fg"
    COARSE_GRAINED_LOCK = "cg"
    NON_CACHEABLE = "nc"
    IDEAL_PIM = "ideal"
    CPU_ONLY = "cpu-only"

    @classmethod
    def parse(cls, name: str) -> "ProtocolKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown protocol {name!r}") from None


class Phase(enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    COMMITTING = "committing"   # waiting for its coupled group, or mid-commit
    ROLLING_BACK = "rolling-back"
    WAITING = "waiting"         # blocked on a lock or another core's partial kernel
    DONE = "done"


@dataclass(eq=False)
class KernelContext:
    """One kernel's life on one PIM core.

    The checkpoint is a trace cursor plus the sync stage: replaying the
    trace from there recreates everything a register checkpoint would hold.
    """

    pim_core_id: int
    tid: int
    kernel_id: int
    cursor: int
    read_sig: ParallelBloomSignature | None = None
    write_sig: ParallelBloomSignature | None = None
    bank: SignatureBank | None = None          # CPU writes as seen by this kernel
    seed_bank: SignatureBank | None = None     # launch/partial-start dirty lines only
    phase: Phase = Phase.IDLE
    checkpoint: int = 0
    sync_stage: int = 0
    checkpoint_sync_stage: int = 0
    instruction_count: int = 0
    rollback_count: int = 0
    escalated: bool = False
    spec_read_bits: int = 0
    coupled: set[int] = field(default_factory=set)
    touched: dict[int, int] = field(default_factory=dict)
    read_log: dict[int, None] = field(default_factory=dict)
    write_log: dict[int, None] = field(default_factory=dict)
    seeded: set[int] = field(default_factory=set)
    cpu_written: set[int] = field(default_factory=set)
    spec_lines: set[int] = field(default_factory=set)
    filled: set[int] = field(default_factory=set)
    locked_lines: set[int] = field(default_factory=set)
    escalation_lines: list[int] = field(default_factory=list)
    pending: list[tuple] = field(default_factory=list)
    reservations: list[int] = field(default_factory=list)
    commit_reason: str = ""
    ready_at: int = 0
    partial_index: int = 0
    executions: int = 0
    max_executions: int = 0

    @property
    def read_insert_count(self) -> int:
        return self.read_sig.insert_count if self.read_sig is not None else 0

    @property
    def write_insert_count(self) -> int:
        return self.write_sig.insert_count if self.write_sig is not None else 0

    @property
    def empty(self) -> bool:
        return not self.touched and not self.pending

    def reset_partial(self) -> None:
        """Forget everything the current partial kernel accumulated."""
        for s in (self.read_sig, self.write_sig):
            if s is not None:
                s.clear()
        self.instruction_count = 0
        self.spec_read_bits = 0
        self.coupled.clear()
        self.touched.clear()
        self.read_log.clear()
        self.write_log.clear()
        self.seeded.clear()
        self.cpu_written.clear()
        self.spec_lines.clear()
        self.filled.clear()
        self.pending.clear()
        self.reservations.clear()
        self.commit_reason = ""

    def describe(self) -> str:
        return (f"pim{self.pim_core_id} tid={self.tid} kid={self.kernel_id:#x} {self.phase.value} "
                f"cursor={self.cursor} ckpt={self.checkpoint} stage={self.sync_stage} "
                f"reads={self.read_insert_count} writes={self.write_insert_count} "
                f"instr={self.instruction_count} rollbacks={self.rollback_count} "
                f"escalated={self.escalated} coupled={sorted(self.coupled)}")
