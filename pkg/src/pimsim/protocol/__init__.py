from .kernel import READ_FLAG, WRITE_FLAG, KernelContext, Phase, ProtocolKind
from .machine import COMMIT, DONE, UNBOUNDED, WAIT, Machine, SimulationError

__all__ = [
    "READ_FLAG", "WRITE_FLAG", "KernelContext", "Phase", "ProtocolKind",
    "COMMIT", "DONE", "UNBOUNDED", "WAIT", "Machine", "SimulationError",
]
