"""Trace-driven simulator for processor/PIM coherence schemes.

Typical use::

    from pimsim import load_config, load_workload, run
    cfg = load_config("high-sharing")
    result = run(cfg, load_workload(cfg.workload, cfg.seed))
    print(result.metrics.total_cycles)
"""

from .config import PROTOCOLS, ConfigError, SimConfig, load_config
from .engine import SimResult, SimulationDeadlock, Simulator, cpu_only_reference, run
from .metrics import Metrics, compare, overhead_report, report
from .oracle import check_serializable
from .protocol import SimulationError
from .workload import TraceEvent, generate, load_workload, parse_trace, serialize_trace

__version__ = "0.1.0"

__all__ = [
    "PROTOCOLS", "ConfigError", "SimConfig", "load_config", "SimResult", "SimulationDeadlock",
    "Simulator", "cpu_only_reference", "run", "Metrics", "compare", "overhead_report", "report",
    "check_serializable", "SimulationError", "TraceEvent", "generate", "load_workload",
    "parse_trace", "serialize_trace",
]
