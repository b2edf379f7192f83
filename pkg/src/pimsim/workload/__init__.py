from .events import (
    ACQUIRE, ALLOC, COMPUTE, FENCE, PIM_BEGIN, PIM_END, READ, RELEASE, SYNC, WRITE,
    AllocPim, Compute, PimBegin, PimEnd, Read, Sync, TraceEvent, Write, allocations,
    split_threads,
)
from .generators import (
    HtapSpec, PointerChaseSpec, RandomSpec, generate, generate_htap, generate_pointer_chase,
    generate_random, load_workload, spec_from_dict,
)
from .tracefile import (
    TraceParseError, parse_trace, read_binary, serialize_trace, trace_digest, write_binary,
)
from .validate import TraceStructureError, check_trace, region_of, validate_trace

__all__ = [
    "ACQUIRE", "ALLOC", "COMPUTE", "FENCE", "PIM_BEGIN", "PIM_END", "READ", "RELEASE", "SYNC",
    "WRITE", "AllocPim", "Compute", "PimBegin", "PimEnd", "Read", "Sync", "TraceEvent", "Write",
    "allocations", "split_threads", "HtapSpec", "PointerChaseSpec", "RandomSpec", "generate",
    "generate_htap", "generate_pointer_chase", "generate_random", "load_workload",
    "spec_from_dict",
    "TraceParseError", "parse_trace", "read_binary", "serialize_trace", "trace_digest",
    "write_binary", "TraceStructureError", "check_trace", "region_of", "validate_trace",
]
