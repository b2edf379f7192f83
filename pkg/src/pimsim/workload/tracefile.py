"""Trace files.

Text grammar, one event per line::

    trace   := { line '\\n' }
    line    := comment | blank | event
    comment := '#' any*
    event   := tid ' ' op [ ' ' args ]
    op/args := 'R' addr | 'W' addr value | 'PB' kid | 'PE'
             | 'SY' ('acquire'|'release'|'fence') addr
             | 'AL' base len | 'CP' cycles

``tid`` is decimal; every other number is hex, with or without ``0x``.
The binary form is a magic header, a u64 record count and fixed 20-byte
records, for traces too large to diff.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Iterable, TextIO

from .events import (
    ALLOC, COMPUTE, OPS, PIM_BEGIN, PIM_END, READ, SYNC, SYNC_KINDS, WORD_MASK, WRITE,
    TraceEvent,
)

BINARY_MAGIC = b"PIMTRC1\0"
_RECORD = struct.Struct("<HBBQQ")
_OP_CODES = {op: i for i, op in enumerate(OPS)}
_SYNC_CODES = {"": 0, **{k: i + 1 for i, k in enumerate(SYNC_KINDS)}}
_ARITY = {READ: 1, WRITE: 2, PIM_BEGIN: 1, PIM_END: 0, SYNC: 2, ALLOC: 2, COMPUTE: 1}


class TraceParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _hex(tok: str, lineno: int) -> int:
    try:
        v = int(tok, 16)
    except ValueError:
        raise TraceParseError(lineno, f"bad hex number {tok!r}") from None
    if v < 0 or v > WORD_MASK:
        raise TraceParseError(lineno, f"number out of 64-bit range: {tok!r}")
    return v


def parse_line(text: str, lineno: int = 0) -> TraceEvent | None:
    text = text.split("#", 1)[0].strip()
    if not text:
        return None
    parts = text.split()
    if len(parts) < 2:
        raise TraceParseError(lineno, "expected '<tid> <op> ...'")
    tid_s, op, args = parts[0], parts[1], parts[2:]
    if not tid_s.isdigit():
        raise TraceParseError(lineno, f"bad thread id {tid_s!r}")
    tid = int(tid_s)
    if tid > 0xFFFF:
        raise TraceParseError(lineno, f"thread id {tid} too large")
    if op not in _ARITY:
        raise TraceParseError(lineno, f"unknown op {op!r}")
    if len(args) != _ARITY[op]:
        raise TraceParseError(lineno, f"{op} takes {_ARITY[op]} argument(s), got {len(args)}")
    if op == READ:
        return TraceEvent(tid, op, _hex(args[0], lineno))
    if op == WRITE:
        return TraceEvent(tid, op, _hex(args[0], lineno), _hex(args[1], lineno))
    if op == PIM_BEGIN:
        return TraceEvent(tid, op, 0, _hex(args[0], lineno))
    if op == PIM_END:
        return TraceEvent(tid, op)
    if op == SYNC:
        if args[0] not in SYNC_KINDS:
            raise TraceParseError(lineno, f"unknown sync kind {args[0]!r}")
        return TraceEvent(tid, op, _hex(args[1], lineno), 0, args[0])
    if op == ALLOC:
        return TraceEvent(tid, op, _hex(args[0], lineno), _hex(args[1], lineno))
    return TraceEvent(tid, op, 0, _hex(args[0], lineno))


def format_event(ev: TraceEvent) -> str:
    op = ev.op
    if op == READ:
        return f"{ev.tid} R {ev.addr:x}"
    if op == WRITE:
        return f"{ev.tid} W {ev.addr:x} {ev.value:x}"
    if op == PIM_BEGIN:
        return f"{ev.tid} PB {ev.value:x}"
    if op == PIM_END:
        return f"{ev.tid} PE"
    if op == SYNC:
        return f"{ev.tid} SY {ev.sync} {ev.addr:x}"
    if op == ALLOC:
        return f"{ev.tid} AL {ev.addr:x} {ev.value:x}"
    return f"{ev.tid} CP {ev.value:x}"


def parse_trace(source: str | Path | TextIO | Iterable[str]) -> list[TraceEvent]:
    """Parse text (a path, an open file, or an iterable of lines)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).exists()):
        path = Path(source)
        with open(path, "rb") as fh:
            if fh.read(len(BINARY_MAGIC)) == BINARY_MAGIC:
                return read_binary(path)
        with open(path, encoding="utf-8") as fh:
            return parse_trace(fh)
    if isinstance(source, str):
        source = io.StringIO(source)
    out = []
    for lineno, text in enumerate(source, 1):
        ev = parse_line(text, lineno)
        if ev is not None:
            out.append(ev)
    return out


def serialize_trace(events: Iterable[TraceEvent], out: str | Path | TextIO | None = None,
                    header: str | None = None) -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines.extend(format_event(ev) for ev in events)
    text = "\n".join(lines) + ("\n" if lines else "")
    if out is None:
        return text
    if isinstance(out, (str, Path)):
        Path(out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return text


def write_binary(events: Iterable[TraceEvent], path: str | Path) -> None:
    events = list(events)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(events)))
        for ev in events:
            fh.write(_RECORD.pack(ev.tid, _OP_CODES[ev.op], _SYNC_CODES[ev.sync], ev.addr, ev.value))


def read_binary(path: str | Path) -> list[TraceEvent]:
    data = Path(path).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise TraceParseError(0, "not a binary trace")
    off = len(BINARY_MAGIC)
    if len(data) < off + 8:
        raise TraceParseError(0, "truncated header")
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) != off + count * _RECORD.size:
        raise TraceParseError(0, f"expected {count} records, file size disagrees")
    sync_names = {v: k for k, v in _SYNC_CODES.items()}
    out = []
    for i in range(count):
        tid, opc, syc, addr, value = _RECORD.unpack_from(data, off + i * _RECORD.size)
        if opc >= len(OPS) or syc not in sync_names:
            raise TraceParseError(i + 1, "bad op or sync code")
        out.append(TraceEvent(tid, OPS[opc], addr, value, sync_names[syc]))
    return out


def trace_digest(events: Iterable[TraceEvent]) -> str:
    return hashlib.sha256(serialize_trace(events).encode()).hexdigest()
