"""Brute-force reference for coarse-grained atomicity.

The simulator logs every processor access as it executes and every
committed partial kernel (or coupled group) as one block at its commit
instant.  Replaying that log against a flat word map must reproduce every
observed read value and the simulator's final memory image.
"""

from __future__ import annotations

from .memory.cache import WORDS_PER_LINE


def replay(log: list[tuple]) -> tuple[dict[int, int], list[str]]:
    mem: dict[int, int] = {}
    problems: list[str] = []

    def apply(who: str, op: str, addr: int, value: int) -> None:
        if op == "W":
            mem[addr] = value
        elif mem.get(addr, 0) != value:
            problems.append(f"{who} read {value:#x} at {addr:#x}, expected {mem.get(addr, 0):#x}")

    for entry in log:
        if entry[0] == "cpu":
            _, tid, op, addr, value = entry
            apply(f"cpu thread {tid}", op, addr, value)
        else:
            for _, tid, op, addr, value in entry[1]:
                apply(f"pim thread {tid}", op, addr, value)
    return mem, problems


def words_to_lines(mem: dict[int, int]) -> dict[int, tuple[int, ...]]:
    lines: dict[int, list[int]] = {}
    for addr, value in mem.items():
        lines.setdefault(addr & ~63, [0] * WORDS_PER_LINE)[(addr >> 3) & 7] = value
    return {ln: tuple(ws) for ln, ws in lines.items() if any(ws)}


def check_serializable(result) -> list[str]:
    """Empty when the run matches its atomic-commit replay exactly."""
    mem, problems = replay(result.log)
    expected = words_to_lines(mem)
    got = result.memory
    for line in sorted(set(expected) | set(got)):
        e, g = expected.get(line), got.get(line)
        if e != g:
            problems.append(f"line {line:#x}: simulator {g}, replay {e}")
    return problems
