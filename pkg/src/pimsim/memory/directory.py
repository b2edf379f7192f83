from __future__ import annotations

from dataclasses import dataclass, field


class DirectoryLocked(Exception):
    """A permission change hit a locked entry; the requester must stall."""

    def __init__(self, line: int):
        super().__init__(f"directory entry {line:#x} is locked")
        self.line = line


@dataclass
class DirEntry:
    owner: int | None = None
    sharers: set[int] = field(default_factory=set)
    locked: bool = False

    @property
    def holders(self) -> set[int]:
        if self.owner is None:
            return set(self.sharers)
        return self.sharers | {self.owner}


class Directory:
    """Line-granular MESI directory: one owner (M/E) or any number of sharers."""

    def __init__(self, scope: str = "processor"):
        self.scope = scope
        self.entries: dict[int, DirEntry] = {}
        # lock holders per line; several PIM cores may lock the same line for reading
        self.locked_lines: dict[int, int] = {}
        self.region_locked = False

    def lookup(self, line: int) -> DirEntry | None:
        return self.entries.get(line)

    def is_locked(self, line: int) -> bool:
        return self.region_locked or line in self.locked_lines

    def grant(self, line: int, core: int, exclusive: bool, ignore_lock: bool = False) -> list[int]:
        """Give ``core`` S or M/E permission; returns cores revoked or downgraded."""
        if not ignore_lock and self.is_locked(line):
            raise DirectoryLocked(line)
        e = self.entries.setdefault(line, DirEntry())
        affected: list[int] = []
        if exclusive:
            affected = sorted(h for h in e.holders if h != core)
            e.owner = core
            e.sharers = set()
        else:
            if e.owner is not None and e.owner != core:
                affected.append(e.owner)
                e.sharers.add(e.owner)
                e.owner = None
            if e.owner != core:
                e.sharers.add(core)
        return affected

    def revoke(self, line: int, core: int) -> None:
        e = self.entries.get(line)
        if e is None:
            return
        if e.owner == core:
            e.owner = None
        e.sharers.discard(core)
        if e.owner is None and not e.sharers and not e.locked:
            del self.entries[line]

    def downgrade(self, line: int, core: int) -> None:
        e = self.entries.get(line)
        if e is not None and e.owner == core:
            e.owner = None
            e.sharers.add(core)

    def holders(self, line: int) -> set[int]:
        e = self.entries.get(line)
        return e.holders if e is not None else set()

    def owner(self, line: int) -> int | None:
        e = self.entries.get(line)
        return e.owner if e is not None else None

    def lock(self, line: int) -> None:
        self.locked_lines[line] = self.locked_lines.get(line, 0) + 1
        self.entries.setdefault(line, DirEntry()).locked = True

    def unlock(self, line: int) -> None:
        n = self.locked_lines.get(line, 0) - 1
        if n > 0:
            self.locked_lines[line] = n
            return
        self.locked_lines.pop(line, None)
        e = self.entries.get(line)
        if e is not None:
            e.locked = False
            if e.owner is None and not e.sharers:
                del self.entries[line]

    def lock_region(self) -> None:
        self.region_locked = True

    def unlock_region(self) -> None:
        self.region_locked = False

    def check(self) -> None:
        for line, e in self.entries.items():
            if e.owner is not None and e.sharers - {e.owner}:
                raise AssertionError(
                    f"{self.scope} directory {line:#x}: owner {e.owner} with sharers {e.sharers}")
