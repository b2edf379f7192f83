from .cache import (
    EXCLUSIVE, INVALID, LINE_SIZE, MODIFIED, SHARED, WORD_SIZE, WORDS_PER_LINE,
    AccessResult, Address, CacheLine, SetAssociativeCache, cache_access,
    flush_matching, invalidate_matching, line_of, merge_waw, page_of,
    scan_dirty_in_region, word_index,
)
from .directory import DirEntry, Directory, DirectoryLocked
from .dram import MainMemory, PimDataRegion, ZERO_LINE
from .hierarchy import CpuHierarchy

__all__ = [
    "EXCLUSIVE", "INVALID", "LINE_SIZE", "MODIFIED", "SHARED", "WORD_SIZE", "WORDS_PER_LINE",
    "AccessResult", "Address", "CacheLine", "SetAssociativeCache", "cache_access",
    "flush_matching", "invalidate_matching", "line_of", "merge_waw", "page_of",
    "scan_dirty_in_region", "word_index", "DirEntry", "Directory", "DirectoryLocked",
    "MainMemory", "PimDataRegion", "ZERO_LINE", "CpuHierarchy",
]
