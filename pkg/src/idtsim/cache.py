"""L1D model: virtually indexed sets, Tree-PLRU, adjacent-line prefetch.

The storage and replacement logic live in the selected kernel backend
(compiled or pure Python); this module adds the byte-address API.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from . import _backend
from .mem_model import LINE, MachineConfigDelta


@dataclass(frozen=True)
class CacheGeometry:
    sets: int = 64
    ways: int = 8
    line_bytes: int = LINE

    def __post_init__(self):
        if self.line_bytes != LINE:
            raise ValueError("line size is fixed at 64 bytes")
        if self.ways <= 0 or self.ways & (self.ways - 1):
            raise ValueError("ways must be a power of two")
        if self.sets <= 0 or self.sets & (self.sets - 1):
            raise ValueError("sets must be a power of two")

    @property
    def size_bytes(self) -> int:
        return self.sets * self.ways * self.line_bytes


class AccessResult(NamedTuple):
    hit: bool
    evicted: int | None


class L1dCache:
    def __init__(self, geometry: CacheGeometry | None = None, kernel=None):
        self.geometry = geometry or CacheGeometry()
        self.kernel = kernel or _backend.kernel
        self.core = self.kernel.CacheCore(self.geometry.sets, self.geometry.ways)

    def set_of(self, line_addr: int) -> int:
        return (line_addr >> 6) % self.geometry.sets

    def access(self, line_addr: int, phys_line: int) -> AccessResult:
        if line_addr % LINE:
            raise ValueError(f"{line_addr:#x} is not line aligned")
        code = self.core.access(line_addr >> 6, phys_line >> 6)
        if code == self.kernel.HIT:
            return AccessResult(True, None)
        if code >= 0:
            return AccessResult(False, code << 6)
        return AccessResult(False, None)

    def demand_fill_with_prefetch(self, line_addr: int, phys_line: int) -> None:
        """Fill ``line_addr`` and its partner in the 128-byte aligned pair."""
        self.core.fill_pair(line_addr >> 6, phys_line >> 6)

    def flush(self, line_addr: int) -> None:
        self.core.flush(line_addr >> 6)

    def contains(self, line_addr: int) -> bool:
        return bool(self.core.contains(line_addr >> 6))

    def resident_lines(self, set_index: int) -> list[int]:
        return sorted(t << 6 for t in self.core.resident(set_index) if t != -1)

    def is_fill_suppressed(self, phys_line: int) -> bool:
        return bool(self.core.is_suppressed(phys_line >> 6))

    def apply(self, delta: MachineConfigDelta) -> None:
        for lo, hi in delta.suppressed_lines:
            self.core.add_suppressed(lo, hi)

    def snapshot(self):
        return self.core.snapshot()

    def reset(self) -> None:
        self.core.reset()
