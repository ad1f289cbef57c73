"""Address space model: KPTI page views, the IDT, and cache-line arithmetic."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .config import SimConfig
from .errors import BudgetExceeded, ConfigError, RegionOverlap

PAGE = 4096
LINE = 64
IDT_VECTORS = 256
IDT_ENTRY_BYTES = 16
_MASK64 = (1 << 64) - 1

# Physical layout: user pages from 1 MiB, kernel ranges in a reserved window.
USER_PHYS_BASE = 0x0010_0000
KERNEL_PHYS_BASE = 0x2000_0000

# Linux's local APIC timer vector (0xec).
TIMER_VECTOR = 236


class ContentTag(enum.Enum):
    IDT_PAGE = "IdtPage"
    KERNEL_ENTRY = "KernelEntry"
    DESCRIPTOR_TABLE = "DescriptorTable"
    DIRECT_MAP = "DirectMap"
    USER_DATA = "UserData"


def is_canonical(vaddr: int) -> bool:
    if not 0 <= vaddr <= _MASK64:
        return False
    top = vaddr >> 47
    return top == 0 or top == (1 << 17) - 1


def check_virt(vaddr: int) -> int:
    if not is_canonical(vaddr):
        raise ValueError(f"non-canonical virtual address {vaddr:#x}")
    return vaddr


class CacheLine(NamedTuple):
    line_addr: int
    set_index: int


def cache_line_of(addr: int, sets: int = 64) -> CacheLine:
    """Line-aligned address and L1D set (address bits 6..11 for 64 sets)."""
    return CacheLine(addr & ~(LINE - 1) & _MASK64, (addr >> 6) % sets)


@dataclass(frozen=True)
class PageMapping:
    virt_page: int
    phys_page: int
    user_accessible: bool
    cacheable: bool
    content_tag: ContentTag

    def __post_init__(self):
        if self.virt_page % PAGE or self.phys_page % PAGE:
            raise ValueError("page mappings must be 4 KiB aligned")
        check_virt(self.virt_page)


@dataclass
class IdtLayout:
    base: int
    entries: list[tuple[int, int]]  # (isr_pointer, meta) per vector

    def __post_init__(self):
        if len(self.entries) != IDT_VECTORS:
            raise ValueError("IDT must have 256 entries")
        if any(isr == 0 for isr, _ in self.entries):
            raise ValueError("every ISR pointer must be nonzero")

    @property
    def size(self) -> int:
        return IDT_VECTORS * IDT_ENTRY_BYTES

    def entry_bytes(self, vector: int) -> bytes:
        isr, meta = self.entries[vector]
        return isr.to_bytes(8, "little") + meta.to_bytes(8, "little")

    def byte_at(self, vaddr: int) -> int:
        off = vaddr - self.base
        if not 0 <= off < self.size:
            raise ValueError(f"{vaddr:#x} outside the IDT")
        return self.entry_bytes(off // IDT_ENTRY_BYTES)[off % IDT_ENTRY_BYTES]


def idt_entry_addr(idt: IdtLayout, vector: int) -> int:
    if not 0 <= vector < IDT_VECTORS:
        raise ValueError(f"vector {vector} out of range")
    return idt.base + IDT_ENTRY_BYTES * vector


def vector_block(vector: int) -> range:
    """The 8 vectors that share a 128-byte adjacent-line pair with ``vector``."""
    start = vector - vector % 8
    return range(start, start + 8)


def build_idt(config: SimConfig) -> IdtLayout:
    entries = []
    for v in range(IDT_VECTORS):
        # Plausible 32-byte-spaced entry stubs; byte 0 is 0x10 + 0x20*(v%8), never 0.
        isr = config.kernel_text_base + 0xA00000 + v * 0x20 + 0x10
        # Interrupt gate, DPL 0, present, kernel CS selector 0x10.
        meta = 0x0000_8E00_0010_0000 | (v & 0xFF)
        entries.append((isr, meta))
    return IdtLayout(config.idt_base, entries)


@dataclass
class AddressSpace:
    """KPTI split: ``user_view`` is what user mode sees, ``kernel_view`` ⊇ it."""

    user_view: dict[int, PageMapping]
    kernel_view: dict[int, PageMapping]
    idt: IdtLayout
    heap_base: int
    heap_pages: int
    probe_base: int
    phys_mem_bytes: int
    secret_pages: tuple[int, ...] = ()
    footprint: dict[int, list[int]] = field(default_factory=dict)

    def mapping(self, vaddr: int, view: str = "kernel") -> PageMapping | None:
        table = self.user_view if view == "user" else self.kernel_view
        return table.get(vaddr & ~(PAGE - 1))

    def translate(self, vaddr: int, view: str = "kernel") -> int | None:
        m = self.mapping(vaddr, view)
        if m is None:
            return None
        return m.phys_page + (vaddr & (PAGE - 1))

    def read_byte(self, vaddr: int) -> int:
        """Architectural content of a kernel-view byte."""
        m = self.mapping(vaddr)
        if m is None:
            raise ValueError(f"{vaddr:#x} is unmapped")
        if m.content_tag is ContentTag.IDT_PAGE:
            return self.idt.byte_at(vaddr)
        if m.virt_page in self.secret_pages:
            return 0x5A ^ (vaddr & 0x0F)
        return 0

    def heap_page(self, index: int) -> int:
        return self.heap_base + index * PAGE


def _range_pages(start: int, pages: int) -> list[int]:
    return [start + i * PAGE for i in range(pages)]


def build_kpti_space(config: SimConfig) -> AddressSpace:
    idt = build_idt(config)
    user: dict[int, PageMapping] = {}
    kernel: dict[int, PageMapping] = {}
    claimed: dict[int, str] = {}

    def claim(page: int, owner: str) -> None:
        check_virt(page)
        if page % PAGE:
            raise ConfigError(f"{owner}: {page:#x} not page aligned")
        if page in claimed:
            raise ConfigError(f"ranges {claimed[page]!r} and {owner!r} overlap at {page:#x}")
        claimed[page] = owner

    def check_phys(phys: int) -> int:
        if phys + PAGE > config.phys_mem_bytes:
            raise ConfigError("physical memory exhausted by the configured mappings")
        return phys

    # User pages: heap, then the two probe pages.
    probe_base = config.user_base + config.user_heap_pages * PAGE
    for i, page in enumerate(_range_pages(config.user_base, config.user_heap_pages + 2)):
        claim(page, "user")
        m = PageMapping(page, check_phys(USER_PHYS_BASE + i * PAGE), True, True, ContentTag.USER_DATA)
        user[page] = kernel[page] = m

    # Kernel pages that survive KPTI: identity-mapped into the reserved window.
    phys = KERNEL_PHYS_BASE
    idt_page = config.idt_base
    idt_seen = False
    for r in config.kernel_ranges:
        if r.pages < 0:
            raise ConfigError(f"range {r.name!r} has negative size")
        try:
            tag = ContentTag(r.tag)
        except ValueError:
            raise ConfigError(f"unknown content tag {r.tag!r}") from None
        for page in _range_pages(r.start, r.pages):
            claim(page, r.name)
            page_tag = ContentTag.IDT_PAGE if page == idt_page else tag
            idt_seen |= page == idt_page
            m = PageMapping(page, check_phys(phys), False, True, page_tag)
            user[page] = kernel[page] = m
            phys += PAGE
    if not idt_seen:
        raise ConfigError("the IDT page must lie inside one of the kernel_ranges")

    # Kernel-only pages: simulated secrets and ISR text.
    secrets = _range_pages(config.secret_base, config.secret_pages)
    for page in secrets:
        claim(page, "secret")
        kernel[page] = PageMapping(page, check_phys(phys), False, True, ContentTag.DIRECT_MAP)
        phys += PAGE

    footprint: dict[int, list[int]] = {}
    if config.footprint_lines:
        text_pages = _range_pages(config.kernel_text_base, IDT_VECTORS)
        for page in text_pages:
            claim(page, "kernel-text")
            kernel[page] = PageMapping(page, check_phys(phys), False, True, ContentTag.KERNEL_ENTRY)
            phys += PAGE
        sets = config.l1d_sets
        for v in range(IDT_VECTORS):
            own = cache_line_of(idt_entry_addr(idt, v), sets).set_index
            lines = []
            for k in range(config.footprint_lines):
                s = (own + 16 + 8 * k) % sets
                lines.append(text_pages[v] + s * LINE)
            footprint[v] = lines

    return AddressSpace(
        user_view=user,
        kernel_view=kernel,
        idt=idt,
        heap_base=config.user_base,
        heap_pages=config.user_heap_pages,
        probe_base=probe_base,
        phys_mem_bytes=config.phys_mem_bytes,
        secret_pages=tuple(secrets),
        footprint=footprint,
    )


# -- MTRR-style uncachable regions ------------------------------------------------

@dataclass(frozen=True)
class UncachableRegion:
    start: int  # physical byte address
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class MachineConfigDelta:
    """Physical line ranges ``[lo, hi)`` (line numbers) whose fills are suppressed."""

    suppressed_lines: tuple[tuple[int, int], ...] = ()

    @property
    def is_noop(self) -> bool:
        return not self.suppressed_lines


class MtrrTable:
    def __init__(self, budget: int = 8, phys_mem_bytes: int | None = None):
        self.budget = budget
        self.phys_mem_bytes = phys_mem_bytes
        self.regions: list[UncachableRegion] = []

    def install(self, region: UncachableRegion) -> MachineConfigDelta:
        if region.length == 0:
            return MachineConfigDelta()
        if region.start % PAGE or region.length % PAGE or region.length < 0:
            raise ConfigError("uncachable regions must cover whole physical pages")
        if self.phys_mem_bytes is not None and region.end > self.phys_mem_bytes:
            raise ConfigError("region extends past physical memory")
        for other in self.regions:
            if region.start < other.end and other.start < region.end:
                raise RegionOverlap(
                    f"[{region.start:#x}, {region.end:#x}) overlaps [{other.start:#x}, {other.end:#x})"
                )
        if len(self.regions) >= self.budget:
            raise BudgetExceeded(f"all {self.budget} MTRRs in use")
        self.regions.append(region)
        return MachineConfigDelta(((region.start // LINE, region.end // LINE),))


def install_uncachable(table: MtrrTable, region: UncachableRegion) -> MachineConfigDelta:
    return table.install(region)


def idt_region(space: AddressSpace) -> UncachableRegion:
    """The physical page backing the IDT."""
    return UncachableRegion(space.translate(space.idt.base), PAGE)
