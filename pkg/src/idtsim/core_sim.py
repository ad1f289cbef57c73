"""Single-core, cycle-clocked discrete-event machine."""
from __future__ import annotations

import csv
import enum
import heapq
import io
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from . import _backend
from .cache import CacheGeometry, L1dCache
from .config import SimConfig
from .errors import ProtectionFault
from .mem_model import (
    IDT_VECTORS,
    AddressSpace,
    MachineConfigDelta,
    MtrrTable,
    UncachableRegion,
    build_kpti_space,
    cache_line_of,
    idt_entry_addr,
    idt_region,
)
from .seeding import sub_seed


class EventKind(enum.IntEnum):
    # Value is the tiebreak priority among events at the same cycle.
    INTERRUPT = 0
    VICTIM_ACCESS = 1
    ATTACKER_STEP = 2
    WORKLOAD_TICK = 3


@dataclass(order=True)
class Event:
    time: int
    kind: EventKind
    seq: int = field(default=0)
    payload: Any = field(default=None, compare=False)

    @classmethod
    def interrupt(cls, time: int, vector: int) -> "Event":
        return cls(int(time), EventKind.INTERRUPT, payload=int(vector))

    @classmethod
    def victim_access(cls, time: int, vaddr: int) -> "Event":
        return cls(int(time), EventKind.VICTIM_ACCESS, payload=int(vaddr))

    @classmethod
    def attacker_step(cls, time: int, action: Callable[["Core"], str], label: str = "step") -> "Event":
        return cls(int(time), EventKind.ATTACKER_STEP, payload=(action, label))

    @classmethod
    def workload_tick(cls, time: int, label: str = "tick") -> "Event":
        return cls(int(time), EventKind.WORKLOAD_TICK, payload=label)


class EventQueue:
    """Time-ordered queue; equal times break by kind, then insertion order."""

    def __init__(self, events: Iterable[Event] = ()):
        self._heap: list[Event] = []
        self._counter = itertools.count()
        for ev in events:
            self.push(ev)

    def push(self, ev: Event) -> None:
        ev.seq = next(self._counter)
        heapq.heappush(self._heap, ev)

    def extend(self, events: Iterable[Event]) -> None:
        for ev in events:
            self.push(ev)

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def take_before(self, end: int, kinds: set[EventKind]) -> list[Event]:
        """Remove and return (sorted) events of ``kinds`` with time < end."""
        taken, kept = [], []
        while self._heap and self._heap[0].time < end:
            ev = heapq.heappop(self._heap)
            (taken if ev.kind in kinds else kept).append(ev)
        for ev in kept:
            heapq.heappush(self._heap, ev)
        return taken

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class LogRecord:
    time: int
    kind: str
    vector_or_addr: str
    detail: str = ""


class SimLog:
    HEADER = ("time_cycles", "kind", "vector_or_addr", "detail")

    def __init__(self, records: Iterable[LogRecord] = ()):
        self.records: list[LogRecord] = list(records)

    def append(self, time: int, kind: str, vector_or_addr: int | str, detail: str = "") -> None:
        if isinstance(vector_or_addr, int) and vector_or_addr >= IDT_VECTORS:
            vector_or_addr = f"{vector_or_addr:#x}"
        self.records.append(LogRecord(int(time), kind, str(vector_or_addr), detail))

    def of_kind(self, kind: str) -> list[LogRecord]:
        return [r for r in self.records if r.kind == kind]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.records:
            w.writerow((r.time, r.kind, r.vector_or_addr, r.detail))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SimLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.HEADER:
            raise ValueError("missing or wrong SimLog header")
        return cls(LogRecord(int(t), k, v, d) for t, k, v, d in rows[1:])


class Latency(enum.Enum):
    HIT = "Hit"
    MISS = "Miss"


class Core:
    """One core: clock, L1D, KPTI address space, IDT and pending events."""

    def __init__(self, config: SimConfig | None = None, seed: int = 0, kernel=None):
        self.config = config or SimConfig()
        self.kernel = kernel or _backend.kernel
        self.space: AddressSpace = build_kpti_space(self.config)
        self.idt = self.space.idt
        geometry = CacheGeometry(self.config.l1d_sets, self.config.l1d_ways)
        self.cache = L1dCache(geometry, self.kernel)
        self.mtrrs = MtrrTable(self.config.mtrr_budget, self.config.phys_mem_bytes)
        self.seed = seed
        self.rng = self.kernel.SplitMix64(sub_seed(seed, "oracle-noise"))
        self.clock = 0
        self.queue = EventQueue()
        self.log = SimLog()
        self.stats: Counter = Counter()
        self.last_fault: str | None = None
        self._build_vector_tables()

    # -- setup ------------------------------------------------------------
    def _build_vector_tables(self) -> None:
        nfoot = self.config.footprint_lines
        vec_lines = np.zeros(IDT_VECTORS, dtype=np.int64)
        vec_phys = np.zeros(IDT_VECTORS, dtype=np.int64)
        foot_lines = np.zeros(IDT_VECTORS * nfoot, dtype=np.int64)
        foot_phys = np.zeros(IDT_VECTORS * nfoot, dtype=np.int64)
        for v in range(IDT_VECTORS):
            line = self.idt_line(v)
            vec_lines[v] = line >> 6
            vec_phys[v] = self.space.translate(line) >> 6
            for k, addr in enumerate(self.space.footprint.get(v, [])):
                foot_lines[v * nfoot + k] = addr >> 6
                foot_phys[v * nfoot + k] = self.space.translate(addr) >> 6
        self.vec_lines, self.vec_phys = vec_lines, vec_phys
        self.foot_lines, self.foot_phys = foot_lines, foot_phys

    def reset(self, seed: int | None = None) -> None:
        """Cold cache, clock 0, empty queue/log; uncachable regions persist."""
        if seed is not None:
            self.seed = seed
        self.cache.reset()
        self.rng = self.kernel.SplitMix64(sub_seed(self.seed, "oracle-noise"))
        self.clock = 0
        self.queue = EventQueue()
        self.log = SimLog()
        self.stats = Counter()

    def idt_line(self, vector: int) -> int:
        return cache_line_of(idt_entry_addr(self.idt, vector)).line_addr

    def phys(self, vaddr: int) -> int:
        p = self.space.translate(vaddr)
        if p is None:
            raise ValueError(f"{vaddr:#x} is unmapped")
        return p

    def install_uncachable(self, region: UncachableRegion) -> MachineConfigDelta:
        delta = self.mtrrs.install(region)
        self.cache.apply(delta)
        return delta

    def mitigate(self) -> MachineConfigDelta:
        """Mark the IDT's physical page uncachable."""
        return self.install_uncachable(idt_region(self.space))

    # -- machine operations -----------------------------------------------
    def deliver_interrupt(self, vector: int) -> None:
        line = self.idt_line(vector)
        self.cache.demand_fill_with_prefetch(line, self.phys(line))
        for addr in self.space.footprint.get(vector, []):
            self.cache.access(addr, self.phys(addr))
        self.log.append(self.clock, "interrupt", vector)
        self.stats["interrupts"] += 1
        self.clock += self.config.isr_cost

    def victim_access(self, vaddr: int) -> None:
        line = cache_line_of(vaddr).line_addr
        self.cache.access(line, self.phys(line))
        self.log.append(self.clock, "victim", vaddr)

    def transient_read(self, kaddr: int) -> int:
        """Byte a faulting user load sees transiently: the value iff L1D-resident, else 0."""
        self.last_fault = None
        if self.space.mapping(kaddr, "user") is None:
            self.last_fault = "unmapped"
            self.stats["unmapped_faults"] += 1
            return 0
        line = cache_line_of(kaddr).line_addr
        value = self.space.read_byte(kaddr) if self.cache.contains(line) else 0
        cfg = self.config
        if value != 0:
            if cfg.noise_p > 0.0 and self.rng.next_double() < cfg.noise_p:
                self.stats["noise_misses"] += 1
                value = 0
        elif cfg.false_leak_p > 0.0 and self.rng.next_double() < cfg.false_leak_p:
            self.stats["false_leaks"] += 1
            value = 0xFF
        return value

    def _user_mapping(self, vaddr: int):
        m = self.space.mapping(vaddr, "user")
        if m is None or not m.user_accessible:
            raise ProtectionFault(f"user access to {vaddr:#x}")
        return m

    def user_access(self, vaddr: int) -> Latency:
        self._user_mapping(vaddr)
        line = cache_line_of(vaddr).line_addr
        hit = self.cache.access(line, self.phys(line)).hit
        self.clock += self.config.hit_latency if hit else self.config.miss_latency
        return Latency.HIT if hit else Latency.MISS

    def user_flush(self, vaddr: int) -> None:
        """clflush on a user-accessible line."""
        self._user_mapping(vaddr)
        self.cache.flush(cache_line_of(vaddr).line_addr)

    # -- event processing -------------------------------------------------
    def schedule(self, events: Iterable[Event]) -> None:
        self.queue.extend(events)

    def run(self, queue: EventQueue | None = None, until: int | None = None) -> SimLog:
        """Process events with time < ``until`` in order; returns the records added."""
        queue = self.queue if queue is None else queue
        start = len(self.log)
        while len(queue):
            ev = queue.peek()
            if until is not None and ev.time >= until:
                break
            queue.pop()
            self.clock = max(self.clock, ev.time)
            if ev.kind is EventKind.INTERRUPT:
                self.deliver_interrupt(ev.payload)
            elif ev.kind is EventKind.VICTIM_ACCESS:
                self.victim_access(ev.payload)
            elif ev.kind is EventKind.ATTACKER_STEP:
                action, label = ev.payload
                t = self.clock
                detail = action(self)
                self.log.append(t, "attacker", label, "" if detail is None else str(detail))
            else:
                self.log.append(self.clock, "tick", ev.payload)
        if until is not None:
            self.clock = max(self.clock, until)
        return SimLog(self.log.records[start:])

    def residency(self, lines: Iterable[int]) -> dict[int, bool]:
        return {line: self.cache.contains(line) for line in lines}


@dataclass
class Schedule:
    """Bulk, time-sorted interrupt / victim-access arrays.

    ``kinds`` is 0 for an interrupt (``args`` = vector) and 1 for a victim
    memory access (``args`` = virtual line number, i.e. address >> 6).
    """

    times: np.ndarray
    kinds: np.ndarray
    args: np.ndarray

    @classmethod
    def empty(cls) -> "Schedule":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    @classmethod
    def interrupts(cls, times, vector: int) -> "Schedule":
        t = np.asarray(times, dtype=np.int64)
        return cls(t, np.zeros(len(t), dtype=np.int64), np.full(len(t), vector, dtype=np.int64))

    @classmethod
    def accesses(cls, times, vaddr: int) -> "Schedule":
        t = np.asarray(times, dtype=np.int64)
        return cls(t, np.ones(len(t), dtype=np.int64), np.full(len(t), vaddr >> 6, dtype=np.int64))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "Schedule":
        rows = []
        for ev in events:
            if ev.kind is EventKind.INTERRUPT:
                rows.append((ev.time, 0, ev.payload))
            elif ev.kind is EventKind.VICTIM_ACCESS:
                rows.append((ev.time, 1, ev.payload >> 6))
        if not rows:
            return cls.empty()
        a = np.array(rows, dtype=np.int64)
        return cls(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy())

    @classmethod
    def merge(cls, *parts: "Schedule") -> "Schedule":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        t = np.concatenate([p.times for p in parts])
        k = np.concatenate([p.kinds for p in parts])
        a = np.concatenate([p.args for p in parts])
        order = np.lexsort((k, t))  # stable: by time, then kind
        return cls(t[order], k[order], a[order])

    def shifted(self, offset: int) -> "Schedule":
        return Schedule(self.times + offset, self.kinds.copy(), self.args.copy())

    def before(self, end: int) -> "Schedule":
        m = self.times < end
        return Schedule(self.times[m], self.kinds[m], self.args[m])

    def to_events(self) -> list[Event]:
        out = []
        for t, k, a in zip(self.times.tolist(), self.kinds.tolist(), self.args.tolist()):
            out.append(Event.interrupt(t, a) if k == 0 else Event.victim_access(t, a << 6))
        return out

    def __len__(self) -> int:
        return len(self.times)


def pack_schedule(schedule: Schedule, core: Core):
    """Kernel arrays ``(times, kinds, args, phys)`` for ``schedule``."""
    phys = np.zeros(len(schedule), dtype=np.int64)
    acc = np.flatnonzero(schedule.kinds == 1)
    if len(acc):
        lines, inverse = np.unique(schedule.args[acc], return_inverse=True)
        lp = np.array([core.phys(int(x) << 6) >> 6 for x in lines], dtype=np.int64)
        phys[acc] = lp[inverse]
    return schedule.times, schedule.kinds, schedule.args, phys
