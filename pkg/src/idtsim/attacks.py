"""Attacker programs: the transient-read oracle, eviction, monitoring, templating.

Each monitor has two engines.  ``"kernel"`` runs the hot loop in the selected
backend; ``"steps"`` replays it through the :class:`~idtsim.core_sim.Core`
API one operation at a time.  The step engine is slow and exists so tests
can check the kernel against the machine model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_sim import Core, EventKind, SimLog, Schedule, pack_schedule
from .errors import ConfigError, InsufficientUserMemory, NoDistinctEntry, ZeroTargetByte
from .mem_model import IDT_ENTRY_BYTES, IDT_VECTORS, LINE, PAGE, cache_line_of, idt_entry_addr, vector_block


@dataclass(frozen=True)
class ProbePages:
    page_a: int  # taken when the leaked value is zero
    page_b: int  # taken when it is nonzero


@dataclass(frozen=True)
class EvictionSet:
    target_line: int
    members: tuple[int, ...]


@dataclass
class DetectionTrace:
    vector: int | None
    times: list[int] = field(default_factory=list)
    set_index: int | None = None

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("detection times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def to_log(self) -> SimLog:
        log = SimLog()
        label = self.vector if self.vector is not None else f"set{self.set_index}"
        for t in self.times:
            log.append(t, "detect", label)
        return log

    @classmethod
    def from_log(cls, log: SimLog) -> "DetectionTrace":
        recs = log.of_kind("detect")
        vector = None
        if recs and recs[0].vector_or_addr.isdigit():
            vector = int(recs[0].vector_or_addr)
        return cls(vector, [r.time for r in recs])


def target_addr(core: Core, vector: int) -> int:
    """Address of byte 0 of ``vector``'s ISR pointer (the oracle target)."""
    return idt_entry_addr(core.idt, vector)


def choose_probe_pages(core: Core, target_set: int) -> ProbePages:
    sets = core.config.l1d_sets
    if sets < 16:
        raise ConfigError("probe pages need at least 16 cache sets")
    sa = (target_set + 4) % sets
    sb = (target_set + 12) % sets
    base = core.space.probe_base
    return ProbePages(base + sa * LINE, base + PAGE + sb * LINE)


def build_eviction_set(core: Core, target_line: int, first_page: int = 0) -> EvictionSet:
    """``ways`` heap lines at the target's page offset (so the same set)."""
    ways = core.config.l1d_ways
    if core.space.heap_pages - first_page < ways:
        raise InsufficientUserMemory(
            f"need {ways} heap pages from page {first_page}, have {core.space.heap_pages}"
        )
    offset = target_line & (PAGE - 1) & ~(LINE - 1)
    members = tuple(core.space.heap_page(first_page + i) + offset for i in range(ways))
    return EvictionSet(target_line & ~(LINE - 1), members)


def evict(core: Core, eset: EvictionSet) -> None:
    """Two passes over the members; costs ``evict_cost`` cycles in total."""
    start = core.clock
    for _ in range(core.config.evict_passes):
        for m in eset.members:
            core.user_access(m)
    core.clock = start + core.config.evict_cost


def leakidt_probe(core: Core, target_kaddr: int, probes: ProbePages) -> bool:
    """One oracle round; True when the target line was (observably) in L1D.

    Costs ``probe_cost`` cycles regardless of the path taken.
    """
    if core.space.mapping(target_kaddr) is not None and core.space.read_byte(target_kaddr) == 0:
        raise ZeroTargetByte(f"byte at {target_kaddr:#x} is zero")
    start = core.clock
    core.user_flush(probes.page_a)
    core.user_flush(probes.page_b)
    value = core.transient_read(target_kaddr)
    core.user_access(probes.page_b if value else probes.page_a)
    core.user_access(probes.page_a)
    cached = core.user_access(probes.page_b).value == "Hit"
    core.user_flush(probes.page_a)
    core.user_flush(probes.page_b)
    core.clock = start + core.config.probe_cost
    core.stats["probes"] += 1
    return cached


@dataclass
class KernelPlan:
    """Flat integer view of one monitoring setup, consumed by the kernels."""

    vec_lines: np.ndarray
    vec_phys: np.ndarray
    foot_lines: np.ndarray
    foot_phys: np.ndarray
    footprint_n: int
    evset_lines: np.ndarray
    evset_phys: np.ndarray
    target_line: int
    target_byte: int
    pa_line: int
    pa_phys: int
    pb_line: int
    pb_phys: int
    probe_cost: int
    evict_cost: int
    isr_cost: int
    noise_p: float
    false_leak_p: float
    evict_passes: int
    fast_forward: bool
    pp_lines: np.ndarray
    pp_phys: np.ndarray
    pp_cost: int
    pp_min_slow: int


def _lines(core: Core, addrs) -> tuple[np.ndarray, np.ndarray]:
    lines = np.array([a >> 6 for a in addrs], dtype=np.int64)
    phys = np.array([core.phys(a) >> 6 for a in addrs], dtype=np.int64)
    return lines, phys


def make_plan(core: Core, vector: int | None = None, *, set_index: int | None = None,
              fast_forward: bool = True) -> KernelPlan:
    cfg = core.config
    if vector is not None:
        target = target_addr(core, vector)
        line, tset = cache_line_of(target, cfg.l1d_sets)
        tbyte = core.space.read_byte(target)
        if tbyte == 0:
            raise ZeroTargetByte(f"vector {vector}: ISR pointer byte 0 is zero")
        probes = choose_probe_pages(core, tset)
        eset = build_eviction_set(core, line)
    else:
        line, tset, tbyte = 0, set_index, 1
        probes = choose_probe_pages(core, tset)
        eset = EvictionSet(0, ())
    pp = EvictionSet(0, ())
    if set_index is not None:
        pp = build_eviction_set(core, core.space.heap_base + set_index * LINE)
    ev_lines, ev_phys = _lines(core, eset.members)
    pp_lines, pp_phys = _lines(core, pp.members)
    return KernelPlan(
        vec_lines=core.vec_lines, vec_phys=core.vec_phys,
        foot_lines=core.foot_lines, foot_phys=core.foot_phys,
        footprint_n=cfg.footprint_lines,
        evset_lines=ev_lines, evset_phys=ev_phys,
        target_line=line >> 6, target_byte=tbyte,
        pa_line=probes.page_a >> 6, pa_phys=core.phys(probes.page_a) >> 6,
        pb_line=probes.page_b >> 6, pb_phys=core.phys(probes.page_b) >> 6,
        probe_cost=cfg.probe_cost, evict_cost=cfg.evict_cost, isr_cost=cfg.isr_cost,
        noise_p=cfg.noise_p, false_leak_p=cfg.false_leak_p,
        evict_passes=cfg.evict_passes, fast_forward=fast_forward,
        pp_lines=pp_lines, pp_phys=pp_phys,
        pp_cost=cfg.pp_cost, pp_min_slow=cfg.pp_min_slow,
    )


def _pending(core: Core, end: int, schedule: Schedule | None) -> Schedule:
    if schedule is not None:
        return schedule
    return Schedule.from_events(
        core.queue.take_before(end, {EventKind.INTERRUPT, EventKind.VICTIM_ACCESS})
    )


def _log_delivered(core: Core, schedule: Schedule, delivered) -> None:
    for t, k, a in zip(delivered, schedule.kinds.tolist(), schedule.args.tolist()):
        if k == 0:
            core.log.append(t, "interrupt", a)
        else:
            core.log.append(t, "victim", a << 6)


def monitor(core: Core, vector: int, duration: int, schedule: Schedule | None = None, *,
            engine: str = "kernel", fast_forward: bool = True, log: bool = True) -> DetectionTrace:
    """LeakIDT loop on ``vector`` from ``core.clock`` for ``duration`` cycles.

    Victim activity comes from ``schedule`` (absolute times) or, when omitted,
    from the interrupt and victim-access events in ``core.queue``.  Events at
    or before the current time are delivered before each probe.
    """
    start = core.clock
    end = start + duration
    schedule = _pending(core, end, schedule).before(end)
    if engine == "steps":
        return _monitor_steps(core, vector, end, schedule)
    if engine != "kernel":
        raise ValueError(f"unknown engine {engine!r}")
    plan = make_plan(core, vector, fast_forward=fast_forward)
    times, kinds, args, phys = pack_schedule(schedule, core)
    dets, delivered, t, probes, misses, leaks = core.kernel.run_leakidt(
        core.cache.core, core.rng, plan, times, kinds, args, phys, start, end
    )
    core.clock = t
    core.stats["probes"] += probes
    core.stats["noise_misses"] += misses
    core.stats["false_leaks"] += leaks
    core.stats["interrupts"] += int(np.count_nonzero(kinds[: len(delivered)] == 0))
    trace = DetectionTrace(vector, list(dets))
    if log:
        _log_delivered(core, schedule, delivered)
        core.log.records.extend(trace.to_log().records)
    return trace


def _deliver_due(core: Core, schedule: Schedule, i: int) -> int:
    n = len(schedule)
    while i < n and schedule.times[i] <= core.clock:
        if schedule.kinds[i] == 0:
            core.deliver_interrupt(int(schedule.args[i]))
        else:
            core.victim_access(int(schedule.args[i]) << 6)
        i += 1
    return i


def _monitor_steps(core: Core, vector: int, end: int, schedule: Schedule) -> DetectionTrace:
    target = target_addr(core, vector)
    line, tset = cache_line_of(target, core.config.l1d_sets)
    probes = choose_probe_pages(core, tset)
    eset = build_eviction_set(core, line)
    dets = []
    i = 0
    while True:
        i = _deliver_due(core, schedule, i)
        if core.clock >= end:
            break
        t = core.clock
        if leakidt_probe(core, target, probes):
            dets.append(t)
            core.log.append(t, "detect", vector)
            evict(core, eset)
    return DetectionTrace(vector, dets)


def prime_probe_monitor(core: Core, set_index: int, duration: int, schedule: Schedule | None = None, *,
                        engine: str = "kernel", fast_forward: bool = True,
                        log: bool = True) -> DetectionTrace:
    """Prime+Probe on one L1D set.

    The set is primed once; every ``pp_cost`` cycles a round re-accesses the
    prime lines in fixed order.  A round with at least ``pp_min_slow`` slow
    accesses is a detection, timestamped at the round start.
    """
    start = core.clock
    end = start + duration
    schedule = _pending(core, end, schedule).before(end)
    if engine == "steps":
        return _prime_probe_steps(core, set_index, end, schedule)
    if engine != "kernel":
        raise ValueError(f"unknown engine {engine!r}")
    plan = make_plan(core, None, set_index=set_index, fast_forward=fast_forward)
    times, kinds, args, phys = pack_schedule(schedule, core)
    dets, delivered, t, rounds = core.kernel.run_prime_probe(
        core.cache.core, plan, times, kinds, args, phys, start, end
    )
    core.clock = t
    core.stats["pp_rounds"] += rounds
    trace = DetectionTrace(None, list(dets), set_index=set_index)
    if log:
        _log_delivered(core, schedule, delivered)
        core.log.records.extend(trace.to_log().records)
    return trace


def _prime_probe_steps(core: Core, set_index: int, end: int, schedule: Schedule) -> DetectionTrace:
    cfg = core.config
    prime = build_eviction_set(core, core.space.heap_base + set_index * LINE).members
    lines = [(m, core.phys(m)) for m in prime]
    for m, p in lines:
        core.cache.access(m, p)
    dets = []
    i = 0
    while True:
        i = _deliver_due(core, schedule, i)
        if core.clock >= end:
            break
        t = core.clock
        slow = sum(not core.cache.access(m, p).hit for m, p in lines)
        if slow >= cfg.pp_min_slow:
            dets.append(t)
            core.log.append(t, "detect", f"set{set_index}")
        core.clock = t + cfg.pp_cost
    return DetectionTrace(None, dets, set_index=set_index)


# -- templating ----------------------------------------------------------------

@dataclass(frozen=True)
class TemplateResult:
    vector: int  # exact vector when isolated, else the block's first vector
    block: range
    exact: bool
    differential: np.ndarray  # per IDT line (64 entries)


def count_idt_lines(core_factory, window: int, schedule: Schedule) -> np.ndarray:
    """Detections per IDT line (monitoring its first vector) over ``window``."""
    per_line = LINE // IDT_ENTRY_BYTES
    counts = np.zeros(IDT_VECTORS // per_line, dtype=np.int64)
    for k in range(len(counts)):
        core = core_factory(k)
        trace = monitor(core, k * per_line, window, schedule.shifted(core.clock), log=False)
        counts[k] = len(trace)
    return counts


def template_idt(core_factory, induce: Schedule, window: int, background: Schedule | None = None,
                 k_sigma: float = 5.0) -> TemplateResult:
    """Locate the vector of ``induce`` by differential per-line detection counts.

    ``core_factory(k)`` returns a fresh core for IDT line ``k``; schedules are
    relative to the start of each window.  A line passes when its differential
    exceeds ``k_sigma`` times the spread of the quiet counts across lines (and
    zero).  The prefetcher pairs lines, so the answer is a block of 8 vectors;
    it narrows to the induced vector only when the block is quiet otherwise.
    """
    background = background if background is not None else Schedule.empty()
    induced_vectors = set(induce.args[induce.kinds == 0].tolist())
    if len(induced_vectors) > 1:
        raise ValueError("induced source must target exactly one vector")
    quiet = count_idt_lines(core_factory, window, background)
    active = count_idt_lines(core_factory, window, Schedule.merge(background, induce))
    diff = active - quiet
    threshold = k_sigma * float(np.std(quiet))
    passing = np.flatnonzero((diff > threshold) & (diff > 0))
    if len(passing) == 0:
        raise NoDistinctEntry("no IDT line stands out from the quiet baseline")
    best = int(passing[np.argmax(diff[passing])])
    block = vector_block(best * (LINE // IDT_ENTRY_BYTES))
    lines = [v // (LINE // IDT_ENTRY_BYTES) for v in (block.start, block.stop - 1)]
    exact = bool(quiet[lines[0]: lines[1] + 1].sum() == 0) and len(induced_vectors) == 1
    vector = next(iter(induced_vectors)) if exact else block.start
    return TemplateResult(vector, block, exact, diff)


def oracle_trials(core: Core, vector: int, n: int, cached: bool) -> int:
    """Run ``n`` oracle rounds with the target forced resident (or absent);
    returns how many reported "cached".  Uses the kernel's probe directly."""
    plan = make_plan(core, vector)
    k, cache = core.kernel, core.cache.core
    line = plan.target_line
    phys = core.phys(line << 6) >> 6
    hits = 0
    for _ in range(n):
        if cached:
            cache.fill_pair(line, phys)
        else:
            cache.flush(line)
        hit, _event = k.leakidt_probe(cache, core.rng, line, plan.target_byte, plan.pa_line, plan.pa_phys,
                                      plan.pb_line, plan.pb_phys, plan.noise_p, plan.false_leak_p)
        hits += bool(hit)
    core.stats["probes"] += n
    core.clock += n * core.config.probe_cost
    return hits
