import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idtsim import attacks
from idtsim.config import SimConfig
from idtsim.core_sim import Core, Event, Schedule
from idtsim.errors import InsufficientUserMemory, NoDistinctEntry, ZeroTargetByte
from idtsim.mem_model import cache_line_of


def _target(core, v):
    return attacks.target_addr(core, v)


def _probes(core, v):
    return attacks.choose_probe_pages(core, cache_line_of(core.idt_line(v)).set_index)


def test_probe_pages_distinct_sets(make_core):
    core = make_core()
    for s in range(64):
        p = attacks.choose_probe_pages(core, s)
        sa, sb = cache_line_of(p.page_a).set_index, cache_line_of(p.page_b).set_index
        assert len({sa, sb, s}) == 3
        assert core.space.mapping(p.page_a, "user").user_accessible


def test_probe_cached_and_uncached(make_core):
    core = make_core()
    t = _target(core, 33)
    pr = _probes(core, 33)
    assert attacks.leakidt_probe(core, t, pr) is False
    core.deliver_interrupt(33)
    assert attacks.leakidt_probe(core, t, pr) is True
    assert not core.cache.contains(pr.page_a) and not core.cache.contains(pr.page_b)


def test_probe_takes_page_a_when_uncached(make_core):
    core = make_core()
    pr = _probes(core, 10)
    seen = []
    real = core.user_access
    core.user_access = lambda a: seen.append(a) or real(a)
    attacks.leakidt_probe(core, _target(core, 10), pr)
    assert seen[0] == pr.page_a


def test_zero_target_byte(make_core):
    core = make_core()
    zero_byte = core.idt.base + 16 * 5 + 15  # top byte of the meta word
    with pytest.raises(ZeroTargetByte):
        attacks.leakidt_probe(core, zero_byte, _probes(core, 5))


BYTE_VALUES = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x0F, 0x33, 0x55, 0x7F, 0xAA, 0xC3, 0xF0, 0xFF]


@pytest.mark.parametrize("value", BYTE_VALUES)
def test_oracle_soundness_exhaustive(make_core, value):
    core = make_core()
    plan = attacks.make_plan(core, 33)
    cache = core.cache.core
    phys = core.phys(plan.target_line << 6) >> 6
    for resident in (False, True, False, True):
        if resident:
            cache.fill_pair(plan.target_line, phys)
        else:
            cache.flush(plan.target_line)
        before = cache.contains(plan.target_line)
        cached, event = core.kernel.leakidt_probe(cache, core.rng, plan.target_line, value, plan.pa_line,
                                                  plan.pa_phys, plan.pb_line, plan.pb_phys, 0.0, 0.0)
        assert bool(cached) is resident and event == 0
        assert cache.contains(plan.target_line) == before
        assert not cache.contains(plan.pa_line) and not cache.contains(plan.pb_line)


def test_oracle_soundness_all_vectors(make_core):
    core = make_core()
    for v in range(256):
        for resident in (False, True):
            core.reset()
            if resident:
                core.deliver_interrupt(v)
            assert attacks.leakidt_probe(core, _target(core, v), _probes(core, v)) is resident


def test_eviction_set(make_core):
    core = make_core()
    line = core.idt.base + 38 * 64
    es = attacks.build_eviction_set(core, line)
    assert len(es.members) == 8
    assert all(cache_line_of(m).set_index == 38 for m in es.members)


def test_eviction_set_small_heap():
    core = Core(SimConfig(user_heap_pages=4))
    with pytest.raises(InsufficientUserMemory):
        attacks.build_eviction_set(core, core.idt.base)
    one_way = Core(SimConfig(user_heap_pages=4, l1d_ways=1))
    assert len(attacks.build_eviction_set(one_way, one_way.idt.base).members) == 1


def test_evict(make_core):
    core = make_core()
    line = core.idt_line(33)
    es = attacks.build_eviction_set(core, line)
    attacks.evict(core, es)
    assert not core.cache.contains(line)
    assert all(core.cache.contains(m) for m in es.members)
    core.deliver_interrupt(33)
    core.cache.access(line, core.phys(line))  # make the target most recently used
    attacks.evict(core, es)
    assert not core.cache.contains(line)


def test_monitor_single_interrupt(make_core):
    core = make_core()
    cfg = core.config
    tr = attacks.monitor(core, 33, 3_000_000, Schedule.interrupts([1_000_000], 33))
    assert len(tr) == 1
    assert 1_000_000 <= tr.times[0] <= 1_000_000 + cfg.probe_cost + cfg.isr_cost


def test_monitor_quiet(make_core):
    assert len(attacks.monitor(make_core(), 33, 10_000_000)) == 0


def test_monitor_uses_queue(make_core):
    core = make_core()
    core.schedule([Event.interrupt(100_000, 34), Event.interrupt(900_000, 200)])
    tr = attacks.monitor(core, 33, 1_000_000)
    assert len(tr) == 1
    assert [r.kind for r in core.log.records].count("interrupt") == 2
    assert tr.to_log().records[0].kind == "detect"


def test_monitor_periodic_mostly_detected():
    core = Core(SimConfig())
    times = np.arange(0, 10**7, 50_000)
    tr = attacks.monitor(core, 33, 10**7, Schedule.interrupts(times, 33))
    assert len(tr) >= 0.995 * len(times)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(7_600, 60_000), st.sampled_from([0, 33, 140, 255]))
def test_conservation(seed, spacing, vector):
    cfg = SimConfig(noise_p=0.0)
    n = 200
    times = 5_000 + spacing * np.arange(n) + np.random.default_rng(seed).integers(0, 50, n)
    core = Core(cfg)
    tr = attacks.monitor(core, vector, int(times[-1]) + 100_000, Schedule.interrupts(times, vector))
    assert len(tr) == n


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 0.05))
def test_kernel_matches_step_engine(seed, noise):
    g = np.random.default_rng(seed)
    cfg = SimConfig(noise_p=noise)
    t = np.sort(g.integers(0, 2_000_000, 60))
    sched = Schedule.merge(Schedule.interrupts(t[:40], 33), Schedule.interrupts(t[40:], int(g.integers(0, 256))))
    out = []
    for engine, ff in (("kernel", True), ("kernel", False), ("steps", False)):
        core = Core(cfg, seed=seed)
        tr = attacks.monitor(core, 33, 2_000_000, sched, engine=engine, fast_forward=ff)
        out.append((tr.times, core.clock))
    assert out[0] == out[1] == out[2]
    s = cache_line_of(Core(cfg).idt_line(33)).set_index
    pp = [attacks.prime_probe_monitor(Core(cfg, seed=seed), s, 2_000_000, sched, engine=e, fast_forward=ff).times
          for e, ff in (("kernel", True), ("kernel", False), ("steps", False))]
    assert pp[0] == pp[1] == pp[2]


def test_prime_probe_single_and_quiet(make_core):
    core = make_core()
    s = cache_line_of(core.idt_line(33)).set_index
    assert len(attacks.prime_probe_monitor(core, s, 5_000_000)) == 0
    core = make_core()
    tr = attacks.prime_probe_monitor(core, s, 5_000_000, Schedule.interrupts([2_000_000], 33))
    assert len(tr) == 1


def test_prime_probe_double_counts_self_conflicts(make_core):
    core = make_core()
    s = cache_line_of(core.idt_line(33)).set_index
    addr = core.space.heap_page(30) + s * 64
    sched = Schedule.accesses(np.arange(10_000, 5_000_000, 50_000), addr)
    tr = attacks.prime_probe_monitor(core, s, 5_000_000, sched)
    assert len(tr) > 0  # every detection is a false positive


def test_detection_trace_invariant():
    with pytest.raises(ValueError):
        attacks.DetectionTrace(1, [5, 5])


def _template_factory(cfg):
    return lambda k: Core(cfg, seed=k)


def test_template_finds_vector():
    cfg = SimConfig()
    window = 300_000_000
    induce = Schedule.interrupts(np.arange(0, window, 3_000_000), 35)
    timer = Schedule.interrupts(np.arange(1234, window, 12_000_000), 236)
    res = attacks.template_idt(_template_factory(cfg), induce, window, timer)
    assert res.vector == 35 and res.exact and list(res.block) == list(range(32, 40))


def test_template_no_traffic():
    with pytest.raises(NoDistinctEntry):
        attacks.template_idt(_template_factory(SimConfig()), Schedule.empty(), 30_000_000)


def test_template_shared_block_is_ambiguous():
    cfg = SimConfig()
    window = 300_000_000
    induce = Schedule.interrupts(np.arange(0, window, 3_000_000), 35)
    bg = Schedule.interrupts(np.arange(777, window, 30_000_000), 33)
    res = attacks.template_idt(_template_factory(cfg), induce, window, bg)
    assert res.block.start == 32 and not res.exact and res.vector == 32
