import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idtsim.config import SimConfig
from idtsim.core_sim import Core, Event, EventKind, EventQueue, Latency, Schedule, SimLog
from idtsim.errors import ProtectionFault
from idtsim.mem_model import vector_block


def test_interrupt_fills_pair_and_footprint(make_core):
    core = make_core()
    line = core.idt_line(33)
    core.deliver_interrupt(33)
    assert core.cache.contains(line) and core.cache.contains(line ^ 64)
    assert all(core.cache.contains(a) for a in core.space.footprint[33])
    assert core.clock == core.config.isr_cost


def test_interrupt_touches_only_pair_and_footprint(make_core):
    core = make_core()
    core.deliver_interrupt(100)
    resident = {a for s in range(64) for a in core.cache.resident_lines(s)}
    line = core.idt_line(100)
    assert resident == {line, line ^ 64, *core.space.footprint[100]}


def test_uncachable_idt_blocks_interrupt_fill(make_core):
    core = make_core()
    core.mitigate()
    core.deliver_interrupt(33)
    assert not core.cache.contains(core.idt_line(33))


def test_two_interrupts_two_pairs(make_core):
    core = make_core()
    core.deliver_interrupt(0)
    core.deliver_interrupt(255)
    for v in (0, 255):
        assert core.cache.contains(core.idt_line(v))
    assert core.idt_line(0) != core.idt_line(255)


def test_transient_read(make_core):
    core = make_core()
    addr = core.idt.base + 16 * 33
    assert core.transient_read(addr) == 0
    core.deliver_interrupt(33)
    before = core.cache.snapshot()
    assert core.transient_read(addr) == core.idt.entries[33][0] & 0xFF
    assert core.cache.snapshot() == before


def test_transient_read_unmapped_secret(make_core):
    core = make_core()
    secret = core.space.secret_pages[0]
    assert core.transient_read(secret) == 0
    assert core.last_fault == "unmapped"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 255), max_size=6), st.integers(0, 4095))
def test_transient_read_never_mutates(vectors, offset):
    core = Core(SimConfig(noise_p=0.0))
    for v in vectors:
        core.deliver_interrupt(v)
    before = core.cache.snapshot()
    core.transient_read(core.idt.base + offset)
    assert core.cache.snapshot() == before


def test_user_access(make_core):
    core = make_core()
    probe = core.space.probe_base
    assert core.user_access(probe) is Latency.MISS
    assert core.user_access(probe) is Latency.HIT
    core.user_flush(probe)
    assert core.user_access(probe) is Latency.MISS
    with pytest.raises(ProtectionFault):
        core.user_access(core.idt.base)


def test_user_access_eviction(make_core):
    core = make_core()
    pages = [core.space.heap_page(i) for i in range(9)]
    for p in pages:
        core.user_access(p)
    assert core.user_access(pages[0]) is Latency.MISS


def test_event_queue_tiebreak():
    q = EventQueue()
    q.push(Event.attacker_step(5, lambda c: None, "a"))
    q.push(Event.interrupt(5, 33))
    q.push(Event.interrupt(3, 1))
    q.push(Event.workload_tick(5))
    order = [q.pop() for _ in range(4)]
    assert [e.time for e in order] == [3, 5, 5, 5]
    assert [e.kind for e in order[1:]] == [EventKind.INTERRUPT, EventKind.ATTACKER_STEP, EventKind.WORKLOAD_TICK]


def test_run_empty_and_periodic(make_core):
    core = make_core()
    assert len(core.run()) == 0
    core.schedule(Event.interrupt(50_000 * k, 33) for k in range(10))
    log = core.run()
    assert [r.time for r in log] == [50_000 * k for k in range(10)]
    assert all(r.kind == "interrupt" and r.vector_or_addr == "33" for r in log)


def test_run_tiebreak_order(make_core):
    core = make_core()
    core.schedule([
        Event.attacker_step(100, lambda c: c.cache.contains(c.idt_line(7)), "probe"),
        Event.interrupt(100, 7),
        Event.interrupt(10, 200),
    ])
    log = core.run()
    assert [(r.kind, r.vector_or_addr) for r in log] == [("interrupt", "200"), ("interrupt", "7"),
                                                          ("attacker", "probe")]
    assert log.records[-1].detail == "True"


def test_run_until(make_core):
    core = make_core()
    core.schedule([Event.interrupt(10, 1), Event.interrupt(1000, 2)])
    assert len(core.run(until=500)) == 1
    assert len(core.queue) == 1


def _det_run(seed):
    core = Core(SimConfig(), seed=seed)
    core.schedule(Event.interrupt(7919 * k, k % 256) for k in range(300))
    return core.run().to_csv()


def test_run_deterministic():
    assert _det_run(3) == _det_run(3)


def test_simlog_csv_roundtrip():
    log = SimLog()
    log.append(1, "interrupt", 33)
    log.append(2, "victim", 0x7F0000000040, "x")
    text = log.to_csv()
    assert text.splitlines()[0] == "time_cycles,kind,vector_or_addr,detail"
    assert SimLog.from_csv(text).to_csv() == text


def test_schedule_merge_sorted():
    a = Schedule.interrupts([5, 1], 3)
    a = Schedule.merge(a)
    b = Schedule.accesses([1, 3], 0x7F0000000000)
    m = Schedule.merge(a, b)
    assert m.times.tolist() == [1, 1, 3, 5]
    assert m.kinds.tolist() == [0, 1, 1, 0]
    ev = m.to_events()
    assert Schedule.from_events(ev).times.tolist() == m.times.tolist()


def test_vector_block_pairing(make_core):
    core = make_core()
    for v in (0, 35, 255):
        core.reset()
        core.deliver_interrupt(v)
        for u in range(256):
            assert core.cache.contains(core.idt_line(u)) == (u in vector_block(v))
