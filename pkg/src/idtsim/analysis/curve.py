"""Missed interrupts as a function of interrupt spacing."""
from __future__ import annotations

import numpy as np

from ..attacks import monitor, prime_probe_monitor
from ..core_sim import Schedule
from ..mem_model import cache_line_of


def detection_curve(core_factory, spacings, n_interrupts: int = 10_000, vector: int = 33,
                    offset: int = 1_000, background: Schedule | None = None) -> list[tuple[int, int, int]]:
    """``(spacing, missed_leakidt, missed_pp)`` rows, ``missed = n - detections``.

    ``core_factory(attack, spacing)`` returns a fresh core; Prime+Probe watches
    the set of ``vector``'s IDT line.
    """
    spacings = [int(s) for s in spacings]
    if any(b < a for a, b in zip(spacings, spacings[1:])):
        raise ValueError("spacings must be sorted ascending")
    rows = []
    for spacing in spacings:
        if n_interrupts == 0:
            rows.append((spacing, 0, 0))
            continue
        times = offset + spacing * np.arange(n_interrupts, dtype=np.int64)
        duration = int(times[-1]) + spacing + 100_000
        sched = Schedule.interrupts(times, vector)
        if background is not None:
            sched = Schedule.merge(sched, background.before(duration))
        core = core_factory("leakidt", spacing)
        leak = monitor(core, vector, duration, sched, log=False)
        core = core_factory("pp", spacing)
        s = cache_line_of(core.idt_line(vector), core.config.l1d_sets).set_index
        pp = prime_probe_monitor(core, s, duration, sched, log=False)
        rows.append((spacing, max(n_interrupts - len(leak), 0), max(n_interrupts - len(pp), 0)))
    return rows
