"""Pure-Python simulation kernels.

This module is the fallback used when the compiled ``_kernel`` extension is
not available.  ``_kernel.pyx`` mirrors it function for function; both must
produce identical results for identical inputs (tests check this), so any
change here has to be reflected there.

All addresses handled here are *line numbers* (byte address >> 6), which keeps
kernel-half virtual addresses inside a signed 64-bit range.
"""

BACKEND = "python"

_MASK64 = (1 << 64) - 1

# Access result codes (shared with the compiled kernel).
HIT = -2
MISS = -1
SUPPRESSED = -3

EV_INTERRUPT = 0
EV_ACCESS = 1


def _ints(seq):
    return seq.tolist() if hasattr(seq, "tolist") else [int(x) for x in seq]


class SplitMix64:
    """Small counter-based PRNG so both backends share one random stream."""

    def __init__(self, seed=0):
        self.state = seed & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_double(self):
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


class CacheCore:
    """Set-associative storage with Tree-PLRU replacement.

    Tags are virtual line numbers (-1 means invalid); a physical line number is
    kept per way so uncachable ranges can be purged.  PLRU bits live in one
    integer per set, node ``i`` of the heap-ordered tree at bit ``i``; a set
    bit means "the victim is in the right subtree".
    """

    def __init__(self, sets, ways):
        if sets <= 0 or ways <= 0 or ways & (ways - 1):
            raise ValueError("sets must be positive and ways a power of two")
        if ways > 64:
            raise ValueError("at most 64 ways supported")
        self.sets = sets
        self.ways = ways
        self._tags = [-1] * (sets * ways)
        self._phys = [-1] * (sets * ways)
        self._bits = [0] * sets
        self._suppressed = []

    # -- PLRU helpers -------------------------------------------------------
    def _victim(self, s):
        base = s * self.ways
        tags = self._tags
        for w in range(self.ways):
            if tags[base + w] == -1:
                return w
        bits = self._bits[s]
        n = 0
        inner = self.ways - 1
        while n < inner:
            n = 2 * n + 1 + ((bits >> n) & 1)
        return n - inner

    def _touch(self, s, w):
        bits = self._bits[s]
        n = w + self.ways - 1
        while n > 0:
            p = (n - 1) >> 1
            if n == 2 * p + 1:
                bits |= 1 << p
            else:
                bits &= ~(1 << p)
            n = p
        self._bits[s] = bits

    def _find(self, line):
        s = line % self.sets
        base = s * self.ways
        tags = self._tags
        for w in range(self.ways):
            if tags[base + w] == line:
                return s, w
        return s, -1

    # -- public API ---------------------------------------------------------
    def is_suppressed(self, phys):
        for lo, hi in self._suppressed:
            if lo <= phys < hi:
                return True
        return False

    def add_suppressed(self, lo, hi):
        """Suppress fills for physical lines in ``[lo, hi)`` and purge them."""
        if hi <= lo:
            return
        self._suppressed.append((lo, hi))
        for i, p in enumerate(self._phys):
            if lo <= p < hi and self._tags[i] != -1:
                self._tags[i] = -1
                self._phys[i] = -1

    def suppressed_ranges(self):
        return list(self._suppressed)

    def access(self, line, phys):
        """Demand access; returns HIT, MISS, SUPPRESSED or the evicted line."""
        s, w = self._find(line)
        if w >= 0:
            self._touch(s, w)
            return HIT
        if self._suppressed and self.is_suppressed(phys):
            return SUPPRESSED
        w = self._victim(s)
        i = s * self.ways + w
        old = self._tags[i]
        self._tags[i] = line
        self._phys[i] = phys
        self._touch(s, w)
        return old if old != -1 else MISS

    def prefetch(self, line, phys):
        """Fill without touching PLRU state of an already resident line."""
        s, w = self._find(line)
        if w >= 0:
            return HIT
        return self.access(line, phys)

    def fill_pair(self, line, phys):
        """Demand fill plus the adjacent-line partner of the 128-byte pair."""
        self.access(line, phys)
        self.prefetch(line ^ 1, phys ^ 1)

    def flush(self, line):
        s, w = self._find(line)
        if w >= 0:
            i = s * self.ways + w
            self._tags[i] = -1
            self._phys[i] = -1

    def contains(self, line):
        return self._find(line)[1] >= 0

    def resident(self, s):
        base = s * self.ways
        return [t for t in self._tags[base:base + self.ways]]

    def plru_bits(self, s):
        return self._bits[s]

    def snapshot(self):
        return (tuple(self._tags), tuple(self._phys), tuple(self._bits))

    def reset(self):
        n = self.sets * self.ways
        self._tags = [-1] * n
        self._phys = [-1] * n
        self._bits = [0] * self.sets


# -- attacker loops -----------------------------------------------------------

def _deliver(cache, kind, arg, phys, vec_lines, vec_phys, foot_lines, foot_phys, nfoot):
    if kind == EV_INTERRUPT:
        cache.fill_pair(vec_lines[arg], vec_phys[arg])
        base = arg * nfoot
        for k in range(nfoot):
            cache.access(foot_lines[base + k], foot_phys[base + k])
    else:
        cache.access(arg, phys)


def leakidt_probe(cache, rng, target, target_byte, pa, pa_phys, pb, pb_phys,
                  noise_p, false_leak_p):
    """One oracle round decoded with Flush+Reload. Returns (cached, noise_event).

    noise_event is 1 when a resident target failed to leak and 2 when a
    non-resident target leaked spuriously.
    """
    cache.flush(pa)
    cache.flush(pb)
    value = target_byte if cache.contains(target) else 0
    event = 0
    if value != 0:
        if noise_p > 0.0 and rng.next_double() < noise_p:
            value = 0
            event = 1
    elif false_leak_p > 0.0 and rng.next_double() < false_leak_p:
        value = 0xFF
        event = 2
    if value != 0:
        cache.access(pb, pb_phys)
    else:
        cache.access(pa, pa_phys)
    cache.access(pa, pa_phys)
    cached = cache.access(pb, pb_phys) == HIT
    cache.flush(pa)
    cache.flush(pb)
    return cached, event


def evict_lines(cache, lines, phys, passes):
    lines = _ints(lines)
    phys = _ints(phys)
    for _ in range(passes):
        for i in range(len(lines)):
            cache.access(lines[i], phys[i])


def run_leakidt(cache, rng, plan, ev_times, ev_kinds, ev_args, ev_phys, t0, end):
    """LeakIDT monitoring loop over a time-sorted event list.

    Events at time <= t are delivered atomically (each interrupt costs
    ``isr_cost``) before the probe that starts at t.  Returns
    ``(detections, delivered_times, t, probes, noise_misses, false_leaks)``.
    """
    vec_lines = _ints(plan.vec_lines)
    vec_phys = _ints(plan.vec_phys)
    foot_lines = _ints(plan.foot_lines)
    foot_phys = _ints(plan.foot_phys)
    nfoot = plan.footprint_n
    ev_lines = _ints(plan.evset_lines)
    ev_lphys = _ints(plan.evset_phys)
    times = _ints(ev_times)
    kinds = _ints(ev_kinds)
    args = _ints(ev_args)
    phys = _ints(ev_phys)
    target = plan.target_line
    tbyte = plan.target_byte
    pa, pa_phys, pb, pb_phys = plan.pa_line, plan.pa_phys, plan.pb_line, plan.pb_phys
    probe_cost, evict_cost, isr_cost = plan.probe_cost, plan.evict_cost, plan.isr_cost
    noise_p, false_leak_p = plan.noise_p, plan.false_leak_p
    passes = plan.evict_passes
    fast = plan.fast_forward and false_leak_p <= 0.0

    dets = []
    delivered = []
    n = len(times)
    i = 0
    t = t0
    probes = misses = leaks = 0
    while True:
        while i < n and times[i] <= t:
            _deliver(cache, kinds[i], args[i], phys[i], vec_lines, vec_phys,
                     foot_lines, foot_phys, nfoot)
            delivered.append(t)
            if kinds[i] == EV_INTERRUPT:
                t += isr_cost
            i += 1
        if t >= end:
            break
        cached, event = leakidt_probe(cache, rng, target, tbyte, pa, pa_phys,
                                      pb, pb_phys, noise_p, false_leak_p)
        probes += 1
        if event == 1:
            misses += 1
        elif event == 2:
            leaks += 1
        if cached:
            dets.append(t)
            t += probe_cost
            evict_lines(cache, ev_lines, ev_lphys, passes)
            t += evict_cost
        else:
            t += probe_cost
            if fast and event == 0 and not cache.contains(target):
                # Quiet probes repeat an identical state change; jump to the
                # first probe boundary at or after the next event (or end).
                nxt = times[i] if i < n else end
                if nxt > end:
                    nxt = end
                if nxt > t:
                    k = (nxt - t + probe_cost - 1) // probe_cost
                    t += k * probe_cost
                    probes += k
    return dets, delivered, t, probes, misses, leaks


def run_prime_probe(cache, plan, ev_times, ev_kinds, ev_args, ev_phys, t0, end):
    """Prime+Probe loop on one set.  Returns ``(detections, delivered_times, t, rounds)``.

    Each round re-accesses the prime lines in a fixed order and counts misses;
    a round with at least ``pp_min_slow`` slow accesses counts as a detection.
    """
    vec_lines = _ints(plan.vec_lines)
    vec_phys = _ints(plan.vec_phys)
    foot_lines = _ints(plan.foot_lines)
    foot_phys = _ints(plan.foot_phys)
    nfoot = plan.footprint_n
    lines = _ints(plan.pp_lines)
    lphys = _ints(plan.pp_phys)
    m = len(lines)
    times = _ints(ev_times)
    kinds = _ints(ev_kinds)
    args = _ints(ev_args)
    phys = _ints(ev_phys)
    pp_cost, isr_cost = plan.pp_cost, plan.isr_cost
    min_slow = plan.pp_min_slow
    fast = plan.fast_forward

    for j in range(m):
        cache.access(lines[j], lphys[j])

    dets = []
    delivered = []
    n = len(times)
    i = 0
    t = t0
    rounds = 0
    while True:
        while i < n and times[i] <= t:
            _deliver(cache, kinds[i], args[i], phys[i], vec_lines, vec_phys,
                     foot_lines, foot_phys, nfoot)
            delivered.append(t)
            if kinds[i] == EV_INTERRUPT:
                t += isr_cost
            i += 1
        if t >= end:
            break
        slow = 0
        for j in range(m):
            if cache.access(lines[j], lphys[j]) != HIT:
                slow += 1
        rounds += 1
        if slow >= min_slow:
            dets.append(t)
        t += pp_cost
        if fast and slow == 0:
            nxt = times[i] if i < n else end
            if nxt > end:
                nxt = end
            if nxt > t:
                k = (nxt - t + pp_cost - 1) // pp_cost
                t += k * pp_cost
                rounds += k
    return dets, delivered, t, rounds
