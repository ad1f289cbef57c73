# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels; semantics mirror ``_kernel_py`` exactly."""

from cpython.mem cimport PyMem_Malloc, PyMem_Free
from libc.stdint cimport uint64_t, int64_t

BACKEND = "cython"

cdef enum:
    C_HIT = -2
    C_MISS = -1
    C_SUPPRESSED = -3

HIT = C_HIT
MISS = C_MISS
SUPPRESSED = C_SUPPRESSED

EV_INTERRUPT = 0
EV_ACCESS = 1


cdef class SplitMix64:
    cdef public uint64_t state

    def __init__(self, seed=0):
        self.state = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)

    cdef inline uint64_t _next(self):
        cdef uint64_t z
        self.state += <uint64_t>0x9E3779B97F4A7C15
        z = self.state
        z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
        return z ^ (z >> 31)

    cdef inline double _double(self):
        return <double>(self._next() >> 11) * (1.0 / 9007199254740992.0)

    def next_u64(self):
        return self._next()

    def next_double(self):
        return self._double()


cdef class CacheCore:
    cdef readonly int sets
    cdef readonly int ways
    cdef int64_t* _tags
    cdef int64_t* _phys
    cdef uint64_t* _bits
    cdef list _suppressed
    cdef int64_t* _sup
    cdef int _nsup

    def __cinit__(self, int sets, int ways):
        self._tags = NULL
        self._phys = NULL
        self._bits = NULL
        self._sup = NULL
        self._nsup = 0

    def __init__(self, int sets, int ways):
        if sets <= 0 or ways <= 0 or (ways & (ways - 1)):
            raise ValueError("sets must be positive and ways a power of two")
        if ways > 64:
            raise ValueError("at most 64 ways supported")
        self.sets = sets
        self.ways = ways
        self._tags = <int64_t*>PyMem_Malloc(sets * ways * sizeof(int64_t))
        self._phys = <int64_t*>PyMem_Malloc(sets * ways * sizeof(int64_t))
        self._bits = <uint64_t*>PyMem_Malloc(sets * sizeof(uint64_t))
        if self._tags == NULL or self._phys == NULL or self._bits == NULL:
            raise MemoryError()
        self._suppressed = []
        self.reset()

    def __dealloc__(self):
        PyMem_Free(self._tags)
        PyMem_Free(self._phys)
        PyMem_Free(self._bits)
        PyMem_Free(self._sup)

    def reset(self):
        cdef int i
        for i in range(self.sets * self.ways):
            self._tags[i] = -1
            self._phys[i] = -1
        for i in range(self.sets):
            self._bits[i] = 0

    cdef inline int _victim(self, int s):
        cdef int base = s * self.ways
        cdef int w, n = 0
        cdef int inner = self.ways - 1
        cdef uint64_t bits
        for w in range(self.ways):
            if self._tags[base + w] == -1:
                return w
        bits = self._bits[s]
        while n < inner:
            n = 2 * n + 1 + <int>((bits >> n) & 1)
        return n - inner

    cdef inline void _touch(self, int s, int w):
        cdef uint64_t bits = self._bits[s]
        cdef int n = w + self.ways - 1
        cdef int p
        while n > 0:
            p = (n - 1) >> 1
            if n == 2 * p + 1:
                bits |= (<uint64_t>1) << p
            else:
                bits &= ~((<uint64_t>1) << p)
            n = p
        self._bits[s] = bits

    cdef inline int _find(self, int64_t line, int* s_out):
        cdef int s = <int>(line % self.sets)
        cdef int base = s * self.ways
        cdef int w
        s_out[0] = s
        for w in range(self.ways):
            if self._tags[base + w] == line:
                return w
        return -1

    cdef inline bint _is_sup(self, int64_t phys):
        cdef int k
        for k in range(self._nsup):
            if self._sup[2 * k] <= phys < self._sup[2 * k + 1]:
                return True
        return False

    cdef int64_t _access(self, int64_t line, int64_t phys):
        cdef int s, w, i
        cdef int64_t old
        w = self._find(line, &s)
        if w >= 0:
            self._touch(s, w)
            return C_HIT
        if self._nsup and self._is_sup(phys):
            return C_SUPPRESSED
        w = self._victim(s)
        i = s * self.ways + w
        old = self._tags[i]
        self._tags[i] = line
        self._phys[i] = phys
        self._touch(s, w)
        return old if old != -1 else C_MISS

    cdef int64_t _prefetch(self, int64_t line, int64_t phys):
        cdef int s
        if self._find(line, &s) >= 0:
            return C_HIT
        return self._access(line, phys)

    cdef void _fill_pair(self, int64_t line, int64_t phys):
        self._access(line, phys)
        self._prefetch(line ^ 1, phys ^ 1)

    cdef void _flush(self, int64_t line):
        cdef int s, w
        w = self._find(line, &s)
        if w >= 0:
            self._tags[s * self.ways + w] = -1
            self._phys[s * self.ways + w] = -1

    cdef bint _contains(self, int64_t line):
        cdef int s
        return self._find(line, &s) >= 0

    def is_suppressed(self, int64_t phys):
        return self._is_sup(phys)

    def add_suppressed(self, int64_t lo, int64_t hi):
        cdef int i
        cdef int64_t* grown
        if hi <= lo:
            return
        self._suppressed.append((lo, hi))
        grown = <int64_t*>PyMem_Malloc(2 * (self._nsup + 1) * sizeof(int64_t))
        if grown == NULL:
            raise MemoryError()
        for i in range(2 * self._nsup):
            grown[i] = self._sup[i]
        grown[2 * self._nsup] = lo
        grown[2 * self._nsup + 1] = hi
        PyMem_Free(self._sup)
        self._sup = grown
        self._nsup += 1
        for i in range(self.sets * self.ways):
            if lo <= self._phys[i] < hi and self._tags[i] != -1:
                self._tags[i] = -1
                self._phys[i] = -1

    def suppressed_ranges(self):
        return list(self._suppressed)

    def access(self, int64_t line, int64_t phys):
        return self._access(line, phys)

    def prefetch(self, int64_t line, int64_t phys):
        return self._prefetch(line, phys)

    def fill_pair(self, int64_t line, int64_t phys):
        self._fill_pair(line, phys)

    def flush(self, int64_t line):
        self._flush(line)

    def contains(self, int64_t line):
        return self._contains(line)

    def resident(self, int s):
        cdef int w
        return [self._tags[s * self.ways + w] for w in range(self.ways)]

    def plru_bits(self, int s):
        return self._bits[s]

    def snapshot(self):
        cdef int i
        n = self.sets * self.ways
        return (tuple([self._tags[i] for i in range(n)]),
                tuple([self._phys[i] for i in range(n)]),
                tuple([self._bits[i] for i in range(self.sets)]))


cdef inline void _deliver(CacheCore cache, int kind, int64_t arg, int64_t phys,
                          int64_t[:] vec_lines, int64_t[:] vec_phys,
                          int64_t[:] foot_lines, int64_t[:] foot_phys, int nfoot):
    cdef int k
    cdef int64_t base
    if kind == 0:
        cache._fill_pair(vec_lines[arg], vec_phys[arg])
        base = arg * nfoot
        for k in range(nfoot):
            cache._access(foot_lines[base + k], foot_phys[base + k])
    else:
        cache._access(arg, phys)


cdef int _probe(CacheCore cache, SplitMix64 rng, int64_t target, int target_byte,
                int64_t pa, int64_t pa_phys, int64_t pb, int64_t pb_phys,
                double noise_p, double false_leak_p, int* event):
    cdef int value
    cdef bint cached
    cache._flush(pa)
    cache._flush(pb)
    value = target_byte if cache._contains(target) else 0
    event[0] = 0
    if value != 0:
        if noise_p > 0.0 and rng._double() < noise_p:
            value = 0
            event[0] = 1
    elif false_leak_p > 0.0 and rng._double() < false_leak_p:
        value = 0xFF
        event[0] = 2
    if value != 0:
        cache._access(pb, pb_phys)
    else:
        cache._access(pa, pa_phys)
    cache._access(pa, pa_phys)
    cached = cache._access(pb, pb_phys) == C_HIT
    cache._flush(pa)
    cache._flush(pb)
    return cached


def leakidt_probe(CacheCore cache, SplitMix64 rng, int64_t target, int target_byte,
                  int64_t pa, int64_t pa_phys, int64_t pb, int64_t pb_phys,
                  double noise_p, double false_leak_p):
    cdef int event = 0
    cdef bint cached = _probe(cache, rng, target, target_byte, pa, pa_phys, pb,
                              pb_phys, noise_p, false_leak_p, &event)
    return cached, event


def evict_lines(CacheCore cache, lines, phys, int passes):
    cdef int p, j
    cdef int64_t[:] l = _as_i64(lines)
    cdef int64_t[:] ph = _as_i64(phys)
    for p in range(passes):
        for j in range(l.shape[0]):
            cache._access(l[j], ph[j])


cdef int64_t[:] _as_i64(obj):
    import numpy as np
    return np.ascontiguousarray(obj, dtype=np.int64)


def run_leakidt(CacheCore cache, SplitMix64 rng, plan, ev_times, ev_kinds, ev_args,
                ev_phys, int64_t t0, int64_t end):
    cdef int64_t[:] vec_lines = _as_i64(plan.vec_lines)
    cdef int64_t[:] vec_phys = _as_i64(plan.vec_phys)
    cdef int64_t[:] foot_lines = _as_i64(plan.foot_lines)
    cdef int64_t[:] foot_phys = _as_i64(plan.foot_phys)
    cdef int nfoot = plan.footprint_n
    cdef int64_t[:] ev_lines = _as_i64(plan.evset_lines)
    cdef int64_t[:] ev_lphys = _as_i64(plan.evset_phys)
    cdef int64_t[:] times = _as_i64(ev_times)
    cdef int64_t[:] kinds = _as_i64(ev_kinds)
    cdef int64_t[:] args = _as_i64(ev_args)
    cdef int64_t[:] phys = _as_i64(ev_phys)
    cdef int64_t target = plan.target_line
    cdef int tbyte = plan.target_byte
    cdef int64_t pa = plan.pa_line, pa_phys = plan.pa_phys
    cdef int64_t pb = plan.pb_line, pb_phys = plan.pb_phys
    cdef int64_t probe_cost = plan.probe_cost, evict_cost = plan.evict_cost
    cdef int64_t isr_cost = plan.isr_cost
    cdef double noise_p = plan.noise_p, false_leak_p = plan.false_leak_p
    cdef int passes = plan.evict_passes
    cdef bint fast = plan.fast_forward and false_leak_p <= 0.0
    cdef Py_ssize_t n = times.shape[0], i = 0
    cdef int64_t t = t0, nxt, k, probes = 0, misses = 0, leaks = 0
    cdef int event = 0, p, j
    cdef bint cached
    dets = []
    delivered = []
    while True:
        while i < n and times[i] <= t:
            _deliver(cache, <int>kinds[i], args[i], phys[i], vec_lines, vec_phys,
                     foot_lines, foot_phys, nfoot)
            delivered.append(t)
            if kinds[i] == 0:
                t += isr_cost
            i += 1
        if t >= end:
            break
        cached = _probe(cache, rng, target, tbyte, pa, pa_phys, pb, pb_phys,
                        noise_p, false_leak_p, &event)
        probes += 1
        if event == 1:
            misses += 1
        elif event == 2:
            leaks += 1
        if cached:
            dets.append(t)
            t += probe_cost
            for p in range(passes):
                for j in range(ev_lines.shape[0]):
                    cache._access(ev_lines[j], ev_lphys[j])
            t += evict_cost
        else:
            t += probe_cost
            if fast and event == 0 and not cache._contains(target):
                nxt = times[i] if i < n else end
                if nxt > end:
                    nxt = end
                if nxt > t:
                    k = (nxt - t + probe_cost - 1) // probe_cost
                    t += k * probe_cost
                    probes += k
    return dets, delivered, t, probes, misses, leaks


def run_prime_probe(CacheCore cache, plan, ev_times, ev_kinds, ev_args, ev_phys,
                    int64_t t0, int64_t end):
    cdef int64_t[:] vec_lines = _as_i64(plan.vec_lines)
    cdef int64_t[:] vec_phys = _as_i64(plan.vec_phys)
    cdef int64_t[:] foot_lines = _as_i64(plan.foot_lines)
    cdef int64_t[:] foot_phys = _as_i64(plan.foot_phys)
    cdef int nfoot = plan.footprint_n
    cdef int64_t[:] lines = _as_i64(plan.pp_lines)
    cdef int64_t[:] lphys = _as_i64(plan.pp_phys)
    cdef Py_ssize_t m = lines.shape[0]
    cdef int64_t[:] times = _as_i64(ev_times)
    cdef int64_t[:] kinds = _as_i64(ev_kinds)
    cdef int64_t[:] args = _as_i64(ev_args)
    cdef int64_t[:] phys = _as_i64(ev_phys)
    cdef int64_t pp_cost = plan.pp_cost, isr_cost = plan.isr_cost
    cdef int min_slow = plan.pp_min_slow
    cdef bint fast = plan.fast_forward
    cdef Py_ssize_t n = times.shape[0], i = 0, j
    cdef int64_t t = t0, nxt, k, rounds = 0
    cdef int slow
    for j in range(m):
        cache._access(lines[j], lphys[j])
    dets = []
    delivered = []
    while True:
        while i < n and times[i] <= t:
            _deliver(cache, <int>kinds[i], args[i], phys[i], vec_lines, vec_phys,
                     foot_lines, foot_phys, nfoot)
            delivered.append(t)
            if kinds[i] == 0:
                t += isr_cost
            i += 1
        if t >= end:
            break
        slow = 0
        for j in range(m):
            if cache._access(lines[j], lphys[j]) != C_HIT:
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
