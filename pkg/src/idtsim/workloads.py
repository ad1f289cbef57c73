"""Seeded victim activity: interrupt sources, website traces, keystrokes, background."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_sim import Schedule
from .mem_model import TIMER_VECTOR
from .seeding import rng as make_rng

N_BINS = 400
BIN_US = 5000

KEYBOARD_VECTOR = 35
NIC_VECTOR = 37  # shares the keyboard's 8-entry block
WEB_NIC_VECTOR = 41
STRESS_VECTORS = (49, 65, 97)


def cycles_per_second(cycles_per_us: int) -> int:
    return cycles_per_us * 1_000_000


@dataclass(frozen=True)
class InterruptSource:
    """One device.  ``kind`` is ``periodic`` (``period`` cycles), ``poisson``
    (``rate_hz``) or ``trace`` (explicit sorted ``times``, relative to start)."""

    vector: int
    kind: str
    period: int = 0
    rate_hz: float = 0.0
    times: tuple[int, ...] = ()
    phase: int = 0
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.vector < 256:
            raise ValueError("vector out of range")
        if self.kind == "periodic" and self.period <= 0:
            raise ValueError("periodic source needs a positive period")
        if self.kind == "poisson" and self.rate_hz <= 0:
            raise ValueError("poisson source needs a positive rate")
        if self.kind == "trace" and any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must be sorted")
        if self.kind not in ("periodic", "poisson", "trace"):
            raise ValueError(f"unknown source kind {self.kind!r}")

    @classmethod
    def periodic(cls, vector: int, period: int, phase: int = 0, name: str = "") -> "InterruptSource":
        return cls(vector, "periodic", period=int(period), phase=int(phase), name=name)

    @classmethod
    def poisson(cls, vector: int, rate_hz: float, name: str = "") -> "InterruptSource":
        return cls(vector, "poisson", rate_hz=float(rate_hz), name=name)

    @classmethod
    def trace(cls, vector: int, times, name: str = "") -> "InterruptSource":
        return cls(vector, "trace", times=tuple(int(t) for t in times), name=name)

    def schedule(self, duration: int, seed: int = 0, cycles_per_us: int = 3000) -> Schedule:
        """Interrupts in ``[0, duration)``; Poisson draws use a sub-seed of ``seed``."""
        if self.kind == "periodic":
            times = np.arange(self.phase % self.period, duration, self.period, dtype=np.int64)
        elif self.kind == "trace":
            times = np.array([t for t in self.times if 0 <= t < duration], dtype=np.int64)
        else:
            g = make_rng(seed, "source", self.name or self.vector, self.vector)
            mean_gap = cycles_per_second(cycles_per_us) / self.rate_hz
            n_guess = int(duration / mean_gap * 1.2) + 16
            gaps = g.exponential(mean_gap, n_guess)
            t = np.cumsum(gaps)
            while t[-1] < duration:
                t = np.concatenate([t, t[-1] + np.cumsum(g.exponential(mean_gap, n_guess))])
            times = np.floor(t[t < duration]).astype(np.int64)
        return Schedule.interrupts(times, self.vector)


def sources_schedule(sources, duration: int, seed: int = 0, cycles_per_us: int = 3000) -> Schedule:
    return Schedule.merge(*(s.schedule(duration, seed, cycles_per_us) for s in sources))


def gen_background(scenario: str = "quiet", *, cycles_per_us: int = 3000, timer_hz: float = 250.0,
                   nic_vector: int = NIC_VECTOR, nic_period_s: float = 2.0,
                   stress_vectors=STRESS_VECTORS[:2], stress_rate_hz: float = 400.0) -> list[InterruptSource]:
    """Background devices: ``quiet`` (timer), ``stress`` (timer + Poisson load),
    ``realistic`` (timer + Poisson load + a NIC firing every ``nic_period_s``)."""
    if scenario not in ("quiet", "stress", "realistic"):
        raise ValueError(f"unknown background scenario {scenario!r}")
    cps = cycles_per_second(cycles_per_us)
    out = [InterruptSource.periodic(TIMER_VECTOR, int(cps / timer_hz), name="timer")]
    if scenario in ("stress", "realistic"):
        out += [InterruptSource.poisson(v, stress_rate_hz, name=f"stress{i}")
                for i, v in enumerate(stress_vectors)]
    if scenario == "realistic":
        out.append(InterruptSource.periodic(nic_vector, int(cps * nic_period_s),
                                            phase=int(cps * 0.7), name="nic"))
    return out


# -- website profiles ----------------------------------------------------------------

@dataclass(frozen=True)
class WebsiteProfile:
    label: str
    bins: tuple[float, ...]
    dispersion: float = 1.0

    def __post_init__(self):
        if len(self.bins) != N_BINS:
            raise ValueError(f"profile needs {N_BINS} bins")
        if any(b < 0 for b in self.bins):
            raise ValueError("expected counts must be non-negative")
        if self.dispersion < 0:
            raise ValueError("dispersion must be non-negative")

    def with_dispersion(self, dispersion: float) -> "WebsiteProfile":
        return WebsiteProfile(self.label, self.bins, dispersion)


def _walk(g: np.random.Generator, rho: float = 0.9) -> np.ndarray:
    """Mean-reverting (AR(1)) walk over the bins, scaled to unit variance."""
    steps = g.normal(0.0, 1.0, N_BINS)
    w = np.empty(N_BINS)
    w[0] = steps[0]
    for i in range(1, N_BINS):
        w[i] = rho * w[i - 1] + steps[i]
    w -= w.mean()
    sd = w.std()
    return w / sd if sd > 0 else w


def profile_library(n: int, seed: int, separability: float = 0.18, level: float = 3.0,
                    dispersion: float = 1.0) -> list[WebsiteProfile]:
    """``n`` synthetic sites: a shared load shape plus ``separability`` times a
    site-specific random walk, scaled to ``level`` interrupts per bin."""
    base = _walk(make_rng(seed, "profiles", "base"), rho=0.99)
    out = []
    for i in range(n):
        own = _walk(make_rng(seed, "profiles", i))
        means = np.clip(level * (1.0 + 0.4 * base + separability * own), 0.0, None)
        out.append(WebsiteProfile(f"site{i:03d}", tuple(float(m) for m in means), dispersion))
    return out


def gen_website_trace(profile: WebsiteProfile, seed: int, cycles_per_us: int = 3000) -> np.ndarray:
    """Network-interrupt times (cycles) within ``[0, 2 s)``.

    Per bin the count is ``round(mean + d * (Poisson(mean) - mean))`` clipped at
    zero, so ``d = 1`` is Poisson and ``d = 0`` is exactly the mean.
    """
    g = make_rng(seed, "website", profile.label)
    means = np.asarray(profile.bins)
    draws = g.poisson(means)
    counts = np.floor(means + profile.dispersion * (draws - means) + 0.5)
    counts = np.clip(counts, 0, None).astype(np.int64)
    bin_cycles = BIN_US * cycles_per_us
    starts = np.repeat(np.arange(N_BINS, dtype=np.int64) * bin_cycles, counts)
    offsets = np.floor(g.random(len(starts)) * bin_cycles).astype(np.int64)
    return np.sort(starts + offsets)


def write_profiles(path, profiles) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"bin{i}" for i in range(N_BINS)] + ["dispersion"])
        for p in profiles:
            w.writerow([p.label] + [repr(b) for b in p.bins] + [repr(p.dispersion)])


def read_profiles(path) -> list[WebsiteProfile]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: missing profile header")
    return [WebsiteProfile(r[0], tuple(float(x) for x in r[1:-1]), float(r[-1])) for r in rows[1:]]


# -- keystrokes -------------------------------------------------------------------

@dataclass(frozen=True)
class KeystrokeTiming:
    median_gap_ms: float = 150.0
    sigma: float = 0.4
    min_gap_ms: float = 80.0
    max_gap_ms: float = 300.0
    hold_ms: tuple[float, float] = (20.0, 35.0)
    lead_ms: float = 50.0  # first key-down after this much idle time
    stdin_latency_us: float = 0.0  # key-down interrupt -> input reaches stdin


@dataclass
class KeystrokeScript:
    key_times: list[int]  # ground truth (stdin arrival), cycles
    hold_times: list[int]
    interrupt_times: list[int] = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.key_times, self.key_times[1:])):
            raise ValueError("key times must be strictly increasing")
        if any(h <= 0 for h in self.hold_times):
            raise ValueError("hold times must be positive")

    def __len__(self) -> int:
        return len(self.key_times)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key_index", "time_cycles"])
        for i, t in enumerate(self.key_times):
            w.writerow([i, t])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "KeystrokeScript":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["key_index", "time_cycles"]:
            raise ValueError("missing keystroke header")
        times = [int(r[1]) for r in rows[1:]]
        return cls(times, [1] * len(times))


def gen_keystrokes(n_keys: int, timing: KeystrokeTiming | None = None, seed: int = 0, *,
                   cycles_per_us: int = 3000, vector: int = KEYBOARD_VECTOR) -> tuple[KeystrokeScript, Schedule]:
    """``n_keys`` presses; each yields a key-down and a key-up interrupt."""
    if n_keys < 1:
        raise ValueError("n_keys must be at least 1")
    timing = timing or KeystrokeTiming()
    g = make_rng(seed, "keystrokes")
    gaps = []
    mu = np.log(timing.median_gap_ms)
    while len(gaps) < n_keys - 1:
        gap = float(np.exp(g.normal(mu, timing.sigma)))
        if timing.min_gap_ms <= gap <= timing.max_gap_ms:
            gaps.append(gap)
    cyc_ms = cycles_per_us * 1000
    press_ms = timing.lead_ms + np.concatenate([[0.0], np.cumsum(gaps)])
    press = np.floor(press_ms * cyc_ms).astype(np.int64)
    lo, hi = timing.hold_ms
    holds = np.floor(g.uniform(lo, hi, n_keys) * cyc_ms).astype(np.int64)
    lat = int(round(timing.stdin_latency_us * cycles_per_us))
    irq = np.sort(np.concatenate([press, press + holds]))
    script = KeystrokeScript((press + lat).tolist(), holds.tolist(), irq.tolist())
    return script, Schedule.interrupts(irq, vector)


def write_text(path, text: str) -> None:
    Path(path).write_text(text)
