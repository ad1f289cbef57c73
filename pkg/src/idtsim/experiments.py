"""Named, seeded experiments.  Each ``run_*`` returns a metrics dict and,
given an output directory, writes its data files there."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, attacks
from ._backend import BACKEND
from .analysis import bin_trace, confusion_and_pr, detection_curve, match_events, match_keystrokes, train_forest
from .analysis.forest import ForestParams
from .config import SimConfig
from .core_sim import Core, Schedule
from .errors import ProfileLibraryMissing, UsageError
from .mem_model import PAGE, cache_line_of
from .seeding import rng as make_rng
from .seeding import sub_seed
from .workloads import (
    KEYBOARD_VECTOR,
    WEB_NIC_VECTOR,
    InterruptSource,
    KeystrokeTiming,
    gen_background,
    gen_keystrokes,
    gen_website_trace,
    profile_library,
    read_profiles,
    sources_schedule,
)

EXPERIMENTS = ("distinguish", "curve", "compare", "template", "fingerprint", "keystrokes", "mitigate")

DEFAULTS = {
    "distinguish": {"trials": 100_000, "vector": 33},
    "curve": {
        "spacings": [2000, 4000, 6000, 8000, 10000, 12500, 15000, 20000, 25000, 30000, 40000, 50000,
                     75000, 100000],
        "n_interrupts": 10_000,
        "vector": 33,
    },
    "compare": {"measurements": 100_000, "victim_events": 50_000, "stress_p": 0.2, "stress_lines": 4,
                "vector": 33, "tolerance": 1},
    "template": {"vector": KEYBOARD_VECTOR, "rate_hz": 1000.0, "window_ms": 100.0, "runs": 20,
                 "background": "quiet", "k_sigma": 5.0},
    "fingerprint": {"traces_per_profile": 100, "separability": 0.18, "level": 3.0, "dispersion": 1.0,
                    "train_per_profile": 70, "n_trees": 100, "vector": WEB_NIC_VECTOR,
                    "background": "quiet", "profile_file": ""},
    "keystrokes": {"runs": 3, "n_keys": 200, "window_us": 40_000.0, "vector": KEYBOARD_VECTOR,
                   "stdin_latency_us": 400.0, "median_gap_ms": 150.0, "sigma": 0.4},
    "mitigate": {"interrupts": 10_000, "measurements": 100_000, "vector": 33},
}


@dataclass
class ExperimentSpec:
    name: str
    config: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    out: Path | None = None
    profiles: int = 15
    mitigate: bool = False

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {self.name!r}")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    @property
    def params(self) -> dict:
        return self.config.experiment(self.name, DEFAULTS[self.name])

    def core(self, *names, config: SimConfig | None = None, mitigate: bool | None = None) -> Core:
        core = Core(config or self.config, seed=sub_seed(self.seed, self.name, *names))
        if self.mitigate if mitigate is None else mitigate:
            core.mitigate()
        return core

    def write(self, filename: str, text: str) -> None:
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / filename).write_text(text)


def _round(x: float) -> float:
    return float(f"{x:.12g}")


# -- distinguish -----------------------------------------------------------------

def run_distinguish(spec: ExperimentSpec) -> dict:
    p = spec.params
    n = int(p["trials"])
    if n <= 0:
        raise UsageError("distinguish needs at least one trial")
    core = spec.core()
    cached = attacks.oracle_trials(core, p["vector"], n, cached=True)
    uncached = attacks.oracle_trials(core, p["vector"], n, cached=False)
    return {
        "trials": n,
        "cached_rate": _round(cached / n),
        "uncached_rate": _round((n - uncached) / n),
        "uncached_false_positive_rate": _round(uncached / n),
    }


# -- curve ------------------------------------------------------------------------

def run_curve(spec: ExperimentSpec) -> dict:
    p = spec.params
    spacings = [int(s) for s in p["spacings"]]
    if any(b < a for a, b in zip(spacings, spacings[1:])):
        raise UsageError("spacings must be sorted ascending")
    rows = detection_curve(lambda attack, s: spec.core(attack, s), spacings, int(p["n_interrupts"]),
                           vector=int(p["vector"]))
    lines = ["spacing_cycles,missed_leakidt,missed_pp"] + [f"{s},{a},{b}" for s, a, b in rows]
    spec.write("curve.csv", "\n".join(lines) + "\n")
    return {"n_interrupts": int(p["n_interrupts"]),
            "rows": [{"spacing_cycles": s, "missed_leakidt": a, "missed_pp": b} for s, a, b in rows]}


# -- compare / mitigate ------------------------------------------------------------

def lockstep_config(config: SimConfig) -> SimConfig:
    """One probe (or Prime+Probe round) per time unit; delivery and eviction free."""
    return config.replace(probe_cost=1, pp_cost=1, isr_cost=0, evict_cost=0)


def victim_schedule(core: Core, seed: int, measurements: int, victim_events: int, vector: int,
                    stress_p: float = 0.0, stress_lines: int = 0) -> tuple[Schedule, np.ndarray]:
    """Victim interrupts on distinct random slots, plus optional stress accesses
    from another process to lines in the target's cache set."""
    g = make_rng(seed, "victim")
    if victim_events > measurements:
        raise UsageError("more victim events than measurements")
    truth = np.sort(g.choice(measurements, victim_events, replace=False)).astype(np.int64)
    parts = [Schedule.interrupts(truth, vector)]
    if stress_p > 0 and stress_lines > 0:
        offset = core.idt_line(vector) & (PAGE - 1)
        ways = core.config.l1d_ways
        if core.space.heap_pages < 2 * ways + stress_lines:
            raise UsageError("user heap too small for the stress pool")
        pool = [core.space.heap_page(2 * ways + i) + offset for i in range(stress_lines)]
        slots = np.flatnonzero(g.random(measurements) < stress_p)
        which = g.integers(0, stress_lines, len(slots))
        for i, addr in enumerate(pool):
            parts.append(Schedule.accesses(slots[which == i], addr))
    return Schedule.merge(*parts), truth


def _compare_pair(spec: ExperimentSpec, p: dict, mitigate: bool | None = None, stress: bool = True):
    cfg = lockstep_config(spec.config)
    vector = int(p["vector"])
    m = int(p["measurements"])
    leak_core = spec.core("leakidt", config=cfg, mitigate=mitigate)
    sched, truth = victim_schedule(
        leak_core, sub_seed(spec.seed, spec.name), m,
        int(p.get("victim_events", p.get("interrupts", 0))), vector,
        p.get("stress_p", 0.0) if stress else 0.0, int(p.get("stress_lines", 0)) if stress else 0,
    )
    leak = attacks.monitor(leak_core, vector, m, sched, log=False)
    pp_core = spec.core("pp", config=cfg, mitigate=mitigate)
    s = cache_line_of(pp_core.idt_line(vector), cfg.l1d_sets).set_index
    pp = attacks.prime_probe_monitor(pp_core, s, m, sched, log=False)
    return leak, pp, truth, leak_core


def run_compare(spec: ExperimentSpec) -> dict:
    p = spec.params
    leak, pp, truth, _ = _compare_pair(spec, p)
    tol = int(p["tolerance"])
    r_leak = match_events(leak, truth, tol, cycles_per_us=1)
    r_pp = match_events(pp, truth, tol, cycles_per_us=1)
    return {"measurements": int(p["measurements"]), "victim_events": len(truth),
            "leakidt": _report_dict(r_leak), "prime_probe": _report_dict(r_pp)}


def _report_dict(r) -> dict:
    d = r.to_dict()
    return {k: _round(v) if isinstance(v, float) else v for k, v in d.items()}


def run_mitigate(spec: ExperimentSpec) -> dict:
    p = spec.params
    m = int(p["measurements"])
    out = {"interrupts": int(p["interrupts"]), "measurements": m}
    for label, flag in (("mitigated", True), ("control", False)):
        leak, _pp, truth, core = _compare_pair(spec, p, mitigate=flag, stress=False)
        r = match_events(leak, truth, 1, cycles_per_us=1)
        out[label] = {"detections": len(leak), "recall": _round(r.recall),
                      "probes": int(core.stats["probes"]), "false_leaks": int(core.stats["false_leaks"])}
    return out


# -- template ---------------------------------------------------------------------

def run_template(spec: ExperimentSpec) -> dict:
    p = spec.params
    cfg = spec.config
    window = int(p["window_ms"] * 1000 * cfg.cycles_per_us)
    vector = int(p["vector"])
    results = []
    for run in range(int(p["runs"])):
        seed = sub_seed(spec.seed, "template", run)
        bg_sources = gen_background(p["background"], cycles_per_us=cfg.cycles_per_us)
        phase = int(make_rng(seed, "phase").integers(0, bg_sources[0].period))
        bg_sources[0] = InterruptSource.periodic(bg_sources[0].vector, bg_sources[0].period, phase, "timer")
        background = sources_schedule(bg_sources, window, seed, cfg.cycles_per_us)
        induce = InterruptSource.poisson(vector, p["rate_hz"], name="induced").schedule(
            window, seed, cfg.cycles_per_us)
        res = attacks.template_idt(lambda k: spec.core("template", run, k), induce, window, background,
                                   k_sigma=float(p["k_sigma"]))
        results.append({"run": run, "vector": res.vector, "block_start": res.block.start, "exact": res.exact})
    hits = sum(r["block_start"] == vector - vector % 8 for r in results)
    return {"runs": len(results), "block_hit_rate": _round(hits / max(len(results), 1)), "results": results}


# -- fingerprint ------------------------------------------------------------------

def load_profiles(spec: ExperimentSpec, p: dict):
    if p["profile_file"]:
        path = Path(p["profile_file"])
        if not path.exists():
            raise ProfileLibraryMissing(f"profile library {path} not found")
        profiles = read_profiles(path)[: spec.profiles]
    else:
        profiles = profile_library(spec.profiles, sub_seed(spec.seed, "profiles"), p["separability"],
                                   p["level"], p["dispersion"])
    if not profiles:
        raise ProfileLibraryMissing("empty profile library")
    return profiles


def collect_traces(spec: ExperimentSpec, profiles, p: dict) -> tuple[list[str], np.ndarray]:
    cfg = spec.config
    window = 400 * 5000 * cfg.cycles_per_us
    vector = int(p["vector"])
    labels, feats = [], []
    for profile in profiles:
        for k in range(int(p["traces_per_profile"])):
            seed = sub_seed(spec.seed, "trace", profile.label, k)
            web = Schedule.interrupts(gen_website_trace(profile, seed, cfg.cycles_per_us), vector)
            bg = sources_schedule(gen_background(p["background"], cycles_per_us=cfg.cycles_per_us),
                                  window, seed, cfg.cycles_per_us)
            core = spec.core("trace", profile.label, k)
            trace = attacks.monitor(core, vector, window, Schedule.merge(web, bg), log=False)
            labels.append(profile.label)
            feats.append(bin_trace(trace, cfg.cycles_per_us))
    return labels, np.array(feats)


def run_fingerprint(spec: ExperimentSpec) -> dict:
    p = spec.params
    profiles = load_profiles(spec, p)
    labels, x = collect_traces(spec, profiles, p)
    n_per = int(p["traces_per_profile"])
    n_train = int(p["train_per_profile"])
    if not 0 < n_train < n_per:
        raise UsageError("train_per_profile must leave traces for testing")
    g = make_rng(spec.seed, "split")
    train_idx, test_idx = [], []
    for i in range(len(profiles)):
        perm = i * n_per + g.permutation(n_per)
        train_idx += perm[:n_train].tolist()
        test_idx += perm[n_train:].tolist()
    model = train_forest(x[train_idx], [labels[i] for i in train_idx],
                         ForestParams(n_trees=int(p["n_trees"])), seed=sub_seed(spec.seed, "forest"))
    pred = model.predict(x[test_idx])
    rep = confusion_and_pr([labels[i] for i in test_idx], pred, labels=[pr.label for pr in profiles])
    spec.write("confusion.csv", rep.to_csv())
    return {
        "profiles": len(profiles), "train": len(train_idx), "test": len(test_idx),
        "macro_precision": _round(rep.macro_precision), "macro_recall": _round(rep.macro_recall),
        "micro_precision": _round(rep.micro_precision), "micro_recall": _round(rep.micro_recall),
    }


# -- keystrokes -------------------------------------------------------------------

def run_keystrokes(spec: ExperimentSpec) -> dict:
    p = spec.params
    cfg = spec.config
    timing = KeystrokeTiming(median_gap_ms=p["median_gap_ms"], sigma=p["sigma"],
                             stdin_latency_us=p["stdin_latency_us"])
    vector = int(p["vector"])
    out = {}
    for scenario, background in (("lab", "quiet"), ("realistic", "realistic")):
        runs = []
        for run in range(int(p["runs"])):
            seed = sub_seed(spec.seed, "keys", scenario, run)
            script, keys = gen_keystrokes(int(p["n_keys"]), timing, seed, cycles_per_us=cfg.cycles_per_us,
                                          vector=vector)
            duration = script.interrupt_times[-1] + 100_000 * cfg.cycles_per_us
            bg = sources_schedule(gen_background(background, cycles_per_us=cfg.cycles_per_us),
                                  duration, seed, cfg.cycles_per_us)
            core = spec.core(scenario, run)
            trace = attacks.monitor(core, vector, duration, Schedule.merge(keys, bg), log=False)
            rep = match_keystrokes(trace, script, p["window_us"], cfg.cycles_per_us)
            runs.append(_report_dict(rep))
            if run == 0:
                spec.write(f"keystrokes_{scenario}_truth.csv", script.to_csv())
        out[scenario] = {"runs": runs, "mean_f_score": _round(float(np.mean([r["f_score"] for r in runs])))}
    return out


RUNNERS = {
    "distinguish": run_distinguish,
    "curve": run_curve,
    "compare": run_compare,
    "template": run_template,
    "fingerprint": run_fingerprint,
    "keystrokes": run_keystrokes,
    "mitigate": run_mitigate,
}


def manifest(spec: ExperimentSpec) -> str:
    lines = [
        f"experiment={spec.name}",
        f"seed={spec.seed}",
        f"config_sha256={spec.config.digest()}",
        f"version={__version__}",
        f"backend={BACKEND}",
        f"profiles={spec.profiles}",
        f"mitigate={str(spec.mitigate).lower()}",
        "params=" + json.dumps(spec.params, sort_keys=True),
    ]
    return "\n".join(lines) + "\n"


def run(spec: ExperimentSpec) -> dict:
    metrics = RUNNERS[spec.name](spec)
    spec.write("manifest.txt", manifest(spec))
    spec.write("metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics
