"""Simulation configuration and its TOML loader.

A config file is plain TOML.  Machine keys live at the top level (or in the
``[memory]``, ``[cache]``, ``[core]`` and ``[noise]`` tables); experiment
parameters go under ``[experiment.<name>]``::

    idt_base = 0xfffffe0000000000
    phys_mem_bytes = 1073741824
    mtrr_budget = 8
    l1d_ways = 8

    [[kernel_ranges]]
    name = "entry"
    start = 0xffffffff81e00000
    pages = 3
    tag = "KernelEntry"

    [core]
    probe_cost = 2000

    [experiment.fingerprint]
    separability = 0.6
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError


@dataclass(frozen=True)
class KernelRange:
    name: str
    start: int
    pages: int
    tag: str


def default_kernel_ranges() -> tuple[KernelRange, ...]:
    return (
        KernelRange("entry", 0xFFFFFFFF81E00000, 3, "KernelEntry"),
        KernelRange("descriptors", 0xFFFFFE0000000000, 2, "DescriptorTable"),
        KernelRange("directmap", 0xFFFF888004000000, 4, "DirectMap"),
    )


@dataclass(frozen=True)
class SimConfig:
    # memory
    idt_base: int = 0xFFFFFE0000000000
    phys_mem_bytes: int = 1 << 30
    kernel_ranges: tuple[KernelRange, ...] = field(default_factory=default_kernel_ranges)
    mtrr_budget: int = 8
    user_base: int = 0x00007F0000000000
    user_heap_pages: int = 64
    secret_base: int = 0xFFFF888010000000
    secret_pages: int = 4
    kernel_text_base: int = 0xFFFFFFFF81000000
    # cache
    l1d_sets: int = 64
    l1d_ways: int = 8
    # core cost table (cycles)
    probe_cost: int = 2000
    evict_cost: int = 1500
    isr_cost: int = 4000
    pp_cost: int = 800
    pp_min_slow: int = 2
    hit_latency: int = 4
    miss_latency: int = 200
    cycles_per_us: int = 3000
    footprint_lines: int = 4
    evict_passes: int = 2
    # noise
    noise_p: float = 0.004
    false_leak_p: float = 0.0
    # experiment overrides, keyed by experiment name
    experiments: dict[str, dict[str, Any]] = field(default_factory=dict)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def experiment(self, name: str, defaults: dict[str, Any]) -> dict[str, Any]:
        """Experiment parameters: ``defaults`` overlaid with config overrides."""
        out = dict(defaults)
        extra = self.experiments.get(name, {})
        unknown = set(extra) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys for experiment {name!r}: {sorted(unknown)}")
        out.update(extra)
        return out

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["kernel_ranges"] = [dataclasses.asdict(r) for r in self.kernel_ranges]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = ("memory", "cache", "core", "noise")
_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}


def config_from_mapping(raw: dict[str, Any]) -> SimConfig:
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            flat.update(value)
        elif key == "experiment":
            flat["experiments"] = {k: dict(v) for k, v in value.items()}
        else:
            flat[key] = value
    unknown = set(flat) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "kernel_ranges" in flat:
        try:
            flat["kernel_ranges"] = tuple(KernelRange(**r) for r in flat["kernel_ranges"])
        except TypeError as exc:
            raise ConfigError(f"bad kernel_ranges entry: {exc}") from None
    cfg = SimConfig(**flat)
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> SimConfig:
    if path is None:
        return SimConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_mapping(raw)


def validate(cfg: SimConfig) -> None:
    if cfg.l1d_ways <= 0 or cfg.l1d_ways & (cfg.l1d_ways - 1):
        raise ConfigError("l1d_ways must be a power of two")
    # Virtually indexed: the set index has to come from the page offset.
    if cfg.l1d_sets <= 0 or cfg.l1d_sets > 64 or cfg.l1d_sets & (cfg.l1d_sets - 1):
        raise ConfigError("l1d_sets must be a power of two no larger than 64")
    if cfg.idt_base % 4096:
        raise ConfigError("idt_base must be page aligned")
    for name in ("probe_cost", "pp_cost", "cycles_per_us"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("evict_cost", "isr_cost", "hit_latency", "miss_latency"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    for name in ("noise_p", "false_leak_p"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            raise ConfigError(f"{name} must be a probability")
    if not 0 <= cfg.footprint_lines <= 6:
        raise ConfigError("footprint_lines must be between 0 and 6")
    if cfg.mtrr_budget < 1:
        raise ConfigError("mtrr_budget must be at least 1")
