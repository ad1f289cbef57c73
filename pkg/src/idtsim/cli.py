"""``idtsim`` command line."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import IdtSimError
from .experiments import EXPERIMENTS, ExperimentSpec, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idtsim", description="Run a seeded IDT side-channel experiment.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="TOML config file (defaults built in)")
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--profiles", type=int, default=15, help="website profiles for fingerprint")
    ap.add_argument("--noise-p", type=float, help="override the oracle noise probability")
    ap.add_argument("--mitigate", action="store_true", help="mark the IDT page uncachable")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.noise_p is not None:
            if not 0.0 <= args.noise_p <= 1.0:
                raise IdtSimError("--noise-p must be in [0, 1]")
            config = config.replace(noise_p=args.noise_p)
        spec = ExperimentSpec(args.experiment, config, args.seed, args.out, args.profiles, args.mitigate)
        metrics = run(spec)
    except IdtSimError as exc:
        print(f"idtsim: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(metrics, sort_keys=True)[:2000])
    return 0


if __name__ == "__main__":
    sys.exit(main())
