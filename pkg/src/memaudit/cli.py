"""Command-line entry point.

One subcommand per pipeline stage plus `run` for the whole flow.  Heavy
imports happen after argument parsing so that --threads can pin the BLAS
thread count via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_SUBCOMMAND_STAGES = {
    "ingest": ("ingest",),
    "plant": ("plant", "probes"),
    "train": ("train",),
    "scan-repeats": ("scan_repeats",),
    "complexity": ("complexity",),
    "measure": ("measure",),
    "trajectory": ("trajectory",),
    "perturb": ("perturb",),
    "diagnose": ("diagnose",),
    "report": ("report",),
    "run": None,  # all stages
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memaudit",
        description="Memorization audit for small byte-level language models.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default="memaudit-out", help="output directory")
    parser.add_argument(
        "--config",
        default=None,
        help="TOML config file, or the name of a packaged profile (desk, quick)",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (set before numpy loads)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMAND_STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run"
                           else "run the full pipeline")
        if name == "ingest":
            p.add_argument("--input", default=None,
                           help="corpus file (omit to synthesize per config)")
            p.add_argument("--format", default=None, choices=["plain-lines", "jsonl"])
        if name == "run":
            p.add_argument("--manifest", default=None,
                           help="rerun from an existing manifest.json (its config wins)")
    return parser


def _resolve_config(args) -> dict:
    import json

    from .pipeline import load_config, profile_path

    overrides: dict = {}
    if args.seed is not None:
        overrides["run"] = {"seed": args.seed}
    if getattr(args, "input", None):
        overrides.setdefault("corpus", {})["source"] = args.input
    if getattr(args, "format", None):
        overrides.setdefault("corpus", {})["format"] = args.format
    manifest = getattr(args, "manifest", None)
    if manifest:
        base = json.loads(Path(manifest).read_text())["config"]
        from .pipeline import _merge

        merged = _merge(base, overrides) if overrides else base
        return load_config(None, merged)
    path = args.config
    if path is not None and not Path(path).is_file():
        path = profile_path(path)
    return load_config(path, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .pipeline import STAGES, AuditPipeline, StageError

    try:
        config = _resolve_config(args)
        pipe = AuditPipeline(args.out, config)
        stages = _SUBCOMMAND_STAGES[args.command] or STAGES
        pipe.run(stages=stages)
    except StageError as exc:
        print(f"memaudit: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"memaudit: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
