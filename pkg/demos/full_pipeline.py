#!/usr/bin/env python3
# Runs the complete audit end to end with the packaged quick profile:
# synthesize a corpus, plant canaries, train, scan for repeats, measure
# final and per-checkpoint edit distances, run the perturbation and CE
# diagnostics, and write every table, report, and chart to one directory.
#
# The quick profile exists to exercise the machinery in a couple of minutes;
# its corpus and step budget are too small for clean curves. The desk
# profile (the default config) is the one sized to show the phenomena.

import json
import sys
from pathlib import Path

from memaudit.pipeline import load_config, profile_path, run_pipeline


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("quick_audit_out")
    config = load_config(profile_path("quick"))
    print(f"running quick audit into {out}/")
    run_pipeline(out, config)

    manifest = json.loads((out / "manifest.json").read_text())
    print(f"\npipeline wrote {len(manifest['outputs'])} files, "
          f"config hash {manifest['config_hash'][:12]}")

    summary = json.loads((out / "summary.json").read_text())
    print("\nsummary highlights")
    print(f"  probes measured:   {summary['n_probes']}")
    print(f"  trajectory classes {summary['classes']}")
    print(f"  mean kl by planted repeat count "
          f"{ {k: round(v['mean_kl'], 1) for k, v in summary['canary_bins'].items()} }")
    fit = summary["memorization_fit"]
    print(f"  fit: log-repeats coef {fit['coef_log_repeats']:+.2f}, "
          f"complexity coef {fit['coef_complexity']:+.2f}, "
          f"R^2 {fit['r_squared']:.2f}")
    print(f"  Laplace scale {summary['laplace']['scale']:.2f}, "
          f"stationarity slope CI {summary['stationarity_normalized_slope_ci']}")
    if summary["diagnostic_auc"] is not None:
        print(f"  CE screen AUC {summary['diagnostic_auc']:.2f}")

    print("\nkey artifacts")
    for name in ("measure.csv", "trajectories.csv", "repeat_counts.csv",
                 "complexity.csv", "dynamics_report.json",
                 "perturb_report.json", "diagnostic_report.json",
                 "run_log.txt"):
        size = (out / name).stat().st_size
        print(f"  {name:24s} {size:8d} bytes")
    charts = sorted((out / "charts").glob("*.svg"))
    print(f"  charts/                  {len(charts)} svg files")

    print("\nrerunning `memaudit run --manifest` on this directory would")
    print("reuse every finished stage; the tables above are byte-stable.")


if __name__ == "__main__":
    main()
