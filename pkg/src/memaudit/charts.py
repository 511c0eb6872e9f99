"""Static SVG charts derived from the report files.

Charts are regenerated from the report files alone, embed the run's config
hash as provenance, and carry no timestamps, so regeneration from unchanged
reports is byte-identical.  A chart whose data is missing or empty is still
emitted, with an explicit "no data" annotation.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "memaudit"
matplotlib.rcParams["figure.max_open_warning"] = 0

import matplotlib.pyplot as plt
import numpy as np

FIGURES = (
    "repeats_vs_kl",
    "complexity_vs_kl",
    "per_complexity_curves",
    "predicted_vs_actual",
    "delta_histogram",
    "variance_stationarity",
    "trajectory_fan",
    "perturbation_best_of",
    "ce_distributions",
    "perturbation_trials",
    "training_loss",
    "first_encounter",
    "weight_deltas",
    "weight_magnitudes",
)

_CLASS_COLORS = {
    "latent": "tab:blue",
    "never_memorized": "tab:orange",
    "unseen_control": "tab:green",
}


def _load_json(path: Path):
    return json.loads(path.read_text()) if path.is_file() else {}


def _load_csv(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class _Reports:
    """Lazy view over the pipeline's report files."""

    def __init__(self, out: Path):
        self.out = out
        self.manifest = _load_json(out / "manifest.json")
        self.stats = _load_csv(out / "probe_stats.csv")
        self.dynamics = _load_json(out / "dynamics_report.json")
        self.perturb = _load_json(out / "perturb_report.json")
        self.diagnostic = _load_json(out / "diagnostic_report.json")
        self.classes = _load_json(out / "classes.json")
        self.training = _load_json(out / "ckpts" / "training_log.json")
        self.trajectories = _load_csv(out / "trajectories.csv")
        path = out / "perturb.jsonl"
        self.perturb_rows = (
            [json.loads(line) for line in path.read_text().splitlines()]
            if path.is_file()
            else []
        )


def _canary_points(stats):
    pts = [
        (int(r["repeat_count"]) + 1, int(r["kl_ld"]))
        for r in stats
        if r["cohort"] == "canary"
    ]
    return pts


def repeats_vs_kl(ax, rep: _Reports) -> bool:
    pts = _canary_points(rep.stats)
    if not pts:
        return False
    rs = np.array([p[0] for p in pts])
    kl = np.array([p[1] for p in pts])
    jitter = (np.arange(len(rs)) % 7 - 3) * 0.02
    ax.scatter(rs * (1 + jitter * 0.3), kl, s=12, alpha=0.5, label="canary probes")
    uniq = np.unique(rs)
    means = [kl[rs == r].mean() for r in uniq]
    ax.plot(uniq, means, "o-", color="tab:red", label="mean")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("times planted (r)")
    ax.set_ylabel("final kl-LD")
    ax.legend(loc="lower left", fontsize=8)
    return True


def complexity_vs_kl(ax, rep: _Reports) -> bool:
    pts = [
        (float(r["z_complexity"]), int(r["kl_ld"]))
        for r in rep.stats
        if r["cohort"] == "uniform" and int(r["repeat_count"]) == 0
    ]
    if not pts:
        return False
    z = np.array([p[0] for p in pts])
    kl = np.array([p[1] for p in pts])
    ax.scatter(z, kl, s=8, alpha=0.4)
    edges = np.quantile(z, np.linspace(0, 1, 9))
    mids, means = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (z >= lo) & (z <= hi)
        if sel.any():
            mids.append((lo + hi) / 2)
            means.append(kl[sel].mean())
    ax.plot(mids, means, "o-", color="tab:red", label="octile mean")
    ax.set_xlabel("z-complexity of target")
    ax.set_ylabel("final kl-LD")
    ax.legend(loc="lower right", fontsize=8)
    return True


def per_complexity_curves(ax, rep: _Reports) -> bool:
    rows = [
        (int(r["repeat_count"]) + 1, float(r["z_complexity"]), int(r["kl_ld"]))
        for r in rep.stats
        if r["cohort"] in ("uniform", "canary")
    ]
    if not rows:
        return False
    z = np.array([r[1] for r in rows])
    terciles = np.quantile(z, [0, 1 / 3, 2 / 3, 1.0])
    terciles[-1] += 1e-9
    drew = False
    for i in range(3):
        sel = [r for r in rows if terciles[i] <= r[1] < terciles[i + 1]]
        rs = np.array([s[0] for s in sel])
        kl = np.array([s[2] for s in sel])
        uniq = np.unique(rs)
        if len(uniq) < 2:
            continue
        ax.plot(
            uniq,
            [kl[rs == u].mean() for u in uniq],
            "o-",
            label=f"z in [{terciles[i]:.2f}, {terciles[i + 1]:.2f})",
        )
        drew = True
    ax.set_xscale("log", base=2)
    ax.set_xlabel("times present (r)")
    ax.set_ylabel("mean final kl-LD")
    ax.legend(fontsize=7)
    return drew


def predicted_vs_actual(ax, rep: _Reports) -> bool:
    fit = rep.dynamics.get("memorization_fit", {})
    if "coef_log_repeats" not in fit:
        return False
    rows = [
        r
        for r in rep.stats
        if r["cohort"] == "canary"
        or (r["cohort"] == "uniform" and int(r["repeat_count"]) == 0)
    ]
    if not rows:
        return False
    reps = np.array([int(r["repeat_count"]) for r in rows], dtype=float)
    z = np.array([float(r["z_complexity"]) for r in rows])
    actual = np.array([int(r["kl_ld"]) for r in rows], dtype=float)
    predicted = (
        fit["coef_log_repeats"] * np.log1p(reps)
        + fit["coef_complexity"] * z
        + fit["intercept"]
    )
    ax.scatter(predicted, actual, s=8, alpha=0.4)
    lim = [min(predicted.min(), actual.min()) - 2, max(predicted.max(), actual.max()) + 2]
    ax.plot(lim, lim, "--", color="gray", lw=1)
    ax.set_xlabel("predicted kl-LD (linear fit)")
    ax.set_ylabel("actual kl-LD")
    ax.set_title(f"R² = {fit['r_squared']:.3f}", fontsize=9)
    return True


def delta_histogram(ax, rep: _Reports) -> bool:
    hist = rep.dynamics.get("delta_histogram", {})
    if not hist.get("counts"):
        return False
    centers = np.array(hist["centers"])
    counts = np.array(hist["counts"], dtype=float)
    ax.bar(centers, counts, width=1.0, alpha=0.7, label="observed Δ")
    lap = rep.dynamics.get("laplace", {})
    if "scale" in lap:
        xs = np.linspace(centers[0], centers[-1], 200)
        pdf = np.exp(-np.abs(xs - lap["location"]) / lap["scale"]) / (2 * lap["scale"])
        ax.plot(xs, pdf * counts.sum(), color="tab:red",
                label=f"Laplace(b={lap['scale']:.2f})")
    ax.set_yscale("log")
    ax.set_xlabel("Δ kl-LD between consecutive checkpoints")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    return True


def variance_stationarity(ax, rep: _Reports) -> bool:
    st = rep.dynamics.get("stationarity", {})
    if "normalized_variance" not in st:
        return False
    steps = np.array(st["steps"])
    ax.plot(steps, st["normalized_variance"], "o-", label="normalized variance")
    slope = st["normalized_slope"]
    lo, hi = st["normalized_slope_ci"]
    idx = np.arange(len(steps))
    base = np.mean(st["normalized_variance"])
    ax.plot(steps, base + slope * (idx - idx.mean()), "--", color="tab:red",
            label=f"slope {slope:.4f} [{lo:.4f}, {hi:.4f}]")
    ax2 = ax.twinx()
    ax2.plot(steps, st["raw_variance"], "s--", color="tab:gray", alpha=0.6,
             label="raw variance")
    ax2.set_ylabel("raw cross-sectional variance", color="tab:gray")
    ax.set_xlabel("checkpoint step")
    ax.set_ylabel("normalized cross-sectional variance")
    ax.legend(fontsize=8, loc="upper left")
    return True


def _series_columns(rows):
    if not rows:
        return []
    return sorted(k for k in rows[0] if k.startswith("kl_"))


def trajectory_fan(ax, rep: _Reports) -> bool:
    labels = rep.classes.get("labels", {})
    cols = _series_columns(rep.trajectories)
    if not cols or not labels:
        return False
    steps = [int(c.removeprefix("kl_")) for c in cols]
    drew = False
    shown = {lab: 0 for lab in _CLASS_COLORS}
    for row in rep.trajectories:
        lab = labels.get(row["probe_id"])
        if lab not in _CLASS_COLORS or shown[lab] >= 40:
            continue
        vals = [int(row[c]) for c in cols]
        ax.plot(steps, vals, color=_CLASS_COLORS[lab], alpha=0.35, lw=1,
                label=lab if shown[lab] == 0 else None)
        shown[lab] += 1
        drew = True
    window = rep.classes.get("window")
    if window:
        ax.axvspan(window[0], window[1], color="gray", alpha=0.08)
    ax.set_xlabel("checkpoint step")
    ax.set_ylabel("kl-LD")
    if drew:
        ax.legend(fontsize=8)
    return drew


def perturbation_best_of(ax, rep: _Reports) -> bool:
    if not rep.perturb_rows:
        return False
    bins = np.arange(0, 66, 2)
    drew = False
    for lab, color in _CLASS_COLORS.items():
        vals = [r["best_kl"] for r in rep.perturb_rows if r["label"] == lab]
        if vals:
            ax.hist(vals, bins=bins, alpha=0.5, color=color, label=f"{lab} (n={len(vals)})")
            drew = True
    ax.set_xlabel("best-of-trials kl-LD")
    ax.set_ylabel("probes")
    if drew:
        ax.legend(fontsize=8)
    return drew


def ce_distributions(ax, rep: _Reports) -> bool:
    scores = rep.diagnostic.get("scores")
    if not scores:
        return False
    labels = rep.classes.get("labels", {})
    groups = {}
    for pid, s in scores.items():
        groups.setdefault(labels.get(pid, "?"), []).append(s)
    all_scores = [s for v in groups.values() for s in v]
    bins = np.linspace(min(all_scores), max(all_scores) + 1e-9, 30)
    for lab, color in _CLASS_COLORS.items():
        if lab in groups:
            ax.hist(groups[lab], bins=bins, alpha=0.5, color=color,
                    label=f"{lab} (n={len(groups[lab])})")
    thr = rep.diagnostic.get("threshold")
    if thr is not None:
        ax.axvline(thr, color="black", ls="--", lw=1,
                   label=f"threshold {thr:.2f}")
    auc = rep.diagnostic.get("auc")
    if auc is not None:
        ax.set_title(f"AUC = {auc:.3f}", fontsize=9)
    ax.set_xlabel("mean cross entropy (nats/token)")
    ax.set_ylabel("probes")
    ax.legend(fontsize=8)
    return True


def perturbation_trials(ax, rep: _Reports) -> bool:
    latent = [r for r in rep.perturb_rows if r["label"] == "latent"]
    if not latent:
        return False
    row = min(latent, key=lambda r: (r["best_kl"], r["probe_id"]))
    trials = np.array(row["trial_kls"])
    ax.hist(trials, bins=np.arange(0, 66, 1), alpha=0.8)
    ax.axvline(row["baseline_kl"], color="tab:red", ls="--",
               label=f"unperturbed ({row['baseline_kl']})")
    ax.axvline(row["best_kl"], color="tab:green", ls="-",
               label=f"best of trials ({row['best_kl']})")
    ax.set_xlabel(f"kl-LD across {len(trials)} perturbations of {row['probe_id']}")
    ax.set_ylabel("trials")
    ax.legend(fontsize=8)
    return True


def training_loss(ax, rep: _Reports) -> bool:
    loss = rep.training.get("loss")
    if not loss:
        return False
    loss = np.array(loss, dtype=float)
    steps = np.arange(1, len(loss) + 1)
    ax.plot(steps, loss, alpha=0.3, lw=0.7)
    k = max(1, len(loss) // 100)
    smooth = np.convolve(loss, np.ones(k) / k, mode="valid")
    ax.plot(steps[k - 1 :], smooth, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("training cross entropy (nats/token)")
    return True


def first_encounter(ax, rep: _Reports) -> bool:
    fe = rep.training.get("first_encounter")
    if not fe:
        return False
    ax.hist(list(map(int, fe.values())), bins=40, alpha=0.8)
    ax.set_xlabel("first-encounter step")
    ax.set_ylabel("documents")
    return True


def weight_deltas(ax, rep: _Reports) -> bool:
    w = rep.perturb.get("weights", {})
    if "delta_perturbation" not in w:
        return False
    names = ["start to final", "one perturbation", "predicted sigma*sqrt(P)"]
    vals = [w["delta_start_to_final"], w["delta_perturbation"], w["delta_predicted"]]
    ax.bar(names, vals, color=["tab:blue", "tab:orange", "tab:gray"])
    ax.set_yscale("log")
    ax.set_ylabel("L2 weight delta")
    ax.tick_params(axis="x", labelsize=8)
    return True


def weight_magnitudes(ax, rep: _Reports) -> bool:
    hist = rep.perturb.get("weights", {}).get("magnitude_histogram", {})
    if not hist.get("counts"):
        return False
    centers = np.array(hist["centers"])
    counts = np.array(hist["counts"])
    width = centers[1] - centers[0] if len(centers) > 1 else 0.01
    ax.bar(centers, counts, width=width, alpha=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("|parameter|")
    ax.set_ylabel("count")
    return True


def emit_charts(out_dir: str | Path) -> list[Path]:
    """Write all figure SVGs under out_dir/charts; returns the paths."""
    out = Path(out_dir)
    rep = _Reports(out)
    chart_dir = out / "charts"
    chart_dir.mkdir(parents=True, exist_ok=True)
    stamp = rep.manifest.get("config_hash", "")[:12]
    paths = []
    for name in FIGURES:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            drew = globals()[name](ax, rep)
        except Exception as exc:  # a malformed report should not kill the run
            drew = False
            ax.text(0.5, 0.6, f"chart error: {exc}", ha="center", va="center",
                    transform=ax.transAxes, fontsize=8, wrap=True)
        if not drew:
            ax.text(0.5, 0.5, "no data", ha="center", va="center",
                    transform=ax.transAxes, fontsize=14, color="gray")
        ax.grid(alpha=0.25)
        fig.text(0.99, 0.01, f"memaudit run {stamp}", ha="right", fontsize=6,
                 color="gray")
        fig.tight_layout()
        path = chart_dir / f"{name}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
