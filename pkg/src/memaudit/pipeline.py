"""End-to-end audit pipeline: config, staged execution, resume, reports.

Stages run in a fixed order (ingest, plant, probes, train, scan_repeats,
complexity, measure, trajectory, perturb, diagnose, report), each writing its
outputs under one directory.  manifest.json is written before any stage and
carries the full config plus a config hash; a stage whose recorded input hash
matches is skipped on rerun.  All CSV/JSON outputs are deterministic given the
config (wall-clock timing goes to run_log.txt, a plain-text sidecar, so that
reruns stay byte-identical).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from scipy import stats

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .complexity import z_complexity
from .corpus import (
    Corpus,
    Probe,
    canary_probes,
    extract_probes,
    ingest,
    load_corpus,
    plant_canaries,
    save_corpus,
)
from .defaults import (
    K,
    L,
    MEMORIZED_FRAC,
    MIN_MATCH_LEN,
    NGRAM,
    SIGMA,
    TRIALS,
    UNMEMORIZED_FRAC,
)
from .diagnostic import calibrate, diagnose, score_probes
from .dynamics import (
    LATENT,
    NEVER_MEMORIZED,
    UNSEEN_CONTROL,
    Trajectory,
    classify_probes,
    compute_trajectories,
    delta_histogram,
    fit_laplace,
    fit_memorization_model,
    pooled_deltas,
    random_walk_control,
    stationarity_stats,
)
from .metric import levenshtein_batch
from .model import (
    CheckpointStore,
    ModelConfig,
    best_of_perturbations_batch,
    greedy_continue_batch,
    param_count,
    perturb,
    sequence_loss_batch,
    train,
    weight_delta,
    weight_histogram,
)
from .repeats import build_index, find_repeats
from .synth import canary_grid, synth_docs

STAGES = (
    "ingest",
    "plant",
    "probes",
    "train",
    "scan_repeats",
    "complexity",
    "measure",
    "trajectory",
    "perturb",
    "diagnose",
    "report",
)

DEFAULT_CONFIG = {
    "run": {"seed": 0},
    "corpus": {
        "source": "synthetic",
        "n_docs": 60,
        "holdout_docs": 40,
        "weights": [0.78, 0.07, 0.15],
        "doc_len": [300, 900],
        "format": "plain-lines",
    },
    "canaries": {
        "repeat_counts": [1, 2, 4, 8, 16, 32, 64, 256],
        "per_count": [10, 6, 10, 12, 14, 8, 4, 3],
        "n_bytes": 112,
    },
    "probes": {"k": K, "l": L, "uniform_count": 1900, "holdout_count": 300},
    "train": {
        "vocab_size": 258,
        "context_window": 128,
        "layer_count": 2,
        "model_width": 128,
        "head_count": 4,
        "learning_rate": 1e-3,
        "final_lr_fraction": 0.3,
        "warmup_steps": 150,
        "weight_decay": 0.0,
        "batch_size": 8,
        "total_steps": 4600,
        "checkpoint_every": 200,
    },
    "repeats": {"ngram": NGRAM, "min_match_len": MIN_MATCH_LEN},
    "cohort": {
        "z_band": [0.60, 0.95],
        "per_class_cap": 64,
        "trajectory_sample": 256,
        "window_start_frac": 0.15,
    },
    "perturb": {"trials": TRIALS, "sigma": SIGMA},
    "dynamics": {
        "memorized_frac": MEMORIZED_FRAC,
        "unmemorized_frac": UNMEMORIZED_FRAC,
    },
    "report": {
        "repeat_bin_values": [1, 4, 16, 64, 256],
        "random_walk_sims": 100,
    },
}


def canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def _json_safe(obj):
    """Replace non-finite floats with None so degenerate statistics
    (constant series, empty pools) serialize as null instead of crashing."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _merge(base: dict, override: dict, path="") -> dict:
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise KeyError(f"unknown config key {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise TypeError(f"config key {path}{key} must be a table")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """DEFAULT_CONFIG deep-merged with a TOML file and then explicit overrides."""
    config = DEFAULT_CONFIG
    if path is not None:
        with open(path, "rb") as fh:
            config = _merge(config, tomllib.load(fh))
    if overrides:
        config = _merge(config, overrides)
    return json.loads(canon_json(config))  # plain types only, stable ordering


def profile_path(name: str) -> Path:
    p = Path(__file__).parent / "profiles" / f"{name}.toml"
    if not p.is_file():
        available = sorted(q.stem for q in p.parent.glob("*.toml"))
        raise FileNotFoundError(f"no profile {name!r}; available: {available}")
    return p


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class AuditPipeline:
    """Stage runner bound to one output directory and one config."""

    def __init__(self, out_dir: str | Path, config: dict | None = None):
        self.out = Path(out_dir)
        self.config = config or load_config()
        self.config_hash = _sha(canon_json(self.config))
        self._timings: list[tuple[str, float, bool]] = []

    # ------------------------------------------------------------ plumbing

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def _state_file(self) -> Path:
        return self.path("stage_state.json")

    def _load_state(self) -> dict:
        p = self._state_file()
        return json.loads(p.read_text()) if p.is_file() else {}

    def _stage_hash(self, stage: str, parent: str) -> str:
        return _sha(canon_json({"config": self.config, "parent": parent, "stage": stage}))

    def write_manifest(self) -> Path:
        manifest = {
            "tool": "memaudit",
            "version": __version__,
            "config": self.config,
            "config_hash": self.config_hash,
            "stages": list(STAGES),
            "outputs": {
                "ingest": ["corpus/base", "corpus/holdout", "corpus/flavors.json"],
                "plant": ["corpus/train"],
                "probes": ["probes.jsonl"],
                "train": ["ckpts"],
                "scan_repeats": ["repeats.jsonl", "repeat_counts.csv"],
                "complexity": ["complexity.csv"],
                "measure": ["measure.csv"],
                "trajectory": ["trajectories.csv", "classes.json", "dynamics_report.json"],
                "perturb": ["perturb.jsonl", "perturb_report.json"],
                "diagnose": ["diagnostic_report.json"],
                "report": ["probe_stats.csv", "summary.json", "charts"],
            },
        }
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.path("manifest.json")
        path.write_text(canon_json(manifest))
        return path

    def run(self, stages: tuple[str, ...] = STAGES) -> None:
        for s in stages:
            if s not in STAGES:
                raise ValueError(f"unknown stage {s!r}; stages are {STAGES}")
        self.write_manifest()
        state = self._load_state()
        parent = ""
        for stage in STAGES:
            want = self._stage_hash(stage, parent)
            if stage in stages:
                if state.get(stage) == want and self._outputs_exist(stage):
                    self._timings.append((stage, 0.0, True))
                else:
                    t0 = time.time()
                    try:
                        getattr(self, f"stage_{stage}")()
                    except Exception as exc:
                        self._write_run_log(failed=stage)
                        raise StageError(stage, exc) from exc
                    self._timings.append((stage, time.time() - t0, False))
                    state[stage] = want
                    self._state_file().write_text(canon_json(state))
            parent = want
        self._write_run_log()

    def _outputs_exist(self, stage: str) -> bool:
        manifest = json.loads(self.path("manifest.json").read_text())
        return all(self.path(rel).exists() for rel in manifest["outputs"][stage])

    def _write_run_log(self, failed: str | None = None) -> None:
        # Appends one block per run so the original full-run timings survive
        # later resumed runs.  This is the only output with wall-clock times;
        # everything the determinism contract covers (CSV/JSON) has none.
        lines = [f"memaudit {__version__} config {self.config_hash}"]
        for stage, dt, skipped in self._timings:
            mark = "resumed (inputs unchanged)" if skipped else f"{dt:.1f}s"
            lines.append(f"{stage}: {mark}")
        if failed:
            lines.append(f"{failed}: FAILED")
        lines.append(f"finished_at: {time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}")
        with open(self.path("run_log.txt"), "a") as fh:
            fh.write("\n".join(lines) + "\n\n")

    # -------------------------------------------------------------- stages

    def stage_ingest(self) -> None:
        cfg = self.config["corpus"]
        seed = self.config["run"]["seed"]
        if cfg["source"] == "synthetic":
            total = cfg["n_docs"] + cfg["holdout_docs"]
            docs, flavors = synth_docs(
                total, seed=seed, weights=tuple(cfg["weights"]), doc_len=tuple(cfg["doc_len"])
            )
        else:
            corpus = ingest(cfg["source"], format=cfg["format"])
            docs = list(corpus.documents)
            flavors = ["file"] * len(docs)
            if cfg["n_docs"] + cfg["holdout_docs"] > len(docs):
                raise ValueError(
                    f"{cfg['source']} holds {len(docs)} documents, fewer than "
                    f"n_docs + holdout_docs = {cfg['n_docs'] + cfg['holdout_docs']}"
                )
            docs = docs[: cfg["n_docs"] + cfg["holdout_docs"]]
        n = cfg["n_docs"]
        save_corpus(Corpus(docs[:n]), self.path("corpus", "base"))
        save_corpus(Corpus(docs[n:]), self.path("corpus", "holdout"))
        self.path("corpus", "flavors.json").write_text(
            canon_json({"base": flavors[:n], "holdout": flavors[n:]})
        )

    def stage_plant(self) -> None:
        cfg = self.config["canaries"]
        seed = self.config["run"]["seed"]
        base = load_corpus(self.path("corpus", "base"))
        specs = canary_grid(
            tuple(cfg["repeat_counts"]), cfg["per_count"], seed=seed, n_bytes=cfg["n_bytes"]
        )
        planted = plant_canaries(base, specs, seed=seed) if specs else base
        save_corpus(planted, self.path("corpus", "train"))

    def _train_corpus(self) -> Corpus:
        return load_corpus(self.path("corpus", "train"))

    def _holdout_corpus(self) -> Corpus:
        return load_corpus(self.path("corpus", "holdout"))

    def stage_probes(self) -> None:
        cfg = self.config["probes"]
        seed = self.config["run"]["seed"]
        trainc = self._train_corpus()
        holdc = self._holdout_corpus()
        plain_ids = [m.doc_id for m in trainc.manifest if not m.canary]
        uniform = extract_probes(
            trainc, cfg["k"], cfg["l"], cfg["uniform_count"], seed=seed + 1,
            dedupe=True, doc_ids=plain_ids,
        )
        canary = canary_probes(trainc, cfg["k"], cfg["l"])
        hold = extract_probes(
            holdc, cfg["k"], cfg["l"], cfg["holdout_count"], seed=seed + 2, dedupe=True
        )
        hold = [replace(p, probe_id=f"h{p.probe_id}") for p in hold]
        lines = []
        for cohort, plist in (("uniform", uniform), ("canary", canary), ("holdout", hold)):
            for p in plist:
                lines.append(
                    canon_json(
                        {
                            "cohort": cohort,
                            "k": p.k,
                            "l": p.l,
                            "probe_id": p.probe_id,
                            "source_doc": p.source_doc,
                            "source_offset": p.source_offset,
                        }
                    )
                )
        self.path("probes.jsonl").write_text("".join(lines))

    def load_probes(self) -> list[tuple[str, Probe]]:
        """(cohort, probe) pairs, reconstructed from the stored corpora."""
        trainc = self._train_corpus()
        holdc = self._holdout_corpus()
        out = []
        for line in self.path("probes.jsonl").read_text().splitlines():
            rec = json.loads(line)
            corpus = holdc if rec["cohort"] == "holdout" else trainc
            doc = corpus.doc(rec["source_doc"])
            off, k, l = rec["source_offset"], rec["k"], rec["l"]
            out.append(
                (
                    rec["cohort"],
                    Probe(
                        rec["probe_id"],
                        doc[off : off + k].copy(),
                        doc[off + k : off + k + l].copy(),
                        rec["source_doc"],
                        off,
                    ),
                )
            )
        return out

    def stage_train(self) -> None:
        cfg = dict(self.config["train"])
        cfg.setdefault("seed", self.config["run"]["seed"])
        store = train(self._train_corpus(), ModelConfig(**cfg))
        store.save(self.path("ckpts"))

    def _store(self) -> CheckpointStore:
        return CheckpointStore.load(self.path("ckpts"))

    def stage_scan_repeats(self) -> None:
        cfg = self.config["repeats"]
        trainc = self._train_corpus()
        index = build_index(trainc, n=cfg["ngram"])
        pairs = self.load_probes()
        # Holdout probes index a different corpus; remap source_doc out of
        # range so self-match suppression cannot hit a training document.
        scan = [
            replace(p, source_doc=len(trainc.documents) + i) if cohort == "holdout" else p
            for i, (cohort, p) in enumerate(pairs)
        ]
        hits = find_repeats(scan, index, trainc, min_len=cfg["min_match_len"])
        by_probe: dict[str, list] = {p.probe_id: [] for _, p in pairs}
        for h in hits:
            by_probe[h.probe_id].append(h)
        lines = []
        rows = []
        for (cohort, p), sp in zip(pairs, scan):
            phits = sorted(by_probe[p.probe_id], key=lambda h: h.doc_id)
            lines.append(
                canon_json(
                    {
                        "hits": [
                            {
                                "doc_id": h.doc_id,
                                "doc_offset": h.doc_offset,
                                "match_len": h.match_len,
                            }
                            for h in phits
                        ],
                        "probe_id": p.probe_id,
                        "repeat_count": len({h.doc_id for h in phits}),
                    }
                )
            )
            rows.append((p.probe_id, len({h.doc_id for h in phits})))
        self.path("repeats.jsonl").write_text("".join(lines))
        _write_csv(self.path("repeat_counts.csv"), ["probe_id", "repeat_count"], rows)

    def stage_complexity(self) -> None:
        rows = [(p.probe_id, z_complexity(p.target)) for _, p in self.load_probes()]
        _write_csv(self.path("complexity.csv"), ["probe_id", "z_complexity"], rows)

    def stage_measure(self) -> None:
        pairs = self.load_probes()
        probes = [p for _, p in pairs]
        final = self._store().final()
        contexts = np.stack([p.context for p in probes]).astype(np.int64)
        targets = np.stack([p.target for p in probes]).astype(np.int64)
        kl = np.empty(len(probes), dtype=np.int64)
        ce = np.empty(len(probes), dtype=np.float64)
        for lo in range(0, len(probes), 512):
            hi = min(lo + 512, len(probes))
            cont = greedy_continue_batch(final, contexts[lo:hi], probes[0].l).astype(np.int64)
            kl[lo:hi] = levenshtein_batch(targets[lo:hi], cont)
            ce[lo:hi] = sequence_loss_batch(final, probes[lo:hi])
        rows = [
            (p.probe_id, cohort, int(kl[i]), bool(kl[i] == 0), float(ce[i]))
            for i, (cohort, p) in enumerate(pairs)
        ]
        _write_csv(
            self.path("measure.csv"),
            ["probe_id", "cohort", "kl_ld", "memorized", "ce_loss"],
            rows,
        )

    # ------------------------------------------------------ analysis stages

    def _z_map(self) -> dict[str, float]:
        return {
            r["probe_id"]: float(r["z_complexity"])
            for r in _read_csv(self.path("complexity.csv"))
        }

    def _repeat_map(self) -> dict[str, int]:
        return {
            r["probe_id"]: int(r["repeat_count"])
            for r in _read_csv(self.path("repeat_counts.csv"))
        }

    def _measure_map(self) -> dict[str, dict]:
        return {r["probe_id"]: r for r in _read_csv(self.path("measure.csv"))}

    def _cohort_probes(self):
        """Trajectory cohort: in-band uniform sample, all canaries, in-band holdout."""
        cfg = self.config["cohort"]
        lo, hi = cfg["z_band"]
        zmap = self._z_map()
        pairs = self.load_probes()
        uniform = [p for c, p in pairs if c == "uniform" and lo <= zmap[p.probe_id] <= hi]
        canary = [p for c, p in pairs if c == "canary"]
        holdout = [p for c, p in pairs if c == "holdout" and lo <= zmap[p.probe_id] <= hi]
        rng = np.random.default_rng(self.config["run"]["seed"] + 3)
        if len(uniform) > cfg["trajectory_sample"]:
            keep = rng.choice(len(uniform), cfg["trajectory_sample"], replace=False)
            uniform = [uniform[i] for i in sorted(keep)]
        return uniform, canary, holdout

    def _first_encounters(self, probes: list[Probe]) -> dict[int, int]:
        """first_encounter keyed by probe source doc; canaries take the
        earliest encounter over all planted copies of the same canary."""
        store_fe = self._store().first_encounter
        trainc = self._train_corpus()
        copies: dict[str, list[int]] = {}
        for m in trainc.manifest:
            if m.canary:
                copies.setdefault(m.canary_id, []).append(m.doc_id)
        fe = {}
        canary_by_first = {min(v): cid for cid, v in copies.items()}
        for p in probes:
            if p.probe_id.startswith("h"):
                continue
            if p.source_doc in canary_by_first and p.probe_id.startswith("canary_"):
                steps = [
                    store_fe[d]
                    for d in copies[canary_by_first[p.source_doc]]
                    if d in store_fe
                ]
                if steps:
                    fe[p.source_doc] = min(steps)
            elif p.source_doc in store_fe:
                fe[p.source_doc] = store_fe[p.source_doc]
        return fe

    def _window(self, steps: list[int]) -> tuple[int, int]:
        frac = self.config["cohort"]["window_start_frac"]
        total = self.config["train"]["total_steps"]
        start = next((s for s in steps if s >= frac * total), steps[0])
        return start, steps[-1]

    def stage_trajectory(self) -> None:
        uniform, canary, holdout = self._cohort_probes()
        # Holdout probes index the holdout corpus; push their source_doc out
        # of the training id range so they can never inherit a training
        # document's first-encounter step.
        n_train = len(self._train_corpus().documents)
        holdout = [replace(p, source_doc=n_train + i) for i, p in enumerate(holdout)]
        probes = uniform + canary + holdout
        store = self._store()
        ckpts = [store.get(s) for s in store.steps()]
        fe = self._first_encounters(probes)
        trajs = compute_trajectories(probes, ckpts, first_encounter=fe)
        cohort_of = {p.probe_id: c for c, plist in
                     (("uniform", uniform), ("canary", canary), ("holdout", holdout))
                     for p in plist}
        steps = [c.step for c in ckpts]
        header = ["probe_id", "cohort", "first_encounter_step"] + [
            f"kl_{s:07d}" for s in steps
        ]
        rows = []
        for t in trajs:
            rows.append(
                [t.probe_id, cohort_of[t.probe_id], t.first_encounter_step]
                + [v for _, v in t.series]
            )
        _write_csv(self.path("trajectories.csv"), header, rows)

        window = self._window(steps)
        dcfg = self.config["dynamics"]
        labels = classify_probes(
            trajs,
            memorized_frac=dcfg["memorized_frac"],
            unmemorized_frac=dcfg["unmemorized_frac"],
            window=window,
            l=self.config["probes"]["l"],
        )
        self.path("classes.json").write_text(
            canon_json(
                {
                    "labels": labels,
                    "memorized_frac": dcfg["memorized_frac"],
                    "unmemorized_frac": dcfg["unmemorized_frac"],
                    "window": list(window),
                }
            )
        )
        self._write_dynamics_report(trajs, cohort_of, window)

    def _windowed(self, trajs: list[Trajectory], window: tuple[int, int]):
        lo, hi = window
        out = []
        for t in trajs:
            series = tuple((s, v) for s, v in t.series if lo <= s <= hi)
            out.append(Trajectory(t.probe_id, series, t.first_encounter_step))
        return out

    def _write_dynamics_report(self, trajs, cohort_of, window) -> None:
        rcfg = self.config["report"]
        rmap = self._repeat_map()
        # Delta pooling and stationarity are claims about single-occurrence
        # text, so drop the rare uniform probe with a scanned repeat.
        uniform = self._windowed(
            [
                t
                for t in trajs
                if cohort_of[t.probe_id] == "uniform" and rmap[t.probe_id] == 0
            ],
            window,
        )
        report: dict = {"window": list(window), "n_uniform_series": len(uniform)}
        deltas = pooled_deltas(uniform)
        report["deltas"] = {
            "n": int(deltas.size),
            "median": float(np.median(deltas)),
            "skewness": float(stats.skew(deltas)),
        }
        centers, counts = delta_histogram(uniform)
        report["delta_histogram"] = {
            "centers": centers.tolist(),
            "counts": counts.tolist(),
        }
        try:
            fit = fit_laplace(deltas)
            report["laplace"] = asdict(fit)
        except ValueError as exc:
            report["laplace"] = {"error": str(exc)}
        try:
            st = stationarity_stats(uniform)
            report["stationarity"] = {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(st).items()
            }
            scale = report.get("laplace", {}).get("scale", 1.0) or 1.0
            frac, slopes = random_walk_control(
                n_series=max(2, st.n_series - st.excluded_constant),
                n_checkpoints=len(st.steps),
                scale=float(scale),
                n_sims=rcfg["random_walk_sims"],
                seed=self.config["run"]["seed"] + 6,
            )
            report["random_walk_control"] = {
                "fraction_ci_above_zero": frac,
                "n_sims": rcfg["random_walk_sims"],
                "scale": float(scale),
                "mean_slope": float(slopes.mean()),
            }
        except ValueError as exc:
            report["stationarity"] = {"error": str(exc)}
        report.update(self._final_measure_stats())
        self.path("dynamics_report.json").write_text(canon_json(_json_safe(report)))

    def _final_measure_stats(self) -> dict:
        rcfg = self.config["report"]
        zmap = self._z_map()
        rmap = self._repeat_map()
        meas = self._measure_map()
        canary_rows = []
        single_rows = []
        trainc = self._train_corpus()
        r_by_cid = {m.canary_id: m.repeat_count for m in trainc.manifest if m.canary}
        planted = []  # (times planted r, z, kl); regressions use r - 1 repeats
        for pid, row in meas.items():
            kl = int(row["kl_ld"])
            if row["cohort"] == "canary":
                r = r_by_cid[pid.removeprefix("canary_")]
                planted.append((r, zmap[pid], kl))
                canary_rows.append((rmap[pid], zmap[pid], kl))
            elif row["cohort"] == "uniform" and rmap[pid] == 0:
                single_rows.append((rmap[pid], zmap[pid], kl))
        out: dict = {}
        bins = {}
        for r in sorted({r for r, _, _ in planted}):
            vals = [kl for rr, _, kl in planted if rr == r]
            bins[str(r)] = {"mean_kl": float(np.mean(vals)), "n": len(vals)}
        out["canary_bins"] = bins
        if planted:
            rs = np.array([r for r, _, _ in planted], dtype=np.float64)
            kls = np.array([kl for _, _, kl in planted], dtype=np.float64)
            out["canary_spearman_log_repeats_vs_kl"] = float(
                stats.spearmanr(np.log(rs), kls).statistic
            )
        if single_rows:
            zs = np.array([z for _, z, _ in single_rows])
            kls = np.array([kl for _, _, kl in single_rows], dtype=np.float64)
            out["single_occurrence"] = {
                "n": len(single_rows),
                "spearman_z_vs_kl": float(stats.spearmanr(zs, kls).statistic),
            }
        fit_rows = [(r, z, kl) for r, z, kl in canary_rows + single_rows]
        try:
            fit = fit_memorization_model(fit_rows)
            out["memorization_fit"] = {
                "coef_log_repeats": fit.coef_log_repeats,
                "coef_complexity": fit.coef_complexity,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "n": len(fit_rows),
            }
        except ValueError as exc:
            out["memorization_fit"] = {"error": str(exc)}
        out["repeat_bin_values"] = list(rcfg["repeat_bin_values"])
        return out

    def _classes(self) -> tuple[dict[str, str], tuple[int, int]]:
        data = json.loads(self.path("classes.json").read_text())
        return data["labels"], tuple(data["window"])

    def _class_cohorts(self) -> dict[str, list[Probe]]:
        labels, _ = self._classes()
        cap = self.config["cohort"]["per_class_cap"]
        by_id = {p.probe_id: p for _, p in self.load_probes()}
        rng = np.random.default_rng(self.config["run"]["seed"] + 4)
        out = {}
        for label in (LATENT, NEVER_MEMORIZED, UNSEEN_CONTROL):
            ids = sorted(pid for pid, lab in labels.items() if lab == label)
            if len(ids) > cap:
                ids = sorted(rng.choice(ids, cap, replace=False).tolist())
            out[label] = [by_id[pid] for pid in ids]
        return out

    def stage_perturb(self) -> None:
        pcfg = self.config["perturb"]
        cohorts = self._class_cohorts()
        store = self._store()
        final = store.final()
        meas = self._measure_map()
        lines = []
        summary: dict = {"classes": {}, "trials": pcfg["trials"], "sigma": pcfg["sigma"]}
        best: dict[str, np.ndarray] = {}
        for label, probes in sorted(cohorts.items()):
            if not probes:
                summary["classes"][label] = {"n": 0}
                best[label] = np.empty(0)
                continue
            best_lds, best_seeds, lds = best_of_perturbations_batch(
                final,
                probes,
                trials=pcfg["trials"],
                sigma=pcfg["sigma"],
                seed=self.config["run"]["seed"] + 5,
            )
            best[label] = best_lds
            summary["classes"][label] = {
                "n": len(probes),
                "mean_best_kl": float(best_lds.mean()),
                "median_best_kl": float(np.median(best_lds)),
            }
            for i, p in enumerate(probes):
                lines.append(
                    canon_json(
                        {
                            "baseline_kl": int(meas[p.probe_id]["kl_ld"]),
                            "best_kl": int(best_lds[i]),
                            "best_seed": list(best_seeds[i]),
                            "label": label,
                            "probe_id": p.probe_id,
                            "trial_kls": lds[:, i].astype(int).tolist(),
                        }
                    )
                )
        self.path("perturb.jsonl").write_text("".join(lines))
        tests = {}
        if best[LATENT].size and best[UNSEEN_CONTROL].size:
            mw = stats.mannwhitneyu(best[LATENT], best[UNSEEN_CONTROL], alternative="less")
            tests["latent_vs_unseen_one_sided"] = {
                "u": float(mw.statistic),
                "p": float(mw.pvalue),
            }
        if best[NEVER_MEMORIZED].size and best[UNSEEN_CONTROL].size:
            mw = stats.mannwhitneyu(
                best[NEVER_MEMORIZED], best[UNSEEN_CONTROL], alternative="two-sided"
            )
            tests["never_vs_unseen_two_sided"] = {
                "u": float(mw.statistic),
                "p": float(mw.pvalue),
            }
        summary["tests"] = tests
        base = store.get(store.steps()[0])
        pcount = param_count(final.params)
        pert = perturb(final, pcfg["sigma"], seed=(self.config["run"]["seed"] + 5, 0))
        centers, counts = weight_histogram(final)
        summary["weights"] = {
            "param_count": pcount,
            "delta_start_to_final": float(weight_delta(base, final)),
            "delta_perturbation": float(weight_delta(final, pert)),
            "delta_predicted": float(pcfg["sigma"] * np.sqrt(pcount)),
            "magnitude_histogram": {
                "centers": np.asarray(centers, dtype=float).tolist(),
                "counts": np.asarray(counts, dtype=int).tolist(),
            },
        }
        self.path("perturb_report.json").write_text(canon_json(_json_safe(summary)))

    def stage_diagnose(self) -> None:
        labels, _ = self._classes()
        meas = self._measure_map()
        scores = {pid: float(meas[pid]["ce_loss"]) for pid in labels}
        latent = [scores[pid] for pid, lab in sorted(labels.items()) if lab == LATENT]
        unseen = [scores[pid] for pid, lab in sorted(labels.items()) if lab == UNSEEN_CONTROL]
        report: dict = {
            "checkpoint": "final",
            "n_latent": len(latent),
            "n_unseen": len(unseen),
        }
        if latent and unseen:
            cal = calibrate(latent, unseen)
            predictions = {
                pid: bool(v)
                for pid, v in zip(sorted(labels), diagnose([scores[p] for p in sorted(labels)], cal.threshold))
            }
            tp = sum(1 for pid, lab in labels.items() if lab == LATENT and predictions[pid])
            fp = sum(
                1 for pid, lab in labels.items() if lab == UNSEEN_CONTROL and predictions[pid]
            )
            fn = len(latent) - tp
            tn = len(unseen) - fp
            report.update(
                {
                    "auc": cal.auc,
                    "threshold": cal.threshold,
                    "tpr": cal.tpr,
                    "fpr": cal.fpr,
                    "roc": [list(p) for p in cal.roc],
                    "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
                    "precision": tp / (tp + fp) if tp + fp else None,
                    "recall": tp / (tp + fn) if tp + fn else None,
                    "predicted": predictions,
                    "scores": {pid: scores[pid] for pid in sorted(labels)},
                }
            )
        else:
            report["error"] = "calibration needs non-empty latent and unseen classes"
        self.path("diagnostic_report.json").write_text(canon_json(_json_safe(report)))

    def stage_report(self) -> None:
        zmap = self._z_map()
        rmap = self._repeat_map()
        meas = self._measure_map()
        labels, window = self._classes()
        flavors = json.loads(self.path("corpus", "flavors.json").read_text())
        trainc = self._train_corpus()
        base_flavor_by_doc: dict[int, str] = {}
        plain = iter(flavors["base"])
        for m in trainc.manifest:
            base_flavor_by_doc[m.doc_id] = "canary" if m.canary else next(plain)
        rows = []
        for cohort, p in self.load_probes():
            if cohort == "holdout":
                flavor = flavors["holdout"][p.source_doc]
            else:
                flavor = base_flavor_by_doc[p.source_doc]
            m = meas[p.probe_id]
            rows.append(
                (
                    p.probe_id,
                    cohort,
                    flavor,
                    p.source_doc,
                    p.source_offset,
                    rmap[p.probe_id],
                    zmap[p.probe_id],
                    int(m["kl_ld"]),
                    float(m["ce_loss"]),
                    labels.get(p.probe_id, ""),
                )
            )
        _write_csv(
            self.path("probe_stats.csv"),
            [
                "probe_id",
                "cohort",
                "flavor",
                "source_doc",
                "source_offset",
                "repeat_count",
                "z_complexity",
                "kl_ld",
                "ce_loss",
                "class_label",
            ],
            rows,
        )
        dynamics = json.loads(self.path("dynamics_report.json").read_text())
        perturb_rep = json.loads(self.path("perturb_report.json").read_text())
        diag = json.loads(self.path("diagnostic_report.json").read_text())
        summary = {
            "config_hash": self.config_hash,
            "n_probes": len(rows),
            "classes": {
                lab: sum(1 for v in labels.values() if v == lab)
                for lab in (LATENT, NEVER_MEMORIZED, UNSEEN_CONTROL)
            },
            "window": list(window),
            "canary_bins": dynamics.get("canary_bins", {}),
            "canary_spearman_log_repeats_vs_kl": dynamics.get(
                "canary_spearman_log_repeats_vs_kl"
            ),
            "single_occurrence": dynamics.get("single_occurrence", {}),
            "memorization_fit": dynamics.get("memorization_fit", {}),
            "laplace": dynamics.get("laplace", {}),
            "stationarity_normalized_slope_ci": dynamics.get("stationarity", {}).get(
                "normalized_slope_ci"
            ),
            "random_walk_control": dynamics.get("random_walk_control", {}),
            "perturbation_tests": perturb_rep.get("tests", {}),
            "diagnostic_auc": diag.get("auc"),
        }
        self.path("summary.json").write_text(canon_json(_json_safe(summary)))
        from .charts import emit_charts

        emit_charts(self.out)


def run_pipeline(out_dir: str | Path, config: dict | None = None) -> Path:
    """Full pipeline under ``out_dir``; returns the output directory."""
    pipe = AuditPipeline(out_dir, config)
    pipe.run()
    return pipe.out
