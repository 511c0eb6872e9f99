"""Acceptance gate: thirteen checks over oracles and one full desk-scale run.

Checks 1, 2, 11, and 12 are self-contained oracle comparisons.  Checks 3-10
read the artifacts of a complete pipeline run on the default (desk) profile,
executed once per configuration into a stable scratch directory; the staged
resume makes repeat sessions cheap.  Check 13 exercises the installed command
line twice and compares bytes.  Each check reports one PASS/FAIL line in the
terminal summary (see conftest.py).
"""

import csv
import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from memaudit.corpus import Corpus, Probe, canary_probes, extract_probes, plant_canaries
from memaudit.metric import levenshtein
from memaudit.model import (
    CheckpointRecord,
    ModelConfig,
    _forward,
    _softmax,
    init_params,
    load_checkpoint,
    loss_and_grads,
    param_count,
    perturb,
    save_checkpoint,
    weight_delta,
)
from memaudit.pipeline import canon_json, load_config, run_pipeline
from memaudit.repeats import brute_force_repeats, build_index, find_repeats
from memaudit.synth import canary_grid, synth_docs

# ------------------------------------------------------------ shared fixtures


@pytest.fixture(scope="session")
def desk_run():
    """One full pipeline run on the default profile, reused across checks."""
    cfg = load_config()
    tag = canon_json(cfg)
    import hashlib

    digest = hashlib.sha256(tag.encode()).hexdigest()[:12]
    out = Path(tempfile.gettempdir()) / f"memaudit-acceptance-{digest}"
    run_pipeline(out, cfg)
    return out


def _json(path: Path) -> dict:
    return json.loads(path.read_text())


def _csv_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------- 1: edit-distance oracles


def _full_dp_batch(a: np.ndarray, b: np.ndarray) -> int:
    """Row-by-row full-matrix DP, vectorized along the row."""
    m, n = len(a), len(b)
    prev = np.arange(n + 1)
    idx = np.arange(1, n + 1)
    for i in range(1, m + 1):
        cost = (b != a[i - 1]).astype(np.int64)
        row = np.empty(n + 1, dtype=np.int64)
        row[0] = i
        row[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        u = row - np.arange(n + 1)
        np.minimum.accumulate(u, out=u)
        row = u + np.arange(n + 1)
        prev = row
    return int(prev[n])


def _exhaustive(a: tuple, b: tuple) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        _exhaustive(a[1:], b) + 1,
        _exhaustive(a, b[1:]) + 1,
        _exhaustive(a[1:], b[1:]) + (a[0] != b[0]),
    )


@pytest.mark.criterion(1, "banded Levenshtein equals full DP and exhaustive recursion")
def test_metric_oracle():
    t0 = time.time()
    rng = np.random.default_rng(101)
    for trial in range(1000):
        top = 5 if trial % 2 else 256
        a = rng.integers(0, top, rng.integers(0, 65))
        b = rng.integers(0, top, rng.integers(0, 65))
        assert levenshtein(a, b) == _full_dp_batch(a, b), (a.tolist(), b.tolist())
    for _ in range(200):
        a = tuple(int(x) for x in rng.integers(0, 3, rng.integers(0, 9)))
        b = tuple(int(x) for x in rng.integers(0, 3, rng.integers(0, 9)))
        assert levenshtein(np.array(a), np.array(b)) == _exhaustive(a, b)
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"metric oracle took {elapsed:.1f}s"


# ---------------------------------------------- 2: repeat-finder vs brute force


@pytest.mark.criterion(2, "find_repeats equals brute force incl. 29/30 boundary")
def test_repeat_finder_oracle():
    t0 = time.time()
    docs, _ = synth_docs(170, seed=21)
    specs = canary_grid([2, 5], per_count=2, seed=21)
    planted = plant_canaries(Corpus(docs), specs, seed=21)
    docs = [d.copy() for d in planted.documents]
    n_tokens = sum(len(d) for d in docs)
    assert n_tokens >= 10**5, f"corpus only {n_tokens} tokens"

    # splice a 30-token run (must be found) and a 29-token run (must not),
    # with flanks forced to differ so neither run can extend
    big = sorted(range(len(docs)), key=lambda i: -len(docs[i]))
    a_id, b_id, c_id, d_id = big[:4]
    for src_id, dst_id, length in ((a_id, b_id, 30), (c_id, d_id, 29)):
        src, dst = docs[src_id], docs[dst_id]
        run = src[100 : 100 + length]
        dst[60 : 60 + length] = run
        dst[59] = (int(src[99]) + 1) % 256
        dst[60 + length] = (int(src[100 + length]) + 1) % 256
    corpus = Corpus(docs, planted.manifest)

    probes = list(canary_probes(corpus))
    for pid, doc_id in (("splice30", b_id), ("splice29", d_id)):
        off = 20  # target = tokens [52, 116) of the doc, covering the splice
        probes.append(
            Probe(
                pid,
                corpus.documents[doc_id][off : off + 32].copy(),
                corpus.documents[doc_id][off + 32 : off + 96].copy(),
                doc_id,
                off,
            )
        )
    fill = extract_probes(corpus, count=200 - len(probes), seed=22, dedupe=True)
    probes.extend(fill)
    assert len(probes) == 200

    fast = find_repeats(probes, build_index(corpus, 30), corpus, 30)
    slow = brute_force_repeats(probes, corpus, 30)
    key = lambda h: (h.probe_id, h.doc_id, h.doc_offset, h.match_len)
    assert sorted(map(key, fast)) == sorted(map(key, slow))

    by_probe = {}
    for h in fast:
        by_probe.setdefault(h.probe_id, []).append(h)
    hits30 = [h for h in by_probe.get("splice30", []) if h.doc_id == a_id]
    assert len(hits30) == 1 and hits30[0].match_len == 30
    assert not any(h.doc_id == c_id for h in by_probe.get("splice29", []))
    elapsed = time.time() - t0
    assert elapsed < 60.0, f"repeat oracle took {elapsed:.1f}s"


# ------------------------------------------------- 3: planted canary counts


@pytest.mark.criterion(3, "count_repeats returns exactly r-1 for every canary")
def test_canary_repeat_counts(desk_run):
    counts = {
        r["probe_id"]: int(r["repeat_count"])
        for r in _csv_rows(desk_run / "repeat_counts.csv")
    }
    manifest = _json(desk_run / "corpus" / "train" / "manifest.json")
    r_of = {}
    for doc in manifest["documents"]:
        if doc["canary"]:
            r_of.setdefault(doc["canary_id"], doc["repeat_count"])
    assert len(r_of) >= 50
    for cid, r in sorted(r_of.items()):
        assert counts[f"canary_{cid}"] == r - 1, f"canary {cid}: r={r}"


# --------------------------------------------- 4: recall vs repeats direction


@pytest.mark.criterion(4, "mean final kl-LD monotone down repeat bins, rho <= -0.8")
def test_repeat_bins_monotone(desk_run):
    report = _json(desk_run / "dynamics_report.json")
    bins = report["canary_bins"]
    values = [1, 4, 16, 64, 256]
    means = [bins[str(r)]["mean_kl"] for r in values]
    assert all(bins[str(r)]["n"] >= 3 for r in values)
    assert all(means[i] >= means[i + 1] for i in range(len(means) - 1)), means
    rho = stats.spearmanr(np.log(values), means).statistic
    assert rho <= -0.8, f"rho={rho:.3f} over bin means {means}"

    # full-pipeline wall time, from the first (non-resumed) run block
    block = (desk_run / "run_log.txt").read_text().split("\n\n")[0]
    seconds = [
        float(line.rsplit(" ", 1)[1][:-1])
        for line in block.splitlines()
        if line.endswith("s") and "resumed" not in line
    ]
    assert seconds, "no timed stages in first run block"
    total = sum(seconds)
    assert total <= 1800.0, f"pipeline took {total:.0f}s"


# ------------------------------------------ 5: complexity vs recall direction


@pytest.mark.criterion(5, "Spearman(z-complexity, kl-LD) >= 0.3 on single-occurrence probes")
def test_complexity_correlation(desk_run):
    single = _json(desk_run / "dynamics_report.json")["single_occurrence"]
    assert single["n"] >= 500
    assert single["spearman_z_vs_kl"] >= 0.3, single


# ------------------------------------------------------------- 6: joint fit


@pytest.mark.criterion(6, "fit: negative log-repeats coef, positive complexity coef")
def test_memorization_fit(desk_run):
    fit = _json(desk_run / "dynamics_report.json")["memorization_fit"]
    assert fit["coef_log_repeats"] < 0, fit
    assert fit["coef_complexity"] > 0, fit
    assert np.isfinite(fit["r_squared"])  # reported, no floor


# ------------------------------------------------------ 7: delta symmetry


@pytest.mark.criterion(7, "pooled checkpoint deltas: |skew| <= 0.3, median 0")
def test_delta_symmetry(desk_run):
    report = _json(desk_run / "dynamics_report.json")
    deltas = report["deltas"]
    assert deltas["n"] >= 1000
    assert abs(deltas["skewness"]) <= 0.3, deltas
    assert deltas["median"] == 0.0, deltas
    laplace = report["laplace"]
    assert {"location", "scale", "ks_stat"} <= set(laplace), laplace


# ------------------------------------------------------- 8: stationarity


@pytest.mark.criterion(8, "normalized variance slope CI contains 0; random walk control rejects")
def test_stationarity(desk_run):
    report = _json(desk_run / "dynamics_report.json")
    st = report["stationarity"]
    lo, hi = st["normalized_slope_ci"]
    assert lo <= 0.0 <= hi, st["normalized_slope_ci"]
    control = report["random_walk_control"]
    assert control["n_sims"] >= 100
    assert control["fraction_ci_above_zero"] >= 0.95, control


# ------------------------------------------- 9: perturbation recovery


@pytest.mark.criterion(9, "latent < unseen under best-of-perturbations; never ~ unseen")
def test_perturbation_recovery(desk_run):
    report = _json(desk_run / "perturb_report.json")
    classes = report["classes"]
    assert classes["latent"]["n"] >= 30, classes["latent"]
    assert classes["unseen_control"]["n"] >= 30, classes["unseen_control"]
    assert report["tests"]["latent_vs_unseen_one_sided"]["p"] < 0.01, report["tests"]
    assert report["tests"]["never_vs_unseen_two_sided"]["p"] >= 0.05, report["tests"]


# ------------------------------------------------ 10: loss-based diagnostic


@pytest.mark.criterion(10, "ce_loss AUC latent vs unseen > 0.8")
def test_diagnostic_auc(desk_run):
    report = _json(desk_run / "diagnostic_report.json")
    assert report["auc"] > 0.8, report


# ----------------------------------------------------- 11: model numerics


@pytest.mark.criterion(11, "gradcheck <= 1e-3; softmax rows sum to 1; checkpoint round trip")
def test_model_numerics(tmp_path):
    cfg = ModelConfig(vocab_size=30, context_window=16, layer_count=2, model_width=24, head_count=3)
    rng = np.random.default_rng(7)
    params = {k: v.astype(np.float64) for k, v in init_params(cfg, rng).items()}
    x = rng.integers(0, cfg.vocab_size, (2, 9))
    y = rng.integers(0, cfg.vocab_size, (2, 9))
    _, grads = loss_and_grads(params, x, y, cfg)
    h = 1e-5
    worst = 0.0
    pick = np.random.default_rng(8)
    names = sorted(params)
    for _ in range(120):
        name = names[pick.integers(len(names))]
        flat = params[name].reshape(-1)
        idx = int(pick.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        up, _ = loss_and_grads(params, x, y, cfg)
        flat[idx] = orig - h
        dn, _ = loss_and_grads(params, x, y, cfg)
        flat[idx] = orig
        numeric = (up - dn) / (2 * h)
        analytic = float(grads[name].reshape(-1)[idx])
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    assert worst <= 1e-3, f"worst relative gradient error {worst:.2e}"

    logits = _forward(params, x, cfg)
    probs = _softmax(logits.astype(np.float64))
    assert np.abs(probs.sum(axis=-1) - 1.0).max() <= 1e-6

    f32 = {k: v.astype(np.float32) for k, v in params.items()}
    record = CheckpointRecord(step=3, params=f32, config=cfg, rng_state={"seed": 7})
    p1 = tmp_path / "a.maud"
    p2 = tmp_path / "b.maud"
    save_checkpoint(record, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


# ------------------------------------------- 12: perturbation displacement


@pytest.mark.criterion(12, "weight delta within 5% of sigma*sqrt(P), P >= 1e5")
def test_perturbation_magnitude():
    cfg = ModelConfig()
    params = init_params(cfg, np.random.default_rng(3))
    p_total = param_count(params)
    assert p_total >= 10**5
    base = CheckpointRecord(step=0, params=params, config=cfg, rng_state={})
    sigma = 2e-3
    expected = sigma * np.sqrt(p_total)
    for seed in (0, 1, 2):
        delta = weight_delta(base, perturb(base, sigma=sigma, seed=seed))
        assert abs(delta / expected - 1.0) <= 0.05, (delta, expected)


# ------------------------------------------------ 13: CLI byte determinism


@pytest.mark.criterion(13, "two `memaudit run` from one manifest: byte-identical CSV/JSON")
def test_cli_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cmd = [sys.executable, "-m", "memaudit.cli"]
    first = subprocess.run(
        cmd + ["--out", str(a), "--config", "quick", "run"],
        capture_output=True, text=True,
    )
    assert first.returncode == 0, first.stderr
    second = subprocess.run(
        cmd + ["--out", str(b), "run", "--manifest", str(a / "manifest.json")],
        capture_output=True, text=True,
    )
    assert second.returncode == 0, second.stderr
    compared = 0
    for p in sorted(a.rglob("*")):
        if p.suffix not in (".csv", ".json"):
            continue
        rel = p.relative_to(a)
        assert (b / rel).read_bytes() == p.read_bytes(), f"{rel} differs"
        compared += 1
    assert compared >= 10
