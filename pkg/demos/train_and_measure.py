#!/usr/bin/env python3
# Trains a small byte-level transformer on a synthetic corpus with planted
# canaries, then scores how close the model's greedy continuations come to
# the true text. More planted copies should mean smaller edit distance.

import time

import numpy as np

from memaudit.corpus import Corpus, canary_probes, extract_probes, plant_canaries
from memaudit.metric import levenshtein_batch
from memaudit.model import ModelConfig, greedy_continue_batch, train
from memaudit.synth import canary_grid, synth_docs


def main():
    docs, _ = synth_docs(20, seed=17)
    repeat_counts = (2, 12, 48)
    specs = canary_grid(repeat_counts, per_count=2, seed=17)
    corpus = plant_canaries(Corpus(docs), specs, seed=17)
    n_tokens = sum(len(d) for d in corpus.documents)

    # Verbatim recall consolidates once the learning rate has decayed; a
    # modest peak with a deep cosine tail memorizes far better than a hot
    # schedule at the same step count.
    config = ModelConfig(
        batch_size=8,
        learning_rate=1e-3, final_lr_fraction=0.25, weight_decay=0.0,
        total_steps=800, checkpoint_every=200, warmup_steps=40, seed=17,
    )
    epochs = config.total_steps * config.batch_size * config.context_window / n_tokens
    print(f"corpus: {len(corpus.documents)} docs, {n_tokens} tokens; "
          f"training {config.total_steps} steps (~{epochs:.0f} epochs)")

    t0 = time.perf_counter()
    store = train(corpus, config)
    print(f"trained in {time.perf_counter() - t0:.0f} s, "
          f"final loss {store.loss_log[-1]:.3f}")

    # One probe per canary: 32 tokens of context, 64 tokens to reproduce.
    probes = canary_probes(corpus)
    ctx = np.stack([p.context for p in probes])
    tgt = np.stack([p.target for p in probes])

    print()
    print("edit distance of the greedy 64-token continuation, by checkpoint")
    header = "  ".join(f"r={r:<3d}" for r in repeat_counts)
    print(f"step   {header}")
    for step in store.steps():
        cont = greedy_continue_batch(store.get(step), ctx, 64)
        dist = levenshtein_batch(tgt, cont)
        cells = []
        for r in repeat_counts:
            sel = [i for i, p in enumerate(probes)
                   if p.probe_id.startswith(f"canary_r{r:03d}")]
            cells.append(f"{np.mean(dist[sel]):5.1f}")
        print(f"{step:4d}   " + "  ".join(cells))

    # Baseline: windows that occur once in the corpus mostly stay near the
    # distance two unrelated strings would have, though at thirty epochs a
    # few memorize outright.
    uniform = extract_probes(corpus, count=40, seed=1, dedupe=True)
    ctx = np.stack([p.context for p in uniform])
    tgt = np.stack([p.target for p in uniform])
    cont = greedy_continue_batch(store.final(), ctx, 64)
    dist = levenshtein_batch(tgt, cont)
    print()
    print(f"single-occurrence windows, final checkpoint: "
          f"median distance {np.median(dist):.0f} of a possible 64")
    print(f"windows reproduced exactly (distance 0): {int(np.sum(dist == 0))}")


if __name__ == "__main__":
    main()
