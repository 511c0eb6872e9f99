#!/usr/bin/env python3
# Two uses of Gaussian weight noise. First, the L2 displacement of a
# perturbed checkpoint concentrates at sigma * sqrt(param count), which
# calibrates how far a given sigma actually moves the model. Second,
# sampling several perturbations and keeping the best continuation can
# recover text the unperturbed model no longer reproduces verbatim.

import numpy as np

from memaudit.corpus import Corpus, canary_probes, plant_canaries
from memaudit.metric import levenshtein_batch
from memaudit.model import (CheckpointRecord, ModelConfig,
                            best_of_perturbations_batch, greedy_continue_batch,
                            init_params, param_count, perturb, train,
                            weight_delta)
from memaudit.synth import canary_grid, synth_docs


def main():
    config = ModelConfig()
    rng = np.random.default_rng(0)
    ckpt = CheckpointRecord(
        step=0, params=init_params(config, rng), config=config,
        rng_state=rng.bit_generator.state,
    )
    n = param_count(ckpt.params)
    print(f"model has {n} parameters")
    print("sigma      predicted L2   measured L2   ratio")
    for sigma in (5e-4, 2e-3, 8e-3):
        predicted = sigma * np.sqrt(n)
        measured = weight_delta(ckpt, perturb(ckpt, sigma, seed=1))
        print(f"{sigma:7.0e}   {predicted:12.3f}   {measured:11.3f}   "
              f"{measured / predicted:.4f}")

    # Train until a heavily repeated canary reproduces exactly while a
    # moderately repeated one is only partway there, then try to shake the
    # partial reproduction the rest of the way out.
    docs, _ = synth_docs(20, seed=31)
    specs = canary_grid((12, 32), per_count=2, seed=31)
    corpus = plant_canaries(Corpus(docs), specs, seed=31)
    small = ModelConfig(
        batch_size=8,
        learning_rate=1e-3, final_lr_fraction=0.25, weight_decay=0.0,
        total_steps=700, checkpoint_every=100, warmup_steps=40, seed=31,
    )
    print(f"\ntraining {small.total_steps} steps on "
          f"{sum(len(d) for d in corpus.documents)} tokens")
    store = train(corpus, small)

    probes = canary_probes(corpus)
    ctx = np.stack([p.context for p in probes])
    tgt = np.stack([p.target for p in probes])
    final = store.final()
    base = levenshtein_batch(tgt, greedy_continue_batch(final, ctx, 64))

    trials, sigma = 24, 2e-3
    best, _, lds = best_of_perturbations_batch(
        final, probes, trials=trials, sigma=sigma, seed=7)
    print(f"\nbest of {trials} perturbations at sigma {sigma:g}")
    print("canary          unperturbed   best   median trial")
    for i, p in enumerate(probes):
        print(f"{p.probe_id:15s} {base[i]:11d}   {best[i]:4d}   "
              f"{np.median(lds[:, i]):12.0f}")
    print("\na best below the unperturbed value means some noise draw moved")
    print("the weights back toward a verbatim reproduction of the canary.")


if __name__ == "__main__":
    main()
