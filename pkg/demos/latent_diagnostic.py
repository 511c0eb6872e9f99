#!/usr/bin/env python3
# A canary the model saw during training can stop being reproducible verbatim
# yet remain detectable: its teacher-forced cross entropy stays well below
# that of text the model never saw. This demo trains with planted canaries,
# labels each one from its checkpoint trajectory, then shows the CE screen
# separating trained-on canaries from held-out text.

from dataclasses import replace

import numpy as np

from memaudit.corpus import Corpus, canary_probes, extract_probes, plant_canaries
from memaudit.diagnostic import calibrate, diagnose, score_probes
from memaudit.dynamics import classify_probes, compute_trajectories
from memaudit.model import ModelConfig, train
from memaudit.synth import canary_grid, synth_docs


def main():
    docs, _ = synth_docs(28, seed=41)
    train_corpus = Corpus(docs[:22])
    holdout = Corpus(docs[22:])

    specs = canary_grid((8, 24), per_count=3, seed=41)
    planted = plant_canaries(train_corpus, specs, seed=41)

    config = ModelConfig(
        batch_size=8,
        learning_rate=1e-3, final_lr_fraction=0.25, weight_decay=0.0,
        total_steps=800, checkpoint_every=50, warmup_steps=40, seed=41,
    )
    print(f"training {config.total_steps} steps on "
          f"{sum(len(d) for d in planted.documents)} tokens")
    store = train(planted, config)

    # Holdout probes must not collide with training doc ids, or they would
    # inherit a first-encounter step and stop counting as unseen.
    n_train = len(planted.documents)
    probes = canary_probes(planted)
    unseen = [replace(p, probe_id=f"holdout_{i:02d}", source_doc=n_train + i)
              for i, p in enumerate(extract_probes(holdout, count=30, seed=6,
                                                   dedupe=True))]
    probes += unseen

    checkpoints = [store.get(s) for s in store.steps()]
    trajectories = compute_trajectories(
        probes, checkpoints, first_encounter=store.first_encounter)
    labels = classify_probes(trajectories)

    census = {}
    for lab in labels.values():
        census[lab] = census.get(lab, 0) + 1
    print(f"trajectory classes: {census}")

    latent_ids = {p for p, lab in labels.items() if lab == "latent"}
    unseen_ids = {p for p, lab in labels.items() if lab == "unseen_control"}
    if not latent_ids:
        print("no canary crossed from unmemorized to memorized at this scale;"
              " rerun with more steps")
        return

    # Score at a checkpoint where the latent canaries were not yet verbatim:
    # the screen should work before recall is visible in the output.
    by_id = {t.probe_id: t for t in trajectories}
    steps = store.steps()
    early = steps[1]
    for s_idx in range(1, len(steps)):
        med = np.median([by_id[p].values()[s_idx] for p in latent_ids])
        if med <= 50:
            break
        early = steps[s_idx]
    print(f"scoring at step {early} (latent canaries not yet verbatim there)")

    ckpt = store.get(early)
    latent_probes = [p for p in probes if p.probe_id in latent_ids]
    unseen_probes = [p for p in probes if p.probe_id in unseen_ids]
    latent_ce = score_probes(ckpt, latent_probes)
    unseen_ce = score_probes(ckpt, unseen_probes)

    print(f"\nmean CE, latent canaries: {latent_ce.mean():.3f} nats "
          f"(n={len(latent_ce)})")
    print(f"mean CE, unseen holdout:  {unseen_ce.mean():.3f} nats "
          f"(n={len(unseen_ce)})")

    cal = calibrate(latent_ce, unseen_ce)
    print(f"\nrank AUC {cal.auc:.3f}; threshold {cal.threshold:.3f} nats "
          f"gives TPR {cal.tpr:.2f} at FPR {cal.fpr:.2f}")

    flags = diagnose(np.concatenate([latent_ce, unseen_ce]), cal.threshold)
    print(f"flagged as latent: {int(flags[:len(latent_ce)].sum())}"
          f"/{len(latent_ce)} canaries, "
          f"{int(flags[len(latent_ce):].sum())}/{len(unseen_ce)} holdout")


if __name__ == "__main__":
    main()
