"""Cross-entropy screen for latent memorization.

A probe whose verbatim recall was destroyed by training noise or perturbation
can still sit in a low-loss basin.  Mean teacher-forced cross entropy over the
probe target separates such latent probes from never-seen controls without
running any perturbation trials; these helpers score probes, calibrate the
decision threshold on labeled cohorts, and apply it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Probe


def score_probes(ckpt, probes: list[Probe], batch: int = 512) -> np.ndarray:
    """Mean cross entropy (nats) of each probe's target under the checkpoint."""
    from .model import sequence_loss_batch

    out = np.empty(len(probes), dtype=np.float64)
    for lo in range(0, len(probes), batch):
        hi = min(lo + batch, len(probes))
        out[lo:hi] = sequence_loss_batch(ckpt, probes[lo:hi])
    return out


@dataclass(frozen=True)
class Calibration:
    threshold: float
    auc: float
    tpr: float  # at the chosen threshold
    fpr: float
    roc: tuple  # ((threshold, fpr, tpr), ...) in increasing threshold order


def rank_auc(latent_scores, control_scores) -> float:
    """P(latent < control) + 0.5 P(equal) over all cross pairs."""
    latent = np.asarray(latent_scores, dtype=np.float64)
    control = np.asarray(control_scores, dtype=np.float64)
    if latent.size == 0 or control.size == 0:
        raise ValueError("both score sets must be non-empty")
    less = (latent[:, None] < control[None, :]).sum()
    ties = (latent[:, None] == control[None, :]).sum()
    return float((less + 0.5 * ties) / (latent.size * control.size))


def calibrate(latent_scores, control_scores) -> Calibration:
    """Pick the score threshold separating latent probes from controls.

    Predicted latent means score < threshold, so latent probes are expected to
    score lower.  The threshold maximizes Youden's J = TPR - FPR over all
    candidate cuts (every observed score plus one above the maximum); ties go
    to the lowest threshold.
    """
    latent = np.asarray(latent_scores, dtype=np.float64)
    control = np.asarray(control_scores, dtype=np.float64)
    auc = rank_auc(latent, control)
    pooled = np.concatenate([latent, control])
    candidates = np.unique(pooled)
    candidates = np.append(candidates, candidates[-1] + 1.0)
    tpr = (latent[None, :] < candidates[:, None]).mean(axis=1)
    fpr = (control[None, :] < candidates[:, None]).mean(axis=1)
    j = tpr - fpr
    best = int(np.argmax(j))  # argmax takes the first, i.e. lowest, threshold
    roc = tuple(
        (float(t), float(f), float(p)) for t, f, p in zip(candidates, fpr, tpr)
    )
    return Calibration(
        threshold=float(candidates[best]),
        auc=auc,
        tpr=float(tpr[best]),
        fpr=float(fpr[best]),
        roc=roc,
    )


def diagnose(scores, threshold: float) -> np.ndarray:
    """Boolean latent-memorization predictions: score strictly below threshold."""
    return np.asarray(scores, dtype=np.float64) < threshold
