"""Desk-scale memorization audit toolkit for byte-level language models.

Train a small autoregressive model on a corpus with planted canaries, then
measure memorization (kl-LD), relate it to repetition and z-complexity, track
its dynamics across checkpoints, probe latent memories via weight
perturbation, and screen for them with a cross-entropy diagnostic.
"""

__version__ = "0.1.0"
