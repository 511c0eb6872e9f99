"""Shared default constants for the audit metrics and experiment profiles."""

# Probe geometry: k context tokens conditioning an l-token continuation.
K = 32
L = 64

# A training example counts as a repeat of a probe target when they share a
# contiguous token run at least this long.
NGRAM = 30
MIN_MATCH_LEN = 30

# Weight-perturbation recovery: noise std and number of independent trials.
SIGMA = 2e-3
TRIALS = 200

# Memorization-class thresholds, expressed as fractions of l so they transfer
# to target lengths other than 64 (10/64 and 50/64 at the default l).
MEMORIZED_FRAC = 10 / 64
UNMEMORIZED_FRAC = 50 / 64
