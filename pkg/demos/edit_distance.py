#!/usr/bin/env python3
# Compares the banded Levenshtein used for scoring continuations against a
# plain full dynamic program, on random token pairs of varying similarity.
# The two must agree exactly; the band only saves work.

import time

import numpy as np

from memaudit.metric import levenshtein, levenshtein_batch


def full_dp(a, b):
    # Textbook O(nm) Wagner-Fischer, kept as an independent reference.
    n, m = len(a), len(b)
    prev = np.arange(m + 1)
    for i in range(1, n + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        sub = prev[:-1] + (b != a[i - 1])
        for j in range(1, m + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub[j - 1])
        prev = cur
    return int(prev[m])


def mutate(rng, a, n_edits):
    # Apply random substitutions / insertions / deletions to a copy of a.
    b = list(a)
    for _ in range(n_edits):
        op = rng.integers(0, 3)
        pos = int(rng.integers(0, max(1, len(b))))
        if op == 0 and b:
            b[pos % len(b)] = int(rng.integers(0, 256))
        elif op == 1:
            b.insert(pos, int(rng.integers(0, 256)))
        elif b:
            del b[pos % len(b)]
    return np.array(b, dtype=np.int64)


def main():
    rng = np.random.default_rng(7)

    print("edit load   banded   full-dp   agree")
    for n_edits in (0, 1, 4, 16, 64):
        a = rng.integers(0, 256, size=64)
        b = mutate(rng, a, n_edits)
        d_band = levenshtein(a, b)
        d_full = full_dp(a, b)
        print(f"{n_edits:9d}   {d_band:6d}   {d_full:7d}   {d_band == d_full}")

    # The cap short-circuits once the distance provably exceeds it, which is
    # what makes scanning for near-exact regurgitation cheap.
    a = rng.integers(0, 256, size=64)
    b = rng.integers(0, 256, size=64)
    print()
    print(f"uncapped distance of two random strings: {levenshtein(a, b)}")
    print(f"same pair with cap=5 (early exit):       {levenshtein(a, b, cap=5)}")

    # Batch form used on model output: one row per (target, continuation).
    pairs = 2000
    tgt = rng.integers(0, 256, size=(pairs, 64))
    out = tgt.copy()
    flip = rng.random(size=(pairs, 64)) < 0.05
    out[flip] = rng.integers(0, 256, size=int(flip.sum()))
    t0 = time.perf_counter()
    dists = levenshtein_batch(tgt, out)
    dt = time.perf_counter() - t0
    print()
    print(f"batch of {pairs} pairs, 5% corrupted tokens: "
          f"median distance {np.median(dists):.0f}, {dt * 1e3:.0f} ms")
    exact = int(np.sum(dists == 0))
    print(f"pairs scored as exact reproductions: {exact}")


if __name__ == "__main__":
    main()
