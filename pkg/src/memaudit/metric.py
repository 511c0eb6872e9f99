"""Edit-distance memorization metrics over greedy model continuations.

Distances are plain non-negative ints.  A probe's score is the token-level
Levenshtein distance between its true continuation and the model's greedy
continuation; 0 means exact memorization.
"""

from __future__ import annotations

import numpy as np

from .corpus import Probe

_INF = 1 << 20  # sentinel for cells provably outside any distance-<=cap path


def _as_tokens(seq) -> np.ndarray:
    if isinstance(seq, (bytes, bytearray)):
        return np.frombuffer(bytes(seq), dtype=np.uint8).astype(np.int64)
    return np.asarray(seq, dtype=np.int64).ravel()


def levenshtein(a, b, cap: int | None = None) -> int:
    """Exact Levenshtein distance between token sequences ``a`` and ``b``.

    Unit costs for insertion, deletion and substitution.  When ``cap`` is
    given, cells with |i-j| > cap are pruned and the scan exits as soon as a
    full row exceeds ``cap``; the return value is then some value >= cap
    rather than the exact distance.
    """
    a = _as_tokens(a)
    b = _as_tokens(b)
    m, n = len(a), len(b)
    if cap is not None and abs(m - n) > cap:
        return abs(m - n)
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = offsets.copy()
    if cap is not None and cap + 1 <= n:
        prev[cap + 1 :] = _INF
    c = np.empty(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        ai = a[i - 1]
        np.minimum(prev[:-1] + (b != ai), prev[1:] + 1, out=c[1:])
        c[0] = i
        # resolve the in-row insertion chain: row[j] = min_{k<=j} c[k] + (j-k)
        c -= offsets
        np.minimum.accumulate(c, out=c)
        c += offsets
        if cap is not None:
            lo = i - cap
            hi = i + cap
            if lo > 0:
                c[:lo] = _INF
            if hi + 1 <= n:
                c[hi + 1 :] = _INF
            row_min = int(c[max(lo, 0) : hi + 1].min())
            if row_min > cap:
                return row_min
        prev, c = c, prev
    return int(prev[n])


def levenshtein_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact distances for N aligned pairs: ``a`` is (N, m), ``b`` is (N, n)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("expected matching 2-D batches of sequences")
    n_pairs, m = a.shape
    n = b.shape[1]
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = np.broadcast_to(offsets, (n_pairs, n + 1)).copy()
    c = np.empty_like(prev)
    for i in range(1, m + 1):
        np.minimum(prev[:, :-1] + (b != a[:, i - 1 : i]), prev[:, 1:] + 1, out=c[:, 1:])
        c[:, 0] = i
        c -= offsets
        np.minimum.accumulate(c, axis=1, out=c)
        c += offsets
        prev, c = c, prev
    return prev[:, n].astype(np.int64)


def kl_ld(ckpt, probe: Probe, l: int | None = None, decode=None) -> int:
    """kl-Levenshtein distance of one probe under a checkpoint.

    Greedily decodes ``l`` tokens from the probe context (temperature 0, ties
    to the lowest token id) and returns the distance to the true continuation.
    """
    if l is None:
        l = probe.l
    if l != probe.l:
        raise ValueError(f"l={l} does not match the probe target length {probe.l}")
    if decode is None:
        from .model import greedy_continue

        decode = greedy_continue
    window = probe.window()
    if window.size and int(window.max()) >= ckpt.config.vocab_size:
        raise ValueError("probe tokens exceed the model vocabulary")
    continuation = decode(ckpt, probe.context, l)
    return levenshtein(probe.target, continuation)


def kl_memorized(ckpt, probe: Probe, decode=None) -> bool:
    """Strict exact-match memorization: true iff the kl-LD is zero."""
    return kl_ld(ckpt, probe, decode=decode) == 0
