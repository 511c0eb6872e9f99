"""Repeat detection: find training documents sharing long token runs with probes.

A training document is a "repeat" of a probe when it shares a contiguous token
run of at least ``min_len`` (default 30) with the probe's target.  Detection
uses an n-gram rolling-hash index with token-verified bidirectional extension;
``brute_force_repeats`` is the dynamic-programming oracle with the identical
output contract.

Both paths suppress the probe's own source window: positions of the source
document inside [source_offset, source_offset + k + l) are masked, so a run
must fit entirely in the unmasked remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Probe
from .defaults import MIN_MATCH_LEN, NGRAM

# polynomial rolling-hash base (64-bit FNV prime), wraparound arithmetic mod 2**64
HASH_BASE = np.uint64(0x100000001B3)


@dataclass(frozen=True)
class RepeatHit:
    """Longest shared run between one probe's target and one document."""

    probe_id: str
    doc_id: int
    doc_offset: int
    match_len: int


def _window_hashes(tokens: np.ndarray, n: int) -> np.ndarray:
    """Hashes of every length-n window: h = sum token * BASE**(n-1-i) mod 2**64."""
    tokens = np.asarray(tokens).astype(np.uint64)
    if len(tokens) < n:
        return np.empty(0, dtype=np.uint64)
    h = np.zeros(len(tokens) - n + 1, dtype=np.uint64)
    for m in range(n):
        h = h * HASH_BASE + tokens[m : m + len(h)]
    return h


class NGramIndex:
    """Immutable posting table over every length-n window of a corpus.

    Postings are stored as parallel arrays sorted by (hash, doc, offset) so a
    lookup is two binary searches.
    """

    def __init__(self, n: int, hashes: np.ndarray, doc_ids: np.ndarray, offsets: np.ndarray):
        if n < 2:
            raise ValueError("n-gram length must be >= 2")
        self.n = int(n)
        order = np.lexsort((offsets, doc_ids, hashes))
        self.hashes = np.ascontiguousarray(hashes[order])
        self.doc_ids = np.ascontiguousarray(doc_ids[order])
        self.offsets = np.ascontiguousarray(offsets[order])

    @property
    def size(self) -> int:
        return len(self.hashes)

    def lookup(self, h: np.uint64) -> tuple[int, int]:
        """Half-open posting range [lo, hi) for one window hash."""
        lo = int(np.searchsorted(self.hashes, h, side="left"))
        hi = int(np.searchsorted(self.hashes, h, side="right"))
        return lo, hi


def build_index(corpus: Corpus, n: int = NGRAM) -> NGramIndex:
    """Index every length-n token window of every document."""
    if n < 2:
        raise ValueError("n-gram length must be >= 2")
    hash_parts, doc_parts, off_parts = [], [], []
    for m in corpus.manifest:
        h = _window_hashes(corpus.doc(m.doc_id), n)
        if len(h) == 0:
            continue
        hash_parts.append(h)
        doc_parts.append(np.full(len(h), m.doc_id, dtype=np.int64))
        off_parts.append(np.arange(len(h), dtype=np.int64))
    if not hash_parts:
        empty = np.empty(0, dtype=np.uint64)
        return NGramIndex(n, empty, empty.astype(np.int64), empty.astype(np.int64))
    return NGramIndex(
        n,
        np.concatenate(hash_parts),
        np.concatenate(doc_parts),
        np.concatenate(off_parts),
    )


def _allowed_pieces(n_tokens: int, probe: Probe, doc_id: int) -> list[tuple[int, int]]:
    """Unmasked [start, stop) spans of a document, excluding the probe's own window."""
    if doc_id != probe.source_doc:
        return [(0, n_tokens)]
    w0 = probe.source_offset
    w1 = probe.source_offset + probe.k + probe.l
    pieces = []
    if w0 > 0:
        pieces.append((0, w0))
    if w1 < n_tokens:
        pieces.append((w1, n_tokens))
    return pieces


def _piece_containing(pieces: list[tuple[int, int]], start: int, stop: int):
    for s, e in pieces:
        if s <= start and stop <= e:
            return s, e
    return None


def find_repeats(
    probes: list[Probe],
    index: NGramIndex,
    corpus: Corpus,
    min_len: int = MIN_MATCH_LEN,
) -> list[RepeatHit]:
    """One RepeatHit per (probe, document) pair sharing a run of >= min_len tokens.

    match_len is the longest shared run; doc_offset is the smallest start among
    runs of that length.  Every run is verified token-by-token, so hash
    collisions never produce false hits.
    """
    if min_len < index.n:
        raise ValueError(f"min_len={min_len} below index n-gram length {index.n}")
    n = index.n
    hits: list[RepeatHit] = []
    for probe in probes:
        target = np.asarray(probe.target)
        thashes = _window_hashes(target, n)
        if len(thashes) == 0:
            continue
        best: dict[int, tuple[int, int]] = {}  # doc -> (match_len, doc_offset)
        covered: dict[tuple[int, int], list[tuple[int, int]]] = {}  # (doc, diag) -> target spans
        lo = np.searchsorted(index.hashes, thashes, side="left")
        hi = np.searchsorted(index.hashes, thashes, side="right")
        piece_cache: dict[int, list[tuple[int, int]]] = {}
        for poff in range(len(thashes)):
            for idx in range(int(lo[poff]), int(hi[poff])):
                doc_id = int(index.doc_ids[idx])
                off = int(index.offsets[idx])
                key = (doc_id, off - poff)
                if any(ps <= poff < pe for ps, pe in covered.get(key, ())):
                    continue
                doc = corpus.doc(doc_id)
                if doc_id not in piece_cache:
                    piece_cache[doc_id] = _allowed_pieces(len(doc), probe, doc_id)
                piece = _piece_containing(piece_cache[doc_id], off, off + n)
                if piece is None:
                    continue
                if not np.array_equal(doc[off : off + n], target[poff : poff + n]):
                    continue  # hash collision
                s, e = piece
                left = 0
                while poff - left > 0 and off - left > s and doc[off - left - 1] == target[poff - left - 1]:
                    left += 1
                right = n
                while poff + right < len(target) and off + right < e and doc[off + right] == target[poff + right]:
                    right += 1
                run_len = left + right
                run_poff = poff - left
                run_off = off - left
                covered.setdefault(key, []).append((run_poff, run_poff + run_len - n + 1))
                if run_len < min_len:
                    continue
                prev = best.get(doc_id)
                if prev is None or run_len > prev[0] or (run_len == prev[0] and run_off < prev[1]):
                    best[doc_id] = (run_len, run_off)
        for doc_id in sorted(best):
            run_len, run_off = best[doc_id]
            hits.append(RepeatHit(probe.probe_id, doc_id, run_off, run_len))
    return hits


def count_repeats(probe_id: str, hits: list[RepeatHit]) -> int:
    """Number of distinct documents sharing a qualifying run with this probe."""
    return len({h.doc_id for h in hits if h.probe_id == probe_id})


def brute_force_repeats(
    probes: list[Probe],
    corpus: Corpus,
    min_len: int = MIN_MATCH_LEN,
) -> list[RepeatHit]:
    """Oracle with the same output contract, by longest-common-substring DP.

    Documents are laid out in one stream with -1 separators; for each probe the
    suffix-run recurrence D[j, pos] = (D[j-1, pos-1] + 1 if tokens match else 0)
    is swept over the target, and per-document maxima are read off the stream.
    """
    doc_lens = [m.n_tokens for m in corpus.manifest]
    starts = []
    pos = 0
    for length in doc_lens:
        starts.append(pos)
        pos += length + 1  # one separator slot after each document
    stream = np.full(max(pos, 1), -1, dtype=np.int64)
    for m, start in zip(corpus.manifest, starts):
        stream[start : start + m.n_tokens] = corpus.doc(m.doc_id)
    hits: list[RepeatHit] = []
    for probe in probes:
        target = np.asarray(probe.target, dtype=np.int64)
        sd = probe.source_doc
        w0 = starts[sd] + probe.source_offset
        w1 = w0 + probe.k + probe.l
        saved = stream[w0:w1].copy()
        stream[w0:w1] = -1
        prev = np.zeros(len(stream), dtype=np.int64)
        run_best = np.zeros(len(stream), dtype=np.int64)
        cur = np.empty_like(prev)
        for tj in target:
            eq = stream == tj
            cur[0] = 1 if eq[0] else 0
            np.multiply(prev[:-1] + 1, eq[1:], out=cur[1:])
            np.maximum(run_best, cur, out=run_best)
            prev, cur = cur, prev
        stream[w0:w1] = saved
        for doc_id, (start, length) in enumerate(zip(starts, doc_lens)):
            seg = run_best[start : start + length]
            if len(seg) == 0:
                continue
            m_len = int(seg.max())
            if m_len < min_len:
                continue
            end = int(np.argmax(seg == m_len))
            hits.append(RepeatHit(probe.probe_id, doc_id, end - m_len + 1, m_len))
    return hits
