"""Repeat-detection tests: index lookups, oracle agreement, boundary lengths."""

import numpy as np
import pytest

from memaudit.corpus import Corpus, Probe, tokenize
from memaudit.repeats import (
    NGramIndex,
    RepeatHit,
    _window_hashes,
    brute_force_repeats,
    build_index,
    count_repeats,
    find_repeats,
)


def corpus_of(docs):
    return Corpus([np.asarray(d, dtype=np.uint16) for d in docs])


def probe_from(corpus, doc_id, offset, k, l, pid=None):
    doc = corpus.doc(doc_id)
    return Probe(
        probe_id=pid or f"p{doc_id:06d}_{offset:05d}",
        context=doc[offset : offset + k].copy(),
        target=doc[offset + k : offset + k + l].copy(),
        source_doc=doc_id,
        source_offset=offset,
    )


def hit_set(hits):
    return {(h.probe_id, h.doc_id, h.doc_offset, h.match_len) for h in hits}


def test_index_window_counts():
    rng = np.random.default_rng(0)
    exact = rng.integers(0, 256, 30)
    short = rng.integers(0, 256, 29)
    longer = rng.integers(0, 256, 45)
    assert build_index(corpus_of([exact]), n=30).size == 1
    assert build_index(corpus_of([short]), n=30).size == 0
    assert build_index(corpus_of([exact, short, longer]), n=30).size == 1 + 0 + 16


def test_duplicated_doc_doubles_postings():
    doc = np.random.default_rng(1).integers(0, 256, 50)
    index = build_index(corpus_of([doc, doc]), n=30)
    for h in np.unique(_window_hashes(doc, 30)):
        lo, hi = index.lookup(h)
        assert hi - lo >= 2


def test_postings_point_at_matching_windows():
    rng = np.random.default_rng(2)
    docs = [rng.integers(0, 8, rng.integers(30, 80)) for _ in range(10)]
    corpus = corpus_of(docs)
    index = build_index(corpus, n=30)
    recomputed = np.array(
        [
            _window_hashes(corpus.doc(d)[o : o + 30], 30)[0]
            for d, o in zip(index.doc_ids, index.offsets)
        ],
        dtype=np.uint64,
    )
    assert np.array_equal(recomputed, index.hashes)


def test_index_rejects_tiny_n():
    with pytest.raises(ValueError):
        build_index(corpus_of([[1, 2, 3]]), n=1)


def test_min_len_below_n_rejected():
    corpus = corpus_of([np.arange(64) % 256])
    index = build_index(corpus, n=30)
    probe = probe_from(corpus, 0, 0, 4, 40)
    with pytest.raises(ValueError):
        find_repeats([probe], index, corpus, min_len=29)


def test_planted_copies_minus_self():
    rng = np.random.default_rng(3)
    canary = rng.integers(0, 256, 120)
    fillers = [rng.integers(0, 256, 150) for _ in range(20)]
    docs = [canary.copy() for _ in range(8)] + fillers
    corpus = corpus_of(docs)
    index = build_index(corpus, n=30)
    probe = probe_from(corpus, 0, 0, 32, 64, pid="canary_c0")
    hits = find_repeats([probe], index, corpus, min_len=30)
    assert len(hits) == 7
    assert {h.doc_id for h in hits} == set(range(1, 8))
    assert all(h.match_len == 64 and h.doc_offset == 32 for h in hits)
    assert count_repeats("canary_c0", hits) == 7
    assert hit_set(hits) == hit_set(brute_force_repeats([probe], corpus, min_len=30))


def test_unique_target_has_no_hits():
    rng = np.random.default_rng(4)
    docs = [rng.integers(0, 256, 200) for _ in range(30)]
    corpus = corpus_of(docs)
    index = build_index(corpus, n=30)
    probe = probe_from(corpus, 5, 10, 32, 64)
    assert find_repeats([probe], index, corpus) == []
    assert brute_force_repeats([probe], corpus) == []


def test_match_length_29_excluded_30_included():
    rng = np.random.default_rng(5)
    source = rng.integers(0, 256, 140)
    corpus29 = corpus_of([source, np.concatenate([rng.integers(0, 256, 40), source[42:71]])])
    corpus30 = corpus_of([source, np.concatenate([rng.integers(0, 256, 40), source[42:72]])])
    probe29 = probe_from(corpus29, 0, 0, 32, 64)
    probe30 = probe_from(corpus30, 0, 0, 32, 64)
    i29 = build_index(corpus29, n=30)
    i30 = build_index(corpus30, n=30)
    assert find_repeats([probe29], i29, corpus29, min_len=30) == []
    hits = find_repeats([probe30], i30, corpus30, min_len=30)
    assert hits == [RepeatHit(probe30.probe_id, 1, 40, 30)]
    assert brute_force_repeats([probe29], corpus29, min_len=30) == []
    assert hit_set(brute_force_repeats([probe30], corpus30, min_len=30)) == hit_set(hits)


def test_self_window_suppressed():
    doc = np.random.default_rng(6).integers(0, 256, 96)
    corpus = corpus_of([doc])
    index = build_index(corpus, n=30)
    probe = probe_from(corpus, 0, 0, 32, 64)
    assert find_repeats([probe], index, corpus) == []
    assert brute_force_repeats([probe], corpus) == []


def test_self_doc_repeat_outside_window_counts_once():
    pattern = np.random.default_rng(7).integers(0, 256, 48)
    doc = np.tile(pattern, 4)  # probe window covers the first two periods
    corpus = corpus_of([doc])
    index = build_index(corpus, n=30)
    probe = probe_from(corpus, 0, 0, 32, 64)
    hits = find_repeats([probe], index, corpus, min_len=30)
    assert {h.doc_id for h in hits} == {0}
    assert count_repeats(probe.probe_id, hits) == 1
    assert hit_set(hits) == hit_set(brute_force_repeats([probe], corpus, min_len=30))


def test_count_repeats_distinct_docs():
    hits = [
        RepeatHit("p", 3, 0, 30),
        RepeatHit("p", 3, 50, 41),
        RepeatHit("p", 9, 2, 35),
        RepeatHit("other", 4, 0, 30),
    ]
    assert count_repeats("p", hits) == 2
    assert count_repeats("other", hits) == 1
    assert count_repeats("absent", hits) == 0


def test_oracle_agreement_dense_small_alphabet():
    # alphabet of 4 makes shared runs common and stresses ties and extension
    rng = np.random.default_rng(8)
    docs = [rng.integers(0, 4, rng.integers(20, 90)) for _ in range(60)]
    corpus = corpus_of(docs)
    index = build_index(corpus, n=5)
    probes = []
    for doc_id in range(0, 60, 3):
        if len(corpus.doc(doc_id)) >= 24:
            probes.append(probe_from(corpus, doc_id, 2, 8, 14))
    fast = find_repeats(probes, index, corpus, min_len=5)
    slow = brute_force_repeats(probes, corpus, min_len=5)
    assert hit_set(fast) == hit_set(slow)
    assert len(fast) > 0


def test_oracle_agreement_with_planted_duplicates():
    rng = np.random.default_rng(9)
    base = [rng.integers(0, 256, rng.integers(80, 200)) for _ in range(80)]
    docs = list(base)
    for i in range(0, 40, 5):
        docs.append(base[i].copy())  # straight duplicates
        docs.append(np.concatenate([rng.integers(0, 256, 17), base[i][:45]]))
    corpus = corpus_of(docs)
    index = build_index(corpus, n=30)
    eligible = [d for d in range(len(docs)) if len(corpus.doc(d)) >= 96]
    probes = [
        probe_from(corpus, d, int(rng.integers(0, len(corpus.doc(d)) - 96 + 1)), 32, 64)
        for d in rng.choice(eligible, 40)
    ]
    fast = find_repeats(probes, index, corpus, min_len=30)
    slow = brute_force_repeats(probes, corpus, min_len=30)
    assert hit_set(fast) == hit_set(slow)
    assert len(fast) > 0
    for h in fast:  # soundness: claimed runs verify token-by-token
        probe = next(p for p in probes if p.probe_id == h.probe_id)
        doc = corpus.doc(h.doc_id)
        run = doc[h.doc_offset : h.doc_offset + h.match_len]
        tb = run.tobytes()
        assert h.match_len >= 30
        assert tb in probe.target.tobytes()


def test_hits_are_deterministic():
    rng = np.random.default_rng(10)
    docs = [rng.integers(0, 16, 120) for _ in range(25)]
    docs += [docs[0].copy(), docs[1].copy()]
    corpus = corpus_of(docs)
    index = build_index(corpus, n=12)
    probes = [probe_from(corpus, 0, 4, 16, 40), probe_from(corpus, 1, 0, 16, 40)]
    a = find_repeats(probes, index, corpus, min_len=12)
    b = find_repeats(probes, build_index(corpus, n=12), corpus, min_len=12)
    assert a == b
