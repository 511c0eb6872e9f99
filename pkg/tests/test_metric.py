"""Edit-distance metric tests against two independent oracles."""

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memaudit.corpus import Probe
from memaudit.metric import kl_ld, kl_memorized, levenshtein, levenshtein_batch


def dp_oracle(a, b):
    # textbook full-matrix Wagner-Fischer, no shortcuts
    a, b = list(a), list(b)
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d[m][n]


def recursive_oracle(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            go(i - 1, j) + 1,
            go(i, j - 1) + 1,
            go(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return go(len(a), len(b))


def test_known_values():
    assert levenshtein([1, 2, 3, 4], [1, 3, 3, 5]) == 2
    assert levenshtein(b"kitten", b"sitting") == 3
    assert levenshtein(b"flaw", b"lawn") == 2
    assert levenshtein([], []) == 0
    assert levenshtein([7, 7, 7], []) == 3
    assert levenshtein([], [1, 2]) == 2
    assert levenshtein([5], [5]) == 0
    assert levenshtein([5], [6]) == 1


def test_oracles_agree_with_each_other():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(0, 4, size=rng.integers(0, 9)).tolist()
        b = rng.integers(0, 4, size=rng.integers(0, 9)).tolist()
        assert dp_oracle(a, b) == recursive_oracle(a, b)


seqs = st.lists(st.integers(min_value=0, max_value=5), max_size=24)


@given(seqs, seqs)
def test_matches_dp_oracle(a, b):
    assert levenshtein(a, b) == dp_oracle(a, b)


@given(seqs, seqs)
def test_symmetry_and_bounds(a, b):
    d = levenshtein(a, b)
    assert d == levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b), 0)
    assert (d == 0) == (a == b)


@given(seqs, seqs, seqs)
@settings(max_examples=50)
def test_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@given(seqs, seqs, st.integers(min_value=0, max_value=30))
def test_cap_exact_when_not_exceeded(a, b, cap):
    d = dp_oracle(a, b)
    capped = levenshtein(a, b, cap=cap)
    if d <= cap:
        assert capped == d
    else:
        assert capped >= cap


def test_cap_early_exit_on_disjoint_alphabets():
    a = [1] * 64
    b = [2] * 64
    assert levenshtein(a, b) == 64
    assert levenshtein(a, b, cap=5) >= 5


def test_batch_matches_scalar():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 6, size=(40, 16))
    b = rng.integers(0, 6, size=(40, 12))
    out = levenshtein_batch(a, b)
    assert out.shape == (40,)
    for i in range(40):
        assert out[i] == dp_oracle(a[i], b[i])


def test_batch_rejects_ragged_input():
    with pytest.raises(ValueError):
        levenshtein_batch(np.zeros((3, 4)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        levenshtein_batch(np.zeros(4), np.zeros(4))


def _probe(context, target):
    return Probe(
        probe_id="p000000_00000",
        context=np.asarray(context, dtype=np.uint16),
        target=np.asarray(target, dtype=np.uint16),
        source_doc=0,
        source_offset=0,
    )


class _StubCkpt:
    class config:
        vocab_size = 258


def test_kl_ld_uses_injected_decoder():
    probe = _probe([10, 11], [1, 2, 3, 4])
    calls = []

    def decode(ckpt, context, l):
        calls.append((list(context), l))
        return np.asarray([1, 3, 3, 5], dtype=np.uint16)

    assert kl_ld(_StubCkpt(), probe, decode=decode) == 2
    assert calls == [([10, 11], 4)]
    assert not kl_memorized(_StubCkpt(), probe, decode=decode)

    exact = lambda ckpt, context, l: probe.target
    assert kl_ld(_StubCkpt(), probe, decode=exact) == 0
    assert kl_memorized(_StubCkpt(), probe, decode=exact)


def test_kl_ld_validates_l_and_vocab():
    probe = _probe([10, 11], [1, 2, 3, 4])
    with pytest.raises(ValueError):
        kl_ld(_StubCkpt(), probe, l=7, decode=lambda *a: probe.target)

    class Tiny:
        class config:
            vocab_size = 4

    with pytest.raises(ValueError):
        kl_ld(Tiny(), probe, decode=lambda *a: probe.target)
