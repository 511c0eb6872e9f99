"""Compression-ratio complexity tests with frozen DEFLATE sizes."""

import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memaudit.complexity import (
    COMPRESSOR_CONFIG,
    complexity_bins,
    compressed_size,
    tercile_edges,
    z_complexity,
)
from memaudit.corpus import Probe, tokenize


def probe_of(payload: bytes, pid: str) -> Probe:
    return Probe(
        probe_id=pid,
        context=tokenize(b"ctx "),
        target=tokenize(payload),
        source_doc=0,
        source_offset=0,
    )


def oracle_ratio(data: bytes) -> float:
    # independent raw-deflate call, bypassing the module under test
    c = zlib.compressobj(9, zlib.DEFLATED, -15, 8)
    return len(c.compress(data) + c.flush()) / len(data)


# frozen sizes from a separate zlib run: (payload, raw deflate byte count)
FROZEN = [
    (b"a" * 112, 6),
    (b"abc" * 40, 8),
    (
        b"the quick brown fox jumps over the lazy dog and then the dog"
        b" jumps over the fox again and again until dusk falls",
        76,
    ),
    (b"x", 3),
]


def test_frozen_deflate_sizes():
    for payload, size in FROZEN:
        assert compressed_size(payload) == size
        assert z_complexity(payload) == size / len(payload)


def test_random_bytes_exceed_ratio_one():
    data = bytes(np.random.default_rng(7).integers(0, 256, 112, dtype=np.uint8))
    z = z_complexity(data)
    assert z == pytest.approx(117 / 112)
    assert z > 1.0  # incompressible input plus deflate framing, not clamped


def test_token_input_matches_byte_input():
    data = b"repetition repetition repetition"
    assert z_complexity(tokenize(data)) == z_complexity(data)


def test_only_byte_range_tokens_accepted():
    toks = np.array([65, 66, 256], dtype=np.uint16)
    with pytest.raises(ValueError):
        z_complexity(toks)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        z_complexity(b"")


def test_compressor_config_is_recorded():
    assert COMPRESSOR_CONFIG["codec"] == "deflate-raw"
    assert COMPRESSOR_CONFIG["level"] == 9
    assert COMPRESSOR_CONFIG["wbits"] == -15


@given(st.binary(min_size=1, max_size=300))
def test_matches_oracle_on_arbitrary_bytes(data):
    assert z_complexity(data) == oracle_ratio(data)


@given(st.binary(min_size=1, max_size=64), st.integers(min_value=2, max_value=6))
def test_repetition_never_increases_ratio(data, reps):
    assert z_complexity(data * reps) <= z_complexity(data) + 1e-12


def test_complexity_bins_assignment():
    rng = np.random.default_rng(7)
    probes = [
        probe_of(b"a" * 112, "low"),  # ratio 6/112
        probe_of(
            b"the quick brown fox jumps over the lazy dog and then the dog"
            b" jumps over the fox again and again until dusk falls",
            "mid",
        ),  # ratio 76/112
        probe_of(bytes(rng.integers(0, 256, 112, dtype=np.uint8)), "high"),  # > 1
    ]
    bins = complexity_bins(probes, [0.0, 0.3, 0.6, 1.0])
    assert bins == {"low": 0, "mid": 2, "high": 2}  # above top edge clips to last bin


def test_complexity_bins_validates_edges():
    probe = probe_of(b"abc", "p")
    with pytest.raises(ValueError):
        complexity_bins([probe], [0.3])
    with pytest.raises(ValueError):
        complexity_bins([probe], [0.5, 0.4, 0.6])


def test_tercile_edges_split_into_thirds():
    values = np.linspace(0.1, 1.0, 90)
    edges = tercile_edges(values)
    assert edges.shape == (4,)
    assert np.all(np.diff(edges) > 0)
    assert edges[0] == values.min()
    assert edges[-1] > values.max()
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, 2)
    assert np.bincount(idx, minlength=3).tolist() == [30, 30, 30]
