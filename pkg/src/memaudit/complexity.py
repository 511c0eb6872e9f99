"""Compression-ratio complexity of token sequences.

The ratio is computed over the raw DEFLATE stream (no zlib header/trailer),
at maximum compression, so short highly compressible inputs are not dominated
by container overhead.  Values slightly above 1 are possible for short
incompressible inputs and are reported as-is.
"""

from __future__ import annotations

import zlib

import numpy as np

from .corpus import Probe, detokenize

# Fixed compressor configuration; recorded in run manifests so ratios are
# reproducible across runs and machines.
COMPRESSION_LEVEL = 9
RAW_DEFLATE_WBITS = -15
MEM_LEVEL = 8

COMPRESSOR_CONFIG = {
    "codec": "deflate-raw",
    "level": COMPRESSION_LEVEL,
    "wbits": RAW_DEFLATE_WBITS,
    "mem_level": MEM_LEVEL,
    "strategy": "Z_DEFAULT_STRATEGY",
    "zlib_version": zlib.ZLIB_VERSION,
}


def compressed_size(data: bytes) -> int:
    """Length in bytes of the raw deflate stream for ``data``."""
    comp = zlib.compressobj(COMPRESSION_LEVEL, zlib.DEFLATED, RAW_DEFLATE_WBITS, MEM_LEVEL)
    return len(comp.compress(data) + comp.flush())


def z_complexity(seq) -> float:
    """Ratio of compressed byte length to original byte length of ``seq``.

    ``seq`` may be a token array (byte tokens only) or a byte string.
    """
    data = seq if isinstance(seq, (bytes, bytearray)) else detokenize(np.asarray(seq))
    if len(data) == 0:
        raise ValueError("z-complexity is undefined for an empty sequence")
    return compressed_size(bytes(data)) / len(data)


def complexity_bins(probes: list[Probe], edges) -> dict[str, int]:
    """Bin each probe's target complexity into half-open intervals [e_i, e_{i+1}).

    Values below the first edge map to bin 0; values at or above the last edge
    map to the last bin.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        raise ValueError("need at least two bin edges")
    if not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing")
    n_bins = edges.size - 1
    out: dict[str, int] = {}
    for probe in probes:
        value = z_complexity(probe.target)
        idx = int(np.searchsorted(edges, value, side="right")) - 1
        out[probe.probe_id] = min(max(idx, 0), n_bins - 1)
    return out


def tercile_edges(values) -> np.ndarray:
    """Empirical tercile edges for stratifying by complexity (spans the data)."""
    values = np.asarray(values, dtype=float)
    lo, q1, q2 = np.quantile(values, [0.0, 1 / 3, 2 / 3])
    return np.array([lo, q1, q2, values.max() + 1e-9])
