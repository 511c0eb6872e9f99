"""Seeded synthetic corpora for audit experiments.

Three document flavors span the z-complexity axis with compressibility and
learnability aligned: pseudo-word prose (wide mid-z spread from per-document
vocabulary size and short-phrase reuse), templated log lines (low z, and
in-context predictable), and raw byte noise (z near or above 1, never
predictable).  Documents never share a 30-byte run with each other, so
planted canaries are the only source of cross-document repeats.  Canary text
is pseudo-prose built from a vocabulary unique to each canary.
"""

from __future__ import annotations

import numpy as np

from .corpus import CanarySpec, TOKEN_DTYPE

PROSE = "prose"
LOGS = "logs"
NOISE = "noise"

_LOG_LEVELS = ("info", "warn", "error", "debug", "trace")
_LOG_SERVICES = ("auth", "db", "web", "cache", "queue", "batch", "api", "cron")


def _pseudo_words(rng: np.random.Generator, count: int, lo: int = 3, hi: int = 8):
    lengths = rng.integers(lo, hi + 1, count)
    return ["".join(chr(c) for c in rng.integers(97, 123, n)) for n in lengths]


def _prose_doc(rng: np.random.Generator, vocab: list[str], n_bytes: int) -> bytes:
    # Two per-doc knobs spread z: vocabulary size (log-uniform 12..400) and a
    # phrase-reuse rate.  Reused phrases are capped at 26 bytes so repeats stay
    # below the 30-byte scan threshold and cannot register as planted copies.
    sub_size = int(round(float(np.exp(rng.uniform(np.log(12), np.log(400))))))
    sub = [vocab[i] for i in rng.integers(0, len(vocab), sub_size)]
    reuse_p = float(rng.uniform(0.0, 0.55))
    phrases: list[str] = []
    words = []
    total = 0
    last_chunk = ""
    sentence_left = int(rng.integers(6, 14))
    while total < n_bytes:
        chunk = ""
        if phrases and rng.random() < reuse_p:
            chunk = phrases[int(rng.integers(0, len(phrases)))]
            if chunk == last_chunk:  # back-to-back reuse would form a >=30-byte run
                chunk = ""
        if not chunk:
            n_w = int(rng.integers(2, 4))
            chunk = " ".join(sub[int(rng.integers(0, sub_size))] for _ in range(n_w))
            if len(chunk) <= 26 and len(phrases) < 12:
                phrases.append(chunk)
        last_chunk = chunk
        sentence_left -= chunk.count(" ") + 1
        if sentence_left <= 0:
            chunk += "."
            sentence_left = int(rng.integers(6, 14))
        words.append(chunk)
        total += len(chunk) + 1
    return " ".join(words).encode("ascii")[:n_bytes]


def _hex(rng: np.random.Generator, n: int) -> str:
    return "".join("0123456789abcdef"[i] for i in rng.integers(0, 16, n))


def _logs_doc(rng: np.random.Generator, n_bytes: int) -> bytes:
    # Heavily templated: per-document constants and a tiny value set make
    # consecutive lines near-copies, so log text is both highly compressible
    # and in-context predictable, and the ~29-byte line cycle fits twice in a
    # 64-byte probe target.  The doc-unique id and the per-line counter split
    # every line so that no constant stretch reaches 30 bytes, within or
    # across documents, even when all the small-set values coincide.
    svc = _LOG_SERVICES[int(rng.integers(0, len(_LOG_SERVICES)))]
    uid = _hex(rng, 4)
    base = int(rng.integers(10**5, 9 * 10**5))
    lines = []
    total = 0
    i = 0
    while total < n_bytes:
        lvl = "iw"[rng.random() > 0.9]
        lat = (3, 5, 8, 13)[int(rng.integers(0, 4))]
        line = f"{uid} {base + i} {lvl} {svc} c=200 l={lat}"
        lines.append(line)
        total += len(line) + 1
        i += 1
    return "\n".join(lines).encode("ascii")[:n_bytes]


def _noise_doc(rng: np.random.Generator, n_bytes: int) -> np.ndarray:
    return rng.integers(0, 256, n_bytes).astype(TOKEN_DTYPE)


def synth_docs(
    n_docs: int,
    seed: int = 0,
    weights: tuple[float, float, float] = (0.78, 0.07, 0.15),
    doc_len: tuple[int, int] = (300, 900),
) -> tuple[list[np.ndarray], list[str]]:
    """Token documents plus a parallel flavor label list."""
    if n_docs < 1:
        raise ValueError("n_docs must be >= 1")
    if len(weights) != 3 or abs(sum(weights) - 1.0) > 1e-9 or min(weights) < 0:
        raise ValueError("weights must be three non-negative numbers summing to 1")
    lo, hi = doc_len
    if not (96 < lo <= hi):
        raise ValueError("doc_len must satisfy 96 < lo <= hi")
    rng = np.random.default_rng([seed, 0x5EED])
    vocab = _pseudo_words(rng, 800)
    flavors = rng.choice([PROSE, LOGS, NOISE], size=n_docs, p=list(weights))
    docs = []
    for flavor in flavors:
        n_bytes = int(rng.integers(lo, hi + 1))
        if flavor == PROSE:
            docs.append(np.frombuffer(_prose_doc(rng, vocab, n_bytes), np.uint8).astype(TOKEN_DTYPE))
        elif flavor == LOGS:
            docs.append(np.frombuffer(_logs_doc(rng, n_bytes), np.uint8).astype(TOKEN_DTYPE))
        else:
            docs.append(_noise_doc(rng, n_bytes))
    return docs, [str(f) for f in flavors]


def canary_text(canary_id: int, seed: int = 0, n_bytes: int = 112) -> bytes:
    """Pseudo-prose canary from a vocabulary unique to (seed, canary_id)."""
    if n_bytes < 16:
        raise ValueError("canaries shorter than 16 bytes are not useful")
    rng = np.random.default_rng([seed, 0xCA9A, canary_id])
    vocab = _pseudo_words(rng, 24, 3, 8)
    words = []
    total = 0
    while total < n_bytes:
        words.append(vocab[int(rng.integers(0, len(vocab)))])
        total += len(words[-1]) + 1
    return " ".join(words).encode("ascii")[:n_bytes]


def canary_grid(
    repeat_counts: tuple[int, ...],
    per_count: int | list[int],
    seed: int = 0,
    n_bytes: int = 112,
) -> list[CanarySpec]:
    """One CanarySpec per (repeat count, replicate) cell, ids r<r>_<i>.

    ``per_count`` is the replicate count, either one int for all repeat counts
    or a list aligned with ``repeat_counts`` (fewer replicates at high repeat
    counts keep the planted token mass in check).
    """
    if isinstance(per_count, int):
        per_count = [per_count] * len(repeat_counts)
    if len(per_count) != len(repeat_counts):
        raise ValueError("per_count list must align with repeat_counts")
    specs = []
    uid = 0
    for r, n_rep in zip(repeat_counts, per_count):
        for i in range(n_rep):
            specs.append(
                CanarySpec(
                    text=canary_text(uid, seed=seed, n_bytes=n_bytes),
                    repeat_count=r,
                    placement_seed=uid,
                    canary_id=f"r{r:03d}_{i:02d}",
                )
            )
            uid += 1
    return specs
