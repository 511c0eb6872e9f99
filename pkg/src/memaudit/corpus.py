"""Corpus handling: byte-level tokenization, ingestion, canary planting, probes.

Token sequences are plain ``numpy`` arrays of dtype ``uint16``.  Ids 0..255 are
raw bytes; ids >= 256 are reserved specials that never come out of
``tokenize`` (the trainer uses ``EOT_TOKEN`` as a document separator).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .defaults import K, L

TOKEN_DTYPE = np.uint16
BYTE_VOCAB = 256
EOT_TOKEN = 256  # document separator in the training stream
PAD_TOKEN = 257  # reserved, currently unused
VOCAB_SIZE = 258

STORE_MANIFEST = "manifest.json"
STORE_TOKENS = "tokens.bin"


def tokenize(data: bytes) -> np.ndarray:
    """Map a byte string to token ids (one token per byte)."""
    if isinstance(data, str):
        raise TypeError("tokenize expects bytes; encode text as UTF-8 first")
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(TOKEN_DTYPE)


def detokenize(tokens: np.ndarray) -> bytes:
    """Inverse of :func:`tokenize`; rejects reserved special ids."""
    tokens = np.asarray(tokens)
    if tokens.size and tokens.max() >= BYTE_VOCAB:
        raise ValueError("sequence contains special tokens with no byte form")
    return tokens.astype(np.uint8).tobytes()


@dataclass(frozen=True)
class Probe:
    """One audit target: k context tokens plus the true l-token continuation."""

    probe_id: str
    context: np.ndarray
    target: np.ndarray
    source_doc: int
    source_offset: int

    @property
    def k(self) -> int:
        return len(self.context)

    @property
    def l(self) -> int:
        return len(self.target)

    def window(self) -> np.ndarray:
        return np.concatenate([self.context, self.target])


@dataclass
class DocInfo:
    doc_id: int
    offset: int  # token offset in the flat store array
    n_tokens: int
    byte_len: int
    canary: bool = False
    repeat_count: int = 0  # planted copies for canary docs, 0 otherwise
    canary_id: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.doc_id,
            "offset": self.offset,
            "n_tokens": self.n_tokens,
            "byte_len": self.byte_len,
            "canary": self.canary,
            "repeat_count": self.repeat_count,
            "canary_id": self.canary_id,
        }


class Corpus:
    """An ordered, immutable collection of token documents plus metadata.

    Document ids are positional indices; the manifest covers every document.
    """

    def __init__(self, documents: list[np.ndarray], manifest: list[DocInfo] | None = None):
        self.documents = [np.asarray(d, dtype=TOKEN_DTYPE) for d in documents]
        if manifest is None:
            manifest = []
            offset = 0
            for i, doc in enumerate(self.documents):
                manifest.append(DocInfo(i, offset, len(doc), len(doc)))
                offset += len(doc)
        if len(manifest) != len(self.documents):
            raise ValueError("manifest must cover every document")
        self.manifest = manifest

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def total_tokens(self) -> int:
        return int(sum(len(d) for d in self.documents))

    def doc(self, doc_id: int) -> np.ndarray:
        return self.documents[doc_id]

    def canary_doc_ids(self) -> list[int]:
        return [m.doc_id for m in self.manifest if m.canary]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for doc in self.documents:
            h.update(np.ascontiguousarray(doc, dtype="<u2").tobytes())
            h.update(b"\x00\xff")
        return h.hexdigest()


def ingest(path: str | Path, format: str = "plain-lines") -> Corpus:
    """Read a corpus file: one document per line, or per JSONL "text" field."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    raw = path.read_bytes()
    docs: list[np.ndarray] = []
    if format == "plain-lines":
        if raw:
            for line in raw.split(b"\n"):
                docs.append(tokenize(line))
            if raw.endswith(b"\n"):
                docs.pop()  # trailing newline terminates the last document
    elif format == "jsonl":
        for lineno, line in enumerate(raw.split(b"\n"), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: malformed JSON record: {exc}") from exc
            if not isinstance(record, dict) or "text" not in record:
                raise ValueError(f'line {lineno}: record is missing the "text" field')
            if not isinstance(record["text"], str):
                raise ValueError(f'line {lineno}: "text" field must be a string')
            docs.append(tokenize(record["text"].encode("utf-8")))
    else:
        raise ValueError(f"unknown corpus format: {format!r}")
    return Corpus(docs)


@dataclass(frozen=True)
class CanarySpec:
    """A synthetic sequence to plant ``repeat_count`` times into the corpus."""

    text: bytes
    repeat_count: int
    placement_seed: int = 0
    canary_id: str | None = None

    def __post_init__(self):
        if self.repeat_count < 1:
            raise ValueError("repeat_count must be >= 1")


def plant_canaries(
    corpus: Corpus,
    specs: list[CanarySpec],
    seed: int,
    min_tokens: int = K + L,
) -> Corpus:
    """Insert each canary as ``repeat_count`` standalone documents.

    Positions are drawn uniformly over the current document order, one draw per
    copy, from an RNG keyed on ``(seed, placement_seed)``.  The input corpus is
    not modified.
    """
    docs: list[np.ndarray | None] = list(corpus.documents)
    meta: list[DocInfo | None] = [
        DocInfo(0, 0, m.n_tokens, m.byte_len, m.canary, m.repeat_count, m.canary_id)
        for m in corpus.manifest
    ]
    for i, spec in enumerate(specs):
        tokens = tokenize(spec.text)
        if len(tokens) < min_tokens:
            raise ValueError(
                f"canary {spec.canary_id or i} has {len(tokens)} tokens, "
                f"shorter than the probe window of {min_tokens}"
            )
        cid = spec.canary_id if spec.canary_id is not None else f"c{i:04d}"
        rng = np.random.default_rng([int(seed), int(spec.placement_seed), i])
        for _ in range(spec.repeat_count):
            pos = int(rng.integers(0, len(docs) + 1))
            docs.insert(pos, tokens.copy())
            meta.insert(pos, DocInfo(0, 0, len(tokens), len(spec.text), True, spec.repeat_count, cid))
    # renumber ids and offsets in final order
    offset = 0
    for i, (doc, m) in enumerate(zip(docs, meta)):
        m.doc_id = i
        m.offset = offset
        offset += len(doc)
    return Corpus(docs, meta)


def _eligible_counts(corpus: Corpus, window: int) -> np.ndarray:
    return np.array([max(0, len(d) - window + 1) for d in corpus.documents], dtype=np.int64)


def extract_probes(
    corpus: Corpus,
    k: int = K,
    l: int = L,
    count: int = 1000,
    seed: int = 0,
    dedupe: bool = False,
    doc_ids=None,
) -> list[Probe]:
    """Sample ``count`` probe windows uniformly, without replacement.

    With ``dedupe`` set, windows whose target token sequences are identical are
    collapsed to the first (lowest ``(doc, offset)``) occurrence.  ``doc_ids``
    restricts sampling to those documents.
    """
    if k < 1 or l < 1:
        raise ValueError("k and l must be >= 1")
    window = k + l
    counts = _eligible_counts(corpus, window)
    if doc_ids is not None:
        mask = np.zeros(len(counts), dtype=bool)
        mask[np.asarray(list(doc_ids), dtype=np.int64)] = True
        counts = np.where(mask, counts, 0)
    total = int(counts.sum())
    if total == 0:
        raise ValueError(f"no document long enough for a {window}-token window")
    if count > total:
        raise ValueError(f"requested {count} probes but only {total} windows are available")
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=count, replace=False))
    starts = np.concatenate([[0], np.cumsum(counts)])
    probes: list[Probe] = []
    seen: set[bytes] = set()
    doc_idx = np.searchsorted(starts, flat, side="right") - 1
    for fi, di in zip(flat, doc_idx):
        off = int(fi - starts[di])
        doc = corpus.documents[di]
        ctx = doc[off : off + k].copy()
        tgt = doc[off + k : off + window].copy()
        if dedupe:
            key = tgt.tobytes()
            if key in seen:
                continue
            seen.add(key)
        probes.append(Probe(f"p{di:06d}_{off:05d}", ctx, tgt, int(di), off))
    return probes


def canary_probes(corpus: Corpus, k: int = K, l: int = L) -> list[Probe]:
    """One probe per distinct canary, cut at offset 0 of its first copy."""
    first: dict[str, DocInfo] = {}
    for m in corpus.manifest:
        if m.canary and m.canary_id not in first:
            first[m.canary_id] = m
    probes = []
    for cid in sorted(first):
        m = first[cid]
        doc = corpus.documents[m.doc_id]
        if len(doc) < k + l:
            raise ValueError(f"canary {cid} shorter than the probe window")
        probes.append(
            Probe(f"canary_{cid}", doc[:k].copy(), doc[k : k + l].copy(), m.doc_id, 0)
        )
    return probes


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    """Write the corpus store: flat little-endian token array + JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = b"".join(np.ascontiguousarray(d, dtype="<u2").tobytes() for d in corpus.documents)
    (directory / STORE_TOKENS).write_bytes(blob)
    manifest = {
        "format_version": 1,
        "vocab_size": VOCAB_SIZE,
        "token_dtype": "<u2",
        "documents": [m.to_json() for m in corpus.manifest],
    }
    (directory / STORE_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )
    return directory


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    manifest = json.loads((directory / STORE_MANIFEST).read_text())
    blob = np.frombuffer((directory / STORE_TOKENS).read_bytes(), dtype="<u2")
    docs = []
    meta = []
    for m in manifest["documents"]:
        start = m["offset"]
        docs.append(blob[start : start + m["n_tokens"]].astype(TOKEN_DTYPE))
        meta.append(
            DocInfo(
                m["id"], m["offset"], m["n_tokens"], m["byte_len"],
                m["canary"], m["repeat_count"], m["canary_id"],
            )
        )
    return Corpus(docs, meta)
