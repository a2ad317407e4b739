"""Vector indexes over sentences or generated questions, with exact cosine scan.

Corpora here are small enough (tens of thousands of entries) that a full
scan is both fast and exactly reproducible, so no approximate structure is
used. Persistence is line-oriented JSON with a CRC32 trailer: metadata stays
human-auditable while vectors travel as packed little-endian float32.
"""

from __future__ import annotations

import base64
import json
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Sentence
from .embed import Embedder, EmbeddingVector
from .errors import (
    ChecksumError,
    DimMismatchError,
    EmptyIndexError,
    PersistenceError,
    ZeroVectorError,
)
from .qagen import QADataset

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Slack for float rounding in threshold comparisons: a key identical to the
# query must pass threshold 1.0 even when its cosine lands at 1 - 1e-16.
SCORE_EPS = 1e-9


class IndexKind(str, Enum):
    SENTENCES = "sentences"  # key = sentence, payload = the sentence itself
    QUESTIONS = "questions"  # key = generated question, payload = parent paragraph


@dataclass
class IndexEntry:
    key_vector: EmbeddingVector
    key_text: str
    payload_text: str
    paragraph_ref: tuple[str, int]


@dataclass
class IndexedDataset:
    kind: IndexKind
    entries: list[IndexEntry]
    embedder_name: str
    dim: int
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def key_matrix(self) -> np.ndarray:
        """Row-normalized float64 key matrix, built lazily and cached."""
        if self._matrix is None:
            m = np.array([e.key_vector.values for e in self.entries], dtype=np.float64)
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            self._matrix = m / norms
        return self._matrix


@dataclass(frozen=True)
class RetrievalHit:
    score: float
    entry_ref: int  # index into IndexedDataset.entries


def _float32_vector(vec: EmbeddingVector) -> EmbeddingVector:
    """Round to the on-disk float32 precision so save/load is an identity."""
    arr = np.asarray(vec.values, dtype=np.float32)
    return EmbeddingVector(tuple(float(v) for v in arr))


def _build(
    kind: IndexKind,
    key_texts: list[str],
    payload_texts: list[str],
    refs: list[tuple[str, int]],
    embedder: Embedder,
) -> IndexedDataset:
    if not key_texts:
        raise EmptyIndexError("nothing to index")
    vectors = embedder.embed_batch(key_texts)
    entries = []
    for vec, key_text, payload_text, ref in zip(vectors, key_texts, payload_texts, refs):
        if vec.norm() == 0.0:
            log.warning("skipping zero-vector entry %r", key_text[:60])
            continue
        entries.append(
            IndexEntry(
                key_vector=_float32_vector(vec),
                key_text=key_text,
                payload_text=payload_text,
                paragraph_ref=ref,
            )
        )
    if not entries:
        raise EmptyIndexError("every candidate entry embedded to a zero vector")
    return IndexedDataset(
        kind=kind,
        entries=entries,
        embedder_name=embedder.name,
        dim=entries[0].key_vector.dim,
    )


def build_sentence_index(sentences: Sequence[Sentence], embedder: Embedder) -> IndexedDataset:
    """Index already-filtered sentences; each sentence is its own payload."""
    sentences = list(sentences)
    return _build(
        IndexKind.SENTENCES,
        [s.text for s in sentences],
        [s.text for s in sentences],
        [(s.doc_id, s.paragraph_ordinal) for s in sentences],
        embedder,
    )


def build_question_index(qa: QADataset, embedder: Embedder) -> IndexedDataset:
    """Index generated questions; the payload is the parent paragraph text."""
    return _build(
        IndexKind.QUESTIONS,
        [p.question for p in qa.pairs],
        [p.answer_text for p in qa.pairs],
        [p.paragraph_ref for p in qa.pairs],
        embedder,
    )


def search(ds: IndexedDataset, query: EmbeddingVector, threshold: float) -> list[RetrievalHit]:
    """Exact scan: every entry with cosine >= threshold, best first.

    Ties keep insertion order. Threshold 0.0 is the accept-everything case
    and returns all entries, negative scores included; threshold 1.0 keeps
    only perfect directional matches (within float slack).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if query.dim != ds.dim:
        raise DimMismatchError(f"query dim {query.dim} != index dim {ds.dim}")
    q = np.asarray(query.values, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0.0:
        raise ZeroVectorError("query embedded to a zero vector")
    scores = ds.key_matrix() @ (q / nq)
    order = np.argsort(-scores, kind="stable")
    hits = []
    for i in order:
        s = float(scores[i])
        if threshold > 0.0 and s < threshold - SCORE_EPS:
            break  # scores only fall from here
        hits.append(RetrievalHit(score=s, entry_ref=int(i)))
    return hits


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_index(ds: IndexedDataset, path: str | Path) -> None:
    """Header record, one record per entry, CRC32 trailer."""
    lines = []
    header = {
        "format_version": FORMAT_VERSION,
        "kind": ds.kind.value,
        "embedder_name": ds.embedder_name,
        "dim": ds.dim,
        "count": len(ds.entries),
    }
    lines.append(json.dumps(header, sort_keys=True))
    for e in ds.entries:
        vec_bytes = np.asarray(e.key_vector.values, dtype="<f4").tobytes()
        rec = {
            "key_text": e.key_text,
            "payload_text": e.payload_text,
            "doc_id": e.paragraph_ref[0],
            "ordinal": e.paragraph_ref[1],
            "vec_b64": base64.b64encode(vec_bytes).decode("ascii"),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    body = "".join(line + "\n" for line in lines).encode("utf-8")
    trailer = json.dumps({"crc32": zlib.crc32(body) & 0xFFFFFFFF}) + "\n"
    Path(path).write_bytes(body + trailer.encode("utf-8"))


def load_index(path: str | Path) -> IndexedDataset:
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if len(lines) < 2:
        raise ChecksumError(f"{path}: truncated index file")
    try:
        trailer = json.loads(lines[-1])
        expected_crc = int(trailer["crc32"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ChecksumError(f"{path}: missing or unreadable checksum trailer") from exc
    body = b"\n".join(lines[:-1]) + b"\n"
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if actual_crc != expected_crc:
        raise ChecksumError(
            f"{path}: checksum mismatch (stored {expected_crc}, computed {actual_crc})"
        )

    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise PersistenceError(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(
            f"{path}: unsupported format_version {header.get('format_version')!r}"
        )
    dim = int(header["dim"])
    entry_lines = lines[1:-1]
    if len(entry_lines) != int(header["count"]):
        raise PersistenceError(
            f"{path}: header promises {header['count']} entries, found {len(entry_lines)}"
        )

    entries = []
    for line in entry_lines:
        rec = json.loads(line)
        vec = np.frombuffer(base64.b64decode(rec["vec_b64"]), dtype="<f4")
        if len(vec) != dim:
            raise DimMismatchError(f"{path}: entry vector has dim {len(vec)}, header says {dim}")
        entries.append(
            IndexEntry(
                key_vector=EmbeddingVector(tuple(float(v) for v in vec)),
                key_text=rec["key_text"],
                payload_text=rec["payload_text"],
                paragraph_ref=(rec["doc_id"], int(rec["ordinal"])),
            )
        )
    return IndexedDataset(
        kind=IndexKind(header["kind"]),
        entries=entries,
        embedder_name=str(header["embedder_name"]),
        dim=dim,
    )
