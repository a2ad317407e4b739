"""Text-similarity scoring.

Four scores per (generated, reference) pair:

* bleu    - geometric mean of clipped n-gram precisions (n up to 4) with an
            epsilon smoothing floor, times a brevity penalty.
* rouge   - F1 over the longest common token subsequence (a ROUGE-1 recall
            helper is provided as an auxiliary diagnostic).
* meteor  - one-to-one unigram alignment (exact match, then a suffix-strip
            stem match), harmonic mean weighted toward recall, discounted by
            a fragmentation penalty of 0.5 * (chunks / matches)^3.
* cs      - split both texts into sentences, embed them, and average each
            generated sentence's best cosine against the reference sentences.

All tokenization is lowercase words plus standalone punctuation, so every
score ignores letter case and trailing whitespace by construction.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import split_sentences, tokenize
from .embed import Embedder, cosine
from .errors import EmptyReferenceError

log = logging.getLogger(__name__)

BLEU_SMOOTH_FLOOR = 1e-9
METRIC_NAMES = ("rouge", "meteor", "bleu", "cs")

SCORE_CSV_HEADER = ["question_id", "rouge", "meteor", "bleu", "cs"]


@dataclass(frozen=True)
class ScoreRow:
    question_id: str
    rouge: float
    meteor: float
    bleu: float
    cs: float


@dataclass
class CsMatrix:
    g_sentences: list[str]
    r_sentences: list[str]
    values: list[list[float]]  # values[i][j] = cosine(generated i, reference j)


def _tokens(text: str) -> list[str]:
    return tokenize(text.lower())


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------

def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i: i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def bleu_tokens(cand: Sequence[str], ref: Sequence[str], max_n: int = 4) -> float:
    """BLEU on pre-tokenized input; see module docstring for the definition.

    Levels where the candidate has no n-grams at all are dropped from the
    geometric mean; a level with n-grams but zero matches contributes the
    smoothing floor instead of zeroing the whole score.
    """
    if not cand:
        return 0.0
    log_sum = 0.0
    levels = 0
    for n in range(1, max_n + 1):
        total = len(cand) - n + 1
        if total < 1:
            break
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        clipped = 0
        for gram, count in cand_counts.items():
            r = ref_counts.get(gram, 0)
            clipped += count if count < r else r
        precision = clipped / total if clipped else BLEU_SMOOTH_FLOOR
        log_sum += math.log(precision)
        levels += 1
    score = math.exp(log_sum / levels)
    c, r = len(cand), len(ref)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return score * brevity


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    return bleu_tokens(_tokens(candidate), _tokens(reference), max_n)


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the classic rolling-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                p, q = cur[j - 1], prev[j]
                cur.append(p if p >= q else q)
        prev = cur
    return prev[-1]


def rouge_tokens(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def rouge(candidate: str, reference: str) -> float:
    """Headline ROUGE: F1 over the longest common subsequence of tokens."""
    return rouge_tokens(_tokens(candidate), _tokens(reference))


def rouge1_recall(candidate: str, reference: str) -> float:
    """Auxiliary diagnostic: clipped unigram recall against the reference."""
    cand, ref = _tokens(candidate), _tokens(reference)
    if not ref:
        return 0.0
    cand_counts = _ngram_counts(cand, 1)
    ref_counts = _ngram_counts(ref, 1)
    overlap = sum(min(count, cand_counts.get(gram, 0)) for gram, count in ref_counts.items())
    return overlap / len(ref)


# ---------------------------------------------------------------------------
# METEOR
# ---------------------------------------------------------------------------

_STEM_SUFFIXES = ("ing", "es", "ed", "ly", "s")


def _stem(word: str) -> str:
    for suffix in _STEM_SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    return word


def _align(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy one-to-one alignment: exact matches first, then stem matches.

    Candidates are scanned left to right and take the earliest unmatched
    reference token, which keeps the alignment deterministic.
    """
    taken = [False] * len(ref)
    pairs: dict[int, int] = {}
    for ci, word in enumerate(cand):
        for ri, rword in enumerate(ref):
            if not taken[ri] and rword == word:
                pairs[ci] = ri
                taken[ri] = True
                break
    for ci, word in enumerate(cand):
        if ci in pairs:
            continue
        stem = _stem(word)
        for ri, rword in enumerate(ref):
            if not taken[ri] and _stem(rword) == stem:
                pairs[ci] = ri
                taken[ri] = True
                break
    return sorted(pairs.items())


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev_ci = prev_ri = None
    for ci, ri in pairs:
        if prev_ci is None or ci != prev_ci + 1 or ri != prev_ri + 1:
            chunks += 1
        prev_ci, prev_ri = ci, ri
    return chunks


def meteor(candidate: str, reference: str) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (_chunk_count(pairs) / matches) ** 3
    return f_mean * (1.0 - penalty)


# ---------------------------------------------------------------------------
# Embedding-based best-match score
# ---------------------------------------------------------------------------

def cs_matrix(generated: str, reference: str, embedder: Embedder) -> CsMatrix:
    """Pairwise sentence-level cosine matrix between the two texts."""
    g_sentences = split_sentences(generated)
    r_sentences = split_sentences(reference)
    if not r_sentences:
        raise EmptyReferenceError("reference text has no sentences")
    if not g_sentences:
        return CsMatrix(g_sentences=[], r_sentences=r_sentences, values=[])
    g_vecs = embedder.embed_batch(g_sentences)
    r_vecs = embedder.embed_batch(r_sentences)
    values = [[cosine(g, r) for r in r_vecs] for g in g_vecs]
    return CsMatrix(g_sentences=g_sentences, r_sentences=r_sentences, values=values)


def cs_score(generated: str, reference: str, embedder: Embedder) -> float:
    """Mean over generated sentences of the best cosine against any reference sentence."""
    matrix = cs_matrix(generated, reference, embedder)
    if not matrix.g_sentences:
        log.warning("generated text has no sentences; scoring 0.0")
        return 0.0
    best = [max(row) for row in matrix.values]
    return math.fsum(best) / len(best)


# ---------------------------------------------------------------------------
# Row assembly and persistence
# ---------------------------------------------------------------------------

def score_row(question_id: str, generated: str, reference: str, embedder: Embedder) -> ScoreRow:
    """All four metrics for one question; empty generated text scores a zero row."""
    if not generated or not generated.strip() or not reference or not reference.strip():
        log.warning("empty text for %s; emitting a zero row", question_id)
        return ScoreRow(question_id, 0.0, 0.0, 0.0, 0.0)
    return ScoreRow(
        question_id=question_id,
        rouge=rouge(generated, reference),
        meteor=meteor(generated, reference),
        bleu=bleu(generated, reference),
        cs=cs_score(generated, reference, embedder),
    )


def write_score_rows_csv(rows: Iterable[ScoreRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_HEADER)
        for row in rows:
            writer.writerow([row.question_id, repr(row.rouge), repr(row.meteor),
                             repr(row.bleu), repr(row.cs)])


def read_score_rows_csv(path: str | Path) -> list[ScoreRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORE_CSV_HEADER:
            raise ValueError(f"unexpected score CSV header: {header}")
        return [
            ScoreRow(qid, float(r), float(m), float(b), float(c))
            for qid, r, m, b, c in reader
        ]


def write_score_rows_jsonl(rows: Iterable[ScoreRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            rec = {
                "question_id": row.question_id,
                "rouge": row.rouge,
                "meteor": row.meteor,
                "bleu": row.bleu,
                "cs": row.cs,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_score_rows_jsonl(path: str | Path) -> list[ScoreRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            rows.append(
                ScoreRow(
                    question_id=rec["question_id"],
                    rouge=float(rec["rouge"]),
                    meteor=float(rec["meteor"]),
                    bleu=float(rec["bleu"]),
                    cs=float(rec["cs"]),
                )
            )
    return rows
