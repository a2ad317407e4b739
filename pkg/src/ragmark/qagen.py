"""Question-and-answer dataset construction.

Each paragraph is oversampled with up to five deduplicated questions from a
question-generator service (or its offline mock), and the train/validation
split only promotes questions whose paragraph keeps at least one sibling in
train, so validation always probes association rather than memorization.
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import requests

from .corpus import Paragraph
from .embed import fnv1a64
from .errors import BadResponseError, NoEligiblePairsError, RagmarkError, TransportError

log = logging.getLogger(__name__)

MAX_QUESTIONS_PER_PARAGRAPH = 5
FALLBACK_QUESTION = "What does the following passage describe?"

_WS_RE = re.compile(r"\s+")
_CONTENT_WORD_RE = re.compile(r"[a-z0-9]{4,}")


@dataclass
class QAPair:
    question: str
    paragraph_ref: tuple[str, int]  # (doc_id, paragraph ordinal)
    answer_text: str
    synthetic: bool = False  # True when the fallback question was substituted


@dataclass
class QADataset:
    pairs: list[QAPair]
    name: str = ""

    @property
    def counts(self) -> tuple[int, int]:
        """(distinct paragraphs, questions)."""
        return len({p.paragraph_ref for p in self.pairs}), len(self.pairs)


class QuestionGenClient(Protocol):
    def generate(self, paragraph_text: str, k: int) -> list[str]: ...


def normalize_question(question: str) -> str:
    """Dedup key: lowercase, collapse whitespace, strip the trailing '?'."""
    q = _WS_RE.sub(" ", question).strip().lower()
    return q[:-1].rstrip() if q.endswith("?") else q


def dedupe_questions(questions: Iterable[str]) -> list[str]:
    seen = set()
    out = []
    for q in questions:
        key = normalize_question(q)
        if not key or key in seen:
            continue
        seen.add(key)
        out.append(q.strip())
    return out


def _usable_questions(
    paragraph_text: str, client: QuestionGenClient, k: int
) -> tuple[list[str], bool]:
    """Deduplicated questions for a text, or the flagged fallback when empty."""
    raw = client.generate(paragraph_text, k)
    questions = dedupe_questions(q for q in raw if isinstance(q, str))[:k]
    if questions:
        return questions, False
    return [FALLBACK_QUESTION], True


def generate_questions(
    paragraph: Paragraph, client: QuestionGenClient, k: int = MAX_QUESTIONS_PER_PARAGRAPH
) -> list[str]:
    """Between 1 and ``k`` distinct questions for one paragraph.

    Duplicates are removed case-insensitively after whitespace normalization.
    A paragraph yielding nothing usable gets the fixed fallback question; the
    substitution is flagged on the QAPair when built into a dataset.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    return _usable_questions(paragraph.text, client, k)[0]


def build_qa_dataset(
    paragraphs: Sequence[Paragraph],
    client: QuestionGenClient,
    k: int = MAX_QUESTIONS_PER_PARAGRAPH,
    name: str = "",
    concurrency: int = 4,
) -> QADataset:
    """Generate questions for every paragraph; the paragraph text is the answer.

    Client failures skip the affected paragraph with a warning; the build
    fails only when no paragraph survived.
    """
    if not paragraphs:
        raise ValueError("no paragraphs to build from")
    if k < 1:
        raise ValueError("k must be at least 1")

    def task(paragraph: Paragraph):
        return _usable_questions(paragraph.text, client, k)

    results: dict[int, tuple[list[str], bool]] = {}
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        futures = {i: pool.submit(task, p) for i, p in enumerate(paragraphs)}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except RagmarkError as exc:
                log.warning(
                    "skipping paragraph %s#%d: %s",
                    paragraphs[i].doc_id, paragraphs[i].ordinal, exc,
                )
    if not results:
        raise RagmarkError("question generation failed for every paragraph")

    pairs = []
    for i, paragraph in enumerate(paragraphs):
        if i not in results:
            continue
        questions, synthetic = results[i]
        for q in questions:
            pairs.append(
                QAPair(
                    question=q,
                    paragraph_ref=(paragraph.doc_id, paragraph.ordinal),
                    answer_text=paragraph.text,
                    synthetic=synthetic,
                )
            )
    return QADataset(pairs=pairs, name=name)


def split_train_validation(
    ds: QADataset, ratio: float = 0.20, seed: int = 0
) -> tuple[QADataset, QADataset]:
    """Draw validation pairs only from paragraphs holding at least two questions.

    Every such paragraph keeps at least one question in train. The draw is a
    seeded uniform selection over eligible pairs; when the eligible pool is
    smaller than round(ratio * total) the whole pool is taken with a warning.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    group_sizes: dict[tuple[str, int], int] = {}
    for pair in ds.pairs:
        group_sizes[pair.paragraph_ref] = group_sizes.get(pair.paragraph_ref, 0) + 1
    eligible = [i for i, p in enumerate(ds.pairs) if group_sizes[p.paragraph_ref] >= 2]
    if not eligible:
        raise NoEligiblePairsError("no paragraph has more than one question")

    target = round(ratio * len(ds.pairs))
    capacity = sum(size - 1 for size in group_sizes.values() if size >= 2)
    if capacity < target:
        log.warning(
            "eligible pool (%d) smaller than requested validation size (%d); using the pool",
            capacity, target,
        )
        target = capacity

    rng = random.Random(seed)
    order = eligible[:]
    rng.shuffle(order)
    remaining = dict(group_sizes)
    chosen: set[int] = set()
    for i in order:
        if len(chosen) >= target:
            break
        ref = ds.pairs[i].paragraph_ref
        if remaining[ref] >= 2:  # never orphan a paragraph out of train
            chosen.add(i)
            remaining[ref] -= 1

    train = [p for i, p in enumerate(ds.pairs) if i not in chosen]
    validation = [p for i, p in enumerate(ds.pairs) if i in chosen]
    prefix = ds.name or "qa"
    return (
        QADataset(pairs=train, name=f"{prefix}-train"),
        QADataset(pairs=validation, name=f"{prefix}-validation"),
    )


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class HttpQuestionGenClient:
    """Client for a question-generation service (POST /generate_questions)."""

    def __init__(
        self,
        endpoint: str,
        timeout_ms: int = 10000,
        retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self._session = session or requests.Session()

    def generate(self, paragraph_text: str, k: int) -> list[str]:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                return self._once(paragraph_text, k)
            except TransportError as exc:
                last = exc
        assert last is not None
        raise last

    def _once(self, paragraph_text: str, k: int) -> list[str]:
        try:
            resp = self._session.post(
                self.endpoint + "/generate_questions",
                json={"text": paragraph_text, "k": k},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"question generation request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"question generator returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise BadResponseError(f"question generator returned HTTP {resp.status_code}")
        try:
            questions = resp.json()["questions"]
        except (ValueError, KeyError) as exc:
            raise BadResponseError(f"malformed question response: {exc}") from exc
        if not isinstance(questions, list) or not all(isinstance(q, str) for q in questions):
            raise BadResponseError("questions field must be a list of strings")
        return questions


class MockQuestionGenClient:
    """Offline stand-in deriving questions from a paragraph's content words.

    Deterministic for a fixed seed: the word sample is keyed on a stable hash
    of the paragraph text, never on process state.
    """

    template = "What does the passage say about {}?"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, paragraph_text: str, k: int) -> list[str]:
        words = sorted(set(_CONTENT_WORD_RE.findall(paragraph_text.lower())))
        if not words:
            return []
        rng = random.Random(fnv1a64(paragraph_text.encode("utf-8")) ^ self.seed)
        picked = words if len(words) <= k else rng.sample(words, k)
        return [self.template.format(w) for w in picked]


def make_question_client(
    spec: str, *, timeout_ms: int = 10000, retries: int = 2
) -> QuestionGenClient:
    """``mock:<seed>`` gives the offline mock, an http(s) URL the HTTP client."""
    if spec.startswith("mock"):
        _, _, seed = spec.partition(":")
        return MockQuestionGenClient(seed=int(seed) if seed else 0)
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpQuestionGenClient(spec, timeout_ms=timeout_ms, retries=retries)
    raise ValueError(f"unrecognized question generator spec: {spec!r}")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_qa_jsonl(ds: QADataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in ds.pairs:
            rec = {
                "question": pair.question,
                "doc_id": pair.paragraph_ref[0],
                "paragraph_ordinal": pair.paragraph_ref[1],
                "answer_text": pair.answer_text,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_qa_jsonl(path: str | Path, name: str = "") -> QADataset:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pairs.append(
                QAPair(
                    question=rec["question"],
                    paragraph_ref=(rec["doc_id"], int(rec["paragraph_ordinal"])),
                    answer_text=rec["answer_text"],
                )
            )
    return QADataset(pairs=pairs, name=name)
