"""The retrieval-augmented answer pipeline.

Embed the question, scan the index at a similarity threshold, pack the
passing payloads into the prompt in descending-similarity order under a hard
token budget, and hand the rendered prompt to a generation client. Every
intermediate artifact is kept on the result for audit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .corpus import TokenCounter, WhitespacePunctCounter, token_spans, truncate_to_token_budget
from .embed import Embedder
from .errors import GenerationError, RagmarkError
from .generate import GenerationClient, GenerationRequest
from .index import IndexedDataset, IndexKind, RetrievalHit, search

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "Context:\n{context}\n\nQuestion: {question}\nAnswer:"
_CONTEXT_PREFIX = "Context:\n{context}\n\n"


@dataclass
class Budgets:
    model_max_input: int = 4096  # prompt plus generated answer must fit this
    answer_reserve: int = 256


@dataclass
class PackedContext:
    text: str
    included: list[RetrievalHit]
    truncated: bool
    token_count: int


@dataclass
class RagAnswer:
    question: str
    context: PackedContext
    generated_text: str
    threshold: float
    dataset_kind: IndexKind
    prompt: str = ""
    hits: list[RetrievalHit] = field(default_factory=list)


def render_prompt(question: str, context: str, template: str = DEFAULT_TEMPLATE) -> str:
    """Fill the prompt template; an empty context drops the context block entirely."""
    if context:
        return template.format(context=context, question=question)
    if template.startswith(_CONTEXT_PREFIX):
        return template[len(_CONTEXT_PREFIX):].format(question=question)
    return template.format(context="", question=question)


def pack_context(
    hits: list[RetrievalHit],
    ds: IndexedDataset,
    counter: TokenCounter,
    budget: int,
) -> PackedContext:
    """Greedy packing of hit payloads, best first, newline-joined.

    A payload seen before is skipped (several questions can share one parent
    paragraph). The first payload that would overflow is cut on a token
    boundary so the context fills the remaining budget exactly, and packing
    stops there.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1 token")
    text = ""
    used = 0
    included: list[RetrievalHit] = []
    truncated = False
    seen: set[str] = set()
    for hit in hits:
        payload = ds.entries[hit.entry_ref].payload_text
        if payload in seen:
            continue
        candidate = payload if not text else text + "\n" + payload
        count = counter.count(candidate)
        if count <= budget:
            text, used = candidate, count
            seen.add(payload)
            included.append(hit)
            continue
        prefix = _truncate_join(text, payload, counter, budget)
        if prefix:
            text = prefix if not text else text + "\n" + prefix
            used = counter.count(text)
            included.append(hit)
        truncated = True
        break
    return PackedContext(text=text, included=included, truncated=truncated, token_count=used)


def _truncate_join(existing: str, payload: str, counter: TokenCounter, budget: int) -> str:
    """Longest token-boundary prefix of payload that keeps the joined text in budget."""
    if not existing:
        prefix, _ = truncate_to_token_budget(payload, [counter], budget)
        return prefix
    spans = token_spans(payload)
    lo, hi = 0, len(spans)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter.count(existing + "\n" + payload[: spans[mid - 1][1]]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    k = lo
    while k > 0 and counter.count(existing + "\n" + payload[: spans[k - 1][1]]) > budget:
        k -= 1
    return payload[: spans[k - 1][1]].rstrip() if k else ""


def answer(
    question: str,
    ds: IndexedDataset,
    threshold: float,
    embedder: Embedder,
    gen_client: GenerationClient,
    budgets: Budgets | None = None,
    *,
    counter: TokenCounter | None = None,
    template: str = DEFAULT_TEMPLATE,
) -> RagAnswer:
    """embed -> search -> pack -> render -> generate, with full audit trail.

    The context budget is what remains of the model input after the template
    scaffold, the question itself, and the reserve for the generated answer.
    """
    budgets = budgets or Budgets()
    counter = counter or WhitespacePunctCounter()

    query = embedder.embed_batch([question])[0]
    hits = search(ds, query, threshold)

    overhead = counter.count(template.format(context="", question=question))
    context_budget = budgets.model_max_input - budgets.answer_reserve - overhead
    if hits and context_budget >= 1:
        packed = pack_context(hits, ds, counter, context_budget)
    else:
        packed = PackedContext(text="", included=[], truncated=False, token_count=0)
        if hits:
            log.warning("no room for context: budget came out at %d tokens", context_budget)

    prompt = render_prompt(question, packed.text, template)
    request = GenerationRequest(
        prompt=prompt,
        max_new_tokens=budgets.answer_reserve,
        temperature=0.0,
        stop_sequences=[],
    )
    try:
        generated = gen_client.generate(request)
    except RagmarkError as exc:
        raise GenerationError(f"generation failed for {question!r}: {exc}", context=packed) from exc
    return RagAnswer(
        question=question,
        context=packed,
        generated_text=generated,
        threshold=threshold,
        dataset_kind=ds.kind,
        prompt=prompt,
        hits=hits,
    )
