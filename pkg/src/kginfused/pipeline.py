"""Question answering flows: NoR, Vanilla RAG, Vanilla QE and the kg_infused flow."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .activation import (
    ActivationConfig,
    ActivationMemory,
    SubgraphSummary,
    run_activation,
)
from .gateway import Gateway
from .index import EmbedClient, EmbeddingMatrix, Passage, ScoredHit, embed, top_k
from .kgstore import KGStore

log = logging.getLogger(__name__)

MODES = ("nor", "vanilla_rag", "vanilla_qe", "kg_infused")

STAGES = {
    "nor": ("answer",),
    "vanilla_rag": ("retrieve", "note", "answer"),
    "vanilla_qe": ("expand_query", "retrieve", "note", "answer"),
    "kg_infused": ("activation", "expand_query", "retrieve", "note", "augment", "answer"),
}


@dataclass(frozen=True)
class RetrievalPlan:
    k_p: int = 6

    def __post_init__(self) -> None:
        if self.k_p < 1:
            raise ValueError("k_p must be >= 1")

    @property
    def split(self) -> tuple[int, int]:
        """Passages per query for (original, expanded); the original gets the odd one."""
        return math.ceil(self.k_p / 2), self.k_p // 2


@dataclass(frozen=True)
class PipelineConfig:
    activation: ActivationConfig = ActivationConfig()
    plan: RetrievalPlan = RetrievalPlan()


@dataclass
class Resources:
    gateway: Gateway
    embedder: Callable[[str], np.ndarray] | EmbedClient
    corpus: dict[str, Passage] | None = None
    corpus_index: EmbeddingMatrix | None = None
    store: KGStore | None = None
    entity_index: EmbeddingMatrix | None = None

    def embed(self, text: str) -> np.ndarray:
        if isinstance(self.embedder, EmbedClient):
            return embed(text, self.embedder)
        if not text.strip():
            raise ValueError("cannot embed empty text")
        return np.asarray(self.embedder(text), dtype=np.float32)


@dataclass
class RetrievedPassage:
    query_tag: str
    hit: ScoredHit
    passage: Passage


@dataclass
class QuerySession:
    question: str
    mode: str
    id: str | None = None
    memory: ActivationMemory | None = None
    summary: SubgraphSummary | None = None
    expanded_query: str | None = None
    retrieved: list[RetrievedPassage] = field(default_factory=list)
    passage_note: str | None = None
    final_note: str | None = None
    answer: str | None = None
    trace: list[dict] = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def to_dict(self, store: KGStore | None = None) -> dict:
        d = {
            "id": self.id,
            "question": self.question,
            "mode": self.mode,
            "expanded_query": self.expanded_query,
            "retrieved": [
                {"query": r.query_tag, "id": r.hit.id, "score": r.hit.score, "title": r.passage.title}
                for r in self.retrieved
            ],
            "passage_note": self.passage_note,
            "final_note": self.final_note,
            "answer": self.answer,
            "trace": self.trace,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }
        if self.summary is not None:
            d["summary"] = self.summary.text
        if self.memory is not None and store is not None:
            d["activation"] = [rec.to_dict(store) for rec in self.memory.rounds]
        return d


def first_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


def expand_query(q: str, summary: SubgraphSummary | None, gateway: Gateway) -> str:
    """One-line expanded query; without KG facts this is plain LLM query expansion."""
    if summary is None or summary.is_empty:
        reply = gateway.complete("qe_vanilla", {"question": q})
    else:
        reply = gateway.complete("qe_kg", {"question": q, "triples_summary": summary.text})
    return first_line(reply.text)


def merge_hits(q_hits: Sequence[ScoredHit], q2_hits: Sequence[ScoredHit]) -> list[tuple[str, ScoredHit]]:
    """Ordered union by id: original-query hits first, then unseen expanded-query hits."""
    seen: set[str] = set()
    merged = []
    for tag, hits in (("q", q_hits), ("q_prime", q2_hits)):
        for h in hits:
            if h.id not in seen:
                seen.add(h.id)
                merged.append((tag, h))
    return merged


def dual_retrieve(
    q: str,
    q_prime: str,
    plan: RetrievalPlan,
    corpus_index: EmbeddingMatrix,
    corpus: dict[str, Passage],
    embed_fn: Callable[[str], np.ndarray],
) -> list[RetrievedPassage]:
    k_q, k_q2 = plan.split
    q_hits = top_k(corpus_index, embed_fn(q), k_q)
    q2_hits = top_k(corpus_index, embed_fn(q_prime), k_q2) if k_q2 else []
    return [RetrievedPassage(tag, h, corpus[h.id]) for tag, h in merge_hits(q_hits, q2_hits)]


def format_passages(passages: Sequence[Passage]) -> str:
    return "\n\n".join(f"[{i}] Title: {p.title}\nText: {p.text}" for i, p in enumerate(passages, 1))


def build_passage_note(q: str, passages: Sequence[Passage], gateway: Gateway) -> str:
    return gateway.complete("note", {"question": q, "passages": format_passages(passages)}).text.strip()


def augment_note(q: str, note: str, summary: SubgraphSummary, gateway: Gateway) -> str:
    if summary.is_empty:
        return note
    reply = gateway.complete("ka", {"question": q, "passage": note, "triples_summary": summary.text})
    return reply.text.strip()


def generate_answer(q: str, context: str | None, mode: str, gateway: Gateway) -> str:
    if mode == "nor":
        reply = gateway.complete("answer_nor", {"question": q})
    else:
        reply = gateway.complete("answer_rag", {"question": q, "passages": context or ""})
    return reply.text.strip()


def _require(value, what: str, mode: str):
    if value is None:
        raise ValueError(f"mode {mode!r} requires {what}")
    return value


def run(q: str, mode: str, cfg: PipelineConfig, res: Resources, qid: str | None = None) -> QuerySession:
    """Run one question through ``mode``; stage errors mark the session failed instead of raising."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    s = QuerySession(question=q, mode=mode, id=qid)
    gw = res.gateway
    stage = ""

    def done(name: str, **detail) -> None:
        s.trace.append({"stage": name, **detail})

    try:
        if mode == "kg_infused":
            stage = "activation"
            store = _require(res.store, "a KG store", mode)
            ent_index = _require(res.entity_index, "an entity index", mode)
            s.memory, s.summary = run_activation(q, res.embed(q), store, ent_index, cfg.activation, gw)
            done(stage, rounds=len(s.memory.rounds), triples=len(s.memory.g_act), empty=s.summary.is_empty)

        if mode in ("vanilla_qe", "kg_infused"):
            stage = "expand_query"
            s.expanded_query = expand_query(q, s.summary, gw)
            done(stage, query=s.expanded_query)

        if mode != "nor":
            stage = "retrieve"
            corpus_index = _require(res.corpus_index, "a corpus index", mode)
            corpus = _require(res.corpus, "a corpus", mode)
            if mode == "vanilla_rag":
                hits = top_k(corpus_index, res.embed(q), cfg.plan.k_p)
                s.retrieved = [RetrievedPassage("q", h, corpus[h.id]) for h in hits]
            else:
                q_prime = s.expanded_query or q
                s.retrieved = dual_retrieve(q, q_prime, cfg.plan, corpus_index, corpus, res.embed)
            done(stage, ids=[r.hit.id for r in s.retrieved])

            stage = "note"
            s.passage_note = build_passage_note(q, [r.passage for r in s.retrieved], gw)
            done(stage)

        context = s.passage_note
        if mode == "kg_infused":
            stage = "augment"
            s.final_note = augment_note(q, s.passage_note, s.summary, gw)
            context = s.final_note
            done(stage, skipped=s.summary.is_empty)

        stage = "answer"
        s.answer = generate_answer(q, context, mode, gw)
        done(stage)
    except Exception as exc:  # noqa: BLE001 - session records the failure and the batch continues
        s.failed_stage = stage
        s.error = f"{type(exc).__name__}: {exc}"
        s.trace.append({"stage": stage, "error": s.error})
        log.warning("session %s failed at %s: %s", qid, stage, s.error)
    return s


def run_batch(
    examples: Iterable[tuple[str, str]],
    mode: str,
    cfg: PipelineConfig,
    res: Resources,
    workers: int = 1,
) -> list[QuerySession]:
    """Run ``(id, question)`` pairs; output order follows input order."""
    items = list(examples)
    if workers <= 1:
        return [run(q, mode, cfg, res, qid) for qid, q in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: run(item[1], mode, cfg, res, item[0]), items))


def write_sessions(sessions: Sequence[QuerySession], path: str | Path, store: KGStore | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_dict(store), ensure_ascii=False) + "\n")


def write_predictions(sessions: Sequence[QuerySession], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            if s.ok:
                fh.write(json.dumps({"id": s.id, "answer": s.answer}, ensure_ascii=False) + "\n")
