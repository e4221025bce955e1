"""LLM-guided spreading activation over the KG.

Seeds come from dense retrieval over entity descriptions. Each round offers
the 1-hop out-edges of the current frontier to the LLM, keeps the triples it
selects, and activates their unseen tail entities for the next round.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .gateway import Gateway
from .index import EmbeddingMatrix, top_k
from .kgstore import KGStore, Triple, split_rendered

NO_FACTS = "No relevant facts were found."

_SPAN = re.compile(r"<([^<>]*)>")


@dataclass(frozen=True)
class ActivationConfig:
    k_e: int = 3
    max_rounds: int = 6
    max_entities_per_round: int = 10
    max_triples_per_entity: int = 30

    def __post_init__(self) -> None:
        for name in ("k_e", "max_rounds", "max_entities_per_round", "max_triples_per_entity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class RoundRecord:
    index: int
    frontier_in: list[int]
    candidates: list[Triple]
    selected: list[Triple]
    frontier_out: list[int]

    def to_dict(self, store: KGStore) -> dict:
        return {
            "round": self.index,
            "frontier_in": [store.entity_ids[e] for e in self.frontier_in],
            "candidates": [store.render_triple(t) for t in self.candidates],
            "selected": [store.render_triple(t) for t in self.selected],
            "frontier_out": [store.entity_ids[e] for e in self.frontier_out],
        }


@dataclass
class ActivationMemory:
    g_act: list[Triple] = field(default_factory=list)
    e_act: set[int] = field(default_factory=set)
    rounds: list[RoundRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._g_set = set(self.g_act)

    def update(self, selected: Iterable[Triple], frontier: Iterable[int]) -> None:
        for t in selected:
            if t not in self._g_set:
                self._g_set.add(t)
                self.g_act.append(t)
        self.e_act.update(frontier)

    def __contains__(self, t: Triple) -> bool:
        return t in self._g_set

    def subgraph_at(self, n_rounds: int) -> list[Triple]:
        """Accumulated subgraph after the first ``n_rounds`` rounds."""
        seen: dict[Triple, None] = {}
        for rec in self.rounds[:n_rounds]:
            for t in rec.selected:
                seen.setdefault(t)
        return list(seen)

    def export_trace(self, store: KGStore, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.rounds:
                fh.write(json.dumps(rec.to_dict(store), ensure_ascii=False) + "\n")


@dataclass
class SubgraphSummary:
    text: str
    source_triples: list[Triple]

    @property
    def is_empty(self) -> bool:
        return not self.source_triples


def seed_entities(qvec: np.ndarray, index: EmbeddingMatrix, cfg: ActivationConfig) -> list[str]:
    """Ids of the ``k_e`` entities whose description vectors best match the query, best first."""
    return [hit.id for hit in top_k(index, qvec, cfg.k_e)]


def parse_selection(reply: str) -> list[tuple[str, str, str]]:
    keys = []
    for m in _SPAN.finditer(reply):
        key = split_rendered(m.group(1))
        if key is not None:
            keys.append(key)
    return keys


def render_triples(store: KGStore, triples: Sequence[Triple]) -> str:
    return "\n".join(store.render_triple(t) for t in triples)


def select_triples(
    q: str,
    candidates: Sequence[Triple],
    memory: ActivationMemory,
    gateway: Gateway,
    store: KGStore,
) -> list[Triple]:
    """Ask the LLM which candidates matter; keep only exact candidate matches, in candidate order."""
    if not candidates:
        raise ValueError("no candidate triples to select from")
    if not memory.rounds:
        reply = gateway.complete("triple_select", {"question": q, "triples": render_triples(store, candidates)})
    else:
        reply = gateway.complete(
            "triple_update",
            {
                "question": q,
                "previous_selected_triples": render_triples(store, memory.g_act),
                "new_retrieved_triples": render_triples(store, candidates),
            },
        )
    wanted = set(parse_selection(reply.text))
    picked: list[Triple] = []
    seen: set[Triple] = set()
    for t in candidates:
        if t not in seen and split_rendered(store.render_triple(t)) in wanted:
            seen.add(t)
            picked.append(t)
    return picked


def activation_round(
    store: KGStore,
    memory: ActivationMemory,
    frontier: Sequence[int],
    cfg: ActivationConfig,
    gateway: Gateway,
    q: str,
) -> RoundRecord:
    frontier = [e for e in dict.fromkeys(frontier) if e not in memory.e_act]
    candidates: list[Triple] = []
    offered: set[Triple] = set()
    for e in frontier:
        for t in store.neighbors(e, cfg.max_triples_per_entity):
            if t not in memory and t not in offered:
                offered.add(t)
                candidates.append(t)
    selected = select_triples(q, candidates, memory, gateway, store) if candidates else []
    memory.update(selected, frontier)
    frontier_out: list[int] = []
    for t in selected:
        if t.tail not in memory.e_act and t.tail not in frontier_out:
            frontier_out.append(t.tail)
    rec = RoundRecord(len(memory.rounds), frontier, candidates, selected,
                      frontier_out[: cfg.max_entities_per_round])
    memory.rounds.append(rec)
    return rec


def summarize(q: str, triples: Sequence[Triple], store: KGStore, gateway: Gateway) -> SubgraphSummary:
    if not triples:
        return SubgraphSummary(NO_FACTS, [])
    reply = gateway.complete("triple_summary", {"question": q, "selected_triples": render_triples(store, triples)})
    text = reply.text.strip() or NO_FACTS
    return SubgraphSummary(text, list(triples))


def summarize_at_round(q: str, memory: ActivationMemory, n_rounds: int, store: KGStore,
                       gateway: Gateway) -> SubgraphSummary:
    """Summary of the subgraph as it stood after ``n_rounds`` rounds (activation-depth sweeps)."""
    return summarize(q, memory.subgraph_at(n_rounds), store, gateway)


def run_activation(
    q: str,
    qvec: np.ndarray,
    store: KGStore,
    entity_index: EmbeddingMatrix,
    cfg: ActivationConfig,
    gateway: Gateway,
) -> tuple[ActivationMemory, SubgraphSummary]:
    memory = ActivationMemory()
    frontier = [store.entity_handle(e) for e in seed_entities(qvec, entity_index, cfg)]
    while frontier and len(memory.rounds) < cfg.max_rounds:
        frontier = activation_round(store, memory, frontier, cfg, gateway, q).frontier_out
    return memory, summarize(q, memory.g_act, store, gateway)
