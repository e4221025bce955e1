"""A tiny knowledge graph and corpus around the AAM-N-4 Oriole missile, plus a scripted LLM.

Shared by the demo scripts in this directory. Everything here runs offline.
"""

from __future__ import annotations

import re

import numpy as np

from kginfused import (
    ActivationConfig,
    EmbeddingMatrix,
    HashEmbedder,
    Passage,
    PipelineConfig,
    RawKG,
    Resources,
    RetrievalPlan,
    filter_complete,
    mock_gateway,
)

QUESTION = "Which company followed the company that made AAM-N-4 Oriole?"

ENTITIES = {
    "Q1": (["rtv-n-16 oriole", "AAM-N-4 Oriole"],
           "AAM-N-4 Oriole, an early American air-to-air missile made by a company for the United States Navy"),
    "Q2": (["martin company", "Glenn L. Martin Company"], "American aircraft and aerospace manufacturing company"),
    "Q3": (["Air-to-air missiles"], "missile fired from an aircraft to destroy another aircraft"),
    "Q4": (["Martin Marietta"], "American company formed in 1961"),
    "Q5": (["Oriole Records"], "record label"),
    "Q6": (["CBS"], "American broadcast television network"),
    "Q7": (["Lockheed Martin"], "American aerospace and defense company"),
    "Q8": (["United States Navy"], "naval warfare service branch of the United States"),
    "Q9": (["Firebird"], None),  # no description: the completeness filter drops it
}
RELATIONS = {"P176": ["manufacturer"], "P31": ["instance of"], "P156": ["followed by"],
             "P137": ["operator"], "P127": ["owned by"], "P17": ["country"]}
TRIPLES = [
    ("Q1", "P176", "Q2"), ("Q1", "P31", "Q3"), ("Q1", "P137", "Q8"),
    ("Q2", "P156", "Q4"), ("Q2", "P17", "Q8"), ("Q3", "P31", "Q3"),
    ("Q4", "P156", "Q7"), ("Q5", "P127", "Q6"), ("Q6", "P127", "Q5"),
    ("Q7", "P17", "Q8"), ("Q8", "P17", "Q8"), ("Q9", "P31", "Q3"),
]
PASSAGES = [
    Passage("p1", "AAM-N-4 Oriole", "The AAM-N-4 Oriole was an early American air-to-air missile developed by "
            "the Glenn L. Martin Company for the United States Navy."),
    Passage("p2", "Martin Marietta", "Martin Marietta Corporation was formed in 1961 through the merger of the "
            "Martin Company and American-Marietta Corporation."),
    Passage("p3", "Oriole Records", "Oriole Records was a record label acquired by CBS in 1964."),
    Passage("p4", "Lockheed Martin", "Lockheed Martin was formed in 1995 by the merger of Lockheed Corporation "
            "with Martin Marietta."),
    Passage("p5", "Ryan Aeronautical", "The Ryan Aeronautical Company developed the AAM-A-1 Firebird."),
    Passage("p6", "Air-to-air missile", "An air-to-air missile is fired from an aircraft to destroy another aircraft."),
    Passage("p7", "United States Navy", "The United States Navy is the maritime service branch of the United States."),
    Passage("p8", "Glenn L. Martin", "Glenn L. Martin founded an aircraft company in 1912."),
]

# the triples a sensible selector keeps for this question
RELEVANT = {
    "<rtv-n-16 oriole | manufacturer | martin company>",
    "<rtv-n-16 oriole | instance of | Air-to-air missiles>",
    "<martin company | followed by | Martin Marietta>",
}

_SPAN = re.compile(r"<[^<>]*>")


def scripted_llm(req) -> str:
    """Stands in for a chat model: picks RELEVANT triples and returns canned notes."""
    if req.template in ("triple_select", "triple_update"):
        offered = req.prompt.rsplit("Triples:\n", 1)[-1]
        return "\n".join(t for t in _SPAN.findall(offered) if t in RELEVANT)
    return {
        "triple_summary": "Martin Marietta is the successor to the Martin Company, which made the AAM-N-4 Oriole.",
        "qe_kg": "What were the key events in the history of Martin Marietta after it succeeded the Martin Company?",
        "qe_vanilla": "What companies developed the AAM-N-4 Oriole's successors?",
        "note": "The Glenn L. Martin Company developed the AAM-N-4 Oriole. In 1961 the Martin Company merged "
                "with American-Marietta Corporation to form Martin Marietta Corporation.",
        "ka": "The company that followed the Glenn L. Martin Company, which developed the AAM-N-4 Oriole, "
              "is Martin Marietta Corporation.",
        "answer_rag": "Martin Marietta Corporation.",
        "answer_nor": "Lockheed Martin",
    }[req.template]


def build(dim: int = 128, gateway=None) -> Resources:
    emb = HashEmbedder(dim)
    store = filter_complete(RawKG.from_records(ENTITIES, RELATIONS, TRIPLES))
    ent_texts = [f"{store.name(e)}: {store.description(e)}" for e in range(store.n_entities)]
    return Resources(
        gateway=gateway or mock_gateway(responder=scripted_llm),
        embedder=emb,
        corpus={p.id: p for p in PASSAGES},
        corpus_index=EmbeddingMatrix(np.stack([emb(f"{p.title} {p.text}") for p in PASSAGES]),
                                     [p.id for p in PASSAGES]),
        store=store,
        entity_index=EmbeddingMatrix(np.stack([emb(t) for t in ent_texts]), store.entity_ids),
    )


CONFIG = PipelineConfig(ActivationConfig(k_e=3, max_rounds=2), RetrievalPlan(6))
