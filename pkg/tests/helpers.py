"""Shared fixtures: toy graphs, the Oriole case study, scripted LLM responders."""

from __future__ import annotations

import random
import re
from collections import deque
from fractions import Fraction

import numpy as np

from kginfused.activation import ActivationConfig
from kginfused.gateway import ChatRequest
from kginfused.index import EmbeddingMatrix, HashEmbedder, Passage
from kginfused.kgstore import KGStore, RawKG, filter_complete
from kginfused.pipeline import PipelineConfig, Resources, RetrievalPlan

SPAN = re.compile(r"<[^<>]*>")


def section(prompt: str, header: str) -> str:
    """Text between ``header`` and the next blank line of a rendered prompt."""
    start = prompt.index(header) + len(header)
    rest = prompt[start:].lstrip("\n")
    return rest.split("\n\n", 1)[0]


def candidate_block(prompt: str) -> str:
    for header in ("Retrieved Entity Triples:\n", "New Retrieved Entity Triples:\n"):
        if header in prompt:
            return section(prompt, header)
    raise AssertionError("not a selection prompt")


def accept_all(req: ChatRequest) -> str:
    """Selector that echoes every offered triple."""
    return "\n".join(SPAN.findall(candidate_block(req.prompt)))


def chain_store(n: int = 3) -> KGStore:
    """E0 -> E1 -> ... -> E{n-1}, unfiltered (the last node heads nothing)."""
    ents = {f"E{i}": ([f"node {i}"], f"description of node {i}") for i in range(n)}
    triples = [(f"E{i}", "R0", f"E{i + 1}") for i in range(n - 1)]
    return KGStore.unfiltered(RawKG.from_records(ents, {"R0": ["next"]}, triples))


def random_raw(rng: random.Random, n_entities: int, n_triples: int, n_relations: int = 5,
               p_desc: float = 1.0) -> RawKG:
    ents = {
        f"Q{i}": ([f"entity {i}"], f"about entity {i}" if rng.random() < p_desc else None)
        for i in range(n_entities)
    }
    rels = {f"P{j}": [f"rel {j}"] for j in range(n_relations)}
    triples = [
        (f"Q{rng.randrange(n_entities)}", f"P{rng.randrange(n_relations)}", f"Q{rng.randrange(n_entities)}")
        for _ in range(n_triples)
    ]
    return RawKG.from_records(ents, rels, triples)


# --- the AAM-N-4 Oriole case study -------------------------------------------------

ORIOLE_QUESTION = "Which company followed the company that made AAM-N-4 Oriole?"

ORIOLE_ENTITIES = {
    "Q1": (["rtv-n-16 oriole", "AAM-N-4 Oriole"],
           "AAM-N-4 Oriole, an early American air-to-air missile made by a company for the United States Navy"),
    "Q2": (["martin company", "Glenn L. Martin Company"], "American aircraft and aerospace manufacturing company"),
    "Q3": (["Air-to-air missiles"], "missile fired from an aircraft to destroy another aircraft"),
    "Q4": (["Martin Marietta"], "American company formed in 1961"),
    "Q5": (["Oriole Records"], "record label"),
    "Q6": (["CBS"], "American broadcast television network"),
    "Q7": (["Lockheed Martin"], "American aerospace and defense company"),
    "Q8": (["United States Navy"], "naval warfare service branch of the United States"),
}
ORIOLE_RELATIONS = {
    "P176": ["manufacturer"],
    "P31": ["instance of"],
    "P156": ["followed by"],
    "P137": ["operator"],
    "P127": ["owned by"],
    "P17": ["country"],
}
ORIOLE_TRIPLES = [
    ("Q1", "P176", "Q2"),
    ("Q1", "P31", "Q3"),
    ("Q1", "P137", "Q8"),
    ("Q2", "P156", "Q4"),
    ("Q2", "P17", "Q8"),
    ("Q3", "P31", "Q3"),
    ("Q4", "P156", "Q7"),
    ("Q5", "P127", "Q6"),
    ("Q6", "P127", "Q5"),
    ("Q7", "P17", "Q8"),
    ("Q8", "P17", "Q8"),
]
ORIOLE_SELECTED = [
    "<rtv-n-16 oriole | manufacturer | martin company>",
    "<rtv-n-16 oriole | instance of | Air-to-air missiles>",
    "<martin company | followed by | Martin Marietta>",
]
ORIOLE_SUMMARY = (
    "Based on the provided information, it appears that Martin Marietta is the company that followed the "
    "company that made the AAM-N-4 Oriole, as Martin Marietta is the successor to the Martin Company."
)
ORIOLE_EXPANDED = (
    "What were the key events and milestones in the history of Martin Marietta after it succeeded the Martin "
    "Company, particularly in relation to its involvement in the development and production of air-to-air missiles?"
)
ORIOLE_NOTE = (
    "The Glenn L. Martin Company developed the AAM-N-4 Oriole, an early American air-to-air missile, for the "
    "United States Navy. In 1961, the Martin Company merged with American-Marietta Corporation to form Martin "
    "Marietta Corporation, a leading company in chemicals, aerospace, and electronics."
)
ORIOLE_FACT_NOTE = (
    "The company that followed the Glenn L. Martin Company, which developed the AAM-N-4 Oriole, an early American "
    "air-to-air missile for the United States Navy, is Martin Marietta Corporation."
)
ORIOLE_ANSWER = "Martin Marietta Corporation."

ORIOLE_PASSAGES = [
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


def oriole_store() -> KGStore:
    return filter_complete(RawKG.from_records(ORIOLE_ENTITIES, ORIOLE_RELATIONS, ORIOLE_TRIPLES))


def entity_index(store: KGStore, embedder) -> EmbeddingMatrix:
    texts = [f"{store.name(e)}: {store.description(e)}" for e in range(store.n_entities)]
    return EmbeddingMatrix(np.stack([embedder(t) for t in texts]), store.entity_ids)


def corpus_index(passages, embedder) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.stack([embedder(f"{p.title} {p.text}") for p in passages]), [p.id for p in passages])


def oriole_responder(req: ChatRequest) -> str:
    """Scripted LLM for the case study; selection accepts exactly the listed triples."""
    t = req.template
    if t in ("triple_select", "triple_update"):
        offered = SPAN.findall(candidate_block(req.prompt))
        return "\n".join(x for x in offered if x in ORIOLE_SELECTED)
    return {
        "triple_summary": "..." + ORIOLE_SUMMARY,
        "qe_kg": ORIOLE_EXPANDED + "\n",
        "qe_vanilla": "What companies developed the AAM-N-4 Oriole's successors?",
        "note": ORIOLE_NOTE,
        "ka": ORIOLE_FACT_NOTE,
        "answer_rag": " " + ORIOLE_ANSWER + "\n",
        "answer_nor": "Lockheed Martin",
    }[t]


def oriole_resources(gateway, dim: int = 128) -> Resources:
    emb = HashEmbedder(dim)
    store = oriole_store()
    return Resources(
        gateway=gateway,
        embedder=emb,
        corpus={p.id: p for p in ORIOLE_PASSAGES},
        corpus_index=corpus_index(ORIOLE_PASSAGES, emb),
        store=store,
        entity_index=entity_index(store, emb),
    )


ORIOLE_CONFIG = PipelineConfig(ActivationConfig(k_e=3, max_rounds=2), RetrievalPlan(6))


# --- hand-labelled metric fixture ------------------------------------------------
# (prediction, golds, acc, em, f1) with F1 worked by hand on normalized tokens.

METRIC_FIXTURE = [
    ("Martin Marietta Corporation.", ["Martin Marietta"], 1, 0, Fraction(4, 5)),  # P=2/3 R=1
    ("Martin Marietta", ["Martin Marietta"], 1, 1, Fraction(1)),
    ("The Cat!", ["cat"], 1, 1, Fraction(1)),
    ("the cat sat", ["cat"], 1, 0, Fraction(2, 3)),  # P=1/2 R=1
    ("no", ["yes"], 0, 0, Fraction(0)),
    ("Yes, it is.", ["yes"], 1, 0, Fraction(1, 2)),  # first token rule; P=1/3 R=1
    ("no, but yes", ["yes"], 0, 0, Fraction(1, 2)),
    ("Paris", ["London"], 0, 0, Fraction(0)),
    ("December 6, 1952", ["6 December 1952"], 0, 0, Fraction(1)),  # bag equal, order differs
    ("Joseph Ball", ["Joseph Ball", "Ball"], 1, 1, Fraction(1)),
    ("Mr. Joseph Ball", ["Joseph Ball"], 1, 0, Fraction(4, 5)),
    ("Ball", ["Joseph Ball"], 0, 0, Fraction(2, 3)),  # P=1 R=1/2
    ("", ["anything"], 0, 0, Fraction(0)),
    ("an apple a day", ["apple day"], 1, 1, Fraction(1)),
    ("New York City", ["New York", "NYC"], 1, 0, Fraction(4, 5)),
    ("York New", ["New York"], 0, 0, Fraction(1)),
    ("the the the", ["a"], 1, 1, Fraction(1)),  # both normalize to empty
    ("Steven Spielberg and Martin Campbell", ["Spielberg"], 1, 0, Fraction(1, 3)),  # P=1/5 R=1
    ("42 years", ["41"], 0, 0, Fraction(0)),
    ("cat cat", ["cat"], 1, 0, Fraction(2, 3)),  # clipped count 1; P=1/2 R=1
]
METRIC_FIXTURE_MEANS = {"acc": Fraction(12, 20), "em": Fraction(5, 20), "f1": Fraction(191, 300)}


# --- scripted KA sampler and judge for preference data -----------------------------

def dpo_responder(req: ChatRequest) -> str:
    """KA replies differ per decoding params; the judge ties on questions marked ``[tie]``."""
    if req.template == "ka":
        p = req.params
        return f"Fact-enhanced note (t={p.temperature}, p={p.top_p}) for prompt {req.key[:8]}"
    if req.template == "dpo_judge":
        ids = [int(m) for m in re.findall(r'"_id": (\d+)', req.prompt)]
        if "[tie]" in req.prompt:
            return 'Both are equal. {"best_id": %d, "worst_id": %d}' % (ids[0], ids[0])
        return 'json {"best_id": %d, "worst_id": %d}' % (ids[0], ids[-1])
    raise AssertionError(f"unexpected template {req.template}")


def dpo_inputs(n: int, tie_every: int = 0):
    from kginfused.dpo import KAInput

    out = []
    for i in range(n):
        tie = tie_every and i % tie_every == 0
        out.append(KAInput(f"x{i}", f"question {i}{' [tie]' if tie else ''}", f"note {i}", f"facts {i}",
                           round=1 + i % 2))
    return out


# --- on-disk workspace for CLI runs ------------------------------------------------

def write_workspace(root, *, entities, relations, triples, passages, question, answers, responder,
                    k_e=3, rounds=(2,), modes=("kg_infused",), dim=128):
    """KG files, embeddings, corpus, dataset and a recorded transcript; returns the INI path."""
    import json
    from dataclasses import replace

    from kginfused.gateway import mock_gateway
    from kginfused.pipeline import run

    root.mkdir(parents=True, exist_ok=True)
    (root / "entities.txt").write_text("".join(f"{e}\t" + "\t".join(names) + "\n" for e, (names, _) in entities.items()))
    (root / "descriptions.txt").write_text("".join(f"{e}\t{d}\n" for e, (_, d) in entities.items()))
    (root / "relations.txt").write_text("".join(f"{r}\t" + "\t".join(n) + "\n" for r, n in relations.items()))
    (root / "triples.txt").write_text("".join("\t".join(t) + "\n" for t in triples))
    (root / "corpus.jsonl").write_text(
        "".join(json.dumps({"id": p.id, "title": p.title, "text": p.text}) + "\n" for p in passages))
    (root / "dev.jsonl").write_text(json.dumps({"id": "q1", "question": question, "answers": answers}) + "\n")

    emb = HashEmbedder(dim)
    store = filter_complete(RawKG.from_records(entities, relations, triples))
    gw = mock_gateway(responder=responder)
    res = Resources(gateway=gw, embedder=emb, corpus={p.id: p for p in passages},
                    corpus_index=corpus_index(passages, emb), store=store, entity_index=entity_index(store, emb))
    store.save(root / "kg.spqkg")
    res.entity_index.save(root / "entity.vec", root / "entity.ids")
    res.corpus_index.save(root / "corpus.vec", root / "corpus.ids")
    base = PipelineConfig(ActivationConfig(k_e=k_e, max_rounds=max(rounds)), RetrievalPlan(6))
    for mode in modes:
        for n in rounds:
            run(question, mode, replace(base, activation=replace(base.activation, max_rounds=n)), res, "q1")
    gw.backend.save(root / "transcript.jsonl")

    ini = root / "kgrag.ini"
    paths = {
        "triples": "triples.txt", "entities": "entities.txt", "relations": "relations.txt",
        "descriptions": "descriptions.txt", "snapshot": "kg.spqkg", "entity_vectors": "entity.vec",
        "entity_ids": "entity.ids", "corpus": "corpus.jsonl", "corpus_vectors": "corpus.vec",
        "corpus_ids": "corpus.ids", "dataset": "dev.jsonl",
    }
    ini.write_text("[paths]\n" + "".join(f"{k} = {root / v}\n" for k, v in paths.items()) + f"""
[activation]
k_e = {k_e}
max_rounds = {max(rounds)}

[retrieval]
k_p = 6

[gateway]
hash_embed_dim = {dim}

[run]
mode = {modes[0]}
out = {root / 'runs'}
""")
    return ini


def write_oriole_workspace(root, **kw):
    return write_workspace(root, entities=ORIOLE_ENTITIES, relations=ORIOLE_RELATIONS, triples=ORIOLE_TRIPLES,
                           passages=ORIOLE_PASSAGES, question=ORIOLE_QUESTION, answers=["Martin Marietta"],
                           responder=oriole_responder, **kw)


CYCLE_ENTITIES = {f"C{i}": ([f"station {i}"], f"stop number {i} on the loop line") for i in range(8)}
CYCLE_TRIPLES = [(f"C{i}", "N", f"C{(i + 1) % 8}") for i in range(8)]


def cycle_responder(req: ChatRequest) -> str:
    if req.template in ("triple_select", "triple_update"):
        return accept_all(req)
    return {"triple_summary": "The loop continues.", "qe_kg": "Which stop follows?", "note": "Stops are listed.",
            "ka": "Stops follow each other.", "answer_rag": "station 7", "qe_vanilla": "Which stop?",
            "answer_nor": "unknown"}[req.template]


def write_cycle_workspace(root, **kw):
    passages = [Passage(f"s{i}", f"Station {i}", f"Station {i} is followed by station {(i + 1) % 8}.")
                for i in range(8)]
    return write_workspace(root, entities=CYCLE_ENTITIES, relations={"N": ["next stop"]}, triples=CYCLE_TRIPLES,
                           passages=passages, question="Which station comes after station 3?",
                           answers=["station 4"], responder=cycle_responder, k_e=1, **kw)


# --- activation oracles ---------------------------------------------------------

def onehot_index(store: KGStore) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.eye(store.n_entities, dtype=np.float32), store.entity_ids)


def query_for(store: KGStore, seeds: list[str]) -> np.ndarray:
    """Query vector whose top-len(seeds) entities are ``seeds``, in that order."""
    q = np.zeros(store.n_entities, dtype=np.float32)
    for rank, e in enumerate(seeds):
        q[store.entity_handle(e)] = len(seeds) - rank
    return q


def oracle_selector(store: KGStore, accepted: set):
    rendered = {store.render_triple(t) for t in accepted}

    def respond(req):
        if req.template == "triple_summary":
            return "summary"
        return "\n".join(x for x in SPAN.findall(candidate_block(req.prompt)) if x in rendered)

    return respond


def bfs_selected_subgraph(store: KGStore, seeds: list[int], accepted: set, depth: int) -> set:
    """Accepted triples whose head is within ``depth - 1`` hops of a seed over accepted edges."""
    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    out_edges: dict[int, list] = {}
    for t in accepted:
        out_edges.setdefault(t.head, []).append(t)
    while queue:
        e = queue.popleft()
        for t in out_edges.get(e, []):
            if t.tail not in dist:
                dist[t.tail] = dist[e] + 1
                queue.append(t.tail)
    return {t for t in accepted if dist.get(t.head, depth) < depth}


def random_instance(seed: int, n: int = 40, m: int = 90):
    rng = random.Random(seed)
    store = KGStore.unfiltered(random_raw(rng, n, m, n_relations=4))
    triples = list(store.triples())
    accepted = {t for t in triples if rng.random() < 0.6}
    seeds = rng.sample(store.entity_ids, 3)
    return store, accepted, seeds


def check_invariants(store, mem, cfg, handles):
    assert len(mem.rounds) <= cfg.max_rounds
    seen_frontiers: set[int] = set()
    e_act: set[int] = set()
    g_prev: set = set()
    for rec in mem.rounds:
        assert not (set(rec.frontier_in) & seen_frontiers)  # no reactivation
        seen_frontiers |= set(rec.frontier_in)
        assert set(rec.selected) <= set(rec.candidates)
        assert not (set(rec.frontier_out) & (e_act | set(rec.frontier_in)))
        assert len(rec.frontier_out) <= cfg.max_entities_per_round
        per_head: dict[int, int] = {}
        for t in rec.candidates:
            per_head[t.head] = per_head.get(t.head, 0) + 1
        assert all(c <= cfg.max_triples_per_entity for c in per_head.values())
        e_act |= set(rec.frontier_in)
        g_now = g_prev | set(rec.selected)
        assert g_prev <= g_now  # monotone
        g_prev = g_now
    assert set(mem.g_act) == g_prev and mem.e_act == e_act
    all_triples = set(store.triples())
    assert set(mem.g_act) <= all_triples  # soundness
    assert all(t.head in mem.e_act for t in mem.g_act)
    # spanned depth: heads lie within len(rounds)-1 hops of a seed over g_act edges
    reach = bfs_selected_subgraph(store, handles, set(mem.g_act), len(mem.rounds))
    assert reach == set(mem.g_act)
