"""
Four ways to answer a question
==============================

NoR asks the model directly. Vanilla RAG retrieves with the raw question.
Vanilla QE expands the query first. The kg_infused flow activates the graph,
expands with the facts it found, retrieves with both queries and folds the
facts into the passage note before answering.

A live model is one line away:

    from kginfused.gateway import Gateway
    gateway = Gateway.from_env()   # KGRAG_API_BASE, KGRAG_API_KEY, KGRAG_MODEL
"""

from kginfused import run

from toy_world import CONFIG, QUESTION, build

for mode in ("nor", "vanilla_rag", "vanilla_qe", "kg_infused"):
    res = build()
    s = run(QUESTION, mode, CONFIG, res)
    stages = " -> ".join(t["stage"] for t in s.trace)
    print(f"{mode:12s} {s.answer!r:34s} {len(res.gateway.calls)} calls: {stages}")

# The kg_infused session keeps every intermediate product
res = build()
s = run(QUESTION, "kg_infused", CONFIG, res)
print()
print("expanded query:", s.expanded_query)
print("retrieved:", [(r.query_tag, r.hit.id) for r in s.retrieved])
print("passage note:", s.passage_note)
print("fact-enhanced note:", s.final_note)
print("usage:", res.gateway.usage())
