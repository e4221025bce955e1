"""
Building the KG store
=====================

Raw Wikidata5M-style records go in; a filtered, interned graph comes out.
Every surviving entity has a description and heads at least one triple.
"""

import tempfile
from pathlib import Path

from kginfused import KGStore, RawKG, filter_complete

from toy_world import ENTITIES, RELATIONS, TRIPLES

raw = RawKG.from_records(ENTITIES, RELATIONS, TRIPLES)
print("raw:", len(raw.entity_ids), "entities,", raw.n_triples, "triples")

# Q9 (Firebird) has no description, so it goes, along with the triple it heads.
store = filter_complete(raw)
print("filtered:", store.n_entities, "entities,", store.n_triples, "triples")
print(store.stats.to_dict())

# Out-edges of an entity, capped the way activation caps them
for t in store.neighbors("Q1", cap=30):
    print("  ", store.render_triple(t))

# A triple rendered for the LLM parses back to the same handle triple
text = store.render_triple(store.triple(0))
assert store.parse_triple(text.upper()) == store.triple(0)

# Snapshots reload without re-filtering
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "toy.spqkg"
    store.save(path)
    again = KGStore.load(path)
    print("snapshot:", path.stat().st_size, "bytes; same triples:", again.triples() == store.triples())
