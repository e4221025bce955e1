"""
KG-guided spreading activation
==============================

Seeds come from the entity index. Each round shows the LLM the out-edges of
the frontier, keeps what it selects, and moves on to the new tail entities.
"""

from kginfused import ActivationConfig, run_activation

from toy_world import QUESTION, build

res = build()
cfg = ActivationConfig(k_e=3, max_rounds=6)
memory, summary = run_activation(QUESTION, res.embed(QUESTION), res.store, res.entity_index, cfg, res.gateway)

for rec in memory.rounds:
    d = rec.to_dict(res.store)
    print(f"round {d['round']}: frontier {d['frontier_in']}")
    print(f"  offered {len(d['candidates'])}, selected:")
    for t in d["selected"]:
        print("   ", t)
    print(f"  next frontier {d['frontier_out']}")

# Activation stopped by itself: no new entities were reached.
print("rounds run:", len(memory.rounds), "of", cfg.max_rounds)
print("summary:", summary.text)
print("gateway calls:", [c.template for c in res.gateway.calls])
