"""
Exact top-k inner product search
================================

Brute force, but exact: scores are double precision, near-ties are rescored
with a correctly rounded sum, and equal scores are ordered by id.
"""

import time

import numpy as np

from kginfused import EmbeddingMatrix, top_k

rng = np.random.default_rng(0)
vecs = rng.standard_normal((10_000, 64)).astype(np.float32)
ids = [f"doc{i:05d}" for i in range(10_000)]
index = EmbeddingMatrix(vecs, ids)

q = rng.standard_normal(64).astype(np.float32)
t0 = time.perf_counter()
hits = top_k(index, q, 6)
print(f"top 6 of 10k in {1000 * (time.perf_counter() - t0):.1f} ms")
for h in hits:
    print(f"  {h.id}  {h.score:+.4f}")

# Ties: five identical rows, ids out of order. Ascending id wins.
tied = EmbeddingMatrix(np.ones((5, 3), dtype=np.float32), ["e", "c", "a", "d", "b"])
print([h.id for h in top_k(tied, np.ones(3), 3)])  # ['a', 'b', 'c']

# Scaling the query by a positive constant never changes the ranking
print([h.id for h in top_k(index, q * 4.0, 6)] == [h.id for h in hits])
