"""
Mining near-parallel pairs with a ratio margin
==============================================

Two small "corpora" of vectors. Some rows of B are noisy copies of rows
of A (the hidden pairs); the rest are unrelated. A plain cosine argmax
accepts many wrong partners for hub-like vectors, while the margin
criterion with the mutual-top-1 rule keeps mostly the hidden pairs.
"""
import numpy as np

from stylemine.mining import DualIndex, Extractor, build_index

rng = np.random.default_rng(0)
dim, n_a, n_b, n_true = 16, 60, 80, 25

# a shared "hub" direction makes raw cosines uninformative for some rows
hub = rng.normal(size=dim)
A = rng.normal(size=(n_a, dim)) + 0.8 * hub
B = rng.normal(size=(n_b, dim)) + 0.8 * hub
truth = {i: i for i in range(n_true)}
B[:n_true] = A[:n_true] + 0.3 * rng.normal(size=(n_true, dim))

# the second representation is another noisy view of the same sentences
A2 = A + 0.5 * rng.normal(size=A.shape)
B2 = B + 0.5 * rng.normal(size=B.shape)

ids_a, ids_b = np.arange(n_a), np.arange(n_b)
side_a = DualIndex(build_index((ids_a, A)), build_index((ids_a, A2)))
side_b = DualIndex(build_index((ids_b, B)), build_index((ids_b, B2)))

# baseline: plain cosine argmax from every A row
sims, nearest = side_b.w.search(A, 1)
hits = sum(truth.get(i) == j for i, j in enumerate(nearest[:, 0]))
print(f"cosine argmax: {n_a} proposals, {hits} correct (precision {hits / n_a:.2f})")

for k in (1, 4, 16):
    res = Extractor(side_a, side_b, k=k).extract(ids_a)
    good = sum(truth.get(p.a_id) == p.b_id for p in res.accepted)
    n = len(res.accepted)
    print(f"margin k={k:2d}: {n} accepted, {good} correct (precision {good / max(n, 1):.2f}), "
          f"{len(res.rejected_a)} rejected")

# the accepted set is symmetric: mining from B finds the same pairs
ex = Extractor(side_a, side_b, k=4)
forward = {(p.a_id, p.b_id) for p in ex.extract(ids_a).accepted}
backward = {(p.b_id, p.a_id) for p in ex.swapped().extract(ids_b).accepted}
print("symmetric:", forward == backward)
