"""The prototype memory: clustering, FIFO banks, retrieval, compensation.

Run with:  python demos/03_prototype_memory.py
"""

import numpy as np

from mixfed.memory import PrototypeBank, compensate, extract_prototypes, kmeans, retrieve
from mixfed.nets import RepSet, make_modalities
from mixfed.tensor import Tensor

rng = np.random.default_rng(7)
mods = make_modalities()

# k-means with seeded k-means++ starts; the objective history is monotone
points = np.concatenate([rng.normal(0, 0.3, (20, 2)), rng.normal(4, 0.3, (20, 2))])
result = kmeans(points, z=2, seed=0)
print("centers:\n", np.round(result.centers, 2))
print("objective history (non-increasing):", [round(h, 2) for h in result.history])

# prototypes are cluster centers of pooled representations, sorted for
# run-to-run stability; they are means, never raw samples
reps = rng.standard_normal((30, 4))
protos = extract_prototypes(reps, z=3, seed=1)
print("any prototype equals a raw input?", any(np.array_equal(p, r) for p in protos for r in reps))

# banks are bounded FIFO queues per modality
bank = PrototypeBank(mods, dim=4, capacity=5)
for step in range(4):
    bank.push(mods[1], [rng.standard_normal(4) for _ in range(2)])
print("bank size after 8 pushes at capacity 5:", len(bank.entries("T1c")))

# retrieval: the stored prototype with the best summed cosine similarity to
# the queries (ties go to the oldest slot)
snap = bank.snapshot()
queries = [rng.standard_normal(4), rng.standard_normal(4)]
best = retrieve(queries, snap, mods[1])
print("retrieved prototype:", np.round(best, 2))

# compensation fills a client's missing modalities with retrieved prototypes
# broadcast over the spatial grid
c, h, w = 4, 8, 8
tmaps = {"T1": Tensor(rng.standard_normal((c, h, w))), "T2": Tensor(rng.standard_normal((c, h, w)))}
repset = RepSet(
    tailored_maps=tmaps,
    shared_maps=dict(tmaps),
    tailored_pooled={k: Tensor(v.data.mean(axis=(-1, -2))) for k, v in tmaps.items()},
    shared_pooled={k: Tensor(v.data.mean(axis=(-1, -2))) for k, v in tmaps.items()},
)
full = compensate(repset, snap, mods)
for m, t in full:
    origin = "own" if m.label in tmaps else "compensated"
    print(f"  {m.label}: {origin}, spatially constant: {np.all(t.data == t.data[:, :1, :1])}")
