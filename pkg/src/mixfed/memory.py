"""Prototype memory: k-means extraction, per-modality FIFO banks, and
similarity-based retrieval for missing-modality compensation.

Banks live on the server. Clients see an immutable snapshot taken at the
round barrier and send freshly clustered prototypes back with their upload,
so bank contents are identical for every client within a round.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyBank, TooFewPoints
from .nets import ModalityId, RepSet
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class ClusterResult:
    centers: np.ndarray  # z × d
    assignments: np.ndarray  # n, values in [0, z)
    objective: float  # sum of squared distances to assigned centers
    history: list  # objective after each Lloyd iteration, non-increasing


def _objective(points, centers, assignments) -> float:
    diff = points - centers[assignments]
    return float(np.sum(diff * diff))


def _plus_plus_init(points: np.ndarray, z: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding: proportional-to-squared-distance draws."""
    n = points.shape[0]
    centers = np.empty((z, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, z):
        total = d2.sum()
        if total <= 0.0:
            centers[i:] = points[rng.integers(n, size=z - i)]
            break
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iters: int) -> ClusterResult:
    history = []
    assignments = None
    for _ in range(max_iters):
        dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assignments = dists.argmin(axis=1)  # ties go to the lowest index
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(centers.shape[0]):
            members = points[assignments == c]
            if members.shape[0] > 0:  # empty clusters keep their old center
                centers[c] = members.mean(axis=0)
        history.append(_objective(points, centers, assignments))
    # final assignment so every point sits at its nearest center
    dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assignments = dists.argmin(axis=1)
    obj = _objective(points, centers, assignments)
    history.append(obj)
    return ClusterResult(centers, assignments, obj, history)


def kmeans(points, z: int, max_iters: int = 50, seed: int = 0, restarts: int = 1) -> ClusterResult:
    """Lloyd iterations from k-means++ seeding; keeps the best of ``restarts``
    independent runs. Stops at ``max_iters`` or at an assignment fixpoint."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if z < 1 or points.shape[0] < z:
        raise TooFewPoints(f"kmeans needs >= z={z} points, got {points.shape[0]}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        centers = _plus_plus_init(points, z, rng)
        result = _lloyd(points, centers, max_iters)
        if best is None or result.objective < best.objective:
            best = result
    return best


def extract_prototypes(reps, z: int, seed: int, max_iters: int = 50, restarts: int = 4) -> np.ndarray:
    """Cluster one epoch's pooled tailored representations into z prototypes,
    returned in lexicographic order so output is stable across runs."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2:
        raise DimMismatch(f"expected n×C representations, got shape {reps.shape}")
    result = kmeans(reps, z, max_iters=max_iters, seed=seed, restarts=restarts)
    order = np.lexsort(result.centers.T[::-1])
    return result.centers[order]


class PrototypeBank:
    """Per-modality bounded FIFO queues of prototype vectors."""

    def __init__(self, modalities, dim: int, capacity: int = 200):
        self.dim = int(dim)
        self.capacity = int(capacity)
        self._queues: dict[str, list[np.ndarray]] = {m.label: [] for m in modalities}

    def labels(self):
        return list(self._queues.keys())

    def entries(self, label: str) -> list[np.ndarray]:
        return list(self._queues[label])

    def __len__(self):
        return sum(len(q) for q in self._queues.values())

    def push(self, m: ModalityId, protos) -> None:
        """Append prototypes in order; evict oldest past capacity."""
        queue = self._queues[m.label]
        for p in protos:
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (self.dim,):
                raise DimMismatch(f"prototype shape {p.shape} != ({self.dim},)")
            queue.append(p.copy())
        if len(queue) > self.capacity:
            del queue[: len(queue) - self.capacity]

    def snapshot(self) -> "BankSnapshot":
        return BankSnapshot(
            self.dim,
            {lbl: tuple(p.copy() for p in q) for lbl, q in self._queues.items()},
        )

    def restore(self, snap: "BankSnapshot") -> None:
        self._queues = {lbl: [p.copy() for p in q] for lbl, q in snap.queues.items()}

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["modality", "slot", *[f"c{i}" for i in range(self.dim)]])
            for lbl, queue in self._queues.items():
                for slot, p in enumerate(queue):
                    writer.writerow([lbl, slot, *[repr(float(x)) for x in p]])


class BankSnapshot:
    """Immutable view of a bank at a round barrier."""

    def __init__(self, dim: int, queues: dict[str, tuple]):
        self.dim = dim
        self.queues = queues

    def entries(self, label: str):
        return self.queues.get(label, ())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for lbl in sorted(self.queues):
            h.update(lbl.encode())
            for p in self.queues[lbl]:
                h.update(p.tobytes())
        return h.hexdigest()


def _cosine_rows(queries: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix; zero vectors score 0 against everything."""
    qn = np.linalg.norm(queries, axis=-1, keepdims=True)
    bn = np.linalg.norm(bank, axis=-1, keepdims=True)
    qs = np.where(qn > 0, queries / np.where(qn > 0, qn, 1.0), 0.0)
    bs = np.where(bn > 0, bank / np.where(bn > 0, bn, 1.0), 0.0)
    return qs @ bs.T


def retrieve(queries, bank, c: ModalityId) -> np.ndarray:
    """Prototype for modality ``c`` maximizing the summed cosine similarity
    to the queries; ties break toward the lowest (oldest) queue index."""
    entries = bank.entries(c.label)
    if len(entries) == 0:
        raise EmptyBank(f"no prototypes stored for modality {c.label!r}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[0] == 0:
        raise EmptyBank("retrieval needs at least one query")
    stackd = np.stack(entries)
    if stackd.shape[1] != queries.shape[1]:
        raise DimMismatch(f"query dim {queries.shape[1]} != prototype dim {stackd.shape[1]}")
    scores = _cosine_rows(queries, stackd).sum(axis=0)
    return stackd[int(np.argmax(scores))].copy()  # argmax takes the first max


def compensate(reps: RepSet, bank, modalities) -> list[tuple[ModalityId, Tensor]]:
    """Full modality-ordered tailored map list for one sample: existing maps
    pass through; missing ones become a retrieved prototype broadcast over
    the spatial grid (zero map on an empty bank, logged as a miss)."""
    held = set(reps.tailored_maps.keys())
    some_map = next(iter(reps.tailored_maps.values()))
    c, h, w = some_map.shape
    queries = np.stack([reps.tailored_pooled[lbl].data for lbl in reps.tailored_pooled])
    out = []
    for m in modalities:
        if m.label in held:
            out.append((m, reps.tailored_maps[m.label]))
            continue
        try:
            proto = retrieve(queries, bank, m)
        except EmptyBank:
            log.info("compensation miss: empty bank for %s, using zero map", m.label)
            proto = np.zeros(c)
        out.append((m, Tensor(np.broadcast_to(proto[:, None, None], (c, h, w)).copy())))
    return out
