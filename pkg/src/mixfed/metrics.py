"""Dice evaluation, per-round reports, and CSV/JSON exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

FOREGROUND_CLASSES = {1: "core", 2: "edema"}


def dice_score(pred: np.ndarray, true: np.ndarray, c: int) -> float:
    """2|A∩B| / (|A|+|B|) for class ``c``; both masks empty scores 1.0,
    exactly one empty scores 0.0."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeMismatch(f"mask shapes differ: {pred.shape} vs {true.shape}")
    a = pred == c
    b = true == c
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * float(np.logical_and(a, b).sum()) / (na + nb)


def mdice(pred: np.ndarray, true: np.ndarray, classes=tuple(FOREGROUND_CLASSES)) -> float:
    """Mean dice over the foreground classes."""
    return float(np.mean([dice_score(pred, true, c) for c in classes]))


@dataclass
class ClientRoundMetrics:
    client_id: int
    per_class: dict  # class id -> mean dice over the client's test samples
    mdice: float
    losses: dict  # component name -> mean over the round's training steps
    shared_alignment: float | None = None  # mean pairwise cosine distance


@dataclass
class DiceReport:
    """All clients' scores for one federated round."""

    round_index: int
    clients: list[ClientRoundMetrics] = field(default_factory=list)

    @property
    def average_mdice(self) -> float:
        return float(np.mean([c.mdice for c in self.clients]))

    def client(self, cid: int) -> ClientRoundMetrics:
        for c in self.clients:
            if c.client_id == cid:
                return c
        raise KeyError(cid)


def mean_pairwise_cosine_distance(vectors) -> float:
    """Mean of 1 - cos over all unordered vector pairs."""
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    dists = []
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            ni, nj = np.linalg.norm(vecs[i]), np.linalg.norm(vecs[j])
            if ni == 0 or nj == 0:
                dists.append(1.0)
            else:
                dists.append(1.0 - float(np.dot(vecs[i], vecs[j]) / (ni * nj)))
    return float(np.mean(dists))


LOSS_COLUMNS = ("loss_seg", "loss_cls", "loss_tri", "loss_prox", "loss_total")

RESULTS_HEADER = (
    "round",
    "client",
    "class",
    "dice",
    "mdice",
    *LOSS_COLUMNS,
    "shared_alignment",
)


def write_results_csv(reports: list[DiceReport], path) -> None:
    """One row per (round, client, foreground class)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RESULTS_HEADER)
        for report in reports:
            for cm in report.clients:
                for cls_id, cls_name in FOREGROUND_CLASSES.items():
                    writer.writerow(
                        [
                            report.round_index,
                            cm.client_id,
                            cls_name,
                            repr(cm.per_class[cls_id]),
                            repr(cm.mdice),
                            *[repr(float(cm.losses.get(k, 0.0))) for k in LOSS_COLUMNS],
                            "" if cm.shared_alignment is None else repr(cm.shared_alignment),
                        ]
                    )


def summary_dict(reports: list[DiceReport], config_dict: dict, seed: int) -> dict:
    final = reports[-1]
    return {
        "seed": seed,
        "config": config_dict,
        "rounds": final.round_index,
        "per_client_mdice": {str(c.client_id): c.mdice for c in final.clients},
        "average_mdice": final.average_mdice,
    }


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def export_representations(entries, path) -> None:
    """CSV of pooled representations: one row per (client, sample, modality,
    origin) with the vector components spread over c0..c{C-1} columns."""
    entries = list(entries)
    if not entries:
        raise ValueError("nothing to export")
    dim = len(entries[0][-1])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["client", "sample", "modality", "origin", *[f"c{i}" for i in range(dim)]])
        for client_id, sample, modality, origin, vec in entries:
            writer.writerow([client_id, sample, modality, origin, *[repr(float(x)) for x in vec]])
