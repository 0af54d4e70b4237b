"""Training objectives.

* soft Dice segmentation loss over post-softmax class maps
* modality classification cross-entropy over both encoder paths
* entropy-based triplet loss on fused representation sets
* their weighted total, and the proximal term used by the FedProx baseline

Entropy of a pooled vector treats its components as draws from a Gaussian:
H = 0.5*ln(2*pi*e*var), with a variance floor so constant vectors (dead relu
at init) stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import (
    BundleMismatch,
    EmptyBatch,
    EmptyTripletSet,
    NonFiniteValue,
    ShapeMismatch,
    VectorTooShort,
)
from .nets import ParamBundle
from .tensor import Tensor

DICE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    mu: float = 0.5
    gamma: float = 0.0001
    alpha: float = 1.0
    entropy_epsilon: float = 1e-8
    fedprox_mu: float = 0.01

    def __post_init__(self):
        for name in ("mu", "gamma", "alpha", "entropy_epsilon"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise NonFiniteValue(f"loss weight {name}={v} must be finite and >= 0")


def dice_loss(probs: Tensor, target: Tensor) -> Tensor:
    """Mean over classes of 1 - 2*sum(p*g)/(sum(p^2)+sum(g^2)+eps).

    ``probs`` are post-softmax class maps (K×H×W or B×K×H×W), ``target`` the
    matching one-hot encoding. Batched input averages over the batch.
    """
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if probs.shape != target.shape:
        raise ShapeMismatch(f"dice_loss shapes differ: {probs.shape} vs {target.shape}")
    if probs.ndim not in (3, 4):
        raise ShapeMismatch(f"dice_loss expects K×H×W or B×K×H×W, got {probs.shape}")
    spatial = (-2, -1)
    overlap = T.tsum(T.mul(probs, target), axis=spatial)
    denom = T.add(T.tsum(T.mul(probs, probs), axis=spatial), T.tsum(T.mul(target, target), axis=spatial))
    per_class = T.sub(1.0, T.div(T.scale(overlap, 2.0), T.add(denom, DICE_EPS)))
    return T.mean(per_class)


def modality_ce(logits: Tensor, labels) -> Tensor:
    """-(1/I) * sum_i sum_m y_im * log p_im over representation instances.

    ``logits`` is an I×M matrix (one row per (sample, representation)
    instance from either encoder path), ``labels`` the true modality index
    of each instance's source image.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise EmptyBatch(f"modality_ce needs a nonempty I×M logit matrix, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"labels shape {labels.shape} != ({logits.shape[0]},)")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    logp = T.log(T.softmax(logits, axis=-1))
    return T.scale(T.mean(T.tsum(T.mul(logp, Tensor(onehot)), axis=-1)), -1.0)


def gaussian_entropy(v: Tensor, epsilon: float = 1e-8) -> Tensor:
    """0.5*ln(2*pi*e*var) of the vector's components, variance floored at
    ``epsilon``. Batched input (..., C) returns one entropy per row."""
    if v.shape[-1] < 2:
        raise VectorTooShort(f"entropy needs >=2 components, got shape {v.shape}")
    var = T.maximum(T.variance(v, axis=-1), epsilon)
    return T.scale(T.log(T.scale(var, 2.0 * math.pi * math.e)), 0.5)


@dataclass
class TripletBatch:
    """Per-sample anchor/positive/negative pooled-vector sets, stacked.

    anchors: B×A×C, positives: B×P×C, negatives: B×N×C. Anchors are
    modality-shared vectors, positives shared⊕shared fusions, negatives
    shared⊕tailored fusions.
    """

    anchors: Tensor
    positives: Tensor
    negatives: Tensor

    @classmethod
    def from_lists(cls, anchors, positives, negatives) -> "TripletBatch":
        """Build from per-sample lists of equal-length vector lists."""

        def pack(rows, name):
            if not rows or any(len(r) == 0 for r in rows):
                raise EmptyTripletSet(f"empty {name} set in triplet batch")
            return T.stack([T.stack(list(r), axis=0) for r in rows], axis=0)

        return cls(pack(anchors, "anchor"), pack(positives, "positive"), pack(negatives, "negative"))

    def validate(self):
        for name in ("anchors", "positives", "negatives"):
            t = getattr(self, name)
            if t.ndim != 3 or 0 in t.shape:
                raise EmptyTripletSet(f"{name} must be a nonempty B×n×C tensor, got {t.shape}")


def triplet_entropy_loss(batch: TripletBatch, alpha: float = 1.0, epsilon: float = 1e-8) -> Tensor:
    """(1/I) * sum_i max(0, MaxDis(A_i,P_i) - MinDis(A_i,N_i) + alpha).

    Dis(u,v) = |H(u) - H(v)| with H the Gaussian entropy; MaxDis maximizes
    over anchor×positive pairs, MinDis minimizes over anchor×negative pairs.
    """
    batch.validate()
    h_a = gaussian_entropy(batch.anchors, epsilon)  # B×A
    h_p = gaussian_entropy(batch.positives, epsilon)  # B×P
    h_n = gaussian_entropy(batch.negatives, epsilon)  # B×N
    bsz, a = h_a.shape
    d_ap = T.absolute(T.sub(T.reshape(h_a, (bsz, a, 1)), T.reshape(h_p, (bsz, 1, -1))))
    d_an = T.absolute(T.sub(T.reshape(h_a, (bsz, a, 1)), T.reshape(h_n, (bsz, 1, -1))))
    max_dis = T.max_reduce(T.reshape(d_ap, (bsz, -1)), axis=1)
    min_dis = T.min_reduce(T.reshape(d_an, (bsz, -1)), axis=1)
    hinge = T.relu(T.add(T.sub(max_dis, min_dis), alpha))
    return T.mean(hinge)


def total_loss(l_seg: Tensor, l_cls: Tensor, l_tri: Tensor, cfg: LossConfig) -> Tensor:
    """l_seg + mu*l_cls + gamma*l_tri."""
    return T.add(l_seg, T.add(T.scale(l_cls, cfg.mu), T.scale(l_tri, cfg.gamma)))


def fedprox_term(w: ParamBundle, w_global: ParamBundle, fedprox_mu: float) -> Tensor:
    """(mu/2) * squared L2 distance between the canonical flat vectors.

    Gradients flow into ``w`` only; the global bundle is treated as constant.
    """
    if w.manifest() != w_global.manifest():
        raise BundleMismatch("fedprox_term on bundles with different manifests")
    total = Tensor(0.0)
    for (_, wt), (_, gt) in zip(w.named(), w_global.named()):
        diff = T.sub(wt, Tensor(gt.data))
        total = T.add(total, T.tsum(T.mul(diff, diff)))
    return T.scale(total, 0.5 * fedprox_mu)
