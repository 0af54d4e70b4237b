"""Client network: modality-tailored encoders, one modality-shared encoder,
pair-wise fusion, a modality classifier head, and the globally shared decoder.

All parameters live in a :class:`ParamBundle`, which serializes to a canonical
flat float64 vector with a stable key order — that vector is the unit of
federated transmission and the checkpoint format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BadDims, BundleMismatch, IncompleteRepList, ShapeMismatch, UnknownModality
from .tensor import Tensor

DEFAULT_MODALITY_LABELS = ("T1", "T1c", "T2", "FLAIR")


@dataclass(frozen=True)
class ModalityId:
    """Position in the fixed global modality ordering."""

    index: int
    label: str


def make_modalities(labels=DEFAULT_MODALITY_LABELS) -> tuple[ModalityId, ...]:
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise BadDims(f"duplicate modality labels: {labels}")
    return tuple(ModalityId(i, lbl) for i, lbl in enumerate(labels))


@dataclass(frozen=True)
class ArchConfig:
    modalities: tuple[ModalityId, ...]
    channels: int = 16
    n_classes: int = 3
    kernel: int = 3

    def __post_init__(self):
        if not self.modalities:
            raise BadDims("at least one modality required")
        if self.channels < 1 or self.n_classes < 1:
            raise BadDims("channels and n_classes must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise BadDims("kernel must be odd and positive")


def _encoder_shapes(prefix: str, c: int, k: int):
    return [
        (f"{prefix}.conv1.w", (c, 1, k, k)),
        (f"{prefix}.conv1.b", (c,)),
        (f"{prefix}.conv2.w", (c, c, k, k)),
        (f"{prefix}.conv2.b", (c,)),
    ]


def bundle_layout(arch: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (key, shape) list: tailored encoders in global modality
    order, then shared encoder, fusion, classifier, decoder."""
    c, k, m = arch.channels, arch.kernel, len(arch.modalities)
    layout: list[tuple[str, tuple[int, ...]]] = []
    for mod in arch.modalities:
        layout += _encoder_shapes(f"tailored.{mod.label}", c, k)
    layout += _encoder_shapes("shared", c, k)
    layout += [("fusion.w", (2 * c, c)), ("fusion.b", (c,))]
    layout += [("classifier.w", (c, m)), ("classifier.b", (m,))]
    layout += [
        ("decoder.conv1.w", (c, (m + 1) * c, k, k)),
        ("decoder.conv1.b", (c,)),
        ("decoder.conv2.w", (arch.n_classes, c, k, k)),
        ("decoder.conv2.b", (arch.n_classes,)),
    ]
    return layout


class ParamBundle:
    """Named parameter collection with a canonical flat serialization."""

    def __init__(self, arch: ArchConfig, tensors: dict[str, Tensor]):
        layout = bundle_layout(arch)
        for key, shape in layout:
            if key not in tensors:
                raise BundleMismatch(f"missing parameter {key}")
            if tensors[key].shape != shape:
                raise BundleMismatch(f"{key} has shape {tensors[key].shape}, expected {shape}")
        self.arch = arch
        self._tensors = {key: tensors[key] for key, _ in layout}

    def __getitem__(self, key: str) -> Tensor:
        return self._tensors[key]

    def named(self):
        return list(self._tensors.items())

    def keys(self):
        return list(self._tensors.keys())

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(key, t.shape) for key, t in self._tensors.items()]

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    @classmethod
    def from_flat(cls, arch: ArchConfig, vec: np.ndarray, requires_grad: bool = False) -> "ParamBundle":
        layout = bundle_layout(arch)
        total = sum(int(np.prod(shape)) for _, shape in layout)
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != total:
            raise BundleMismatch(f"flat vector has {vec.size} entries, layout needs {total}")
        tensors = {}
        offset = 0
        for key, shape in layout:
            n = int(np.prod(shape))
            tensors[key] = Tensor(vec[offset : offset + n].reshape(shape).copy(), requires_grad=requires_grad)
            offset += n
        return cls(arch, tensors)

    def copy(self, requires_grad: bool | None = None) -> "ParamBundle":
        tensors = {}
        for key, t in self._tensors.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            tensors[key] = Tensor(t.data.copy(), requires_grad=rg)
        return ParamBundle(self.arch, tensors)

    def trainable_for(self, held_labels) -> list[Tensor]:
        """Tensors a client actually optimizes: its own tailored encoders plus
        every globally shared component."""
        held = set(held_labels)
        out = []
        for key, t in self._tensors.items():
            if key.startswith("tailored."):
                label = key.split(".")[1]
                if label not in held:
                    continue
            out.append(t)
        return out

    def select(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(k, t) for k, t in self._tensors.items() if k.startswith(prefix)]


def init_params(arch: ArchConfig, seed: int) -> ParamBundle:
    """Uniform init in [-a, a] with a = sqrt(1/fan_in), draw order fixed by
    the canonical layout so equal seeds give bitwise-equal bundles."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for key, shape in bundle_layout(arch):
        if key.endswith(".b"):
            fan_in = _bias_fan_in(key, arch)
        elif len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
        else:
            fan_in = shape[0]
        a = float(np.sqrt(1.0 / fan_in))
        tensors[key] = Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)
    return ParamBundle(arch, tensors)


def _bias_fan_in(key: str, arch: ArchConfig) -> int:
    wkey = key[:-2] + ".w"
    for k, shape in bundle_layout(arch):
        if k == wkey:
            return shape[1] * shape[2] * shape[3] if len(shape) == 4 else shape[0]
    raise BadDims(f"no weight for bias {key}")


# ---------------------------------------------------------------------------
# forward passes


def _encode(image: Tensor, bundle: ParamBundle, prefix: str) -> Tensor:
    h = T.relu(T.conv2d(image, bundle[f"{prefix}.conv1.w"], bundle[f"{prefix}.conv1.b"]))
    return T.relu(T.conv2d(h, bundle[f"{prefix}.conv2.w"], bundle[f"{prefix}.conv2.b"]))


def encode_tailored(image: Tensor, m: ModalityId, bundle: ParamBundle) -> Tensor:
    """Modality-specific feature map (C×h×w, or batched B×C×h×w)."""
    key = f"tailored.{m.label}.conv1.w"
    if key not in bundle.keys():
        raise UnknownModality(f"no tailored encoder for {m.label!r}")
    return _encode(image, bundle, f"tailored.{m.label}")


def encode_shared(image: Tensor, bundle: ParamBundle) -> Tensor:
    """Modality-invariant feature map from the single shared encoder."""
    return _encode(image, bundle, "shared")


def fuse_pair(a: Tensor, b: Tensor, bundle: ParamBundle) -> Tensor:
    """Linear layer on the concatenation of two C-vectors (2C→C) + relu."""
    c = bundle.arch.channels
    if a.shape[-1] != c or b.shape[-1] != c:
        raise ShapeMismatch(f"fuse_pair expects length-{c} vectors, got {a.shape} and {b.shape}")
    squeeze = a.ndim == 1
    if squeeze:
        a = T.reshape(a, (1, c))
        b = T.reshape(b, (1, c))
    h = T.concat([a, b], axis=1)
    out = T.relu(T.add(T.matmul(h, bundle["fusion.w"]), bundle["fusion.b"]))
    return T.reshape(out, (c,)) if squeeze else out


def classify_modality(pooled: Tensor, origin: str, bundle: ParamBundle, lam: float = 1.0) -> Tensor:
    """Logits over the global modalities; the shared path passes through the
    gradient reversal layer first, so its forward is origin-independent."""
    if origin not in ("tailored", "shared"):
        raise ValueError(f"origin must be 'tailored' or 'shared', got {origin!r}")
    c = bundle.arch.channels
    squeeze = pooled.ndim == 1
    if squeeze:
        pooled = T.reshape(pooled, (1, c))
    if origin == "shared":
        pooled = T.grl(pooled, lam)
    logits = T.add(T.matmul(pooled, bundle["classifier.w"]), bundle["classifier.b"])
    return T.reshape(logits, (len(bundle.arch.modalities),)) if squeeze else logits


def decode(tailored_maps, shared_map: Tensor, bundle: ParamBundle) -> Tensor:
    """Per-pixel class logits from the full modality-ordered map list plus one
    shared map. The list must carry exactly every global modality, in order."""
    mods = bundle.arch.modalities
    labels = [m.label for m, _ in tailored_maps]
    if labels != [m.label for m in mods]:
        raise IncompleteRepList(
            f"decoder needs maps for {[m.label for m in mods]} in order, got {labels}"
        )
    maps = [t for _, t in tailored_maps] + [shared_map]
    ndims = {t.ndim for t in maps}
    if len(ndims) != 1 or ndims.pop() not in (3, 4):
        raise ShapeMismatch("decoder maps must be all 3-D or all 4-D")
    axis = 0 if maps[0].ndim == 3 else 1
    x = T.concat(maps, axis=axis)
    h = T.relu(T.conv2d(x, bundle["decoder.conv1.w"], bundle["decoder.conv1.b"]))
    return T.conv2d(h, bundle["decoder.conv2.w"], bundle["decoder.conv2.b"])


# ---------------------------------------------------------------------------
# representation bookkeeping


@dataclass
class RepSet:
    """Feature maps and their pooled vectors for one client forward pass.

    Keys are modality labels restricted to the client's set; pooled entries
    are the global-average-pool of the corresponding maps.
    """

    tailored_maps: dict[str, Tensor]
    shared_maps: dict[str, Tensor]
    tailored_pooled: dict[str, Tensor]
    shared_pooled: dict[str, Tensor]


def compute_reps(images: dict[str, Tensor], held: list[ModalityId], bundle: ParamBundle) -> RepSet:
    """Run both encoders over each held modality's image batch."""
    tailored_maps, shared_maps = {}, {}
    tailored_pooled, shared_pooled = {}, {}
    for m in held:
        if m.label not in images:
            raise UnknownModality(f"no image provided for held modality {m.label!r}")
        img = images[m.label]
        tmap = encode_tailored(img, m, bundle)
        smap = encode_shared(img, bundle)
        tailored_maps[m.label] = tmap
        shared_maps[m.label] = smap
        tailored_pooled[m.label] = T.global_average_pool(tmap)
        shared_pooled[m.label] = T.global_average_pool(smap)
    return RepSet(tailored_maps, shared_maps, tailored_pooled, shared_pooled)


def mean_shared_map(reps: RepSet) -> Tensor:
    """Average of the per-modality shared maps; keeps decoder arity fixed."""
    maps = list(reps.shared_maps.values())
    total = maps[0]
    for m in maps[1:]:
        total = T.add(total, m)
    return T.scale(total, 1.0 / len(maps))
