"""Synthetic mix-modal 2-D segmentation benchmark.

Each scene is a bright core blob surrounded by an edema ring on a flat
background. Modalities render the same scene with different contrast pairs:
T1-like modalities show the core and leave the edema at exactly background
intensity, T2-like modalities do the reverse. That split makes the missing
modalities carry real signal — a client holding only T1-like images has no
pixel-level evidence of the edema ring beyond geometry.

Generation is a pure function of (config, seed): every sample, split and
shift comes from its own derived RNG stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConfigError
from .nets import ModalityId, make_modalities
from .seeding import DATA_STREAM, SPLIT_STREAM, generator

CLASS_BACKGROUND, CLASS_CORE, CLASS_EDEMA = 0, 1, 2
N_CLASSES = 3


@dataclass(frozen=True)
class SceneSpec:
    """Scene geometry.

    With ``severity_levels == 0`` the ring thickness is drawn independently
    from its range. With k levels, a latent severity s ∈ {0..k-1} sets the
    thickness (high severity = thin ring) and scatters
    ``round(s * satellite_count)`` small background dots rendered in every
    modality. The core radius stays independent of severity, so nothing in
    the local ring geometry reveals the ring extent: only the far-away
    satellite markers do, and only globally pooled representations can see
    them. That is what gives missing-modality information real value on
    this benchmark.
    """

    height: int = 32
    width: int = 32
    core_radius: tuple[float, float] = (4.0, 7.0)
    ring_thickness: tuple[float, float] = (2.0, 3.0)
    noise_sigma: float = 0.05
    background_level: float = 0.0  # baseline tissue intensity in every modality
    severity_levels: int = 0
    satellite_count: int = 0
    satellite_radius: float = 1.2
    satellite_contrast: float = 0.8

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("scene must be at least 8x8")
        if self.core_radius[0] > self.core_radius[1] or self.core_radius[0] <= 0:
            raise ConfigError(f"bad core radius range {self.core_radius}")
        if self.ring_thickness[0] > self.ring_thickness[1] or self.ring_thickness[0] <= 0:
            raise ConfigError(f"bad ring thickness range {self.ring_thickness}")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.severity_levels < 0 or self.satellite_count < 0:
            raise ConfigError("severity_levels and satellite_count must be >= 0")


@dataclass(frozen=True)
class ModalityProfile:
    """Contrast applied to (core, edema) pixels; background stays at 0."""

    core_contrast: float
    edema_contrast: float


# T1-like: core visible, edema at exactly background level; T2-like: the
# reverse, with a faint core trace in T2 only
DEFAULT_PROFILES = {
    "T1": ModalityProfile(1.0, 0.0),
    "T1c": ModalityProfile(0.7, 0.0),
    "T2": ModalityProfile(0.15, 1.0),
    "FLAIR": ModalityProfile(0.0, 0.7),
}


@dataclass(frozen=True)
class ClientDataSpec:
    modalities: tuple[str, ...]
    n_samples: int = 10
    intensity_shift: float = 0.0
    radius_skew: float = 1.0  # multiplies the scene's radius range
    train_fraction: float = 0.7

    def __post_init__(self):
        if not self.modalities:
            raise ConfigError("client must hold at least one modality")
        if self.n_samples < 1:
            raise ConfigError("client needs at least one sample")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train fraction must be in (0, 1)")


@dataclass(frozen=True)
class DataConfig:
    scene: SceneSpec = SceneSpec()
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    samples_per_client: int = 10
    iid: bool = False
    intensity_shift_range: float = 0.25  # clients spread evenly in ±range
    radius_skew_range: float = 0.2  # clients spread evenly in 1±range
    train_fraction: float = 0.7


def generate_sample(spec: SceneSpec, profiles: dict, modalities, seed, shift: float = 0.0,
                    radius_skew: float = 1.0):
    """One scene: a mask plus an image per modality.

    Image = contrast * class indicator + shift + N(0, sigma^2). Returns
    (images: dict label -> H×W float64, mask: H×W uint8).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, w = spec.height, spec.width
    lo, hi = spec.core_radius
    t_lo, t_hi = spec.ring_thickness
    radius = rng.uniform(lo, hi) * radius_skew
    if spec.severity_levels > 0:
        k = spec.severity_levels
        s = float(rng.integers(k)) / max(k - 1, 1)
        thickness = t_hi - s * (t_hi - t_lo)
        n_satellites = int(round(s * spec.satellite_count))
    else:
        thickness = rng.uniform(t_lo, t_hi)
        n_satellites = spec.satellite_count
    margin = radius + thickness + 1.0
    if 2 * margin >= min(h, w):
        raise ConfigError("core + ring do not fit inside the scene")
    cy = rng.uniform(margin, h - margin)
    cx = rng.uniform(margin, w - margin)

    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[dist <= radius + thickness] = CLASS_EDEMA
    mask[dist <= radius] = CLASS_CORE

    # severity markers: small dots away from the lesion, in every modality,
    # labelled background (they mark the scene, not the target)
    satellites = np.zeros((h, w))
    sr = spec.satellite_radius
    for _ in range(n_satellites):
        for _attempt in range(50):
            sy = rng.uniform(sr + 1, h - sr - 1)
            sx = rng.uniform(sr + 1, w - sr - 1)
            if np.hypot(sy - cy, sx - cx) > radius + thickness + sr + 1.0:
                satellites[np.hypot(yy - sy, xx - sx) <= sr] = 1.0
                break

    images = {}
    for m in modalities:
        prof = profiles[m.label]
        img = np.where(
            mask == CLASS_CORE, prof.core_contrast,
            np.where(mask == CLASS_EDEMA, prof.edema_contrast, 0.0),
        )
        img = np.where(satellites > 0, spec.satellite_contrast, img)
        img = img + spec.background_level + shift
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, size=(h, w))
        images[m.label] = img.astype(np.float64)
    return images, mask


@dataclass
class ClientDataset:
    """One client's local data with a fixed train/test split."""

    client_id: int
    modalities: tuple[ModalityId, ...]
    images: list  # per sample: dict label -> H×W array (held modalities only)
    masks: list  # per sample: H×W uint8
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_train(self) -> int:
        return int(self.train_idx.size)

    @property
    def n_test(self) -> int:
        return int(self.test_idx.size)

    def labels(self):
        return [m.label for m in self.modalities]


def _mix_subsets(modalities) -> list[tuple[ModalityId, ...]]:
    """All C(4,2)=6 two-modality combinations, in global order."""
    return [tuple(pair) for pair in combinations(modalities, 2)]


def build_federation(cfg: DataConfig, seed: int) -> list[ClientDataset]:
    """Six clients.

    Mix-modal mode gives every client a distinct 2-of-4 modality pair, a
    client-specific intensity shift and blob-size skew. iid mode gives every
    client all four modalities from one shared distribution.
    """
    modalities = make_modalities(tuple(cfg.profiles.keys()))
    if cfg.iid:
        subsets = [tuple(modalities)] * 6
        shifts = [0.0] * 6
        skews = [1.0] * 6
    else:
        subsets = _mix_subsets(modalities)
        k = len(subsets)
        shifts = [cfg.intensity_shift_range * (2 * i / (k - 1) - 1.0) for i in range(k)]
        skews = [1.0 + cfg.radius_skew_range * (2 * i / (k - 1) - 1.0) for i in range(k)]

    clients = []
    for cid, held in enumerate(subsets):
        images, masks = [], []
        for s in range(cfg.samples_per_client):
            rng = generator(seed, DATA_STREAM, cid, s)
            # render every global modality for determinism, expose the subset
            full, mask = generate_sample(
                cfg.scene, cfg.profiles, modalities, rng,
                shift=shifts[cid], radius_skew=skews[cid],
            )
            images.append({m.label: full[m.label] for m in held})
            masks.append(mask)
        n = cfg.samples_per_client
        n_train = int(round(cfg.train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        perm = generator(seed, SPLIT_STREAM, cid).permutation(n)
        clients.append(
            ClientDataset(
                client_id=cid,
                modalities=tuple(held),
                images=images,
                masks=masks,
                train_idx=np.sort(perm[:n_train]),
                test_idx=np.sort(perm[n_train:]),
            )
        )
    return clients


def one_hot_mask(mask: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((n_classes,) + mask.shape)
    for c in range(n_classes):
        out[c] = mask == c
    return out


# ---------------------------------------------------------------------------
# binary dump/load so runs are replayable without regeneration

_MAGIC = b"MIXFEDD1"


def dump_dataset(clients: list[ClientDataset], path) -> None:
    """Flat binary file: magic, JSON header (shapes, ids, splits), then raw
    float64 image blocks and uint8 mask blocks in client/sample order."""
    import json

    header = {
        "clients": [
            {
                "client_id": c.client_id,
                "modalities": [[m.index, m.label] for m in c.modalities],
                "n_samples": len(c.masks),
                "shape": list(c.masks[0].shape),
                "train_idx": c.train_idx.tolist(),
                "test_idx": c.test_idx.tolist(),
            }
            for c in clients
        ]
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for c in clients:
            for sample in c.images:
                for m in c.modalities:
                    f.write(np.ascontiguousarray(sample[m.label], dtype=np.float64).tobytes())
            for mask in c.masks:
                f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def load_dataset(path) -> list[ClientDataset]:
    import json

    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ConfigError(f"{path} is not a dataset dump")
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n))
        clients = []
        for entry in header["clients"]:
            mods = tuple(ModalityId(i, lbl) for i, lbl in entry["modalities"])
            h, w = entry["shape"]
            images, masks = [], []
            for _ in range(entry["n_samples"]):
                sample = {}
                for m in mods:
                    buf = f.read(h * w * 8)
                    sample[m.label] = np.frombuffer(buf, dtype=np.float64).reshape(h, w).copy()
                images.append(sample)
            for _ in range(entry["n_samples"]):
                buf = f.read(h * w)
                masks.append(np.frombuffer(buf, dtype=np.uint8).reshape(h, w).copy())
            clients.append(
                ClientDataset(
                    client_id=entry["client_id"],
                    modalities=mods,
                    images=images,
                    masks=masks,
                    train_idx=np.asarray(entry["train_idx"], dtype=np.int64),
                    test_idx=np.asarray(entry["test_idx"], dtype=np.int64),
                )
            )
    return clients
