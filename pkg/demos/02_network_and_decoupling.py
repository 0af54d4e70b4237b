"""The client network and the adversarial modality decoupler.

Each client runs one tailored encoder per held modality plus a single shared
encoder. A linear head classifies which modality a pooled representation came
from; the shared path reaches that head through a gradient reversal layer, so
the shared encoder is pushed to be modality-invariant while the tailored
encoders are pushed apart.

Run with:  python demos/02_network_and_decoupling.py
"""

import numpy as np

import mixfed.tensor as T
from mixfed.losses import LossConfig, TripletBatch, modality_ce, triplet_entropy_loss
from mixfed.nets import (
    ArchConfig,
    classify_modality,
    compute_reps,
    decode,
    encode_shared,
    fuse_pair,
    init_params,
    make_modalities,
    mean_shared_map,
)
from mixfed.tensor import Tensor, backward

rng = np.random.default_rng(0)
mods = make_modalities()
arch = ArchConfig(mods, channels=8, n_classes=3)
bundle = init_params(arch, seed=1)

# a client holding T1 and T2, one image per held modality
held = [mods[0], mods[2]]
images = {m.label: Tensor(rng.standard_normal((2, 1, 16, 16))) for m in held}
reps = compute_reps(images, held, bundle)
print("tailored map:", reps.tailored_maps["T1"].shape, " pooled:", reps.tailored_pooled["T1"].shape)

# the classifier's forward is identical for both origins; only the backward
# direction differs (reversed on the shared path)
pooled = reps.shared_pooled["T1"]
lt = classify_modality(pooled, "tailored", bundle)
ls = classify_modality(pooled, "shared", bundle)
print("forward logits equal for both origins:", bool(np.array_equal(lt.data, ls.data)))


def shared_encoder_grads(origin):
    for _, t in bundle.named():
        t.grad = None
    r = compute_reps(images, held, bundle)
    logits = classify_modality(r.shared_pooled["T1"], origin, bundle)
    backward(modality_ce(logits, [0, 0]))
    return bundle["shared.conv1.w"].grad.copy()


g_rev = shared_encoder_grads("shared")
g_fwd = shared_encoder_grads("tailored")
print("shared-path encoder grads are the exact negation:",
      float(np.max(np.abs(g_rev + g_fwd))), "(max |sum|)")

# the triplet branch compares Gaussian-entropy distances between the shared
# anchors and shared/shared vs shared/tailored fusions
sh = [reps.shared_pooled[m.label] for m in held]
tl = [reps.tailored_pooled[m.label] for m in held]
batch = TripletBatch(
    anchors=T.stack(sh, axis=1),
    positives=T.stack([fuse_pair(sh[0], sh[1], bundle), fuse_pair(sh[1], sh[0], bundle)], axis=1),
    negatives=T.stack([fuse_pair(a, b, bundle) for a in sh for b in tl], axis=1),
)
print("triplet loss:", triplet_entropy_loss(batch, LossConfig().alpha).item())

# the decoder always consumes every modality (in global order) plus one
# shared block; here the missing ones are zero maps for illustration
full = []
for m in mods:
    if m.label in reps.tailored_maps:
        full.append((m, reps.tailored_maps[m.label]))
    else:
        full.append((m, Tensor(np.zeros((2, 8, 16, 16)))))
logits = decode(full, mean_shared_map(reps), bundle)
print("decoder output:", logits.shape, "(batch, classes, H, W)")
