import numpy as np
import pytest

import mixfed.tensor as T
from mixfed.errors import BadDims, IncompleteRepList, UnknownModality
from mixfed.gradcheck import max_relative_error
from mixfed.losses import modality_ce
from mixfed.nets import (
    ArchConfig,
    ParamBundle,
    bundle_layout,
    classify_modality,
    compute_reps,
    decode,
    encode_shared,
    encode_tailored,
    fuse_pair,
    init_params,
    make_modalities,
    mean_shared_map,
)
from mixfed.tensor import Tensor, backward


def small_arch(channels=4, n_classes=3):
    return ArchConfig(make_modalities(), channels=channels, n_classes=n_classes)


def zero_bundle(arch):
    return ParamBundle(arch, {k: Tensor(np.zeros(s), requires_grad=True) for k, s in bundle_layout(arch)})


class TestInit:
    def test_same_seed_bitwise_equal(self):
        arch = small_arch()
        a = init_params(arch, 11)
        b = init_params(arch, 11)
        assert np.array_equal(a.flat(), b.flat())

    def test_different_seeds_differ(self):
        arch = small_arch()
        assert not np.array_equal(init_params(arch, 1).flat(), init_params(arch, 2).flat())

    def test_fan_in_bound(self):
        # channels=2 puts the fusion layer at fan_in 4, so a = 0.5
        arch = ArchConfig(make_modalities(), channels=2)
        bundle = init_params(arch, 3)
        w = bundle["fusion.w"].data
        assert w.shape == (4, 2)
        assert np.abs(w).max() <= 0.5

    def test_bad_dims(self):
        with pytest.raises(BadDims):
            ArchConfig(make_modalities(), channels=0)
        with pytest.raises(BadDims):
            ArchConfig(make_modalities(), kernel=2)


class TestEncoders:
    def test_zero_image_zero_params_gives_zero_map(self):
        arch = small_arch()
        bundle = zero_bundle(arch)
        img = Tensor(np.zeros((1, 8, 8)))
        out = encode_tailored(img, arch.modalities[0], bundle)
        assert np.array_equal(out.data, np.zeros((4, 8, 8)))

    def test_deterministic(self):
        arch = small_arch()
        bundle = init_params(arch, 5)
        img = Tensor(np.random.default_rng(0).standard_normal((1, 8, 8)))
        a = encode_shared(img, bundle)
        b = encode_shared(img, bundle)
        assert np.array_equal(a.data, b.data)

    def test_output_shape_32(self):
        arch = ArchConfig(make_modalities(), channels=16)
        bundle = init_params(arch, 1)
        out = encode_tailored(Tensor(np.zeros((1, 32, 32))), arch.modalities[2], bundle)
        assert out.shape == (16, 32, 32)

    def test_unknown_modality(self):
        arch = small_arch()
        bundle = init_params(arch, 1)
        from mixfed.nets import ModalityId

        with pytest.raises(UnknownModality):
            encode_tailored(Tensor(np.zeros((1, 8, 8))), ModalityId(9, "PET"), bundle)


class TestFusion:
    def test_zero_inputs_zero_bias(self):
        arch = small_arch()
        bundle = zero_bundle(arch)
        out = fuse_pair(Tensor(np.zeros(4)), Tensor(np.zeros(4)), bundle)
        assert np.array_equal(out.data, np.zeros(4))

    def test_identity_block_passes_a_through(self):
        arch = small_arch()
        bundle = zero_bundle(arch)
        # weights [I; 0] route the first input straight to the output
        bundle["fusion.w"].data[:4, :] = np.eye(4)
        a = Tensor([1.0, -2.0, 3.0, -4.0])
        out = fuse_pair(a, Tensor(np.zeros(4)), bundle)
        assert np.array_equal(out.data, np.maximum(a.data, 0.0))

    def test_gradient_reaches_both_inputs(self):
        arch = small_arch()
        bundle = init_params(arch, 9)
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal(4), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)

        def loss_fn():
            return T.tsum(T.mul(fuse_pair(a, b, bundle), fuse_pair(a, b, bundle)))

        assert max_relative_error(loss_fn, [a, b]) < 1e-4
        backward(loss_fn())
        assert np.any(a.grad != 0.0) and np.any(b.grad != 0.0)


class TestClassifier:
    def test_zero_input_uniform_softmax(self):
        arch = small_arch()
        bundle = zero_bundle(arch)
        logits = classify_modality(Tensor(np.zeros(4)), "tailored", bundle)
        assert np.array_equal(logits.data, np.zeros(4))
        assert np.allclose(T.softmax(logits).data, 0.25)

    def test_forward_origin_independent(self):
        arch = small_arch()
        bundle = init_params(arch, 4)
        x = Tensor(np.random.default_rng(1).standard_normal(4))
        lt = classify_modality(x, "tailored", bundle)
        ls = classify_modality(x, "shared", bundle)
        assert np.array_equal(lt.data, ls.data)

    def test_shared_path_gradient_is_negated(self):
        # same input and params: encoder grads through the shared path equal
        # the exact negation of the tailored-path grads at lambda=1
        arch = small_arch()
        bundle = init_params(arch, 8)
        img = Tensor(np.random.default_rng(3).standard_normal((1, 6, 6)))

        def encoder_grads(origin):
            for _, t in bundle.named():
                t.grad = None
            pooled = T.global_average_pool(encode_shared(img, bundle))
            logits = classify_modality(pooled, origin, bundle, lam=1.0)
            backward(modality_ce(T.reshape(logits, (1, 4)), [2]))
            return {k: t.grad.copy() for k, t in bundle.select("shared.")}

        g_shared = encoder_grads("shared")
        g_tailored = encoder_grads("tailored")
        for k in g_shared:
            assert np.max(np.abs(g_shared[k] + g_tailored[k])) < 1e-12


class TestDecoder:
    def test_output_shape(self):
        arch = ArchConfig(make_modalities(), channels=16, n_classes=3)
        bundle = init_params(arch, 2)
        maps = [(m, Tensor(np.zeros((16, 32, 32)))) for m in arch.modalities]
        out = decode(maps, Tensor(np.zeros((16, 32, 32))), bundle)
        assert out.shape == (3, 32, 32)

    def test_order_violation_rejected(self):
        arch = small_arch()
        bundle = init_params(arch, 2)
        maps = [(m, Tensor(np.zeros((4, 8, 8)))) for m in arch.modalities]
        shared = Tensor(np.zeros((4, 8, 8)))
        swapped = [maps[1], maps[0]] + maps[2:]
        with pytest.raises(IncompleteRepList):
            decode(swapped, shared, bundle)
        with pytest.raises(IncompleteRepList):
            decode(maps[:3], shared, bundle)

    def test_deterministic(self):
        arch = small_arch()
        bundle = init_params(arch, 2)
        rng = np.random.default_rng(0)
        maps = [(m, Tensor(rng.standard_normal((4, 8, 8)))) for m in arch.modalities]
        shared = Tensor(rng.standard_normal((4, 8, 8)))
        assert np.array_equal(decode(maps, shared, bundle).data, decode(maps, shared, bundle).data)


class TestBundle:
    def test_flat_round_trip(self):
        arch = small_arch()
        bundle = init_params(arch, 6)
        again = ParamBundle.from_flat(arch, bundle.flat())
        assert np.array_equal(bundle.flat(), again.flat())
        assert bundle.manifest() == again.manifest()

    def test_trainable_for_excludes_unheld_tailored(self):
        arch = small_arch()
        bundle = init_params(arch, 6)
        held = ["T1", "T2"]
        tensors = bundle.trainable_for(held)
        all_tensors = [t for _, t in bundle.named()]
        unheld = [t for k, t in bundle.named() if k.startswith(("tailored.T1c", "tailored.FLAIR"))]
        assert len(tensors) == len(all_tensors) - len(unheld)
        for t in unheld:
            assert all(t is not u for u in tensors)

    def test_pooled_matches_gap_of_maps(self):
        arch = small_arch()
        bundle = init_params(arch, 3)
        rng = np.random.default_rng(4)
        held = list(arch.modalities[:2])
        images = {m.label: Tensor(rng.standard_normal((2, 1, 8, 8))) for m in held}
        reps = compute_reps(images, held, bundle)
        for lbl in reps.tailored_maps:
            assert np.allclose(reps.tailored_pooled[lbl].data, reps.tailored_maps[lbl].data.mean(axis=(-1, -2)))
        avg = mean_shared_map(reps)
        stackd = np.stack([reps.shared_maps[m.label].data for m in held])
        assert np.allclose(avg.data, stackd.mean(axis=0))
