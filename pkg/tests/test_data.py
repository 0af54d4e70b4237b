import numpy as np
import pytest

from mixfed.data import (
    CLASS_CORE,
    CLASS_EDEMA,
    DEFAULT_PROFILES,
    DataConfig,
    SceneSpec,
    build_federation,
    dump_dataset,
    generate_sample,
    load_dataset,
    one_hot_mask,
)
from mixfed.errors import ConfigError
from mixfed.nets import make_modalities

MODS = make_modalities()


def small_cfg(**kwargs):
    base = dict(
        scene=SceneSpec(height=16, width=16, core_radius=(2.0, 3.5), ring_thickness=(1.0, 2.0), noise_sigma=0.05),
        samples_per_client=6,
    )
    base.update(kwargs)
    return DataConfig(**base)


class TestGenerateSample:
    def test_noiseless_t1_equals_core_indicator(self):
        spec = SceneSpec(height=16, width=16, core_radius=(2.0, 3.0), ring_thickness=(1.0, 1.5), noise_sigma=0.0)
        images, mask = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=3, shift=0.1)
        core = (mask == CLASS_CORE).astype(float)
        assert np.array_equal(images["T1"], core + 0.1)

    def test_same_seed_bitwise_identical(self):
        spec = SceneSpec(height=16, width=16, core_radius=(2.0, 3.0), ring_thickness=(1.0, 1.5))
        a, mask_a = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=7)
        b, mask_b = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=7)
        assert np.array_equal(mask_a, mask_b)
        for lbl in a:
            assert np.array_equal(a[lbl], b[lbl])

    def test_both_foreground_classes_present(self):
        spec = SceneSpec()
        for seed in range(10):
            _, mask = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=seed)
            assert (mask == CLASS_CORE).sum() > 0
            assert (mask == CLASS_EDEMA).sum() > 0

    def test_ring_surrounds_core(self):
        spec = SceneSpec(height=32, width=32)
        _, mask = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=1)
        ys, xs = np.where(mask == CLASS_CORE)
        cy, cx = ys.mean(), xs.mean()
        ey, ex = np.where(mask == CLASS_EDEMA)
        core_r = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2).max()
        edema_r = np.sqrt((ey - cy) ** 2 + (ex - cx) ** 2)
        assert edema_r.min() >= core_r - 1.0  # ring sits outside the blob

    def test_edema_invisible_in_t1_like(self):
        # with zero noise, edema pixels match the background level exactly in
        # T1-like modalities: no pixel evidence for the ring
        spec = SceneSpec(height=16, width=16, core_radius=(2.0, 3.0), ring_thickness=(1.0, 1.5), noise_sigma=0.0)
        images, mask = generate_sample(spec, DEFAULT_PROFILES, MODS, seed=5, shift=0.2)
        for lbl in ("T1", "T1c"):
            edema_vals = images[lbl][mask == CLASS_EDEMA]
            bg_vals = images[lbl][mask == 0]
            assert np.all(edema_vals == bg_vals[0])
            assert np.all(bg_vals == bg_vals[0])

    def test_scene_too_small_rejected(self):
        spec = SceneSpec(height=8, width=8, core_radius=(3.0, 4.0), ring_thickness=(2.0, 3.0))
        with pytest.raises(ConfigError):
            generate_sample(spec, DEFAULT_PROFILES, MODS, seed=0)


class TestBuildFederation:
    def test_six_distinct_pairs(self):
        clients = build_federation(small_cfg(), seed=0)
        assert len(clients) == 6
        pairs = [tuple(c.labels()) for c in clients]
        assert len(set(pairs)) == 6
        for pair in pairs:
            assert len(pair) == 2

    def test_iid_mode_full_sets(self):
        clients = build_federation(small_cfg(iid=True), seed=0)
        assert len(clients) == 6
        for c in clients:
            assert c.labels() == ["T1", "T1c", "T2", "FLAIR"]

    def test_split_seven_three(self):
        clients = build_federation(small_cfg(samples_per_client=10), seed=1)
        for c in clients:
            assert c.n_train == 7
            assert c.n_test == 3
            assert set(c.train_idx) & set(c.test_idx) == set()

    def test_deterministic(self):
        a = build_federation(small_cfg(), seed=5)
        b = build_federation(small_cfg(), seed=5)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.masks[0], cb.masks[0])
            for lbl in ca.images[0]:
                assert np.array_equal(ca.images[0][lbl], cb.images[0][lbl])

    def test_clients_differ_in_intensity(self):
        clients = build_federation(small_cfg(), seed=2)
        # heterogeneity knob: different clients see shifted intensities
        means = [np.mean([img[c.labels()[0]] for img in c.images]) for c in clients]
        assert max(means) - min(means) > 0.1


class TestDumpLoad:
    def test_round_trip(self, tmp_path):
        clients = build_federation(small_cfg(), seed=3)
        path = tmp_path / "data.bin"
        dump_dataset(clients, path)
        loaded = load_dataset(path)
        assert len(loaded) == len(clients)
        for a, b in zip(clients, loaded):
            assert a.client_id == b.client_id
            assert a.labels() == b.labels()
            assert np.array_equal(a.train_idx, b.train_idx)
            assert np.array_equal(a.test_idx, b.test_idx)
            for sa, sb in zip(a.images, b.images):
                for lbl in sa:
                    assert np.array_equal(sa[lbl], sb[lbl])
            for ma, mb in zip(a.masks, b.masks):
                assert np.array_equal(ma, mb)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTADUMP" + b"\x00" * 16)
        with pytest.raises(ConfigError):
            load_dataset(path)


def test_one_hot_round_trip():
    mask = np.random.default_rng(0).integers(0, 3, size=(8, 8)).astype(np.uint8)
    oh = one_hot_mask(mask)
    assert oh.shape == (3, 8, 8)
    assert np.array_equal(oh.argmax(axis=0), mask)
    assert np.array_equal(oh.sum(axis=0), np.ones((8, 8)))
