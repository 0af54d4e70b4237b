import dataclasses

import numpy as np
import pytest

from mixfed.config import ExperimentConfig, MemoryConfig, mechanisms
from mixfed.data import DataConfig, SceneSpec
from mixfed.errors import BundleMismatch, ConfigError, EmptyFederation, EmptyGroup
from mixfed.federation import (
    ClientState,
    Experiment,
    aggregate,
    local_train,
    plan_aggregation,
    run_experiment,
)
from mixfed.nets import ArchConfig, ModalityId, ParamBundle, bundle_layout, init_params, make_modalities
from mixfed.tensor import Tensor

MODS = make_modalities()


def tiny_cfg(**kwargs):
    base = dict(
        seed=0,
        rounds=2,
        local_epochs=1,
        batch_size=4,
        channels=4,
        threads=1,
        memory=MemoryConfig(enabled=True, capacity=50, centers_per_epoch=2),
        data=DataConfig(
            scene=SceneSpec(height=16, width=16, core_radius=(2.0, 3.5), ring_thickness=(1.0, 2.0), noise_sigma=0.05),
            samples_per_client=6,
        ),
    )
    base.update(kwargs)
    return ExperimentConfig(**base)


def const_bundle(arch, value):
    return ParamBundle(
        arch, {k: Tensor(np.full(s, float(value)), requires_grad=True) for k, s in bundle_layout(arch)}
    )


def fake_client(cid, labels):
    mods = tuple(m for m in MODS if m.label in labels)

    class Stub:
        pass

    ds = Stub()
    return ClientState(cid, mods, ds)


class TestPlan:
    def test_groups_by_membership(self):
        clients = [
            fake_client(0, ["T1", "T2"]),
            fake_client(1, ["T1", "FLAIR"]),
            fake_client(2, ["T2", "T1c"]),
        ]
        plan = plan_aggregation(clients, MODS)
        assert plan.group("T1") == [0, 1]
        assert plan.group("T2") == [0, 2]
        assert plan.group("T1c") == [2]
        assert plan.group("FLAIR") == [1]
        assert plan.global_group == [0, 1, 2]

    def test_iid_everyone_everywhere(self):
        clients = [fake_client(i, ["T1", "T1c", "T2", "FLAIR"]) for i in range(3)]
        plan = plan_aggregation(clients, MODS)
        for m in MODS:
            assert plan.group(m.label) == [0, 1, 2]

    def test_unheld_modality_empty_group(self):
        clients = [fake_client(0, ["T1", "T2"]), fake_client(1, ["T1", "T2"])]
        plan = plan_aggregation(clients, MODS)
        assert plan.group("FLAIR") == []

    def test_empty_federation(self):
        with pytest.raises(EmptyFederation):
            plan_aggregation([], MODS)


class TestAggregate:
    def arch(self):
        return ArchConfig(MODS, channels=2)

    def test_weighted_mean(self):
        arch = self.arch()
        uploads = {0: (const_bundle(arch, 2.0), 1), 1: (const_bundle(arch, 6.0), 3)}
        out = aggregate(uploads, [0, 1])
        assert np.allclose(out.flat(), 5.0)

    def test_equal_weights_midpoint(self):
        arch = self.arch()
        uploads = {0: (const_bundle(arch, 1.0), 4), 1: (const_bundle(arch, 3.0), 4)}
        assert np.allclose(aggregate(uploads, [0, 1]).flat(), 2.0)

    def test_single_contributor_identity(self):
        arch = self.arch()
        b = init_params(arch, 3)
        out = aggregate({0: (b, 7)}, [0])
        assert np.array_equal(out.flat(), b.flat())

    def test_identical_uploads_symmetry(self):
        arch = self.arch()
        b = init_params(arch, 5)
        out = aggregate({0: (b.copy(), 4), 1: (b.copy(), 4)}, [0, 1])
        assert np.allclose(out.flat(), b.flat(), atol=1e-15)

    def test_empty_group(self):
        with pytest.raises(EmptyGroup):
            aggregate({}, [])

    def test_matches_independent_weighted_mean(self):
        # oracle: numpy average over stacked flat vectors
        arch = self.arch()
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(1, 6))
            bundles = [init_params(arch, int(rng.integers(0, 1000))) for _ in range(n)]
            weights = [int(rng.integers(1, 20)) for _ in range(n)]
            uploads = {i: (b, w) for i, (b, w) in enumerate(zip(bundles, weights))}
            out = aggregate(uploads, list(range(n)))
            oracle = np.average(np.stack([b.flat() for b in bundles]), axis=0, weights=weights)
            assert np.max(np.abs(out.flat() - oracle)) < 1e-12

    def test_manifest_mismatch(self):
        uploads = {
            0: (const_bundle(self.arch(), 1.0), 1),
            1: (const_bundle(ArchConfig(MODS, channels=3), 1.0), 1),
        }
        with pytest.raises(BundleMismatch):
            aggregate(uploads, [0, 1])


class TestLocalTrain:
    def test_zero_epochs_returns_broadcast(self):
        cfg = tiny_cfg(local_epochs=0)
        exp = Experiment(cfg)
        upload = local_train(
            exp.clients[0], exp.server_bundle, exp.bank.snapshot(), cfg, exp.mech, 1, exp.modalities
        )
        assert np.array_equal(upload.bundle.flat(), exp.server_bundle.flat())

    def test_fedavg_never_evaluates_decoupler_losses(self):
        cfg = tiny_cfg(algo="fedavg")
        exp = Experiment(cfg)
        upload = local_train(
            exp.clients[0], exp.server_bundle, exp.bank.snapshot(), cfg, exp.mech, 1, exp.modalities
        )
        assert upload.losses["loss_cls"] == 0.0
        assert upload.losses["loss_tri"] == 0.0
        assert upload.losses["loss_seg"] > 0.0

    def test_fedprox_trace_positive(self):
        cfg = tiny_cfg(algo="fedprox", local_epochs=2)
        exp = Experiment(cfg)
        upload = local_train(
            exp.clients[0], exp.server_bundle, exp.bank.snapshot(), cfg, exp.mech, 1, exp.modalities
        )
        assert upload.losses["loss_prox"] > 0.0

    def test_bitwise_reproducible(self):
        cfg = tiny_cfg()
        exp = Experiment(cfg)
        args = (exp.clients[1], exp.server_bundle, exp.bank.snapshot(), cfg, exp.mech, 1, exp.modalities)
        a = local_train(*args)
        b = local_train(*args)
        assert np.array_equal(a.bundle.flat(), b.bundle.flat())
        assert a.losses == b.losses
        for lbl in a.prototypes:
            assert len(a.prototypes[lbl]) == len(b.prototypes[lbl])
            for pa, pb in zip(a.prototypes[lbl], b.prototypes[lbl]):
                assert np.array_equal(pa, pb)


class TestRoundMechanics:
    def _uploads(self, exp, cfg):
        snapshot = exp.bank.snapshot()
        return {
            c.client_id: local_train(c, exp.server_bundle, snapshot, cfg, exp.mech, 1, exp.modalities)
            for c in exp.clients
        }

    def test_modality_isolation(self):
        # perturbing a non-member's tailored params must not move the group
        # aggregate by a single bit
        cfg = tiny_cfg()
        exp = Experiment(cfg)
        uploads = self._uploads(exp, cfg)
        non_member = next(
            cid for cid, u in uploads.items() if "T1" not in exp.clients[cid].labels()
        )
        exp2 = Experiment(cfg)
        before = {k: t.data.copy() for k, t in exp2.server_bundle.select("tailored.T1.")}
        exp2._aggregate_round(uploads)
        after_clean = {k: t.data.copy() for k, t in exp2.server_bundle.select("tailored.T1.")}

        for k, t in uploads[non_member].bundle.select("tailored.T1."):
            t.data += 1000.0
        exp3 = Experiment(cfg)
        exp3._aggregate_round(uploads)
        after_perturbed = {k: t.data.copy() for k, t in exp3.server_bundle.select("tailored.T1.")}
        for k in after_clean:
            assert np.array_equal(after_clean[k], after_perturbed[k])
            assert not np.array_equal(before[k], after_clean[k])

    def test_global_components_depend_on_every_client(self):
        cfg = tiny_cfg()
        exp = Experiment(cfg)
        uploads = self._uploads(exp, cfg)
        exp2 = Experiment(cfg)
        exp2._aggregate_round(uploads)
        clean = exp2.server_bundle["decoder.conv1.w"].data.copy()
        for cid in uploads:
            perturbed_uploads = self._uploads(Experiment(cfg), cfg)
            perturbed_uploads[cid].bundle["decoder.conv1.w"].data += 1.0
            exp3 = Experiment(cfg)
            exp3._aggregate_round(perturbed_uploads)
            assert not np.array_equal(clean, exp3.server_bundle["decoder.conv1.w"].data)

    def test_unheld_modality_stays_frozen(self):
        cfg = tiny_cfg()
        exp = Experiment(cfg)
        uploads = self._uploads(exp, cfg)
        exp.plan.groups["FLAIR"] = []  # simulate a modality nobody holds
        frozen = {k: t.data.copy() for k, t in exp.server_bundle.select("tailored.FLAIR.")}
        exp._aggregate_round(uploads)
        for k, t in exp.server_bundle.select("tailored.FLAIR."):
            assert np.array_equal(t.data, frozen[k])

    def test_bank_snapshot_identical_across_clients(self):
        cfg = tiny_cfg()
        exp = Experiment(cfg)
        exp.run_round()
        exp.run_round()  # round 2 sees a non-empty snapshot
        assert len(exp.bank) > 0


class TestExperiment:
    def test_zero_rounds_init_only(self):
        cfg = tiny_cfg(rounds=0)
        reports = run_experiment(cfg)
        assert len(reports) == 1
        assert reports[0].round_index == 0
        assert all(cm.losses == {} for cm in reports[0].clients)

    def test_repeat_runs_identical_files(self, tmp_path):
        cfg = tiny_cfg(rounds=2)
        run_experiment(cfg, out_dir=tmp_path / "a")
        run_experiment(cfg, out_dir=tmp_path / "b")
        for name in ("results.csv", "summary.json", "representations.csv", "banks.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_threads_do_not_change_results(self, tmp_path):
        run_experiment(tiny_cfg(rounds=2, threads=1), out_dir=tmp_path / "serial")
        run_experiment(tiny_cfg(rounds=2, threads=6), out_dir=tmp_path / "parallel")
        assert (tmp_path / "serial" / "results.csv").read_bytes() == (
            tmp_path / "parallel" / "results.csv"
        ).read_bytes()

    def test_mdm_and_fedavg_share_init_then_diverge(self, tmp_path):
        # identical seed -> identical initial parameters and data; training
        # under the two algorithms then produces different models
        mdm = Experiment(tiny_cfg(algo="mdm"))
        fed = Experiment(tiny_cfg(algo="fedavg"))
        assert np.array_equal(mdm.server_bundle.flat(), fed.server_bundle.flat())
        mdm.run_round()
        fed.run_round()
        assert not np.array_equal(mdm.server_bundle.flat(), fed.server_bundle.flat())

    def test_interleaved_experiments_do_not_interact(self):
        cfg_a = tiny_cfg(seed=1, rounds=2)
        cfg_b = tiny_cfg(seed=2, rounds=2)
        solo_a = Experiment(cfg_a)
        solo_a.initial_evaluation()
        solo_a.run_round()
        solo_a.run_round()

        inter_a, inter_b = Experiment(cfg_a), Experiment(cfg_b)
        inter_a.initial_evaluation()
        inter_b.initial_evaluation()
        inter_a.run_round()
        inter_b.run_round()
        inter_a.run_round()
        inter_b.run_round()
        assert np.array_equal(solo_a.server_bundle.flat(), inter_a.server_bundle.flat())
        assert [c.mdice for r in solo_a.reports for c in r.clients] == [
            c.mdice for r in inter_a.reports for c in r.clients
        ]

    def test_checkpoint_resume_identical_csv(self, tmp_path):
        cfg = tiny_cfg(rounds=3)
        run_experiment(cfg, out_dir=tmp_path / "full")

        # simulate an interrupt after round 2, then resume to the full budget
        exp = Experiment(cfg)
        exp.initial_evaluation()
        exp.run_round()
        exp.run_round()
        exp.save_checkpoint(tmp_path / "ck.bin")
        run_experiment(cfg, out_dir=tmp_path / "resumed", resume_from=tmp_path / "ck.bin")
        assert (tmp_path / "full" / "results.csv").read_bytes() == (
            tmp_path / "resumed" / "results.csv"
        ).read_bytes()

    def test_checkpoint_rejects_wrong_config(self, tmp_path):
        cfg = tiny_cfg(rounds=1)
        exp = Experiment(cfg)
        exp.initial_evaluation()
        exp.save_checkpoint(tmp_path / "ck.bin")
        other = tiny_cfg(rounds=1, seed=99)
        with pytest.raises(ConfigError):
            Experiment.resume(other, tmp_path / "ck.bin")
