"""Synchronous federated rounds over mix-modal clients.

One round: broadcast the server bundle -> every client trains locally for E
epochs (optionally on its own thread) -> barrier -> tailored encoders are
averaged within their modality groups and everything else globally -> the
prototype banks are refreshed FIFO from the uploads -> every client is
evaluated on its local test split.

Determinism: all RNG comes from derived streams, aggregation sums run in
fixed client-id order, and clients only ever see value copies or immutable
snapshots, so thread scheduling cannot change any result.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, Mechanisms, config_to_dict, mechanisms
from .data import ClientDataset, build_federation, one_hot_mask
from .errors import BundleMismatch, ConfigError, EmptyFederation, EmptyGroup
from .losses import (
    TripletBatch,
    dice_loss,
    fedprox_term,
    modality_ce,
    total_loss,
    triplet_entropy_loss,
)
from .memory import BankSnapshot, PrototypeBank, extract_prototypes, retrieve
from .metrics import (
    ClientRoundMetrics,
    DiceReport,
    mdice,
    dice_score,
    mean_pairwise_cosine_distance,
)
from .nets import (
    ArchConfig,
    ModalityId,
    ParamBundle,
    RepSet,
    classify_modality,
    compute_reps,
    decode,
    fuse_pair,
    init_params,
    make_modalities,
    mean_shared_map,
)
from .optim import make_optimizer
from .seeding import BATCH_STREAM, INIT_STREAM, PROTO_STREAM, derive_seed, generator
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

FOREGROUND = (1, 2)


@dataclass
class ClientState:
    """One client's identity and local data; parameters arrive by broadcast."""

    client_id: int
    modalities: tuple[ModalityId, ...]
    dataset: ClientDataset

    def labels(self):
        return [m.label for m in self.modalities]


@dataclass
class AggregationPlan:
    groups: dict  # modality label -> sorted client ids holding it
    global_group: list  # all client ids

    def group(self, label: str):
        return self.groups[label]


def plan_aggregation(clients: list[ClientState], modalities=None) -> AggregationPlan:
    """Modality groups by set membership; the global group is everyone."""
    if not clients:
        raise EmptyFederation("no clients to plan over")
    if modalities is None:
        seen = {}
        for c in clients:
            for m in c.modalities:
                seen[m.index] = m
        modalities = [seen[i] for i in sorted(seen)]
    groups = {
        m.label: sorted(c.client_id for c in clients if m.label in c.labels())
        for m in modalities
    }
    return AggregationPlan(groups=groups, global_group=sorted(c.client_id for c in clients))


@dataclass
class Upload:
    client_id: int
    bundle: ParamBundle
    n_samples: int
    prototypes: dict  # modality label -> list of (z, C) arrays, epoch order
    losses: dict  # mean loss components over the round's steps
    bank_hash: str


def aggregate(uploads, group) -> ParamBundle:
    """Sample-count-weighted mean of the uploaded bundles over ``group``,
    summed in client-id order."""
    group = sorted(group)
    if not group:
        raise EmptyGroup("aggregate over an empty group")
    bundles = []
    weights = []
    for cid in group:
        bundle, n = uploads[cid]
        bundles.append(bundle)
        weights.append(float(n))
    manifest = bundles[0].manifest()
    for b in bundles[1:]:
        if b.manifest() != manifest:
            raise BundleMismatch("uploads disagree on the bundle manifest")
    total = sum(weights)
    acc = np.zeros_like(bundles[0].flat())
    for b, w in zip(bundles, weights):
        acc += (w / total) * b.flat()
    return ParamBundle.from_flat(bundles[0].arch, acc)


# ---------------------------------------------------------------------------
# local training


def _batch_tensors(dataset: ClientDataset, idx, labels):
    images = {
        lbl: Tensor(np.stack([dataset.images[i][lbl] for i in idx])[:, None, :, :])
        for lbl in labels
    }
    target = Tensor(np.stack([one_hot_mask(dataset.masks[i]) for i in idx]))
    return images, target


def _forward_inputs(client: ClientState, idx, mech: Mechanisms, modalities):
    """Batch images plus the modality list the forward pass runs over.

    The proposed method encodes only the client's own modalities; the
    vanilla baselines run every encoder, zero-filling absent channels."""
    images, target = _batch_tensors(client.dataset, idx, client.labels())
    held = list(client.modalities)
    if mech.vanilla_inputs:
        h, w = client.dataset.masks[0].shape
        for m in modalities:
            if m.label not in images:
                images[m.label] = Tensor(np.zeros((len(idx), 1, h, w)))
        held = list(modalities)
    return images, target, held


def _full_map_list(reps: RepSet, bank: BankSnapshot, modalities, use_memory: bool):
    """Per-sample compensation over a batched RepSet: missing modalities get a
    retrieved prototype (or a zero map) broadcast over batch and space."""
    held = set(reps.tailored_maps.keys())
    some = next(iter(reps.tailored_maps.values()))
    b, c, h, w = some.shape
    queries = np.stack([reps.tailored_pooled[lbl].data for lbl in reps.tailored_pooled], axis=1)
    out = []
    for m in modalities:
        if m.label in held:
            out.append((m, reps.tailored_maps[m.label]))
            continue
        protos = np.zeros((b, c))
        if use_memory and len(bank.entries(m.label)) > 0:
            for i in range(b):
                protos[i] = retrieve(queries[i], bank, m)
        elif use_memory:
            log.debug("compensation miss for %s (empty bank)", m.label)
        out.append((m, Tensor(np.broadcast_to(protos[:, :, None, None], (b, c, h, w)).copy())))
    return out


def _decoupler_losses(reps: RepSet, held, bundle, cfg, mech: Mechanisms):
    """Modality classification CE over both encoder paths and the
    entropy-triplet loss over fused representation pairs."""
    l_cls = Tensor(0.0)
    l_tri = Tensor(0.0)
    bsz = next(iter(reps.tailored_pooled.values())).shape[0]
    if mech.use_cls:
        rows, labels = [], []
        for m in held:
            rows.append(classify_modality(reps.tailored_pooled[m.label], "tailored", bundle))
            labels.extend([m.index] * bsz)
            rows.append(classify_modality(reps.shared_pooled[m.label], "shared", bundle, cfg.grl_lambda))
            labels.extend([m.index] * bsz)
        l_cls = modality_ce(T.concat(rows, axis=0), labels)
    if mech.use_tri and len(held) >= 2:
        shared = [reps.shared_pooled[m.label] for m in held]
        tailored = [reps.tailored_pooled[m.label] for m in held]
        anchors = T.stack(shared, axis=1)  # B x k x C
        positives = T.stack(
            [fuse_pair(shared[i], shared[j], bundle)
             for i in range(len(held)) for j in range(len(held)) if i != j],
            axis=1,
        )
        negatives = T.stack(
            [fuse_pair(shared[i], tailored[j], bundle)
             for i in range(len(held)) for j in range(len(held))],
            axis=1,
        )
        l_tri = triplet_entropy_loss(
            TripletBatch(anchors, positives, negatives), cfg.loss.alpha, cfg.loss.entropy_epsilon
        )
    return l_cls, l_tri


def local_train(client: ClientState, server_bundle: ParamBundle, bank: BankSnapshot,
                cfg: ExperimentConfig, mech: Mechanisms, round_index: int,
                modalities) -> Upload:
    """E local epochs of minibatch training from the broadcast parameters.

    Returns the trained bundle, the client's sample count, the prototypes
    clustered from each epoch's pooled tailored representations, and the
    mean loss trace.
    """
    params = server_bundle.copy(requires_grad=True)
    # only parameters that actually receive gradients under the active
    # mechanisms belong to the optimizer (the classifier trains through the
    # classification loss only, the fusion layer through the triplet loss;
    # vanilla baselines push zero images through every tailored encoder)
    trained = []
    for key, t in params.named():
        if key.startswith("tailored."):
            if mech.vanilla_inputs or key.split(".")[1] in client.labels():
                trained.append(t)
        elif key.startswith("classifier."):
            if mech.use_cls:
                trained.append(t)
        elif key.startswith("fusion."):
            if mech.use_tri and len(client.modalities) >= 2:
                trained.append(t)
        else:
            trained.append(t)
    opt = make_optimizer(cfg.optimizer, trained, cfg.learning_rate)
    train_idx = client.dataset.train_idx
    own = list(client.modalities)
    sums = {k: 0.0 for k in ("loss_seg", "loss_cls", "loss_tri", "loss_prox", "loss_total")}
    steps = 0
    prototypes = {m.label: [] for m in own}

    for epoch in range(cfg.local_epochs):
        rng = generator(cfg.seed, BATCH_STREAM, client.client_id, round_index, epoch)
        order = train_idx[rng.permutation(train_idx.size)]
        epoch_reps = {m.label: [] for m in own}
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            images, target, held = _forward_inputs(client, idx, mech, modalities)
            reps = compute_reps(images, held, params)
            for m in own:
                epoch_reps[m.label].append(reps.tailored_pooled[m.label].data.copy())

            full_maps = _full_map_list(reps, bank, modalities, mech.memory)
            logits = decode(full_maps, mean_shared_map(reps), params)
            l_seg = dice_loss(T.softmax(logits, axis=1), target)
            l_cls, l_tri = _decoupler_losses(reps, held, params, cfg, mech)
            loss = total_loss(l_seg, l_cls, l_tri, cfg.loss)
            l_prox = Tensor(0.0)
            if mech.use_prox:
                l_prox = fedprox_term(params, server_bundle, cfg.loss.fedprox_mu)
                loss = T.add(loss, l_prox)
            backward(loss)
            opt.step()
            for _, t in params.named():  # drop stray grads (e.g. prox term)
                t.grad = None

            sums["loss_seg"] += l_seg.item()
            sums["loss_cls"] += l_cls.item()
            sums["loss_tri"] += l_tri.item()
            sums["loss_prox"] += l_prox.item()
            sums["loss_total"] += loss.item()
            steps += 1

        if mech.memory:
            z = cfg.memory.centers_per_epoch
            for m in own:
                reps_arr = np.concatenate(epoch_reps[m.label], axis=0) if epoch_reps[m.label] else np.zeros((0, 1))
                if reps_arr.shape[0] < z:
                    log.debug(
                        "client %d epoch %d: %d reps < z=%d for %s, skipping prototype push",
                        client.client_id, epoch, reps_arr.shape[0], z, m.label,
                    )
                    continue
                seed = derive_seed(cfg.seed, PROTO_STREAM, client.client_id, round_index, epoch, m.index)
                prototypes[m.label].append(extract_prototypes(reps_arr, z, seed))

    losses = {k: (v / steps if steps else 0.0) for k, v in sums.items()}
    return Upload(
        client_id=client.client_id,
        bundle=params,
        n_samples=int(train_idx.size),
        prototypes=prototypes,
        losses=losses,
        bank_hash=bank.content_hash(),
    )


# ---------------------------------------------------------------------------
# evaluation


def predict_mask(client: ClientState, bundle: ParamBundle, bank: BankSnapshot,
                 cfg: ExperimentConfig, mech: Mechanisms, modalities, sample_idx) -> np.ndarray:
    """Argmax segmentation for one test sample index."""
    with no_grad():
        images, _, held = _forward_inputs(client, [sample_idx], mech, modalities)
        reps = compute_reps(images, held, bundle)
        full_maps = _full_map_list(reps, bank, modalities, mech.memory)
        logits = decode(full_maps, mean_shared_map(reps), bundle)
    return logits.data[0].argmax(axis=0)


def evaluate_client(client: ClientState, bundle: ParamBundle, bank: BankSnapshot,
                    cfg: ExperimentConfig, mech: Mechanisms, modalities,
                    losses: dict | None = None) -> ClientRoundMetrics:
    """Dice over the client's test split plus the shared-representation
    alignment diagnostic (mean pairwise cosine distance across modalities)."""
    own = list(client.modalities)
    per_class = {c: [] for c in FOREGROUND}
    sample_mdice = []
    alignments = []
    with no_grad():
        idx = client.dataset.test_idx
        images, _, held = _forward_inputs(client, idx, mech, modalities)
        reps = compute_reps(images, held, bundle)
        full_maps = _full_map_list(reps, bank, modalities, mech.memory)
        logits = decode(full_maps, mean_shared_map(reps), bundle)
        preds = logits.data.argmax(axis=1)
        for row, i in enumerate(idx):
            true = client.dataset.masks[i]
            for c in FOREGROUND:
                per_class[c].append(dice_score(preds[row], true, c))
            sample_mdice.append(mdice(preds[row], true))
        # alignment diagnostic always reads the client's real modalities
        if len(own) >= 2:
            pooled = {m.label: reps.shared_pooled[m.label].data for m in own}
            for row in range(idx.size):
                alignments.append(
                    mean_pairwise_cosine_distance([pooled[m.label][row] for m in own])
                )
    return ClientRoundMetrics(
        client_id=client.client_id,
        per_class={c: float(np.mean(per_class[c])) for c in FOREGROUND},
        mdice=float(np.mean(sample_mdice)),
        losses=dict(losses or {}),
        shared_alignment=float(np.mean(alignments)) if alignments else None,
    )


def representation_rows(client: ClientState, bundle: ParamBundle):
    """(client, sample, modality, origin, vector) rows over the test split."""
    held = list(client.modalities)
    rows = []
    with no_grad():
        idx = client.dataset.test_idx
        images, _ = _batch_tensors(client.dataset, idx, [m.label for m in held])
        reps = compute_reps(images, held, bundle)
        for row, i in enumerate(idx):
            for m in held:
                rows.append((client.client_id, int(i), m.label, "tailored",
                             reps.tailored_pooled[m.label].data[row]))
                rows.append((client.client_id, int(i), m.label, "shared",
                             reps.shared_pooled[m.label].data[row]))
    return rows


# ---------------------------------------------------------------------------
# the experiment loop


class Experiment:
    """Holds full federation state; one call to run_round() per round."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.mech = mechanisms(cfg)
        self.modalities = make_modalities(tuple(cfg.data.profiles.keys()))
        datasets = build_federation(cfg.data, cfg.seed)
        self.clients = [
            ClientState(ds.client_id, ds.modalities, ds) for ds in datasets
        ]
        self.arch = ArchConfig(self.modalities, channels=cfg.channels, n_classes=3)
        self.server_bundle = init_params(self.arch, derive_seed(cfg.seed, INIT_STREAM))
        self.bank = PrototypeBank(self.modalities, dim=cfg.channels, capacity=cfg.memory.capacity)
        self.plan = plan_aggregation(self.clients, self.modalities)
        self.reports: list[DiceReport] = []
        self.round_index = 0

    # -- rounds ------------------------------------------------------------

    def initial_evaluation(self) -> DiceReport:
        report = self._evaluate({}, round_index=0)
        self.reports.append(report)
        return report

    def run_round(self) -> DiceReport:
        """broadcast -> parallel local training -> barrier -> aggregate ->
        bank refresh -> evaluation."""
        self.round_index += 1
        snapshot = self.bank.snapshot()
        workers = self.cfg.threads or len(self.clients)

        def train(client):
            return local_train(
                client, self.server_bundle, snapshot, self.cfg, self.mech,
                self.round_index, self.modalities,
            )

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                uploads_list = list(pool.map(train, self.clients))
        else:
            uploads_list = [train(c) for c in self.clients]
        uploads = {u.client_id: u for u in uploads_list}

        hashes = {u.bank_hash for u in uploads_list}
        if len(hashes) != 1:
            raise BundleMismatch("bank snapshot differed between clients within a round")

        self._aggregate_round(uploads)
        self._refresh_bank(uploads)
        report = self._evaluate({cid: u.losses for cid, u in uploads.items()}, self.round_index)
        self.reports.append(report)
        return report

    def _aggregate_round(self, uploads: dict) -> None:
        pairs = {cid: (u.bundle, u.n_samples) for cid, u in uploads.items()}
        global_agg = aggregate(pairs, self.plan.global_group)
        per_modality = {}
        if self.mech.group_tailored:
            for label, group in self.plan.groups.items():
                if group:
                    per_modality[label] = aggregate(pairs, group)
        for key, t in self.server_bundle.named():
            if key.startswith("tailored.") and self.mech.group_tailored:
                label = key.split(".")[1]
                if label in per_modality:
                    t.data[...] = per_modality[label][key].data
                # empty group: tailored params stay frozen at the server value
            else:
                t.data[...] = global_agg[key].data

    def _refresh_bank(self, uploads: dict) -> None:
        if not self.mech.memory:
            return
        for cid in sorted(uploads):
            u = uploads[cid]
            for m in self.modalities:
                for batch in u.prototypes.get(m.label, []):
                    self.bank.push(m, batch)

    def _evaluate(self, losses_by_client: dict, round_index: int) -> DiceReport:
        snapshot = self.bank.snapshot()
        report = DiceReport(round_index=round_index)
        for client in self.clients:
            report.clients.append(
                evaluate_client(
                    client, self.server_bundle, snapshot, self.cfg, self.mech,
                    self.modalities, losses_by_client.get(client.client_id),
                )
            )
        return report

    def run(self) -> list[DiceReport]:
        if not self.reports:
            self.initial_evaluation()
        while self.round_index < self.cfg.rounds:
            self.run_round()
        return self.reports

    # -- checkpointing -------------------------------------------------------

    _CKPT_MAGIC = b"MIXFEDC1"

    def save_checkpoint(self, path) -> None:
        """Round index + server bundle + banks + accumulated reports, in the
        canonical flat serialization."""
        header = {
            "round": self.round_index,
            "config": config_to_dict(self.cfg),
            "bundle_size": int(self.server_bundle.flat().size),
            "bank": {lbl: len(self.bank.entries(lbl)) for lbl in self.bank.labels()},
            "reports": [_report_to_dict(r) for r in self.reports],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(self._CKPT_MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            f.write(self.server_bundle.flat().tobytes())
            # body order must match the restore loop: sorted labels
            for lbl in sorted(self.bank.labels()):
                for p in self.bank.entries(lbl):
                    f.write(p.tobytes())

    @classmethod
    def resume(cls, cfg: ExperimentConfig, path) -> "Experiment":
        with open(path, "rb") as f:
            if f.read(8) != cls._CKPT_MAGIC:
                raise ConfigError(f"{path} is not a checkpoint")
            n = int.from_bytes(f.read(8), "little")
            header = json.loads(f.read(n))
            if header["config"] != config_to_dict(cfg):
                raise ConfigError("checkpoint was produced by a different config")
            exp = cls(cfg)
            flat = np.frombuffer(f.read(header["bundle_size"] * 8), dtype=np.float64)
            restored = ParamBundle.from_flat(exp.arch, flat)
            for key, t in exp.server_bundle.named():
                t.data[...] = restored[key].data
            dim = cfg.channels
            for lbl in sorted(header["bank"]):
                count = header["bank"][lbl]
                m = next(m for m in exp.modalities if m.label == lbl)
                protos = [
                    np.frombuffer(f.read(dim * 8), dtype=np.float64).copy()
                    for _ in range(count)
                ]
                if protos:
                    exp.bank.push(m, protos)
            exp.round_index = header["round"]
            exp.reports = [_report_from_dict(d) for d in header["reports"]]
        return exp


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume_from=None) -> list[DiceReport]:
    """Run R rounds (after an initial round-0 evaluation) and, when an output
    directory is given, write results.csv, summary.json, representations.csv,
    banks.csv, and a per-round checkpoint.bin."""
    from pathlib import Path

    from .metrics import export_representations, summary_dict, write_results_csv, write_summary_json

    exp = Experiment.resume(cfg, resume_from) if resume_from else Experiment(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if not exp.reports:
        exp.initial_evaluation()
        if out is not None:
            exp.save_checkpoint(out / "checkpoint.bin")
    while exp.round_index < cfg.rounds:
        exp.run_round()
        if out is not None:
            exp.save_checkpoint(out / "checkpoint.bin")
    if out is not None:
        write_results_csv(exp.reports, out / "results.csv")
        write_summary_json(summary_dict(exp.reports, config_to_dict(cfg), cfg.seed), out / "summary.json")
        rows = []
        for client in exp.clients:
            rows.extend(representation_rows(client, exp.server_bundle))
        export_representations(rows, out / "representations.csv")
        exp.bank.dump_csv(out / "banks.csv")
    return exp.reports


def _report_to_dict(r: DiceReport) -> dict:
    return {
        "round_index": r.round_index,
        "clients": [
            {
                "client_id": c.client_id,
                "per_class": {str(k): v for k, v in c.per_class.items()},
                "mdice": c.mdice,
                "losses": c.losses,
                "shared_alignment": c.shared_alignment,
            }
            for c in r.clients
        ],
    }


def _report_from_dict(d: dict) -> DiceReport:
    return DiceReport(
        round_index=d["round_index"],
        clients=[
            ClientRoundMetrics(
                client_id=c["client_id"],
                per_class={int(k): v for k, v in c["per_class"].items()},
                mdice=c["mdice"],
                losses=c["losses"],
                shared_alignment=c["shared_alignment"],
            )
            for c in d["clients"]
        ],
    )
