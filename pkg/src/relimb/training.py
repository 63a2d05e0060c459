"""Training loop with per-batch minority synthesis, and evaluation.

Each batch: sample a neighborhood, encode, run the gated layers, push the
batch's real minorities into the FIFO bank, synthesize until the batch
minority count matches the majority count (capped), compute the combined
loss over real plus synthetic entities, backprop, step. Training samples
neighborhoods at the configured fanouts; evaluation always uses full
neighborhoods.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Rng, SGD, Tape, Tensor
from .config import TrainConfig
from .graph import HeteroGraph, NodeRef, sample_neighborhood
from .ingest import RelationalDatabase
from .metrics import ConfusionMatrix, MetricsReport, confusion_from_predictions
from .model import RelationalClassifier, new_model
from .oversample import MemoryBank, nearest_minority
from .signatures import compute_all_signatures, signature_width

__all__ = ["LabeledTask", "load_labels", "train", "evaluate", "TrainResult"]


@dataclass
class LabeledTask:
    """Binary labels over one target table, with disjoint row-id splits."""

    target_table: str
    labels: np.ndarray                      # (n_rows,) values in {0, 1}
    splits: dict[str, np.ndarray]           # split name -> row ids

    def validate(self, db: RelationalDatabase) -> "LabeledTask":
        n = len(db.rows[self.target_table])
        if len(self.labels) != n:
            raise ValueError(f"{len(self.labels)} labels for {n} rows of "
                             f"{self.target_table!r}")
        seen: set[int] = set()
        for name, ids in self.splits.items():
            s = set(int(i) for i in ids)
            if seen & s:
                raise ValueError(f"split {name!r} overlaps another split")
            seen |= s
        return self


def load_labels(path: str, db: RelationalDatabase, target_table: str) -> LabeledTask:
    """Read a labels CSV with columns (entity_id, label, split)."""
    pk_map = db.pk_to_row(target_table)
    labels = np.zeros(len(db.rows[target_table]), dtype=np.int64)
    split_lists: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            row_id = pk_map[rec["entity_id"].strip()]
            labels[row_id] = int(rec["label"])
            split_lists.setdefault(rec["split"], []).append(row_id)
    splits = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in split_lists.items()}
    return LabeledTask(target_table, labels, splits).validate(db)


@dataclass
class SynthesisRecord:
    source_node: int
    bank_node: int
    lam: float
    distance: float


@dataclass
class TrainResult:
    model: RelationalClassifier
    history: list[MetricsReport]
    bank: MemoryBank
    minority_label: int
    signatures: list[np.ndarray]
    synth_log: list[SynthesisRecord] = field(default_factory=list)
    gate_means: list[dict[int, float]] = field(default_factory=list)


def _minority_label(labels: np.ndarray, train_ids: np.ndarray) -> int:
    y = labels[train_ids]
    n1 = int((y == 1).sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("degenerate single-class training set")
    return 1 if n1 <= n0 else 0


def train(db: RelationalDatabase, graph: HeteroGraph, task: LabeledTask,
          cfg: TrainConfig, collect_synth: bool = False) -> TrainResult:
    """Run the full training pipeline; deterministic for a given seed."""
    cfg.validate()
    rng = Rng(cfg.seed)
    target_type = graph.type_names.index(task.target_table)
    train_ids = task.splits["train"]
    minority = _minority_label(task.labels, train_ids)

    train_mask = {task.target_table: np.zeros(len(task.labels), dtype=bool)}
    train_mask[task.target_table][train_ids] = True
    sig_width = signature_width(graph)
    signatures = compute_all_signatures(graph)
    model = new_model(db, graph, sig_width, cfg, rng, train_mask)
    params = model.params()
    opt = Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)

    bank = MemoryBank(cfg.bank_capacity, cfg.dim, sig_width)
    fanouts = list(cfg.fanouts)
    history: list[MetricsReport] = []
    synth_log: list[SynthesisRecord] = []
    gate_means: list[dict[int, float]] = []

    for epoch in range(cfg.epochs):
        order = train_ids[rng.permutation(len(train_ids))]
        epoch_cls = 0.0
        epoch_syn = 0.0
        n_batches = 0
        pending_bank: list[tuple[np.ndarray, np.ndarray, int]] = []
        gate_log: dict[int, list[float]] = {}

        for start in range(0, len(order), cfg.batch_size):
            batch_ids = order[start:start + cfg.batch_size]
            seeds = [NodeRef(target_type, int(i)) for i in batch_ids]
            tape = Tape()
            with tape:
                sample = sample_neighborhood(graph, seeds, fanouts, rng)
                x0 = model.encode_sample(sample)
                x = model.propagate(x0, sample, gate_log=gate_log)

                y_batch = task.labels[batch_ids]
                sig_batch = signatures[target_type][batch_ids]
                min_pos = np.flatnonzero(y_batch == minority)

                entries = [(x.data[i].copy(), sig_batch[i], int(batch_ids[i]))
                           for i in min_pos]
                if cfg.bank_refresh == "batch":
                    bank.push(entries)
                else:
                    pending_bank.extend(entries)

                x_all, sig_all, y_all = x, Tensor(sig_batch), y_batch
                if not cfg.disable_syn and len(min_pos) and len(bank) >= 2:
                    n_syn = min(len(y_batch) - 2 * len(min_pos), cfg.syn_cap)
                    plan = _plan_synthesis(bank, x.data, sig_batch, batch_ids,
                                           min_pos, n_syn, cfg, rng)
                    if plan:
                        src = np.asarray([p[0] for p in plan], dtype=np.int64)
                        lam = np.asarray([p[1] for p in plan])[:, None]
                        x_star = np.stack([p[2] for p in plan])
                        s_star = np.stack([p[3] for p in plan])
                        x_src = ad.gather_rows(x, src)
                        x_syn = ad.add(ad.mul(Tensor(lam), x_src),
                                       Tensor((1.0 - lam) * x_star))
                        s_syn = lam * sig_batch[src] + (1.0 - lam) * s_star
                        x_all = ad.vstack([x, x_syn])
                        sig_all = Tensor(np.concatenate([sig_batch, s_syn]))
                        y_all = np.concatenate(
                            [y_batch, np.full(len(plan), minority, dtype=np.int64)])
                        if collect_synth:
                            synth_log.extend(
                                SynthesisRecord(int(batch_ids[p[0]]), p[4], p[1], p[5])
                                for p in plan)

                _, logits, recon = model.fuse_and_heads(x_all, sig_all)
                minority_mask = y_all == minority
                loss, l_cls, l_syn = model.loss(logits, y_all, recon, sig_all,
                                                cfg.gamma, minority_mask)
            ad.backward(tape, loss)
            opt.step()
            opt.zero_grad()
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            epoch_cls += l_cls
            epoch_syn += l_syn
            n_batches += 1

        if cfg.bank_refresh == "epoch":
            bank.push(pending_bank)
        gate_means.append({r: float(np.mean(v)) for r, v in sorted(gate_log.items())})

        report = MetricsReport(epoch=epoch, split="train",
                               cm=ConfusionMatrix(0, 0, 0, 0),
                               loss_cls=epoch_cls / max(n_batches, 1),
                               loss_syn=epoch_syn / max(n_batches, 1))
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0 and "val" in task.splits:
            val = evaluate(model, graph, db, task, "val", minority,
                           signatures=signatures, epoch=epoch)
            history.append(val)
        history.append(report)

    return TrainResult(model, history, bank, minority, signatures,
                       synth_log=synth_log, gate_means=gate_means)


def _plan_synthesis(bank: MemoryBank, x_data: np.ndarray, sig_batch: np.ndarray,
                    batch_ids: np.ndarray, min_pos: np.ndarray, n_syn: int,
                    cfg: TrainConfig, rng: Rng):
    """Pick (source row, lambda, bank entry) tuples for this batch's quota."""
    plan = []
    for j in range(max(n_syn, 0)):
        i = int(min_pos[j % len(min_pos)])
        idx = nearest_minority(bank, x_data[i], sig_batch[i], cfg.omega,
                               exclude=int(batch_ids[i]))
        if idx is None:
            break
        x_star, s_star, node_star = bank.get(idx)
        lam = rng.beta(cfg.beta_alpha, cfg.beta_beta)
        dx = x_data[i] - x_star
        ds = sig_batch[i] - s_star
        dist = float(dx @ dx + cfg.omega * (ds @ ds))
        plan.append((i, lam, x_star, s_star, node_star, dist))
    return plan


def evaluate(model: RelationalClassifier, graph: HeteroGraph, db: RelationalDatabase,
             task: LabeledTask, split: str, minority_label: int,
             signatures: list[np.ndarray] | None = None, epoch: int = -1
             ) -> MetricsReport:
    """Full-neighborhood evaluation over one split (threshold 0.5)."""
    if signatures is None:
        signatures = compute_all_signatures(graph)
    target_type = graph.type_names.index(task.target_table)
    ids = task.splits[split]
    preds = np.empty(len(ids), dtype=np.int64)
    loss_cls = 0.0
    loss_syn = 0.0
    n_min = 0
    bs = model.cfg.eval_batch_size
    with ad.no_grad():
        for start in range(0, len(ids), bs):
            chunk = ids[start:start + bs]
            seeds = [NodeRef(target_type, int(i)) for i in chunk]
            sample = sample_neighborhood(graph, seeds, [None, None], Rng(0))
            _, _, logits, recon = model.forward(sample, signatures)
            preds[start:start + len(chunk)] = (logits.data[:, 0] > 0.0).astype(np.int64)
            y = task.labels[chunk].astype(np.float64).reshape(-1, 1)
            per = (np.maximum(logits.data, 0) - logits.data * y
                   + np.log1p(np.exp(-np.abs(logits.data))))
            loss_cls += float(per.sum())
            m = task.labels[chunk] == minority_label
            if m.any():
                sig_true = signatures[target_type][chunk[m]]
                diff = recon.data[m] - sig_true
                loss_syn += float((diff * diff).sum())
                n_min += int(m.sum()) * sig_true.shape[1]
    y_true = task.labels[ids]
    cm = confusion_from_predictions(y_true, preds)
    return MetricsReport(epoch=epoch, split=split, cm=cm,
                         loss_cls=loss_cls / max(len(ids), 1),
                         loss_syn=loss_syn / max(n_min, 1))
