"""Full classifier: encoders -> gated layers -> signature fusion -> heads.

The fused representation is  x~ = relu(X W_x + S W_s + b)  and feeds two
heads: a scalar classification logit and a signature reconstruction of
width ``sig_width``. The combined objective is

    L = L_cls + gamma * L_syn

where L_cls is binary cross-entropy over all (real and synthetic) entities
and L_syn is the reconstruction error over minority entities only.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .config import TrainConfig
from .encoders import (CategoricalStats, ColumnEncoderSpec, NumericStats,
                       TimestampStats, TableEncoder, build_encoders, fit_statistics)
from .gating import RelGateLayer
from .graph import HeteroGraph, NeighborSample
from .ingest import RelationalDatabase

__all__ = ["RelationalClassifier"]

N_LAYERS = 2


class RelationalClassifier:
    def __init__(self, db: RelationalDatabase, graph: HeteroGraph,
                 enc_specs: dict[str, list[ColumnEncoderSpec]], sig_width: int,
                 cfg: TrainConfig, rng: Rng):
        d = cfg.dim
        self.cfg = cfg
        self.db = db
        self.graph = graph
        self.sig_width = sig_width
        self.encoders = build_encoders(db, enc_specs, d, cfg.d_cat, rng)
        rel_ids = [r.rel_id for r in graph.relations]
        self.layers = [
            RelGateLayer(d, rel_ids, rng,
                         activation="relu" if i < N_LAYERS - 1 else "identity",
                         per_relation_qkv=cfg.per_relation_qkv, name=f"gnn{i}")
            for i in range(N_LAYERS)
        ]
        self.w_x = Tensor(rng.normal(0, 1 / math.sqrt(d), (d, d)), requires_grad=True)
        self.w_s = Tensor(rng.normal(0, 1 / math.sqrt(max(sig_width, 1)), (sig_width, d)),
                          requires_grad=True)
        self.b_fuse = Tensor(np.zeros((1, d)), requires_grad=True)
        self.w_cls = Tensor(rng.normal(0, 1 / math.sqrt(d), (d, 1)), requires_grad=True)
        self.b_cls = Tensor(np.zeros((1, 1)), requires_grad=True)
        self.w_syn = Tensor(rng.normal(0, 1 / math.sqrt(d), (d, sig_width)),
                            requires_grad=True)
        self.b_syn = Tensor(np.zeros((1, sig_width)), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for enc in self.encoders.values():
            out.update(enc.params())
        for layer in self.layers:
            out.update(layer.params())
        out.update({"fuse.w_x": self.w_x, "fuse.w_s": self.w_s, "fuse.b": self.b_fuse,
                    "head.cls_w": self.w_cls, "head.cls_b": self.b_cls,
                    "head.syn_w": self.w_syn, "head.syn_b": self.b_syn})
        return out

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def encode_sample(self, sample: NeighborSample) -> Tensor:
        """Initial representations for every local node, in local order."""
        by_type: dict[int, list[int]] = {}
        for i, ref in enumerate(sample.nodes):
            by_type.setdefault(ref.type_id, []).append(i)
        parts: list[Tensor] = []
        perm = np.empty(len(sample.nodes), dtype=np.int64)
        pos = 0
        for type_id in sorted(by_type):
            locals_ = by_type[type_id]
            table = self.graph.type_names[type_id]
            rows = [self.db.rows[table][sample.nodes[i].row_id] for i in locals_]
            parts.append(self.encoders[table].encode(rows))
            for i in locals_:
                perm[i] = pos
                pos += 1
        stacked = parts[0] if len(parts) == 1 else ad.vstack(parts)
        return ad.gather_rows(stacked, perm)

    def propagate(self, x0: Tensor, sample: NeighborSample,
                  gate_log: dict[int, list[float]] | None = None) -> Tensor:
        """Run the gated (or ungated) layers; rows 0..n_seeds-1 of the output
        are the seed representations."""
        x = x0
        gated = not self.cfg.disable_gate
        for i, layer in enumerate(self.layers):
            block = sample.blocks[N_LAYERS - 1 - i]
            x = layer.forward(x, block, gated=gated, gate_log=gate_log)
        return x

    def fuse_and_heads(self, x: Tensor, sig: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        x_tilde = ad.relu(ad.add(ad.add(ad.matmul(x, self.w_x),
                                        ad.matmul(sig, self.w_s)), self.b_fuse))
        logits = ad.add(ad.matmul(x_tilde, self.w_cls), self.b_cls)
        recon = ad.add(ad.matmul(x_tilde, self.w_syn), self.b_syn)
        return x_tilde, logits, recon

    def forward(self, sample: NeighborSample, signatures: list[np.ndarray],
                gate_log: dict[int, list[float]] | None = None
                ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Full pass for the sample's seeds.

        Returns (seed representations, fused representations, logits,
        reconstructed signatures).
        """
        x0 = self.encode_sample(sample)
        x = self.propagate(x0, sample, gate_log=gate_log)
        sig = Tensor(np.stack([signatures[ref.type_id][ref.row_id]
                               for ref in sample.nodes[:sample.n_seeds]]))
        x_tilde, logits, recon = self.fuse_and_heads(x, sig)
        return x, x_tilde, logits, recon

    # ------------------------------------------------------------------
    # objective
    # ------------------------------------------------------------------

    def loss(self, logits: Tensor, labels: np.ndarray, recon: Tensor,
             sig_targets: Tensor, gamma: float, minority_mask: np.ndarray
             ) -> tuple[Tensor, float, float]:
        """Combined objective; returns (loss, cls component, recon component)."""
        reduction = self.cfg.loss_reduction
        y = Tensor(np.asarray(labels, dtype=np.float64).reshape(-1, 1))
        l_cls = ad.bce_with_logits(logits, y, reduction=reduction)
        idx = np.flatnonzero(minority_mask)
        if len(idx) and gamma != 0.0:
            r_min = ad.gather_rows(recon, idx)
            s_min = ad.gather_rows(sig_targets, idx)
            l_syn = ad.mse(r_min, s_min, reduction=reduction)
        elif len(idx):
            with ad.no_grad():
                l_syn = ad.mse(ad.gather_rows(recon, idx), ad.gather_rows(sig_targets, idx),
                               reduction=reduction)
        else:
            l_syn = Tensor(0.0)
        total = ad.add(l_cls, ad.scale(l_syn, gamma)) if gamma != 0.0 else l_cls
        return total, float(l_cls.data), float(l_syn.data)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path: str) -> None:
        doc = {
            "version": 1,
            "arch": {
                "dim": self.cfg.dim,
                "d_cat": self.cfg.d_cat,
                "per_relation_qkv": self.cfg.per_relation_qkv,
                "disable_gate": self.cfg.disable_gate,
                "sig_width": self.sig_width,
            },
            "encoder_stats": _specs_to_json(
                {t: enc.specs for t, enc in self.encoders.items()}),
            "params": {
                name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
                for name, p in sorted(self.params().items())
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, db: RelationalDatabase, graph: HeteroGraph, path: str,
             cfg: TrainConfig | None = None) -> "RelationalClassifier":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported model checkpoint version {doc.get('version')!r}")
        arch = doc["arch"]
        cfg = cfg or TrainConfig()
        cfg.dim = arch["dim"]
        cfg.d_cat = arch["d_cat"]
        cfg.per_relation_qkv = arch["per_relation_qkv"]
        cfg.disable_gate = arch["disable_gate"]
        specs = _specs_from_json(db, doc["encoder_stats"])
        model = cls(db, graph, specs, arch["sig_width"], cfg, Rng(0))
        params = model.params()
        for name, rec in doc["params"].items():
            if name not in params:
                raise ValueError(f"checkpoint parameter {name!r} not in model")
            arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
            if arr.shape != params[name].data.shape:
                raise ValueError(f"checkpoint parameter {name!r} shape {arr.shape} != "
                                 f"{params[name].data.shape}")
            params[name].data = arr
        return model


def new_model(db: RelationalDatabase, graph: HeteroGraph, sig_width: int,
              cfg: TrainConfig, rng: Rng,
              train_mask: dict[str, np.ndarray] | None = None) -> RelationalClassifier:
    specs = fit_statistics(db, train_mask)
    return RelationalClassifier(db, graph, specs, sig_width, cfg, rng)


def _specs_to_json(all_specs: dict[str, list[ColumnEncoderSpec]]) -> dict:
    out = {}
    for table, specs in all_specs.items():
        recs = []
        for spec in specs:
            rec = {"name": spec.column.name, "modality": spec.column.modality}
            if spec.column.fk_target:
                rec["fk_target"] = spec.column.fk_target
            st = spec.stats
            if isinstance(st, NumericStats):
                rec["stats"] = {"mean": st.mean, "std": st.std}
            elif isinstance(st, CategoricalStats):
                rec["stats"] = {"vocab": st.vocab}
            elif isinstance(st, TimestampStats):
                rec["stats"] = {"t_min": st.t_min, "t_max": st.t_max}
            recs.append(rec)
        out[table] = recs
    return out


def _specs_from_json(db: RelationalDatabase, doc: dict) -> dict[str, list[ColumnEncoderSpec]]:
    from .ingest import ColumnSpec

    out = {}
    for table, recs in doc.items():
        specs = []
        for rec in recs:
            col = ColumnSpec(rec["name"], rec["modality"], rec.get("fk_target"))
            st = rec.get("stats")
            if col.modality == "numeric":
                stats = NumericStats(st["mean"], st["std"])
            elif col.modality == "categorical":
                stats = CategoricalStats({k: int(v) for k, v in st["vocab"].items()})
            elif col.modality == "timestamp":
                stats = TimestampStats(st["t_min"], st["t_max"])
            else:
                stats = None
            specs.append(ColumnEncoderSpec(col, stats))
        out[table] = specs
    return out
