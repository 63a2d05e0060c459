"""Relation-wise gated message passing.

Each layer aggregates, for every relation r, the mean of transformed
neighbor representations

    H_{e,r} = mean_{v in N_r(e)} (X_v @ W_r)

and modulates it elementwise with a gate

    Psi_{e,r} = sigmoid(R_r + <Q x_e, K h> * (V h) / sqrt(d))

before the combined update  X'_e = act(X_e @ W_e + sum_r Psi ⊙ H).
The ungated path is the same update with every gate fixed to ones, which
the gated path reproduces bitwise when Psi = 1.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .graph import SampleBlock

__all__ = ["RelGateLayer"]


class RelGateLayer:
    """One message-passing layer over a fixed relation catalog.

    ``per_relation_qkv`` gives every relation its own attention projections;
    the default shares Q, K, V across relations and keeps only W_r and R_r
    relation-specific.
    """

    def __init__(self, dim: int, rel_ids: list[int], rng: Rng,
                 activation: str = "relu", per_relation_qkv: bool = False,
                 name: str = "layer"):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.dim = dim
        self.rel_ids = list(rel_ids)
        self.activation = activation
        self.per_relation_qkv = per_relation_qkv
        self.name = name
        s = 1.0 / math.sqrt(dim)

        def mat():
            return Tensor(rng.normal(0.0, s, size=(dim, dim)), requires_grad=True)

        self.w_self = mat()
        self.w_rel = {r: mat() for r in self.rel_ids}
        self.r_emb = {r: Tensor(np.zeros((1, dim)), requires_grad=True)
                      for r in self.rel_ids}
        if per_relation_qkv:
            self.q = {r: mat() for r in self.rel_ids}
            self.k = {r: mat() for r in self.rel_ids}
            self.v = {r: mat() for r in self.rel_ids}
        else:
            shared_q, shared_k, shared_v = mat(), mat(), mat()
            self.q = {r: shared_q for r in self.rel_ids}
            self.k = {r: shared_k for r in self.rel_ids}
            self.v = {r: shared_v for r in self.rel_ids}

    def params(self) -> dict[str, Tensor]:
        out = {f"{self.name}.w_self": self.w_self}
        for r in self.rel_ids:
            out[f"{self.name}.w_rel.{r}"] = self.w_rel[r]
            out[f"{self.name}.r_emb.{r}"] = self.r_emb[r]
        if self.per_relation_qkv:
            for r in self.rel_ids:
                out[f"{self.name}.q.{r}"] = self.q[r]
                out[f"{self.name}.k.{r}"] = self.k[r]
                out[f"{self.name}.v.{r}"] = self.v[r]
        else:
            r0 = self.rel_ids[0]
            out[f"{self.name}.q"] = self.q[r0]
            out[f"{self.name}.k"] = self.k[r0]
            out[f"{self.name}.v"] = self.v[r0]
        return out

    def relation_messages(self, x: Tensor, block: SampleBlock) -> dict[int, Tensor]:
        """Mean of W_r-transformed sampled neighbors, per relation.

        Rows with an empty neighborhood get a zero message.
        """
        messages = {}
        for rel_id, (offsets, indices) in block.rels.items():
            m = ad.neighbor_mean(x, offsets, indices)
            messages[rel_id] = ad.matmul(m, self.w_rel[rel_id])
        return messages

    def gating_factor(self, x_e: Tensor, h: Tensor, rel_id: int) -> Tensor:
        """Per-row gate vectors in (0, 1), Psi = sigmoid(R_r + <Qx, Kh> Vh / sqrt(d))."""
        q = ad.matmul(x_e, self.q[rel_id])
        k = ad.matmul(h, self.k[rel_id])
        v = ad.matmul(h, self.v[rel_id])
        a = ad.row_sum(ad.mul(q, k))  # (n, 1) scalar score per row
        scaled = ad.scale(v, 1.0 / math.sqrt(self.dim))
        return ad.sigmoid(ad.add(self.r_emb[rel_id], ad.mul(a, scaled)))

    def gated_update(self, x_targets: Tensor, messages: dict[int, Tensor],
                     gates: dict[int, Tensor] | None) -> Tensor:
        """Combine self term and (optionally gated) relation messages.

        ``gates=None`` is the ungated path; since x * 1.0 == x in IEEE
        arithmetic it coincides bitwise with all-ones gates.
        """
        out = ad.matmul(x_targets, self.w_self)
        for rel_id in sorted(messages):
            h = messages[rel_id]
            if gates is not None:
                h = ad.mul(gates[rel_id], h)
            out = ad.add(out, h)
        if self.activation == "relu":
            out = ad.relu(out)
        return out

    def ungated_update(self, x: Tensor, block: SampleBlock) -> Tensor:
        """Plain relation-mean aggregation (every gate fixed to one)."""
        return self.forward(x, block, gated=False)

    def forward(self, x: Tensor, block: SampleBlock, gated: bool = True,
                gate_log: dict[int, list[float]] | None = None) -> Tensor:
        """Apply the layer to the first ``block.n_targets`` rows of ``x``."""
        x_targets = ad.gather_rows(x, np.arange(block.n_targets))
        messages = self.relation_messages(x, block)
        gates = None
        if gated:
            gates = {rel_id: self.gating_factor(x_targets, h, rel_id)
                     for rel_id, h in messages.items()}
            if gate_log is not None:
                for rel_id, psi in gates.items():
                    gate_log.setdefault(rel_id, []).append(float(psi.data.mean()))
        return self.gated_update(x_targets, messages, gates)
