"""Structural signatures: per-entity neighborhood statistics.

The signature of a node is four L1-normalized blocks laid side by side:

    [ 1-hop type histogram | 2-hop type histogram | fan-out per link | fan-in per link ]

Type histograms count (multiset) neighbor incidences over every relation,
including reverses; 2-hop counts enumerate all length-2 paths through any
relation pair, backtracking included. Fan-out/fan-in count edges under each
forward FK link and its reverse. A block with no mass stays all-zero.
Signatures are structural constants: computed from the full adjacency and
cached, never learned.
"""

from __future__ import annotations

import numpy as np

from .graph import HeteroGraph, NodeRef

__all__ = ["signature_width", "compute_signature", "compute_all_signatures"]


def signature_width(g: HeteroGraph) -> int:
    return 2 * g.n_types + 2 * g.n_forward_relations


def _one_hop_type_hist(g: HeteroGraph) -> list[np.ndarray]:
    """Raw per-node 1-hop type counts, one (n_t, n_types) array per type."""
    hists = [np.zeros((n, g.n_types), dtype=np.float64) for n in g.node_counts]
    for rel in g.relations:
        offsets, indices = g.adjacency[rel.rel_id]
        deg = np.diff(offsets)
        hists[rel.src_type][:, rel.dst_type] += deg
    return hists


def _two_hop_type_hist(g: HeteroGraph, one_hop: list[np.ndarray]) -> list[np.ndarray]:
    """Sum of neighbors' 1-hop histograms = all length-2 path endpoint types."""
    hists = [np.zeros((n, g.n_types), dtype=np.float64) for n in g.node_counts]
    for rel in g.relations:
        offsets, indices = g.adjacency[rel.rel_id]
        if len(indices) == 0:
            continue
        src_per_edge = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
        np.add.at(hists[rel.src_type], src_per_edge, one_hop[rel.dst_type][indices])
    return hists


def _normalize_blocks(vec: np.ndarray, widths: list[int]) -> np.ndarray:
    out = vec.copy()
    pos = 0
    for w in widths:
        block = out[pos:pos + w]
        s = block.sum()
        if s > 0:
            out[pos:pos + w] = block / s
        pos += w
    return out


def compute_all_signatures(g: HeteroGraph) -> list[np.ndarray]:
    """Signatures for every node, one (n_t, width) array per type."""
    n_types = g.n_types
    forward = [r for r in g.relations if r.direction == "forward"]
    n_links = len(forward)
    width = signature_width(g)

    one_hop = _one_hop_type_hist(g)
    two_hop = _two_hop_type_hist(g, one_hop)

    raw = [np.zeros((n, width), dtype=np.float64) for n in g.node_counts]
    for t in range(n_types):
        raw[t][:, :n_types] = one_hop[t]
        raw[t][:, n_types:2 * n_types] = two_hop[t]
    for k, rel in enumerate(forward):
        off_f, _ = g.adjacency[rel.rel_id]
        off_r, _ = g.adjacency[rel.pair_id]
        raw[rel.src_type][:, 2 * n_types + k] += np.diff(off_f)
        raw[rel.dst_type][:, 2 * n_types + n_links + k] += np.diff(off_r)

    widths = [n_types, n_types, n_links, n_links]
    out = []
    for t in range(n_types):
        arr = np.empty_like(raw[t])
        for i in range(raw[t].shape[0]):
            arr[i] = _normalize_blocks(raw[t][i], widths)
        out.append(arr)
    return out


def compute_signature(g: HeteroGraph, node: NodeRef) -> np.ndarray:
    """Signature of a single node (block-normalized), from full adjacency."""
    n_types = g.n_types
    forward = [r for r in g.relations if r.direction == "forward"]
    n_links = len(forward)
    vec = np.zeros(signature_width(g), dtype=np.float64)

    for rel in g.relations:
        if rel.src_type != node.type_id:
            continue
        nbrs = g.csr_slice(rel.rel_id, node.row_id)
        vec[rel.dst_type] += len(nbrs)
        # length-2 paths continue from each neighbor through any relation
        for rel2 in g.relations:
            if rel2.src_type != rel.dst_type:
                continue
            off2, _ = g.adjacency[rel2.rel_id]
            if len(nbrs):
                vec[n_types + rel2.dst_type] += int(np.sum(np.diff(off2)[nbrs]))
    for k, rel in enumerate(forward):
        if rel.src_type == node.type_id:
            vec[2 * n_types + k] += g.degree(rel.rel_id, node.row_id)
        if rel.dst_type == node.type_id:
            vec[2 * n_types + n_links + k] += g.degree(rel.pair_id, node.row_id)

    return _normalize_blocks(vec, [n_types, n_types, n_links, n_links])
