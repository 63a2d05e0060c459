"""Typed entity graph derived from a relational database.

Each table becomes a node type; each FK link becomes a forward relation
(FK holder -> referenced row) plus a materialized reverse relation, so
messages can flow in both directions. Adjacency is stored per relation in
CSR form (offsets + neighbor row ids).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .ingest import Link, RelationalDatabase

__all__ = ["NodeRef", "RelationType", "HeteroGraph", "NeighborSample",
           "build_graph", "neighbors", "sample_neighborhood"]


@dataclass(frozen=True)
class NodeRef:
    type_id: int
    row_id: int


@dataclass(frozen=True)
class RelationType:
    rel_id: int
    src_type: int
    dst_type: int
    fk_column: str
    direction: str  # "forward" | "reverse"
    pair_id: int    # rel_id of the transposed relation


@dataclass
class HeteroGraph:
    type_names: list[str]
    node_counts: list[int]
    relations: list[RelationType]
    # per relation: (offsets, indices); offsets has node_counts[src_type]+1 entries
    adjacency: list[tuple[np.ndarray, np.ndarray]]
    links: list[Link] = field(default_factory=list)

    @property
    def n_types(self) -> int:
        return len(self.node_counts)

    @property
    def n_forward_relations(self) -> int:
        return sum(1 for r in self.relations if r.direction == "forward")

    def edge_count(self, rel_id: int) -> int:
        return len(self.adjacency[rel_id][1])

    def degree(self, rel_id: int, row_id: int) -> int:
        offsets, _ = self.adjacency[rel_id]
        return int(offsets[row_id + 1] - offsets[row_id])

    def csr_slice(self, rel_id: int, row_id: int) -> np.ndarray:
        offsets, indices = self.adjacency[rel_id]
        return indices[offsets[row_id]:offsets[row_id + 1]]


def build_graph(db: RelationalDatabase) -> HeteroGraph:
    """Materialize forward and reverse CSR adjacency for every FK link.

    Null or dangling FK cells contribute no edge; the rows stay.
    """
    type_names = [s.name for s in db.schemas]
    node_counts = [len(db.rows[name]) for name in type_names]
    type_of = {name: i for i, name in enumerate(type_names)}

    relations: list[RelationType] = []
    adjacency: list[tuple[np.ndarray, np.ndarray]] = []

    for link in db.links:
        src_t = type_of[link.src_table]
        dst_t = type_of[link.dst_table]
        schema = db.schema(link.src_table)
        fk_idx = schema.column_index(link.fk_column)
        pk_map = db.pk_to_row(link.dst_table)

        src_ids = []
        dst_ids = []
        for i, row in enumerate(db.rows[link.src_table]):
            v = row[fk_idx]
            if v is None:
                continue
            j = pk_map.get(v)
            if j is None:
                continue  # dangling reference: drop the edge, keep the row
            src_ids.append(i)
            dst_ids.append(j)
        src_arr = np.asarray(src_ids, dtype=np.int64)
        dst_arr = np.asarray(dst_ids, dtype=np.int64)

        fwd_id = len(relations)
        rev_id = fwd_id + 1
        relations.append(RelationType(fwd_id, src_t, dst_t, link.fk_column,
                                      "forward", rev_id))
        relations.append(RelationType(rev_id, dst_t, src_t, link.fk_column,
                                      "reverse", fwd_id))
        adjacency.append(_to_csr(src_arr, dst_arr, node_counts[src_t]))
        adjacency.append(_to_csr(dst_arr, src_arr, node_counts[dst_t]))

    return HeteroGraph(type_names, node_counts, relations, adjacency,
                       links=list(db.links))


def _to_csr(src: np.ndarray, dst: np.ndarray, n_src: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(src, minlength=n_src) if len(src) else np.zeros(n_src, dtype=np.int64)
    offsets = np.zeros(n_src + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    indices = np.empty(len(src), dtype=np.int64)
    if len(src):
        order = np.argsort(src, kind="stable")  # stable: keeps source row order per slice
        indices[:] = dst[order]
    return offsets, indices


def neighbors(g: HeteroGraph, node: NodeRef, rel_id: int) -> list[NodeRef]:
    """Neighbors of ``node`` under one relation, in stable CSR order."""
    rel = g.relations[rel_id]
    if node.type_id != rel.src_type:
        raise ValueError(f"node type {node.type_id} does not match relation "
                         f"{rel_id} src_type {rel.src_type}")
    return [NodeRef(rel.dst_type, int(j)) for j in g.csr_slice(rel_id, node.row_id)]


@dataclass
class SampleBlock:
    """Per-hop sampled adjacency: a mini-CSR per relation over the first
    ``n_targets`` local nodes."""

    n_targets: int
    rels: dict[int, tuple[np.ndarray, np.ndarray]]


@dataclass
class NeighborSample:
    """Mini-batch neighborhood with a compact local re-indexing.

    Local ids are assigned in discovery order, so the seeds occupy
    ``0..n_seeds-1`` and each block's targets are a prefix of the local
    index. ``blocks[h]`` holds the adjacency sampled at expansion hop ``h``;
    a model with L layers consumes ``blocks[L-1]`` first and ``blocks[0]``
    last.
    """

    nodes: list[NodeRef]
    n_seeds: int
    blocks: list[SampleBlock]
    local_of: dict[NodeRef, int]

    def nodes_of_type(self, type_id: int) -> np.ndarray:
        return np.asarray([i for i, n in enumerate(self.nodes) if n.type_id == type_id],
                          dtype=np.int64)


def sample_neighborhood(g: HeteroGraph, seeds: list[NodeRef],
                        fanouts: list[int | None], rng: Rng) -> NeighborSample:
    """Sample a multi-hop neighborhood, uniformly without replacement.

    ``fanouts[h]`` caps neighbors per (node, relation) at hop ``h``; ``None``
    keeps the full neighborhood. Deterministic for a given rng state.
    """
    if not seeds:
        raise ValueError("seed list must be non-empty")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seed list contains duplicates")

    nodes: list[NodeRef] = list(seeds)
    local_of: dict[NodeRef, int] = {n: i for i, n in enumerate(nodes)}
    blocks: list[SampleBlock] = []

    for fanout in fanouts:
        n_targets = len(nodes)
        rels: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for rel in g.relations:
            offsets = np.zeros(n_targets + 1, dtype=np.int64)
            picked: list[np.ndarray] = []
            for i in range(n_targets):
                node = nodes[i]
                if node.type_id != rel.src_type:
                    offsets[i + 1] = offsets[i]
                    continue
                cand = g.csr_slice(rel.rel_id, node.row_id)
                if fanout is not None and len(cand) > fanout:
                    cand = rng.choice_without_replacement(cand, fanout)
                offsets[i + 1] = offsets[i] + len(cand)
                picked.append(np.asarray(cand, dtype=np.int64))
            flat = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
            if len(flat) == 0:
                continue
            # remap sampled row ids to local ids, registering new nodes
            local = np.empty(len(flat), dtype=np.int64)
            dst_t = rel.dst_type
            for k, row_id in enumerate(flat):
                ref = NodeRef(dst_t, int(row_id))
                li = local_of.get(ref)
                if li is None:
                    li = len(nodes)
                    local_of[ref] = li
                    nodes.append(ref)
                local[k] = li
            rels[rel.rel_id] = (offsets, local)
        blocks.append(SampleBlock(n_targets, rels))

    return NeighborSample(nodes, len(seeds), blocks, local_of)


def dump_graph_jsonl(g: HeteroGraph, path: str) -> None:
    """Debug dump: one JSON record per relation with its full edge list."""
    import json

    with open(path, "w") as fh:
        for rel in g.relations:
            offsets, indices = g.adjacency[rel.rel_id]
            edges = []
            for u in range(len(offsets) - 1):
                for v in indices[offsets[u]:offsets[u + 1]]:
                    edges.append([int(u), int(v)])
            fh.write(json.dumps({
                "rel_id": rel.rel_id,
                "src_type": g.type_names[rel.src_type],
                "dst_type": g.type_names[rel.dst_type],
                "fk_column": rel.fk_column,
                "direction": rel.direction,
                "edges": edges,
            }) + "\n")
