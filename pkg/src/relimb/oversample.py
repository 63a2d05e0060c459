"""Minority oversampling guided by structural signatures.

A FIFO memory bank holds detached (representation, signature, node id)
entries for recently-seen minority entities. New samples are synthesized by
interpolating a batch minority entity with its nearest bank entry under the
joint distance

    D(e, e') = ||x_e - x_e'||^2 + omega * ||s_e - s_e'||^2

with a single Beta-distributed factor applied to both the representation
and the signature. With omega = 0 the selection reduces to plain
representation-space nearest-neighbor oversampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Rng

__all__ = ["MemoryBank", "SyntheticSample", "nearest_minority", "synthesize"]


class MemoryBank:
    """Fixed-capacity FIFO store of minority (x, s, node_id) entries.

    Entries are stored detached from any gradient tape. Logical index 0 is
    always the oldest surviving entry.
    """

    def __init__(self, capacity: int, dim: int, sig_width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self.sig_width = sig_width
        self._x = np.zeros((capacity, dim), dtype=np.float64)
        self._s = np.zeros((capacity, sig_width), dtype=np.float64)
        self._node = np.full(capacity, -1, dtype=np.int64)
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, entries) -> None:
        """Append ``(x, s, node_id)`` entries in order, evicting the oldest."""
        for x, s, node_id in entries:
            x = np.asarray(x, dtype=np.float64)
            s = np.asarray(s, dtype=np.float64)
            if x.shape != (self.dim,) or s.shape != (self.sig_width,):
                raise ValueError(
                    f"entry widths {x.shape}/{s.shape} do not match bank "
                    f"({self.dim},)/({self.sig_width},)")
            if self._size < self.capacity:
                slot = (self._start + self._size) % self.capacity
                self._size += 1
            else:
                slot = self._start
                self._start = (self._start + 1) % self.capacity
            self._x[slot] = x
            self._s[slot] = s
            self._node[slot] = node_id

    def _logical_slots(self) -> np.ndarray:
        return (self._start + np.arange(self._size)) % self.capacity

    def entries(self) -> list[tuple[np.ndarray, np.ndarray, int]]:
        """All entries oldest-first."""
        slots = self._logical_slots()
        return [(self._x[i].copy(), self._s[i].copy(), int(self._node[i]))
                for i in slots]

    def get(self, index: int) -> tuple[np.ndarray, np.ndarray, int]:
        if not 0 <= index < self._size:
            raise IndexError(index)
        slot = (self._start + index) % self.capacity
        return self._x[slot].copy(), self._s[slot].copy(), int(self._node[slot])


def nearest_minority(bank: MemoryBank, x_e: np.ndarray, s_e: np.ndarray,
                     omega: float, exclude: int = -1) -> int | None:
    """Index of the closest eligible bank entry, or None if the bank is not
    warm (no entry other than ``exclude``). Ties break to the lowest index."""
    if omega < 0:
        raise ValueError("omega must be >= 0")
    n = len(bank)
    if n == 0:
        return None
    slots = bank._logical_slots()
    dx = bank._x[slots] - np.asarray(x_e, dtype=np.float64)
    dist = np.einsum("ij,ij->i", dx, dx)
    if omega > 0:
        ds = bank._s[slots] - np.asarray(s_e, dtype=np.float64)
        dist = dist + omega * np.einsum("ij,ij->i", ds, ds)
    eligible = bank._node[slots] != exclude
    if not eligible.any():
        return None
    dist = np.where(eligible, dist, np.inf)
    return int(np.argmin(dist))  # argmin returns the first (lowest) index on ties


@dataclass
class SyntheticSample:
    x: np.ndarray
    s: np.ndarray
    label: int
    lam: float
    source_node: int
    bank_index: int
    bank_node: int
    distance: float


def synthesize(x_e: np.ndarray, s_e: np.ndarray, bank: MemoryBank, omega: float,
               beta_alpha: float, beta_beta: float, rng: Rng,
               exclude: int = -1, minority_label: int = 1,
               lam: float | None = None) -> SyntheticSample | None:
    """Interpolate ``(x_e, s_e)`` with its nearest bank entry.

    One Beta(alpha, beta) draw is used for both the representation and the
    signature. ``lam`` overrides the draw (test hook). Returns None when the
    bank is not warm.
    """
    idx = nearest_minority(bank, x_e, s_e, omega, exclude=exclude)
    if idx is None:
        return None
    x_star, s_star, node_star = bank.get(idx)
    if lam is None:
        lam = rng.beta(beta_alpha, beta_beta)
    x_syn = lam * np.asarray(x_e, dtype=np.float64) + (1.0 - lam) * x_star
    s_syn = lam * np.asarray(s_e, dtype=np.float64) + (1.0 - lam) * s_star
    dx = np.asarray(x_e) - x_star
    ds = np.asarray(s_e) - s_star
    dist = float(dx @ dx + omega * (ds @ ds))
    return SyntheticSample(x_syn, s_syn, minority_label, float(lam),
                           source_node=-1, bank_index=idx, bank_node=node_star,
                           distance=dist)
