"""Per-modality feature encoding into a shared d-dimensional space.

Channel layout per column, in schema order:

* numeric: z-scored value + missing flag (2 channels; nulls impute the
  train mean, flag = 1)
* categorical: learnable embedding of width ``d_cat`` with a dedicated
  out-of-vocabulary row (nulls and unseen tokens map there)
* timestamp: min-max scaled scalar + sin/cos day-of-week (3 channels;
  nulls impute mid-range)
* keys contribute no channels

The concatenation is projected to width ``d`` by a per-table linear layer
with ReLU. Statistics are fitted on training rows only. A table with no
feature columns gets a single constant channel so the projection stays
well-defined.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .ingest import ColumnSpec, RelationalDatabase

__all__ = ["fit_statistics", "TableEncoder", "build_encoders"]

SECONDS_PER_DAY = 86400
# Unix epoch day 0 was a Thursday.
EPOCH_DOW_OFFSET = 4


@dataclass
class NumericStats:
    mean: float
    std: float


@dataclass
class CategoricalStats:
    vocab: dict[str, int]

    @property
    def oov_index(self) -> int:
        return len(self.vocab)


@dataclass
class TimestampStats:
    t_min: float
    t_max: float


@dataclass
class ColumnEncoderSpec:
    column: ColumnSpec
    stats: NumericStats | CategoricalStats | TimestampStats | None


def fit_statistics(db: RelationalDatabase,
                   train_mask: dict[str, np.ndarray] | None = None
                   ) -> dict[str, list[ColumnEncoderSpec]]:
    """Fit per-column statistics from training rows only.

    ``train_mask[table]`` is a boolean row mask; tables absent from the mask
    use all rows. Zero-variance numeric columns get std = 1.
    """
    out: dict[str, list[ColumnEncoderSpec]] = {}
    for schema in db.schemas:
        rows = db.rows[schema.name]
        mask = None if train_mask is None else train_mask.get(schema.name)
        if mask is not None:
            fit_rows = [r for r, keep in zip(rows, mask) if keep]
        else:
            fit_rows = rows
        if not fit_rows:
            warnings.warn(f"table {schema.name!r}: no training rows, using identity stats")

        specs: list[ColumnEncoderSpec] = []
        for i, col in enumerate(schema.columns):
            if col.modality == "numeric":
                vals = [r[i] for r in fit_rows if r[i] is not None]
                if vals:
                    mean = float(np.mean(vals))
                    std = float(np.std(vals))
                else:
                    mean, std = 0.0, 1.0
                if std <= 0:
                    std = 1.0
                specs.append(ColumnEncoderSpec(col, NumericStats(mean, std)))
            elif col.modality == "categorical":
                tokens = sorted({r[i] for r in fit_rows if r[i] is not None})
                vocab = {tok: k for k, tok in enumerate(tokens)}
                specs.append(ColumnEncoderSpec(col, CategoricalStats(vocab)))
            elif col.modality == "timestamp":
                vals = [r[i] for r in fit_rows if r[i] is not None]
                if vals:
                    t_min, t_max = float(min(vals)), float(max(vals))
                else:
                    t_min, t_max = 0.0, 1.0
                specs.append(ColumnEncoderSpec(col, TimestampStats(t_min, t_max)))
            else:
                specs.append(ColumnEncoderSpec(col, None))
        out[schema.name] = specs
    return out


def _dow_channels(ts: float) -> tuple[float, float]:
    dow = (math.floor(ts / SECONDS_PER_DAY) + EPOCH_DOW_OFFSET) % 7
    ang = 2.0 * math.pi * dow / 7.0
    return math.sin(ang), math.cos(ang)


class TableEncoder:
    """Fitted encoder for one table: modality channels + projection to d."""

    def __init__(self, table: str, specs: list[ColumnEncoderSpec], dim: int,
                 d_cat: int, rng: Rng):
        self.table = table
        self.specs = specs
        self.dim = dim
        self.d_cat = d_cat
        self.embeddings: dict[str, Tensor] = {}
        width = 0
        for spec in specs:
            if isinstance(spec.stats, NumericStats):
                width += 2
            elif isinstance(spec.stats, CategoricalStats):
                n_rows = spec.stats.oov_index + 1
                emb = rng.normal(0.0, 0.5, size=(n_rows, d_cat))
                self.embeddings[spec.column.name] = Tensor(emb, requires_grad=True)
                width += d_cat
            elif isinstance(spec.stats, TimestampStats):
                width += 3
        if width == 0:
            width = 1  # constant channel for key-only tables
        self.concat_width = width
        self.proj_w = Tensor(rng.normal(0.0, 1.0 / math.sqrt(width), size=(width, dim)),
                             requires_grad=True)
        self.proj_b = Tensor(np.zeros((1, dim)), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out = {f"enc.{self.table}.proj_w": self.proj_w,
               f"enc.{self.table}.proj_b": self.proj_b}
        for name, emb in self.embeddings.items():
            out[f"enc.{self.table}.emb.{name}"] = emb
        return out

    def encode(self, rows: list[tuple]) -> Tensor:
        """Encode raw rows into an (n, d) representation matrix."""
        n = len(rows)
        parts: list[Tensor] = []
        any_features = False
        for i, spec in enumerate(self.specs):
            st = spec.stats
            if isinstance(st, NumericStats):
                block = np.zeros((n, 2))
                for k, row in enumerate(rows):
                    v = row[i]
                    if v is None:
                        block[k, 1] = 1.0
                    else:
                        block[k, 0] = (float(v) - st.mean) / st.std
                parts.append(Tensor(block))
                any_features = True
            elif isinstance(st, CategoricalStats):
                idx = np.empty(n, dtype=np.int64)
                for k, row in enumerate(rows):
                    v = row[i]
                    idx[k] = st.vocab.get(v, st.oov_index) if v is not None else st.oov_index
                parts.append(ad.gather_rows(self.embeddings[spec.column.name], idx))
                any_features = True
            elif isinstance(st, TimestampStats):
                block = np.zeros((n, 3))
                span = st.t_max - st.t_min
                for k, row in enumerate(rows):
                    v = row[i]
                    if v is None:
                        v = st.t_min + span / 2.0
                    block[k, 0] = (float(v) - st.t_min) / span if span > 0 else 0.5
                    block[k, 1], block[k, 2] = _dow_channels(float(v))
                parts.append(Tensor(block))
                any_features = True
        if not any_features:
            parts = [Tensor(np.ones((n, 1)))]
        x = parts[0] if len(parts) == 1 else ad.concat(parts)
        return ad.relu(ad.add(ad.matmul(x, self.proj_w), self.proj_b))


def build_encoders(db: RelationalDatabase, specs: dict[str, list[ColumnEncoderSpec]],
                   dim: int, d_cat: int, rng: Rng) -> dict[str, TableEncoder]:
    return {schema.name: TableEncoder(schema.name, specs[schema.name], dim, d_cat, rng)
            for schema in db.schemas}
