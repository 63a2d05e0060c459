"""Synthetic relational benchmark with structure-planted labels.

Default shape is a 3-table star (users <- interactions -> items). A user's
label is decided purely by its relational structure: the default pattern
marks a user as minority iff its interactions reach at least ``threshold``
distinct items of the rare category. User features are pure noise drawn
independently of the label, so any classifier beating chance must exploit
structure. Minority degrees are drawn bimodal (a low-degree and a
high-degree mode) so structural sub-populations exist; majority users carry
at most ``threshold - 1`` rare items, with counts that overlap the minority
fraction range.

Output matches the ingest contract exactly: manifest + per-table CSVs +
a labels CSV (entity_id, label, split) + a provenance JSON.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .config import ConfigError
from .ingest import (ColumnSpec, Link, RelationalDatabase, TableSchema,
                     compute_imbalance_stats, save_database)

__all__ = ["PlantedPattern", "SynthConfig", "generate", "describe", "emit_dataset"]


@dataclass
class PlantedPattern:
    """Structural role that marks the minority class.

    ``rare_2hop``: >= threshold distinct rare-category items at 2 hops.
    ``min_degree``: >= threshold interactions (fan-in under the user link).
    """

    kind: str = "rare_2hop"
    threshold: int = 3

    def validate(self) -> "PlantedPattern":
        if self.kind not in ("rare_2hop", "min_degree"):
            raise ConfigError(f"unknown pattern kind {self.kind!r}")
        if self.threshold < 1 or (self.kind == "min_degree" and self.threshold < 2):
            raise ConfigError("pattern threshold too small to separate classes")
        return self


@dataclass
class SynthConfig:
    n_users: int = 2000
    n_items: int = 300
    imbalance_ratio: float = 10.0
    pattern: PlantedPattern = field(default_factory=PlantedPattern)
    feature_noise: float = 1.0
    label_noise: float = 0.0
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.5, 0.1, 0.4)  # train/val/test

    def validate(self) -> "SynthConfig":
        if self.imbalance_ratio < 1:
            raise ConfigError("imbalance_ratio must be >= 1")
        if self.n_users < 4 or self.n_items < 8:
            raise ConfigError("need at least 4 users and 8 items")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError("label_noise must be in [0, 1)")
        self.pattern.validate()
        n_min = round(self.n_users / (1.0 + self.imbalance_ratio))
        if n_min < 2:
            raise ConfigError(
                f"imbalance_ratio {self.imbalance_ratio} infeasible for "
                f"{self.n_users} users (needs >= 2 minority entities)")
        return self


RARE_CATEGORY = "rare"
COMMON_CATEGORIES = ("alpha", "beta", "gamma", "delta")
RARE_ITEM_FRACTION = 0.15
# Degree model: minority users split between a low-degree mode just above
# the threshold and a high-degree mode; majority degrees follow a truncated
# power law. Majority rare-item counts stay strictly below the threshold but
# overlap the minority rare-fraction range, so the classes are not separable
# from the rare fraction alone.
MINORITY_LOW_DEGREE_SPREAD = 3       # low mode: threshold+1 .. threshold+spread
MINORITY_HIGH_DEGREE = (12, 22)
MINORITY_EXTRA_RARE = 2              # rare count: threshold + U{0..extra-1}
MAJORITY_MAX_DEGREE = 22
MAJORITY_POWER = 1.6
MAJORITY_RARE_PROBS = (0.45, 0.40, 0.15)  # P(rare count = 0, 1, 2)


def _power_law_degree(rng: Rng, lo: int, hi: int, power: float) -> int:
    ks = np.arange(lo, hi + 1, dtype=np.float64)
    w = ks ** (-power)
    w /= w.sum()
    return int(rng.choice_weighted(ks, p=w))


def generate(cfg: SynthConfig) -> tuple[RelationalDatabase, np.ndarray, dict[str, np.ndarray]]:
    """Build the database, labels and stratified splits. Deterministic per seed."""
    cfg.validate()
    rng = Rng(cfg.seed)
    pat = cfg.pattern
    m = pat.threshold

    n_users, n_items = cfg.n_users, cfg.n_items
    n_min = round(n_users / (1.0 + cfg.imbalance_ratio))

    # --- items -----------------------------------------------------------
    n_rare = max(m + 2, int(round(n_items * RARE_ITEM_FRACTION)))
    item_cat = [RARE_CATEGORY] * n_rare + [
        COMMON_CATEGORIES[int(rng.integers(0, len(COMMON_CATEGORIES)))]
        for _ in range(n_items - n_rare)
    ]
    rare_pool = np.arange(n_rare)
    common_pool = np.arange(n_rare, n_items)
    item_num = rng.normal(0.0, cfg.feature_noise, n_items)

    # --- users: structural roles ----------------------------------------
    minority_users = set(int(i) for i in
                         rng.choice_without_replacement(np.arange(n_users), n_min))
    user_items: list[list[int]] = []
    for u in range(n_users):
        if pat.kind == "min_degree":
            if u in minority_users:
                deg = int(rng.integers(m, m + 6))
            else:
                deg = _power_law_degree(rng, 1, max(m - 1, 1), MAJORITY_POWER)
            items = [int(i) for i in rng.integers(0, n_items, deg)]
        elif u in minority_users:
            if rng.uniform() < 0.5:
                deg = int(rng.integers(m + 1, m + 1 + MINORITY_LOW_DEGREE_SPREAD))
            else:
                deg = int(rng.integers(*MINORITY_HIGH_DEGREE))
            k_rare = min(int(m + rng.integers(0, MINORITY_EXTRA_RARE)), deg, n_rare)
            rare = rng.choice_without_replacement(rare_pool, k_rare)
            rest = rng.integers(0, len(common_pool), deg - k_rare)
            items = [int(i) for i in rare] + [int(common_pool[i]) for i in rest]
        else:
            deg = _power_law_degree(rng, 1, MAJORITY_MAX_DEGREE, MAJORITY_POWER)
            # up to m-1 distinct rare items, biased to small counts
            k_rare = min(int(rng.choice_weighted([0, 1, 2], p=MAJORITY_RARE_PROBS)),
                         m - 1, deg)
            rare = rng.choice_without_replacement(rare_pool, k_rare)
            rest = rng.integers(0, len(common_pool), deg - k_rare)
            items = [int(i) for i in rare] + [int(common_pool[i]) for i in rest]
        user_items.append(items)

    # --- labels from the planted pattern (before noise) ------------------
    labels = np.zeros(n_users, dtype=np.int64)
    for u in range(n_users):
        if pat.kind == "min_degree":
            hit = len(user_items[u]) >= m
        else:
            distinct_rare = len({i for i in user_items[u] if i < n_rare})
            hit = distinct_rare >= m
        labels[u] = int(hit)
    if cfg.label_noise > 0:
        flips = rng.uniform(size=n_users) < cfg.label_noise
        labels = np.where(flips, 1 - labels, labels)

    stats = compute_imbalance_stats(labels.tolist())
    if stats.single_class or abs(stats.ratio - cfg.imbalance_ratio) > 0.1 * cfg.imbalance_ratio:
        raise ConfigError(
            f"achieved imbalance ratio {stats.ratio:.3f} outside +-10% of "
            f"{cfg.imbalance_ratio}")

    # --- features: pure noise, independent of labels ---------------------
    u_num1 = rng.normal(0.0, cfg.feature_noise, n_users)
    u_num2 = rng.normal(0.0, cfg.feature_noise, n_users)
    u_cat = [f"seg{int(rng.integers(0, 6))}" for _ in range(n_users)]

    # --- assemble tables --------------------------------------------------
    users_schema = TableSchema("users", (
        ColumnSpec("user_id", "primary_key"),
        ColumnSpec("age_score", "numeric"),
        ColumnSpec("activity_score", "numeric"),
        ColumnSpec("segment", "categorical"),
    ))
    items_schema = TableSchema("items", (
        ColumnSpec("item_id", "primary_key"),
        ColumnSpec("category", "categorical"),
        ColumnSpec("popularity", "numeric"),
    ))
    inter_schema = TableSchema("interactions", (
        ColumnSpec("inter_id", "primary_key"),
        ColumnSpec("user_id", "foreign_key", "users"),
        ColumnSpec("item_id", "foreign_key", "items"),
        ColumnSpec("ts", "timestamp"),
        ColumnSpec("rating", "numeric"),
    ))

    user_rows = [(f"u{u}", float(u_num1[u]), float(u_num2[u]), u_cat[u])
                 for u in range(n_users)]
    item_rows = [(f"i{i}", item_cat[i], float(item_num[i])) for i in range(n_items)]
    inter_rows = []
    t0 = 1_600_000_000
    k = 0
    for u in range(n_users):
        for it in user_items[u]:
            ts = t0 + int(rng.integers(0, 365)) * 86400 + int(rng.integers(0, 86400))
            inter_rows.append((f"x{k}", f"u{u}", f"i{it}", ts, float(rng.normal())))
            k += 1

    db = RelationalDatabase(
        schemas=[users_schema, items_schema, inter_schema],
        rows={"users": user_rows, "items": item_rows, "interactions": inter_rows},
        links=[Link("interactions", "user_id", "users"),
               Link("interactions", "item_id", "items")],
    )

    splits = _stratified_splits(labels, cfg.split_fractions, rng)
    return db, labels, splits


def _stratified_splits(labels: np.ndarray, fractions, rng: Rng) -> dict[str, np.ndarray]:
    """Label-stratified train/val/test split, deterministic per rng state."""
    out = {"train": [], "val": [], "test": []}
    for cls in (0, 1):
        ids = np.flatnonzero(labels == cls)
        ids = ids[rng.permutation(len(ids))]
        n = len(ids)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        out["train"].extend(ids[:n_train])
        out["val"].extend(ids[n_train:n_train + n_val])
        out["test"].extend(ids[n_train + n_val:])
    return {k: np.asarray(sorted(v), dtype=np.int64) for k, v in out.items()}


def describe(cfg: SynthConfig) -> str:
    cfg.validate()
    n_min = round(cfg.n_users / (1.0 + cfg.imbalance_ratio))
    pat = cfg.pattern
    if pat.kind == "rare_2hop":
        pat_desc = (f"minority = user reaching >= {pat.threshold} distinct "
                    f"rare-category items (2-hop)")
    else:
        pat_desc = f"minority = user with >= {pat.threshold} interactions (fan-in)"
    lines = [
        "synthetic relational benchmark",
        f"  tables: users ({cfg.n_users} rows), items ({cfg.n_items} rows), "
        "interactions (one row per user-item event)",
        "  relations: interactions.user_id -> users, interactions.item_id -> items",
        f"  imbalance ratio: {cfg.imbalance_ratio} "
        f"({'balanced' if cfg.imbalance_ratio == 1 else f'~{n_min} minority users'})",
        f"  pattern: {pat_desc}",
        f"  label noise: {cfg.label_noise}, feature noise: {cfg.feature_noise}, "
        f"seed: {cfg.seed}",
    ]
    return "\n".join(lines)


def emit_dataset(cfg: SynthConfig, out_dir: str) -> str:
    """Write manifest, CSVs, labels and provenance; returns the manifest path."""
    db, labels, splits = generate(cfg)
    manifest_path = save_database(db, out_dir)

    split_of = {}
    for name, ids in splits.items():
        for i in ids:
            split_of[int(i)] = name
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        fh.write("entity_id,label,split\n")
        for u in range(cfg.n_users):
            fh.write(f"u{u},{int(labels[u])},{split_of[u]}\n")

    provenance = {
        "config": {
            "n_users": cfg.n_users,
            "n_items": cfg.n_items,
            "imbalance_ratio": cfg.imbalance_ratio,
            "pattern": {"kind": cfg.pattern.kind, "threshold": cfg.pattern.threshold},
            "feature_noise": cfg.feature_noise,
            "label_noise": cfg.label_noise,
            "seed": cfg.seed,
            "split_fractions": list(cfg.split_fractions),
        },
        "achieved_ratio": compute_imbalance_stats(labels.tolist()).ratio,
        "target_table": "users",
    }
    with open(os.path.join(out_dir, "provenance.json"), "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
    return manifest_path
