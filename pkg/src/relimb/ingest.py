"""Relational database loading and validation.

A database is described by a JSON manifest plus one CSV file per table:

    {"tables": [{"name": ..., "file": ..., "columns": [
        {"name": ..., "modality": ..., "fk_target"?: ...}, ...]}]}

Modalities: ``numeric``, ``categorical``, ``timestamp``, ``primary_key``,
``foreign_key``. CSV dialect is comma-separated with double-quote escaping;
the first row is a header matching the schema column names exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

__all__ = [
    "SchemaError",
    "Modality",
    "ColumnSpec",
    "TableSchema",
    "RelationalDatabase",
    "Link",
    "IntegrityReport",
    "ImbalanceStats",
    "load_database",
    "save_database",
    "validate_referential_integrity",
    "compute_imbalance_stats",
]

MODALITIES = ("numeric", "categorical", "timestamp", "primary_key", "foreign_key")
Modality = str

# A row is a tuple of cells: float | str | int | None depending on modality.
RawEntity = tuple


class SchemaError(ValueError):
    """Manifest or data file violates the database contract."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    modality: Modality
    fk_target: str | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise SchemaError(f"unknown modality {self.modality!r} for column {self.name!r}")
        if (self.fk_target is not None) != (self.modality == "foreign_key"):
            raise SchemaError(
                f"column {self.name!r}: fk_target must be present iff modality is foreign_key")


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")
        pks = [c for c in self.columns if c.modality == "primary_key"]
        if len(pks) != 1:
            raise SchemaError(f"table {self.name!r}: expected exactly one primary_key column, "
                              f"found {len(pks)}")

    @property
    def pk_column(self) -> str:
        return next(c.name for c in self.columns if c.modality == "primary_key")

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class Link:
    """One FK relationship: src_table.fk_column references dst_table's PK."""

    src_table: str
    fk_column: str
    dst_table: str

    def key(self) -> str:
        return f"{self.src_table}.{self.fk_column}->{self.dst_table}"


@dataclass
class RelationalDatabase:
    schemas: list[TableSchema]
    rows: dict[str, list[RawEntity]]
    links: list[Link]
    parse_warnings: int = 0

    def schema(self, table: str) -> TableSchema:
        for s in self.schemas:
            if s.name == table:
                return s
        raise KeyError(table)

    def table_index(self, table: str) -> int:
        for i, s in enumerate(self.schemas):
            if s.name == table:
                return i
        raise KeyError(table)

    def pk_to_row(self, table: str) -> dict[str, int]:
        """Map trimmed PK string to row index."""
        schema = self.schema(table)
        pk_idx = schema.column_index(schema.pk_column)
        return {row[pk_idx]: i for i, row in enumerate(self.rows[table])}


@dataclass
class IntegrityReport:
    per_link: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def total_dangling(self) -> int:
        return sum(v["dangling"] for v in self.per_link.values())

    def to_json(self) -> str:
        return json.dumps(self.per_link, sort_keys=True)


def _parse_cell(raw: str, modality: Modality) -> tuple[object, bool]:
    """Parse one CSV cell; returns (value, parse_failed)."""
    raw = raw.strip()
    if raw == "":
        return None, False
    if modality == "numeric":
        try:
            return float(raw), False
        except ValueError:
            return None, True
    if modality == "timestamp":
        try:
            return int(float(raw)), False
        except ValueError:
            return None, True
    # categorical and key cells are kept as trimmed strings
    return raw, False


def _load_manifest(manifest_path: str) -> list[tuple[TableSchema, str]]:
    with open(manifest_path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "tables" not in doc:
        raise SchemaError("manifest must be a JSON object with a 'tables' list")
    out = []
    for trec in doc["tables"]:
        cols = tuple(
            ColumnSpec(c["name"], c["modality"], c.get("fk_target"))
            for c in trec["columns"]
        )
        out.append((TableSchema(trec["name"], cols), trec["file"]))
    names = [s.name for s, _ in out]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate table names in manifest")
    return out


def load_database(manifest_path: str, data_dir: str) -> RelationalDatabase:
    """Load a database from a manifest and per-table CSV files.

    Unparsable numeric/timestamp cells become nulls and bump
    ``parse_warnings``; duplicate PKs, missing files, header mismatches and
    wrong cell counts are fatal. Row order is preserved.
    """
    tables = _load_manifest(manifest_path)
    table_names = {s.name for s, _ in tables}

    schemas: list[TableSchema] = []
    rows: dict[str, list[RawEntity]] = {}
    links: list[Link] = []
    warnings = 0

    for schema, filename in tables:
        for col in schema.columns:
            if col.modality == "foreign_key" and col.fk_target not in table_names:
                raise SchemaError(
                    f"table {schema.name!r}: fk_target {col.fk_target!r} is not a table")

        path = os.path.join(data_dir, filename)
        if not os.path.exists(path):
            raise SchemaError(f"data file for table {schema.name!r} not found: {path}")

        table_rows: list[RawEntity] = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            expected = [c.name for c in schema.columns]
            if header != expected:
                raise SchemaError(
                    f"table {schema.name!r}: header {header} != schema columns {expected}")
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(schema.columns):
                    raise SchemaError(
                        f"table {schema.name!r} line {lineno}: expected "
                        f"{len(schema.columns)} cells, got {len(rec)}")
                cells = []
                for raw, col in zip(rec, schema.columns):
                    value, failed = _parse_cell(raw, col.modality)
                    warnings += int(failed)
                    cells.append(value)
                table_rows.append(tuple(cells))

        pk_idx = schema.column_index(schema.pk_column)
        seen: set[str] = set()
        for row in table_rows:
            pk = row[pk_idx]
            if pk is None:
                raise SchemaError(f"table {schema.name!r}: null primary key")
            if pk in seen:
                raise SchemaError(f"table {schema.name!r}: duplicate primary key {pk!r}")
            seen.add(pk)

        schemas.append(schema)
        rows[schema.name] = table_rows
        for col in schema.columns:
            if col.modality == "foreign_key":
                links.append(Link(schema.name, col.name, col.fk_target))

    return RelationalDatabase(schemas, rows, links, parse_warnings=warnings)


def _format_cell(value, modality: Modality) -> str:
    if value is None:
        return ""
    if modality == "numeric":
        return repr(float(value))
    if modality == "timestamp":
        return str(int(value))
    return str(value)


def save_database(db: RelationalDatabase, out_dir: str,
                  manifest_name: str = "manifest.json") -> str:
    """Write the manifest plus per-table CSVs; inverse of :func:`load_database`."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"tables": []}
    for schema in db.schemas:
        filename = f"{schema.name}.csv"
        manifest["tables"].append({
            "name": schema.name,
            "file": filename,
            "columns": [
                {"name": c.name, "modality": c.modality,
                 **({"fk_target": c.fk_target} if c.fk_target else {})}
                for c in schema.columns
            ],
        })
        with open(os.path.join(out_dir, filename), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([c.name for c in schema.columns])
            for row in db.rows[schema.name]:
                writer.writerow([_format_cell(v, c.modality)
                                 for v, c in zip(row, schema.columns)])
    manifest_path = os.path.join(out_dir, manifest_name)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest_path


def validate_referential_integrity(db: RelationalDatabase) -> IntegrityReport:
    """Count dangling and null FK cells per link; the database is unchanged."""
    report = IntegrityReport()
    for link in db.links:
        schema = db.schema(link.src_table)
        fk_idx = schema.column_index(link.fk_column)
        targets = db.pk_to_row(link.dst_table)
        dangling = 0
        null = 0
        for row in db.rows[link.src_table]:
            v = row[fk_idx]
            if v is None:
                null += 1
            elif v not in targets:
                dangling += 1
        report.per_link[link.key()] = {"dangling": dangling, "null": null}
    return report


@dataclass(frozen=True)
class ImbalanceStats:
    n_pos: int
    n_neg: int
    ratio: float
    single_class: bool = False


def compute_imbalance_stats(labels) -> ImbalanceStats:
    """Majority-over-minority class ratio of a binary label list."""
    labels = list(labels)
    if not labels:
        raise ValueError("labels must be non-empty")
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return ImbalanceStats(n_pos, n_neg, math.inf, single_class=True)
    return ImbalanceStats(n_pos, n_neg, max(n_pos, n_neg) / min(n_pos, n_neg))
