"""Loading labeled/scored datasets and joining them with protected attributes.

Tables are column-oriented and immutable: every numpy buffer handed out is
marked read-only, so tables and views can be shared between worker threads
and projected without copying.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DisjointKeys,
    DuplicateProtectedKey,
    EmptyInput,
    EmptyProjection,
    MissingColumn,
    TypeCoercion,
)

UNKNOWN = "UNKNOWN"

_LABEL_TOKENS = {"0": 0, "1": 1, "true": 1, "false": 0}


def _category(value) -> str:
    if value is None or (isinstance(value, str) and value.strip() == ""):
        return UNKNOWN
    return str(value)


def _readonly(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.view()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Schema:
    uid_field: str
    label_field: str | None = None
    score_field: str | None = None
    attribute_fields: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attribute_fields", tuple(self.attribute_fields))
        if not self.uid_field:
            raise ValueError("uid_field must be non-empty")
        if self.uid_field in self.attribute_fields:
            raise ValueError(f"uid field {self.uid_field!r} cannot also be a protected attribute")

    @property
    def columns(self) -> tuple[str, ...]:
        cols = [self.uid_field]
        if self.label_field:
            cols.append(self.label_field)
        if self.score_field:
            cols.append(self.score_field)
        cols.extend(self.attribute_fields)
        return tuple(cols)


class CategoricalColumn:
    """Dictionary-encoded string column: int32 codes into sorted categories."""

    __slots__ = ("codes", "categories")

    def __init__(self, codes: np.ndarray, categories: Sequence[str]):
        self.codes = _readonly(np.asarray(codes, dtype=np.int32))
        self.categories = tuple(categories)

    @classmethod
    def from_values(cls, values: Iterable) -> "CategoricalColumn":
        lookup: dict[str, int] = {}
        first_seen = [lookup.setdefault(_category(v), len(lookup)) for v in values]
        return cls._sorted(np.array(first_seen, dtype=np.int32), list(lookup))

    @classmethod
    def concat(cls, parts: Sequence["CategoricalColumn"]) -> "CategoricalColumn":
        """Concatenate columns encoded against different category sets."""
        merged = {c for p in parts for c in p.categories}
        cats = sorted(merged)
        pos = {c: i for i, c in enumerate(cats)}
        codes = [np.array([pos[c] for c in p.categories], dtype=np.int32)[p.codes]
                 for p in parts]
        return cls(np.concatenate(codes) if codes else np.empty(0, np.int32), cats)

    @classmethod
    def _sorted(cls, codes: np.ndarray, categories: list) -> "CategoricalColumn":
        order = sorted(range(len(categories)), key=categories.__getitem__)
        remap = np.empty(len(categories), dtype=np.int32)
        remap[order] = np.arange(len(categories), dtype=np.int32)
        return cls(remap[codes] if len(codes) else codes, [categories[i] for i in order])

    def __len__(self) -> int:
        return len(self.codes)

    def __getitem__(self, idx) -> "CategoricalColumn":
        return CategoricalColumn(self.codes[idx], self.categories)

    def take(self, idx: np.ndarray) -> "CategoricalColumn":
        return CategoricalColumn(self.codes[idx], self.categories)

    def to_array(self) -> np.ndarray:
        return np.array(self.categories, dtype=object)[self.codes]

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes

    def __eq__(self, other):
        if not isinstance(other, CategoricalColumn):
            return NotImplemented
        return self.categories == other.categories and np.array_equal(self.codes, other.codes)

    def __repr__(self):
        return f"CategoricalColumn(n={len(self)}, categories={self.categories!r})"


def _take(col, idx):
    if isinstance(col, CategoricalColumn):
        return col.take(idx)
    return _readonly(col[idx])


class ColumnarTable:
    """Immutable mapping of column name to equal-length column."""

    def __init__(self, columns: Mapping[str, object]):
        cols = {}
        n = None
        for name, col in columns.items():
            if not isinstance(col, CategoricalColumn):
                col = _readonly(np.asarray(col))
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise ValueError(f"column {name!r} has length {len(col)}, expected {n}")
            cols[name] = col
        self._columns = cols
        self.row_count = n or 0

    @property
    def columns(self) -> Mapping[str, object]:
        return dict(self._columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self._columns)

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __getitem__(self, name):
        try:
            return self._columns[name]
        except KeyError:
            raise MissingColumn(f"no column {name!r}; have {list(self._columns)}") from None

    def __len__(self) -> int:
        return self.row_count

    def slice(self, start: int, stop: int) -> "ColumnarTable":
        return ColumnarTable({k: v[start:stop] for k, v in self._columns.items()})

    def take(self, idx: np.ndarray) -> "ColumnarTable":
        return ColumnarTable({k: _take(v, idx) for k, v in self._columns.items()})

    def select(self, names: Sequence[str]) -> "ColumnarTable":
        return ColumnarTable({n: self[n] for n in names})

    @property
    def nbytes(self) -> int:
        return sum(c.nbytes for c in self._columns.values())

    def __repr__(self):
        return f"ColumnarTable(rows={self.row_count}, columns={list(self._columns)})"


# --- loading ----------------------------------------------------------------

def _coerce_label(value, row):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int) and value in (0, 1):
        return value
    if isinstance(value, str):
        tok = _LABEL_TOKENS.get(value.strip().lower())
        if tok is not None:
            return tok
    raise TypeCoercion(f"row {row}: label {value!r} is not one of 0/1/true/false")


def _coerce_score(value, row):
    if isinstance(value, bool) or value is None:
        raise TypeCoercion(f"row {row}: unparseable score {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise TypeCoercion(f"row {row}: unparseable score {value!r}") from None


def _label_batch(values: list, offset: int) -> np.ndarray:
    if values and isinstance(values[0], str):
        arr = np.asarray(values)
        if arr.dtype.kind == "U":
            ones = arr == "1"
            if np.all(ones | (arr == "0")):
                return ones.astype(np.int64)
    return np.array([_coerce_label(v, offset + i) for i, v in enumerate(values)], dtype=np.int64)


def _score_batch(values: list, offset: int) -> np.ndarray:
    if not any(v is None or isinstance(v, bool) for v in values):
        try:
            return np.asarray(values, dtype=np.float64)
        except (TypeError, ValueError):
            pass
    return np.array([_coerce_score(v, offset + i) for i, v in enumerate(values)],
                    dtype=np.float64)


def _uid_batch(values: list, offset: int, name: str) -> np.ndarray:
    arr = np.asarray(values) if values and isinstance(values[0], str) else None
    if arr is None or arr.dtype.kind != "U":
        arr = np.empty(len(values), dtype=object)
        arr[:] = values
    empty = np.flatnonzero(arr == "") if arr.dtype.kind == "U" else [
        i for i, v in enumerate(values) if v is None or v == ""]
    if len(empty):
        raise TypeCoercion(f"row {offset + int(empty[0])}: null value in uid column {name!r}")
    return arr


def _finish_uid(parts: list) -> np.ndarray:
    """int64 when every uid parses as an integer, otherwise strings."""
    if parts and all(p.dtype.kind == "U" for p in parts):
        arr = np.concatenate(parts)
        try:
            return arr.astype(np.int64)
        except (ValueError, OverflowError):
            return arr.astype(object)
    values = [v for p in parts for v in p.tolist()]
    if all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        return np.array(values, dtype=np.int64)
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except (TypeError, ValueError, OverflowError):
        return np.array([str(v) for v in values], dtype=object)


def _csv_batches(path, wanted, batch_rows):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: no header row") from None
        index = {name: i for i, name in enumerate(header)}
        for name in wanted:
            if name not in index:
                raise MissingColumn(f"{path}: column {name!r} not in header {header}")
        picks = [(name, index[name]) for name in wanted]
        width = len(header)
        batch = {name: [] for name in wanted}
        count = 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise TypeCoercion(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            for name, i in picks:
                batch[name].append(rec[i])
            count += 1
            if count == batch_rows:
                yield batch
                batch = {name: [] for name in wanted}
                count = 0
        if count:
            yield batch


def _jsonl_batches(path, wanted, batch_rows):
    batch = {name: [] for name in wanted}
    seen = set()
    rows = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TypeCoercion(f"{path}:{lineno}: {exc}") from None
            if not isinstance(rec, dict):
                raise TypeCoercion(f"{path}:{lineno}: expected a JSON object")
            seen.update(k for k in wanted if k in rec)
            for name in wanted:
                batch[name].append(rec.get(name))
            rows += 1
            if len(batch[wanted[0]]) == batch_rows:
                yield batch
                batch = {name: [] for name in wanted}
    missing = [k for k in wanted if k not in seen]
    if rows and missing:
        raise MissingColumn(f"{path}: columns {missing} absent from every record")
    if batch[wanted[0]]:
        yield batch


LOAD_BATCH_ROWS = 262_144


def load_table(path, schema: Schema, format: str | None = None,
               batch_rows: int = LOAD_BATCH_ROWS) -> ColumnarTable:
    """Read `path` and return only the columns named by `schema`.

    `format` is ``"csv"`` or ``"jsonl"``; when omitted it is taken from the
    file extension (``.jsonl``/``.json`` mean JSON-lines, anything else CSV).
    Rows are parsed in batches so raw strings never pile up for the whole file.
    """
    path = os.fspath(path)
    if format is None:
        format = "jsonl" if path.endswith((".jsonl", ".json", ".ndjson")) else "csv"
    wanted = list(dict.fromkeys(schema.columns))
    if format == "csv":
        batches = _csv_batches(path, wanted, batch_rows)
    elif format == "jsonl":
        batches = _jsonl_batches(path, wanted, batch_rows)
    else:
        raise ValueError(f"unsupported format {format!r}")

    parts = {name: [] for name in wanted}
    offset = 0
    for batch in batches:
        parts[schema.uid_field].append(_uid_batch(batch[schema.uid_field], offset,
                                                  schema.uid_field))
        if schema.label_field:
            parts[schema.label_field].append(_label_batch(batch[schema.label_field], offset))
        if schema.score_field:
            parts[schema.score_field].append(_score_batch(batch[schema.score_field], offset))
        for name in schema.attribute_fields:
            parts[name].append(CategoricalColumn.from_values(batch[name]))
        offset += len(batch[schema.uid_field])
    if offset == 0:
        raise EmptyInput(f"{path}: no data rows")

    cols = {schema.uid_field: _finish_uid(parts[schema.uid_field])}
    for name in (schema.label_field, schema.score_field):
        if name:
            cols[name] = np.concatenate(parts[name])
    for name in schema.attribute_fields:
        cols[name] = CategoricalColumn.concat(parts[name])
    return ColumnarTable(cols)


# --- joined view ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JoinedView:
    """Rows of the primary dataset that found a protected-attribute record.

    `base` holds uid/label/score, `attributes` the protected columns aligned
    row-for-row with `base`.
    """

    base: ColumnarTable
    attributes: Mapping[str, CategoricalColumn]
    uid_field: str
    label_field: str | None = None
    score_field: str | None = None
    matched_rows: int = 0
    dropped_rows: int = 0
    _group_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_columns(cls, uid, attributes: Mapping[str, Sequence], label=None, score=None,
                     uid_field="uid", label_field="label", score_field="score") -> "JoinedView":
        """Build a view directly from in-memory arrays (fixtures, notebooks)."""
        cols = {uid_field: np.asarray(uid)}
        if label is not None:
            cols[label_field] = np.asarray(label, dtype=np.int64)
        if score is not None:
            cols[score_field] = np.asarray(score, dtype=np.float64)
        attrs = {k: v if isinstance(v, CategoricalColumn) else CategoricalColumn.from_values(v)
                 for k, v in attributes.items()}
        base = ColumnarTable(cols)
        return cls(base, attrs, uid_field,
                   label_field if label is not None else None,
                   score_field if score is not None else None,
                   matched_rows=base.row_count, dropped_rows=0)

    @property
    def row_count(self) -> int:
        return self.base.row_count

    def __len__(self) -> int:
        return self.row_count

    @property
    def attribute_fields(self) -> tuple[str, ...]:
        return tuple(self.attributes)

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.base.column_names + tuple(self.attributes)

    def column(self, name: str):
        if name in self.attributes:
            return self.attributes[name]
        return self.base[name]

    @property
    def labels(self) -> np.ndarray:
        if not self.label_field:
            raise MissingColumn("view has no label column")
        return self.base[self.label_field]

    @property
    def scores(self) -> np.ndarray:
        if not self.score_field:
            raise MissingColumn("view has no score column")
        return self.base[self.score_field]

    @property
    def nbytes(self) -> int:
        return self.base.nbytes + sum(c.nbytes for c in self.attributes.values())

    def _derive(self, base, attributes) -> "JoinedView":
        return JoinedView(base, attributes, self.uid_field, self.label_field, self.score_field,
                          base.row_count, 0)

    def slice(self, start: int, stop: int) -> "JoinedView":
        return self._derive(self.base.slice(start, stop),
                            {k: v[start:stop] for k, v in self.attributes.items()})

    def take(self, idx: np.ndarray) -> "JoinedView":
        return self._derive(self.base.take(idx), {k: v.take(idx) for k, v in self.attributes.items()})

    def with_scores(self, scores: np.ndarray) -> "JoinedView":
        cols = self.base.columns
        cols[self.score_field] = scores
        return JoinedView(ColumnarTable(cols), self.attributes, self.uid_field, self.label_field,
                          self.score_field, self.matched_rows, self.dropped_rows)

    def group_index(self, fields: Sequence[str] | None = None):
        """Cross-product group codes for `fields` (all attributes by default).

        Returns ``(codes, groups)`` where ``groups[k]`` is the attribute-value
        tuple for code ``k``. Every combination of categories gets a code,
        observed or not.
        """
        fields = tuple(fields) if fields else self.attribute_fields
        cached = self._group_cache.get(fields)
        if cached is not None:
            return cached
        for f in fields:
            if f not in self.attributes:
                raise MissingColumn(f"no protected attribute {f!r}; have {list(self.attributes)}")
        cols = [self.attributes[f] for f in fields]
        codes = np.zeros(self.row_count, dtype=np.int64)
        for col in cols:
            codes = codes * len(col.categories) + col.codes
        groups = [()]
        for col in cols:
            groups = [g + (c,) for g in groups for c in col.categories]
        result = (_readonly(codes), groups)
        self._group_cache[fields] = result
        return result


def join_protected(data: ColumnarTable, protected: ColumnarTable, data_key: str,
                   protected_key: str, label_field: str | None = None,
                   score_field: str | None = None) -> JoinedView:
    """Inner-join `data` with `protected` on the given keys.

    Output keeps the data table's row order. Every non-key column of the
    protected table becomes a protected attribute.
    """
    dkeys = data[data_key]
    pkeys = protected[protected_key]
    if isinstance(dkeys, CategoricalColumn):
        dkeys = dkeys.to_array()
    if isinstance(pkeys, CategoricalColumn):
        pkeys = pkeys.to_array()
    if dkeys.dtype != pkeys.dtype:
        dkeys = dkeys.astype(str).astype(object)
        pkeys = pkeys.astype(str).astype(object)

    sorter = np.argsort(pkeys, kind="stable")
    sorted_keys = pkeys[sorter]
    if len(sorted_keys) > 1:
        dup = sorted_keys[1:] == sorted_keys[:-1]
        if dup.any():
            raise DuplicateProtectedKey(
                f"protected key {sorted_keys[1:][dup][0]!r} appears more than once")
    pos = np.searchsorted(sorted_keys, dkeys)
    pos_c = np.minimum(pos, len(sorted_keys) - 1)
    hit = (pos < len(sorted_keys)) & (sorted_keys[pos_c] == dkeys)
    rows = np.flatnonzero(hit)
    if rows.size == 0:
        raise DisjointKeys(f"no {data_key!r} value matches any {protected_key!r} value")
    prow = sorter[pos_c[rows]]

    attr_names = [c for c in protected.column_names if c != protected_key]
    clash = [c for c in attr_names if c in data]
    if clash:
        raise ValueError(f"columns {clash} present in both data and protected tables")
    attrs = {}
    for name in attr_names:
        col = protected[name]
        if not isinstance(col, CategoricalColumn):
            col = CategoricalColumn.from_values(col.tolist())
        attrs[name] = col.take(prow)

    base = data.take(rows)
    if label_field is None:
        label_field = next((c for c in base.column_names
                            if c != data_key and base[c].dtype == np.int64), None)
    if score_field is None:
        score_field = next((c for c in base.column_names
                            if c != data_key and base[c].dtype == np.float64), None)
    return JoinedView(base, attrs, data_key, label_field, score_field,
                      matched_rows=int(rows.size), dropped_rows=int(data.row_count - rows.size))


def load_and_join(data_path, protected_path, schema: Schema, protected_key: str,
                  data_format=None, protected_format=None) -> JoinedView:
    data_schema = Schema(schema.uid_field, schema.label_field, schema.score_field, ())
    prot_schema = Schema(protected_key, attribute_fields=schema.attribute_fields)
    data = load_table(data_path, data_schema, data_format)
    prot = load_table(protected_path, prot_schema, protected_format)
    return join_protected(data, prot, schema.uid_field, protected_key,
                          schema.label_field, schema.score_field)


def project(view: JoinedView, columns: Sequence[str]) -> ColumnarTable:
    """Narrow table of `columns`; buffers are shared read-only, never copied."""
    if not columns:
        raise EmptyProjection("projection needs at least one column")
    return ColumnarTable({name: view.column(name) for name in columns})
