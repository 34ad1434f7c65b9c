"""Typed tabular data: schema, CSV loading, splitting and bootstrap resampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

# Numeric integer columns with at most this many distinct values are
# inferred categorical when no sidecar says otherwise.
MAX_INFERRED_CARDINALITY = 20

MISSING_MARKERS = ("", "?")


class DatasetError(ValueError):
    """Raised for malformed input files or schema violations."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    cardinality: int | None = None
    # For categorical columns parsed from text: original value of each code,
    # so separately loaded files map onto the same codes. None means the
    # column already holds integer codes.
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DatasetError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.cardinality is None or self.cardinality < 1:
                raise DatasetError(f"column {self.name!r}: categorical needs cardinality >= 1")
            if self.categories is not None and len(self.categories) > self.cardinality:
                raise DatasetError(f"column {self.name!r}: more categories than cardinality")
        elif self.cardinality is not None:
            raise DatasetError(f"column {self.name!r}: continuous column has a cardinality")


@dataclass(frozen=True)
class Schema:
    """Ordered column descriptions plus the index of the class column."""

    columns: tuple[Column, ...]
    target_index: int

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.columns):
            raise DatasetError("target_index out of range")
        tgt = self.columns[self.target_index]
        if tgt.kind != CATEGORICAL or tgt.cardinality < 2:
            raise DatasetError("target column must be categorical with cardinality >= 2")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate column names")

    @property
    def target(self) -> Column:
        return self.columns[self.target_index]

    @property
    def n_classes(self) -> int:
        return self.target.cardinality

    @property
    def features(self) -> tuple[Column, ...]:
        """Feature columns in file order, target removed."""
        return tuple(c for i, c in enumerate(self.columns) if i != self.target_index)

    @property
    def n_features(self) -> int:
        return len(self.columns) - 1

    def feature_kinds(self) -> list[str]:
        return [c.kind for c in self.features]

    def continuous_features(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.features) if c.kind == CONTINUOUS], dtype=np.intp)

    def categorical_features(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.features) if c.kind == CATEGORICAL], dtype=np.intp)

    def decode_label(self, code: int) -> str:
        cats = self.target.categories
        return cats[code] if cats is not None else str(code)


@dataclass(frozen=True)
class DataTable:
    """Immutable (X, y) pair conforming to a schema.

    X holds one column per feature in schema feature order; categorical
    cells are integer codes stored as floats, NaN marks a missing cell
    (only permitted when loaded with allow_missing). y may be None for
    unlabeled inference-time tables.
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if X.ndim != 2 or X.shape[1] != self.schema.n_features:
            raise DatasetError(f"X must be (n, {self.schema.n_features})")
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "y", y)
            if y.shape != (X.shape[0],):
                raise DatasetError("y length mismatch")
            if len(y) and (y.min() < 0 or y.max() >= self.schema.n_classes):
                raise DatasetError("class label out of range")
        for j, col in enumerate(self.schema.features):
            colvals = X[:, j]
            obs = colvals[~np.isnan(colvals)]
            if col.kind == CONTINUOUS:
                if not np.all(np.isfinite(obs)):
                    raise DatasetError(f"column {col.name!r}: non-finite continuous value")
            else:
                if len(obs) and (np.any(obs != np.floor(obs)) or obs.min() < 0 or obs.max() >= col.cardinality):
                    raise DatasetError(f"column {col.name!r}: category code out of [0, {col.cardinality})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> np.ndarray:
        if self.y is None:
            raise DatasetError("table has no labels")
        return self.y

    def subset(self, indices) -> "DataTable":
        idx = np.asarray(indices, dtype=np.intp)
        y = None if self.y is None else self.y[idx]
        return DataTable(self.schema, self.X[idx], y)


# ---------------------------------------------------------------------------
# sidecar schema files


def parse_sidecar(path) -> dict[str, str]:
    """Read a sidecar file of lines ``name: continuous|categorical:k|target``."""
    spec = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DatasetError(f"{path}:{lineno}: expected 'name: kind'")
            name, decl = line.split(":", 1)
            spec[name.strip()] = decl.strip()
    return spec


def _declared_column(name: str, decl: str) -> tuple[str, int | None]:
    decl = decl.strip().lower()
    if decl == CONTINUOUS:
        return CONTINUOUS, None
    if decl == "target":
        return "target", None
    if decl.startswith(CATEGORICAL):
        rest = decl[len(CATEGORICAL):]
        if not rest.startswith(":"):
            raise DatasetError(f"column {name!r}: categorical needs ':k'")
        try:
            k = int(rest[1:])
        except ValueError:
            raise DatasetError(f"column {name!r}: bad cardinality {rest[1:]!r}") from None
        if k < 2:
            raise DatasetError(f"column {name!r}: cardinality must be >= 2")
        return CATEGORICAL, k
    raise DatasetError(f"column {name!r}: unknown declaration {decl!r}")


# ---------------------------------------------------------------------------
# CSV loading


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append([cell.strip() for cell in row])
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return header, rows


def _numeric_or_none(cells: list[str]) -> np.ndarray | None:
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError:
        return None


def _infer_kind(cells: list[str]) -> tuple[str, list[str] | None]:
    """Apply the default typing rule to one column of observed cells.

    Non-numeric text is categorical. Numeric columns are continuous unless
    integer-valued with few distinct values. Returns (kind, categories).
    """
    values = _numeric_or_none(cells)
    if values is None:
        return CATEGORICAL, sorted(set(cells))
    distinct = np.unique(values)
    if np.all(distinct == np.floor(distinct)) and len(distinct) <= MAX_INFERRED_CARDINALITY:
        return CATEGORICAL, [str(int(v)) for v in distinct]
    return CONTINUOUS, None


def _encode_categorical(name, cells, missing_mask, cardinality, categories, path):
    """Map one column of text cells onto integer codes (NaN where missing)."""
    out = np.full(len(cells), np.nan)
    if categories is not None:
        lookup = {c: i for i, c in enumerate(categories)}
        for i, cell in enumerate(cells):
            if missing_mask[i]:
                continue
            key = cell
            if key not in lookup:
                # canonicalize numeric spellings like "3.0" -> "3"
                num = _numeric_or_none([cell])
                if num is not None and num[0] == np.floor(num[0]):
                    key = str(int(num[0]))
            if key not in lookup:
                raise DatasetError(f"{path}: column {name!r}: unseen category {cell!r}")
            out[i] = lookup[key]
        return out
    # no category table: cells must already be integer codes
    for i, cell in enumerate(cells):
        if missing_mask[i]:
            continue
        num = _numeric_or_none([cell])
        if num is None or num[0] != np.floor(num[0]):
            raise DatasetError(f"{path}: column {name!r}: expected integer code, got {cell!r}")
        code = int(num[0])
        if not 0 <= code < cardinality:
            raise DatasetError(f"{path}: column {name!r}: code {code} outside [0, {cardinality})")
        out[i] = code
    return out


def load_csv(path, sidecar=None, target: str | None = None,
             schema: Schema | None = None, allow_missing: bool = False,
             require_labels: bool = True) -> DataTable:
    """Load a comma-separated file (header row required) into a DataTable.

    sidecar may be a path to a schema sidecar file or an already-parsed
    dict; it overrides type inference per column. target names the class
    column (default: sidecar 'target' entry, else the last column). When
    schema is given the file must conform to it (same feature columns by
    name, categories mapped through the stored tables); the target column
    may then be absent, yielding an unlabeled table.

    Missing cells ('' or '?') are rejected unless allow_missing is set;
    they are only meaningful at inference time, where the circuit
    marginalizes them out.
    """
    header, rows = _read_rows(path)
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    n = len(rows)

    if schema is not None:
        return _load_conforming(path, header, cols, n, schema, allow_missing, require_labels)

    if isinstance(sidecar, (str, bytes)) or hasattr(sidecar, "__fspath__"):
        sidecar = parse_sidecar(sidecar)
    declared = dict(sidecar) if sidecar else {}
    for name in declared:
        if name not in cols:
            raise DatasetError(f"{path}: sidecar names unknown column {name!r}")

    target_name = target
    for name, decl in declared.items():
        if decl.strip().lower() == "target":
            if target is not None and target != name:
                raise DatasetError(f"{path}: target flag {target!r} conflicts with sidecar {name!r}")
            target_name = name
    if target_name is None:
        target_name = header[-1]
    if target_name not in cols:
        raise DatasetError(f"{path}: target column {target_name!r} not in header")

    columns = []
    data = np.empty((n, len(header)), dtype=np.float64)
    for i, name in enumerate(header):
        cells = cols[name]
        missing = np.array([c in MISSING_MARKERS for c in cells])
        if missing.any():
            row_no = int(np.argmax(missing)) + 2
            raise DatasetError(f"{path}:{row_no}: missing value in column {name!r} (training data must be complete)")
        decl = declared.get(name)
        if name == target_name:
            kind, cats = _infer_kind(cells)
            cats = cats if kind == CATEGORICAL else sorted(set(cells))
            if len(cats) < 2:
                raise DatasetError(f"{path}: target column {name!r} has a single class")
            columns.append(Column(name, CATEGORICAL, len(cats), tuple(cats)))
            data[:, i] = _encode_categorical(name, cells, missing, len(cats), cats, path)
            continue
        if decl is not None and decl.strip().lower() != "target":
            kind, card = _declared_column(name, decl)
        else:
            kind, cats = _infer_kind(cells)
            card = len(cats) if cats is not None else None
        if kind == CONTINUOUS:
            values = _numeric_or_none(cells)
            if values is None:
                bad = next(c for c in cells if _numeric_or_none([c]) is None)
                raise DatasetError(f"{path}: column {name!r}: non-numeric value {bad!r} in continuous column")
            if not np.all(np.isfinite(values)):
                raise DatasetError(f"{path}: column {name!r}: non-finite value")
            columns.append(Column(name, CONTINUOUS))
            data[:, i] = values
        else:
            if decl is not None:
                # declared cardinality: integer codes, or text mapped onto <= k categories
                if _numeric_or_none(cells) is not None:
                    columns.append(Column(name, CATEGORICAL, card))
                    data[:, i] = _encode_categorical(name, cells, missing, card, None, path)
                else:
                    cats = sorted(set(cells))
                    if len(cats) > card:
                        raise DatasetError(f"{path}: column {name!r}: {len(cats)} categories exceed declared {card}")
                    columns.append(Column(name, CATEGORICAL, card, tuple(cats)))
                    data[:, i] = _encode_categorical(name, cells, missing, card, cats, path)
            else:
                cats = _infer_kind(cells)[1]
                columns.append(Column(name, CATEGORICAL, len(cats), tuple(cats)))
                data[:, i] = _encode_categorical(name, cells, missing, len(cats), cats, path)

    target_index = header.index(target_name)
    schema = Schema(tuple(columns), target_index)
    feat_idx = [i for i in range(len(header)) if i != target_index]
    return DataTable(schema, data[:, feat_idx], data[:, target_index].astype(np.int64))


def _load_conforming(path, header, cols, n, schema: Schema, allow_missing, require_labels):
    X = np.empty((n, schema.n_features), dtype=np.float64)
    for j, col in enumerate(schema.features):
        if col.name not in cols:
            raise DatasetError(f"{path}: missing feature column {col.name!r}")
        cells = cols[col.name]
        missing = np.array([c in MISSING_MARKERS for c in cells])
        if missing.any() and not allow_missing:
            row_no = int(np.argmax(missing)) + 2
            raise DatasetError(f"{path}:{row_no}: missing value in column {col.name!r}")
        if col.kind == CONTINUOUS:
            vals = np.full(n, np.nan)
            for i, cell in enumerate(cells):
                if missing[i]:
                    continue
                v = _numeric_or_none([cell])
                if v is None:
                    raise DatasetError(f"{path}: column {col.name!r}: non-numeric value {cell!r}")
                vals[i] = v[0]
            X[:, j] = vals
        else:
            X[:, j] = _encode_categorical(col.name, cells, missing, col.cardinality, col.categories, path)

    tgt = schema.target
    if tgt.name not in cols:
        if require_labels:
            raise DatasetError(f"{path}: missing target column {tgt.name!r}")
        return DataTable(schema, X, None)
    cells = cols[tgt.name]
    missing = np.array([c in MISSING_MARKERS for c in cells])
    if missing.any():
        raise DatasetError(f"{path}: missing value in target column {tgt.name!r}")
    y = _encode_categorical(tgt.name, cells, missing, tgt.cardinality, tgt.categories, path)
    return DataTable(schema, X, y.astype(np.int64))


# ---------------------------------------------------------------------------
# resampling


def train_test_split(table: DataTable, test_fraction: float, seed: int) -> tuple[DataTable, DataTable]:
    """Disjoint shuffle split; |test| = round(test_fraction * n)."""
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must be in (0, 1)")
    n = table.n
    n_test = int(np.floor(test_fraction * n + 0.5))
    if n_test < 1 or n - n_test < 1:
        raise DatasetError(f"test_fraction {test_fraction} leaves an empty side for n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return table.subset(train_idx), table.subset(test_idx)


def bootstrap_sample(table: DataTable, seed: int) -> tuple[DataTable, np.ndarray]:
    """n rows drawn uniformly with replacement, plus the never-drawn (OOB) indices."""
    return bootstrap_indices_sample(table, seed)[0:2]


def bootstrap_indices(n: int, seed) -> np.ndarray:
    if n < 1:
        raise DatasetError("cannot bootstrap an empty table")
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=n)


def bootstrap_indices_sample(table: DataTable, seed) -> tuple[DataTable, np.ndarray, np.ndarray]:
    """Like bootstrap_sample but also returns the drawn index vector itself."""
    idx = bootstrap_indices(table.n, seed)
    oob = np.setdiff1d(np.arange(table.n), idx)
    return table.subset(idx), oob, idx
