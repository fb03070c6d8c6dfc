"""Dataset ingestion, encoding, scaling, splitting and mask application."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"
INTERCEPT = "intercept"
RESPONSE = "response"

NA_TOKENS = frozenset({"", "na", "nan", "null", "none"})


class DataError(ValueError):
    """Raised for malformed input files or violated dataset invariants."""


@dataclass(frozen=True)
class Schema:
    """Column declaration read from a schema file.

    ``columns`` maps each CSV column to ``continuous``, ``binary`` or a list of
    categorical levels (first level is the dropped reference).
    """

    columns: dict
    response: str
    target: str | None = None
    add_intercept: bool = True

    def kind(self, name: str) -> str:
        spec = self.columns[name]
        return CATEGORICAL if isinstance(spec, (list, tuple)) else spec


def load_schema(path) -> Schema:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"schema file not found: {path}")
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, Mapping) or "columns" not in doc or "response" not in doc:
        raise DataError(f"{path}: schema needs 'columns' and 'response' keys")
    columns = {}
    for name, spec in doc["columns"].items():
        if isinstance(spec, Mapping):
            spec = list(spec.get(CATEGORICAL, []))
            if not spec:
                raise DataError(f"{path}: categorical column {name!r} lists no levels")
            spec = [str(level) for level in spec]
        elif spec not in (CONTINUOUS, BINARY):
            raise DataError(f"{path}: unknown kind {spec!r} for column {name!r}")
        columns[str(name)] = spec
    if doc["response"] not in columns:
        raise DataError(f"{path}: response {doc['response']!r} is not a declared column")
    target = doc.get("target")
    if target is not None and target not in columns:
        raise DataError(f"{path}: target {target!r} is not a declared column")
    return Schema(columns, str(doc["response"]), target, bool(doc.get("add_intercept", True)))


@dataclass(frozen=True)
class ColumnSchema:
    """Column layout shared by a Dataset and the PartialDataset derived from it."""

    column_names: tuple
    response_index: int
    feature_kinds: tuple
    intercept_added: bool = False

    def __post_init__(self):
        d = len(self.column_names)
        if len(self.feature_kinds) != d:
            raise DataError("feature_kinds length does not match column_names")
        if not 0 <= self.response_index < d:
            raise DataError(f"response_index {self.response_index} outside [0, {d})")
        n_int = sum(k == INTERCEPT for k in self.feature_kinds)
        if n_int != int(self.intercept_added):
            raise DataError("intercept_added disagrees with the intercept columns present")

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    @property
    def design_columns(self) -> tuple:
        """Indices of all non-response columns, in order."""
        return tuple(j for j in range(self.n_columns) if j != self.response_index)

    @property
    def intercept_index(self) -> int | None:
        for j, kind in enumerate(self.feature_kinds):
            if kind == INTERCEPT:
                return j
        return None

    def index(self, column) -> int:
        if isinstance(column, (int, np.integer)):
            if not 0 <= column < self.n_columns:
                raise DataError(f"column index {column} out of range")
            return int(column)
        try:
            return self.column_names.index(column)
        except ValueError:
            raise DataError(f"unknown column {column!r}") from None

    def indices(self, columns: Iterable) -> tuple:
        return tuple(sorted({self.index(c) for c in columns}))

    def to_dict(self) -> dict:
        return {
            "column_names": list(self.column_names),
            "response_index": self.response_index,
            "feature_kinds": list(self.feature_kinds),
            "intercept_added": self.intercept_added,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ColumnSchema":
        return cls(
            tuple(doc["column_names"]),
            int(doc["response_index"]),
            tuple(doc["feature_kinds"]),
            bool(doc["intercept_added"]),
        )


@dataclass(frozen=True)
class Dataset:
    """Fully observed N x d matrix Z with its column schema."""

    values: np.ndarray
    schema: ColumnSchema

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.schema.n_columns:
            raise DataError(f"values shape {values.shape} does not match schema")
        if not np.all(np.isfinite(values)):
            raise DataError("Dataset values must be finite and contain no NA")
        j = self.schema.intercept_index
        if j is not None and not np.all(values[:, j] == 1.0):
            raise DataError("intercept column must be all ones")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def column_names(self) -> tuple:
        return self.schema.column_names

    @property
    def response_index(self) -> int:
        return self.schema.response_index

    @property
    def X(self) -> np.ndarray:
        """Design matrix: every column except the response."""
        return self.values[:, list(self.schema.design_columns)]

    @property
    def y(self) -> np.ndarray:
        return self.values[:, self.schema.response_index]

    def take(self, rows) -> "Dataset":
        return Dataset(self.values[np.asarray(rows, dtype=np.intp)], self.schema)


@dataclass(frozen=True)
class PartialDataset:
    """Z-bar: the matrix with NaN marking the hidden entries."""

    values: np.ndarray
    origin_schema: ColumnSchema

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.origin_schema.n_columns:
            raise DataError(f"values shape {values.shape} does not match schema")
        if np.any(np.isinf(values)):
            raise DataError("PartialDataset values must be finite or NA")
        if np.any(np.isnan(values[:, self.origin_schema.response_index])):
            raise DataError("response column contains NA; the response is never masked")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def na_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def missing_rates(self) -> np.ndarray:
        return self.na_mask.mean(axis=0) if self.n_rows else np.zeros(self.values.shape[1])


@dataclass(frozen=True)
class MaskMatrix:
    """Binary observation mask R (1 = observed, 0 = hidden)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DataError("mask must be a 2-d array")
        if not np.all((bits == 0) | (bits == 1)):
            raise DataError("mask entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self):
        return self.bits.shape

    def check_columns(self, masked: Iterable[int], response_index: int) -> None:
        allowed = np.zeros(self.bits.shape[1], dtype=bool)
        allowed[list(masked)] = True
        if response_index < allowed.size and allowed[response_index]:
            raise DataError("the response column cannot be maskable")
        if np.any(self.bits[:, ~allowed] == 0):
            raise DataError("mask hides a column outside the masked set")


@dataclass(frozen=True)
class ScalerParams:
    """Per-column mean and population standard deviation."""

    mean: np.ndarray
    scale: np.ndarray
    excluded: frozenset = field(default_factory=frozenset)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "excluded": sorted(self.excluded),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScalerParams":
        return cls(
            np.asarray(doc["mean"], dtype=np.float64),
            np.asarray(doc["scale"], dtype=np.float64),
            frozenset(int(j) for j in doc["excluded"]),
        )


def _parse_float(cell: str, row: int, col: str) -> float:
    if cell.strip().lower() in NA_TOKENS:
        raise DataError(f"row {row}, column {col!r}: missing value {cell!r}; input must be complete")
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return value


def load_csv(path, schema: Schema) -> Dataset:
    """Read a complete CSV, one-hot encode categoricals (first level dropped).

    Indicator columns are appended after the numeric columns; an all-ones
    ``intercept`` column is appended last when ``schema.add_intercept``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    if sorted(header) != sorted(schema.columns):
        missing = set(schema.columns) - set(header)
        extra = set(header) - set(schema.columns)
        raise DataError(f"{path}: header does not match schema (missing {sorted(missing)}, extra {sorted(extra)})")
    if schema.kind(schema.response) == CATEGORICAL:
        raise DataError("a categorical response is not supported; declare it binary")

    numeric_names, numeric_cols, kinds = [], [], []
    indicator_names, indicator_cols = [], []
    for c, name in enumerate(header):
        kind = schema.kind(name)
        cells = []
        for r, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            cells.append(row[c].strip())
        if kind == CATEGORICAL:
            levels = schema.columns[name]
            for r, cell in enumerate(cells, start=2):
                if cell not in levels:
                    raise DataError(f"row {r}, column {name!r}: unknown level {cell!r}")
            for level in levels[1:]:
                indicator_names.append(f"{name}={level}")
                indicator_cols.append([1.0 if cell == level else 0.0 for cell in cells])
            continue
        col = [_parse_float(cell, r, name) for r, cell in enumerate(cells, start=2)]
        if kind == BINARY and any(v not in (0.0, 1.0) for v in col):
            raise DataError(f"column {name!r}: binary column holds values other than 0/1")
        numeric_names.append(name)
        numeric_cols.append(col)
        kinds.append(RESPONSE if name == schema.response else kind)

    names = numeric_names + indicator_names
    kinds += [BINARY] * len(indicator_names)
    cols = numeric_cols + indicator_cols
    if schema.add_intercept:
        names.append(INTERCEPT)
        kinds.append(INTERCEPT)
        cols.append([1.0] * len(body))
    values = np.array(cols, dtype=np.float64).T
    col_schema = ColumnSchema(tuple(names), names.index(schema.response), tuple(kinds), schema.add_intercept)
    return Dataset(values, col_schema)


def split(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint (train, audit) row partition; train gets round(f*N) rows."""
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    n = d.n_rows
    if n < 2:
        raise DataError("need at least two rows to split")
    n_train = int(math.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train = np.sort(perm[:n_train])
    audit = np.sort(perm[n_train:])
    return d.take(train), d.take(audit)


def default_scaling_exclusions(schema: ColumnSchema) -> frozenset:
    """Response, intercept and binary indicator columns."""
    return frozenset(j for j, kind in enumerate(schema.feature_kinds) if kind in (RESPONSE, INTERCEPT, BINARY))


def fit_scaler(values: np.ndarray, exclude: Iterable[int], names: Sequence[str] | None = None) -> ScalerParams:
    values = np.asarray(values, dtype=np.float64)
    exclude = frozenset(int(j) for j in exclude)
    d = values.shape[1]
    mean = np.zeros(d)
    scale = np.ones(d)
    for j in range(d):
        if j in exclude:
            continue
        mu = values[:, j].mean()
        sd = values[:, j].std()
        if not sd > 0.0:
            label = names[j] if names is not None else j
            raise DataError(f"column {label!r} has zero variance and cannot be standardized")
        mean[j] = mu
        scale[j] = sd
    return ScalerParams(mean, scale, exclude)


def standardize(d: Dataset, exclude: Iterable | None = None) -> tuple[Dataset, ScalerParams]:
    """Scale non-excluded columns to zero mean and unit population sd."""
    if exclude is None:
        excluded = default_scaling_exclusions(d.schema)
    else:
        excluded = frozenset(d.schema.indices(exclude))
    required = {d.response_index}
    if d.schema.intercept_index is not None:
        required.add(d.schema.intercept_index)
    if not required <= excluded:
        raise DataError("the excluded set must contain the response and the intercept")
    params = fit_scaler(d.values, excluded, d.column_names)
    return Dataset(params.transform(d.values), d.schema), params


def apply_mask(d: Dataset, m: MaskMatrix) -> PartialDataset:
    if m.shape != d.values.shape:
        raise DataError(f"mask shape {m.shape} does not match data shape {d.values.shape}")
    values = np.where(m.bits == 1, d.values, np.nan)
    return PartialDataset(values, d.schema)


def _format(value: float) -> str:
    return "" if math.isnan(value) else format(value, ".17g")


def serialize_partial(p: PartialDataset, path) -> None:
    """Write Z-bar as CSV with empty cells for NA."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(p.origin_schema.column_names)
        for row in p.values:
            writer.writerow([_format(v) for v in row])


def deserialize_partial(path, schema: ColumnSchema) -> PartialDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    if tuple(h.strip() for h in rows[0]) != schema.column_names:
        raise DataError(f"{path}: header does not match the dataset schema")
    values = np.empty((len(rows) - 1, schema.n_columns))
    for r, row in enumerate(rows[1:]):
        if len(row) != schema.n_columns:
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {schema.n_columns}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            values[r, c] = np.nan if cell == "" else float(cell)
    if np.any(np.isnan(values[:, schema.response_index])):
        raise DataError(f"{path}: NA in the response column")
    return PartialDataset(values, schema)


def write_mask(m: MaskMatrix, path, column_names: Sequence[str] | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        if column_names is not None:
            writer.writerow(column_names)
        writer.writerows(m.bits.tolist())


def read_mask(path, header: bool = True) -> MaskMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    return MaskMatrix(np.array([[int(c) for c in row] for row in rows], dtype=np.int64))
