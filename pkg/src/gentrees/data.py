"""Tabular schema, datasets with missing values, per-feature measure and MCAR corruption.

Datasets are stored as a float matrix with ``NaN`` marking a missing cell.
Nominal values are stored as integer codes into the feature's modality tuple.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_TOKENS = ("", "?")
MISSING_OUT = "?"

REAL, INTEGER, NOMINAL = 0, 1, 2
KIND_NAMES = {REAL: "real", INTEGER: "integer", NOMINAL: "nominal"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

_INT_RE = re.compile(r"^[+-]?\d+$")


class SchemaError(ValueError):
    """Raised for malformed schemas, unparseable cells and out-of-domain values."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    modalities: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise SchemaError(f"unknown feature kind {self.kind!r}")
        if self.kind == "nominal":
            if not self.modalities:
                raise SchemaError(f"nominal feature {self.name!r} has no modalities")
            if len(set(self.modalities)) != len(self.modalities):
                raise SchemaError(f"nominal feature {self.name!r} has duplicate modalities")
        elif not self.lo <= self.hi:
            raise SchemaError(f"feature {self.name!r}: lo > hi")
        if self.kind == "integer" and (self.lo != int(self.lo) or self.hi != int(self.hi)):
            raise SchemaError(f"integer feature {self.name!r} needs integral bounds")

    @classmethod
    def real(cls, name, lo, hi):
        return cls(name, "real", float(lo), float(hi))

    @classmethod
    def integer(cls, name, lo, hi):
        return cls(name, "integer", float(lo), float(hi))

    @classmethod
    def nominal(cls, name, modalities):
        return cls(name, "nominal", modalities=tuple(modalities))

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def upper(self) -> float:
        """Exclusive upper end of the internal half-open representation."""
        if self.kind == "real":
            return self.hi
        if self.kind == "integer":
            return self.hi + 1.0
        return float(len(self.modalities))

    @property
    def lower(self) -> float:
        return 0.0 if self.kind == "nominal" else self.lo

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def encode(self, token: str) -> float:
        if token in MISSING_TOKENS:
            return math.nan
        if self.kind == "nominal":
            try:
                return float(self.modalities.index(token))
            except ValueError:
                raise SchemaError(f"{token!r} is not a modality of {self.name!r}") from None
        if self.kind == "integer":
            if not _INT_RE.match(token.strip()):
                raise SchemaError(f"cannot parse {token!r} as integer for {self.name!r}")
            value = float(int(token))
        else:
            try:
                value = float(token)
            except ValueError:
                raise SchemaError(f"cannot parse {token!r} as real for {self.name!r}") from None
        if not self.lo <= value <= self.hi:
            raise SchemaError(f"{token!r} outside domain [{self.lo}, {self.hi}] of {self.name!r}")
        return value

    def decode(self, value: float):
        if math.isnan(value):
            return None
        if self.kind == "nominal":
            return self.modalities[int(value)]
        if self.kind == "integer":
            return int(value)
        return float(value)

    def format(self, value: float) -> str:
        if math.isnan(value):
            return MISSING_OUT
        if self.kind == "nominal":
            return self.modalities[int(value)]
        if self.kind == "integer":
            return str(int(value))
        return repr(float(value))

    def to_dict(self) -> dict:
        if self.kind == "nominal":
            return {"name": self.name, "kind": self.kind, "modalities": list(self.modalities)}
        lo, hi = (int(self.lo), int(self.hi)) if self.kind == "integer" else (self.lo, self.hi)
        return {"name": self.name, "kind": self.kind, "lo": lo, "hi": hi}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        if d["kind"] == "nominal":
            return cls.nominal(d["name"], d["modalities"])
        return cls(d["name"], d["kind"], float(d["lo"]), float(d["hi"]))


@dataclass(frozen=True)
class Schema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i):
        return self.features[i]

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no feature named {name!r}") from None

    # Flat arrays consumed by the kernels.
    @cached_property
    def kinds(self) -> np.ndarray:
        return np.array([f.code for f in self.features], dtype=np.int64)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([f.lower for f in self.features], dtype=np.float64)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([f.upper for f in self.features], dtype=np.float64)

    @cached_property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @cached_property
    def n_modalities(self) -> np.ndarray:
        return np.array([len(f.modalities) for f in self.features], dtype=np.int64)

    @cached_property
    def max_modalities(self) -> int:
        return max(1, int(self.n_modalities.max(initial=0)))

    def encode_row(self, tokens: Sequence) -> np.ndarray:
        if len(tokens) != len(self):
            raise SchemaError(f"row has {len(tokens)} cells, schema has {len(self)}")
        out = np.empty(len(self))
        for j, (spec, tok) in enumerate(zip(self.features, tokens)):
            if tok is None:
                out[j] = math.nan
            elif isinstance(tok, str):
                out[j] = spec.encode(tok)
            else:
                out[j] = spec.encode(str(tok)) if spec.kind == "nominal" else _check_num(spec, tok)
        return out

    def to_dict(self) -> list[dict]:
        return [f.to_dict() for f in self.features]

    @classmethod
    def from_dict(cls, items: Iterable[dict]) -> "Schema":
        return cls(tuple(FeatureSpec.from_dict(d) for d in items))


def _check_num(spec: FeatureSpec, value) -> float:
    value = float(value)
    if spec.kind == "integer" and value != int(value):
        raise SchemaError(f"{value} is not integral for {spec.name!r}")
    if not spec.lo <= value <= spec.hi:
        raise SchemaError(f"{value} outside domain of {spec.name!r}")
    return value


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1, len(self.schema))
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def rows(self) -> list[list]:
        return [[f.decode(v) for f, v in zip(self.schema, row)] for row in self.values]

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence]) -> "Dataset":
        encoded = [schema.encode_row(r) for r in rows]
        return cls(schema, np.array(encoded).reshape(-1, len(schema)))

    def take(self, idx) -> "Dataset":
        return Dataset(self.schema, self.values[idx])

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(self.schema, values)


# Constraints on a single feature. Integer ranges are inclusive, real
# intervals half-open [a, b) with the topmost interval closed at hi.
@dataclass(frozen=True)
class Interval:
    a: float
    b: float


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int


def feature_measure(spec: FeatureSpec, constraint) -> float:
    """Normalized measure of ``constraint`` within the domain of ``spec`` (full domain is 1)."""
    if spec.kind == "nominal":
        subset = set(constraint)
        if not subset <= set(spec.modalities):
            raise SchemaError("constraint is not a subset of the modalities")
        return len(subset) / len(spec.modalities)
    if spec.kind == "integer":
        if not isinstance(constraint, IntRange):
            raise TypeError("integer features take an IntRange constraint")
        lo, hi = max(constraint.lo, spec.lo), min(constraint.hi, spec.hi)
        return max(0.0, hi - lo + 1) / spec.length
    if not isinstance(constraint, Interval):
        raise TypeError("real features take an Interval constraint")
    a, b = max(constraint.a, spec.lo), min(constraint.b, spec.hi)
    if spec.length == 0:
        # a constant feature is a single atom of measure 1
        return 1.0 if constraint.a <= spec.lo <= constraint.b else 0.0
    return max(0.0, b - a) / spec.length


def _tokens_type(tokens: list[str]) -> str:
    if all(_INT_RE.match(t.strip()) for t in tokens):
        return "integer"
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        return "nominal"
    return "real" if all(math.isfinite(v) for v in vals) else "nominal"


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    return header, rows


def infer_schema(csv_path, *more_paths) -> Schema:
    """Type every column and learn its finite domain from the observed values.

    Several files with the same header share one schema learned from all of them.
    """
    header, rows = _read_csv(csv_path)
    for extra in more_paths:
        h, r = _read_csv(extra)
        if h != header:
            raise SchemaError(f"{extra}: header {h} differs from {header}")
        rows = rows + r
    features = []
    for j, name in enumerate(header):
        tokens = [r[j] for r in rows if j < len(r) and r[j] not in MISSING_TOKENS]
        if not tokens:
            raise SchemaError(f"column {name!r} has no observed value")
        kind = _tokens_type(tokens)
        if kind == "nominal":
            features.append(FeatureSpec.nominal(name, sorted(set(tokens))))
        elif kind == "integer":
            ints = [int(t) for t in tokens]
            features.append(FeatureSpec.integer(name, min(ints), max(ints)))
        else:
            vals = [float(t) for t in tokens]
            features.append(FeatureSpec.real(name, min(vals), max(vals)))
    return Schema(tuple(features))


def load_dataset(csv_path, schema: Schema) -> Dataset:
    header, rows = _read_csv(csv_path)
    if header != schema.names:
        raise SchemaError(f"header {header} does not match schema {schema.names}")
    values = np.empty((len(rows), len(schema)))
    for i, row in enumerate(rows):
        try:
            values[i] = schema.encode_row(row)
        except SchemaError as exc:
            raise SchemaError(f"{csv_path}: data row {i + 1}: {exc}") from None
    return Dataset(schema, values)


def read_dataset(csv_path) -> Dataset:
    return load_dataset(csv_path, infer_schema(csv_path))


def save_dataset(dataset: Dataset, csv_path) -> None:
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.schema.names)
        for row in dataset.values:
            writer.writerow([f.format(v) for f, v in zip(dataset.schema, row)])


def mcar_corrupt(dataset: Dataset, q: float, seed) -> Dataset:
    """Erase every present cell independently with probability ``q``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    erase = rng.random(dataset.values.shape) < q
    values = dataset.values.copy()
    values[erase] = np.nan
    return dataset.with_values(values)
