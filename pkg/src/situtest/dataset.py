"""Tabular data model, CSV ingestion and empirical collider distributions.

The auditor never sees the training data itself, only the audited test
records plus a distribution over the outcome-descendant (collider)
variables.  ``EmpiricalJointDistribution`` is that distribution: a
frequency table over value tuples, with continuous variables reduced to
equal-frequency bins represented by their within-bin means.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .causal_graph import AuditRoles

__all__ = [
    "DataError",
    "AttributeSpec",
    "Schema",
    "Record",
    "Dataset",
    "Binning",
    "EmpiricalJointDistribution",
    "load_csv",
    "fit_distribution",
    "load_distribution",
]

BINARY = "binary"
CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

# Above this many joint value tuples the collider distribution falls back
# to a product of per-variable marginals.
MAX_JOINT_SUPPORT = 10_000


class DataError(ValueError):
    """Malformed dataset, schema violation, or malformed distribution."""


@dataclass(frozen=True)
class AttributeSpec:
    """One column: its name, kind, and levels when categorical."""

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (BINARY, CATEGORICAL, CONTINUOUS):
            raise DataError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.levels:
            raise DataError(f"attribute {self.name!r}: categorical kind needs levels")
        if self.kind != CATEGORICAL and self.levels:
            raise DataError(f"attribute {self.name!r}: only categorical kinds take levels")


class Schema:
    """Ordered attribute declarations plus the audit roles."""

    def __init__(self, attributes: Sequence[AttributeSpec], roles: AuditRoles):
        names = [a.name for a in attributes]
        if len(set(names)) != len(names):
            raise DataError("duplicate attribute names in schema")
        by_name = {a.name: a for a in attributes}
        for role_name in (roles.protected, roles.outcome):
            spec = by_name.get(role_name)
            if spec is None:
                raise DataError(f"role attribute {role_name!r} missing from schema")
            if spec.kind != BINARY:
                raise DataError(f"role attribute {role_name!r} must be binary")
        self.attributes = tuple(attributes)
        self.roles = roles
        self._by_name = by_name

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def attribute(self, name: str) -> AttributeSpec:
        spec = self._by_name.get(name)
        if spec is None:
            raise DataError(f"unknown attribute {name!r}")
        return spec

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def parse_cell(self, name: str, text: str) -> float | int:
        spec = self.attribute(name)
        text = text.strip()
        if spec.kind == BINARY:
            if text in ("0", "1"):
                return int(text)
            raise DataError(f"value {text!r} is not 0/1")
        if spec.kind == CATEGORICAL:
            try:
                return spec.levels.index(text)
            except ValueError:
                raise DataError(f"unseen categorical level {text!r}") from None
        try:
            return float(text)
        except ValueError:
            raise DataError(f"cannot parse {text!r} as a number") from None

    def format_cell(self, name: str, value) -> str:
        spec = self.attribute(name)
        if spec.kind == BINARY:
            return str(int(value))
        if spec.kind == CATEGORICAL:
            return spec.levels[int(value)]
        return repr(float(value))


@dataclass(frozen=True)
class Record:
    """A single row: attribute values plus its stable row index."""

    id: int
    values: Mapping[str, float | int]


class Dataset:
    """Immutable column-oriented table conforming to a Schema."""

    def __init__(self, schema: Schema, columns: Mapping[str, np.ndarray]):
        self.schema = schema
        cols: dict[str, np.ndarray] = {}
        n = None
        for spec in schema.attributes:
            if spec.name not in columns:
                raise DataError(f"missing column {spec.name!r}")
            col = np.asarray(columns[spec.name])
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise DataError(f"column {spec.name!r} has length {len(col)}, expected {n}")
            if spec.kind == BINARY:
                arr = col.astype(np.int64)
                if not np.isin(arr, (0, 1)).all():
                    raise DataError(f"column {spec.name!r} has non-binary values")
            elif spec.kind == CATEGORICAL:
                arr = col.astype(np.int64)
                if arr.min(initial=0) < 0 or arr.max(initial=0) >= len(spec.levels):
                    raise DataError(f"column {spec.name!r} has out-of-range level indexes")
            else:
                arr = col.astype(np.float64)
                if not np.isfinite(arr).all():
                    raise DataError(f"column {spec.name!r} has non-finite values")
            arr.setflags(write=False)
            cols[spec.name] = arr
        self._columns = cols
        self._n = n or 0

    def __len__(self) -> int:
        return self._n

    def column(self, name: str) -> np.ndarray:
        if name not in self._columns:
            raise DataError(f"unknown attribute {name!r}")
        return self._columns[name]

    def columns(self, names: Iterable[str]) -> dict[str, np.ndarray]:
        return {n: self.column(n) for n in names}

    def record(self, i: int) -> Record:
        if not 0 <= i < self._n:
            raise DataError(f"row index {i} out of range")
        values = {name: col[i].item() for name, col in self._columns.items()}
        return Record(id=i, values=values)

    @property
    def records(self) -> list[Record]:
        return [self.record(i) for i in range(self._n)]

    def iter_records(self) -> Iterator[Record]:
        for i in range(self._n):
            yield self.record(i)

    def take(self, indexes: np.ndarray) -> "Dataset":
        """Row subset in the given order (ids are re-assigned 0..k-1)."""
        return Dataset(self.schema, {n: c[indexes] for n, c in self._columns.items()})

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = self.schema.names
        writer.writerow(names)
        formatters = [self.schema.format_cell] * len(names)
        for i in range(self._n):
            writer.writerow(
                [fmt(n, self._columns[n][i]) for fmt, n in zip(formatters, names)]
            )
        return buf.getvalue()


def load_csv(text: str, schema: Schema) -> Dataset:
    """Load a header-bearing CSV against a schema; row ids follow file order."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV: missing header row") from None
    header = [h.strip() for h in header]
    positions: dict[str, int] = {}
    for spec in schema.attributes:
        try:
            positions[spec.name] = header.index(spec.name)
        except ValueError:
            raise DataError(f"missing column {spec.name!r} in CSV header") from None
    raw_columns: dict[str, list] = {name: [] for name in positions}
    width = len(header)
    for rownum, row in enumerate(reader):
        if not row:
            continue
        if len(row) != width:
            raise DataError(f"row {rownum}: expected {width} cells, got {len(row)}")
        for name, pos in positions.items():
            try:
                raw_columns[name].append(schema.parse_cell(name, row[pos]))
            except DataError as exc:
                raise DataError(f"row {rownum}, column {name!r}: {exc}") from None
    return Dataset(schema, {n: np.asarray(v) for n, v in raw_columns.items()})


@dataclass(frozen=True)
class Binning:
    """Equal-frequency bin edges and per-bin representative values."""

    edges: tuple[float, ...]
    reps: tuple[float, ...]

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Map raw values to their bin's representative value."""
        inner = np.asarray(self.edges[1:-1])
        idx = np.searchsorted(inner, values, side="right")
        return np.asarray(self.reps)[idx]


class EmpiricalJointDistribution:
    """Frequency table over tuples of (binned) variable values."""

    def __init__(
        self,
        variables: Sequence[str],
        support: Sequence[tuple[tuple, float]],
        binning: Mapping[str, Binning] | None = None,
        _tolerance: float = 1e-9,
    ):
        self.variables = tuple(variables)
        self.binning = dict(binning or {})
        arity = len(self.variables)
        seen = set()
        items: list[tuple[tuple, float]] = []
        total = 0.0
        for value_tuple, prob in support:
            t = tuple(value_tuple)
            if len(t) != arity:
                raise DataError(
                    f"support tuple {t!r} has arity {len(t)}, expected {arity}"
                )
            if t in seen:
                raise DataError(f"duplicate support tuple {t!r}")
            seen.add(t)
            if prob < 0:
                raise DataError(f"negative probability {prob!r} for tuple {t!r}")
            items.append((t, float(prob)))
            total += prob
        if abs(total - 1.0) > _tolerance:
            raise DataError(f"probabilities sum to {total!r}, expected 1")
        if abs(total - 1.0) > 1e-9:
            # Drift within the load tolerance: renormalize so every stored
            # distribution satisfies the tight sum invariant.  Already-tight
            # inputs are kept bit-identical so round-trips are exact.
            items = [(t, p / total) for t, p in items]
        self.support = tuple(items)

    def __len__(self) -> int:
        return len(self.support)

    def expected_values(self) -> dict[str, float]:
        out = {}
        for i, var in enumerate(self.variables):
            out[var] = float(sum(p * t[i] for t, p in self.support))
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "variables": list(self.variables),
                "binning": {
                    v: {"edges": list(b.edges), "reps": list(b.reps)}
                    for v, b in self.binning.items()
                },
                "support": [[list(t), p] for t, p in self.support],
            }
        )


def fit_distribution(
    data: Dataset, variables: Sequence[str], bins: int = 10
) -> EmpiricalJointDistribution:
    """Empirical joint distribution of ``variables`` in ``data``.

    Continuous variables are cut into ``bins`` equal-frequency bins and
    replaced by within-bin means, which keeps every bin populated even
    for heavily skewed columns and preserves each column's sample mean
    exactly.  Joint supports larger than ``MAX_JOINT_SUPPORT`` fall back
    to the product of the per-variable marginals, with a warning.
    """
    if bins < 1:
        raise DataError("bins must be a positive integer")
    variables = list(variables)
    if not variables:
        return EmpiricalJointDistribution((), [((), 1.0)])
    if len(data) == 0:
        raise DataError("cannot fit a distribution on an empty dataset")
    n = len(data)
    binned: dict[str, np.ndarray] = {}
    binnings: dict[str, Binning] = {}
    for var in variables:
        spec = data.schema.attribute(var)
        col = data.column(var)
        if spec.kind == CONTINUOUS:
            binning = _equal_frequency_binning(col, bins)
            binnings[var] = binning
            binned[var] = binning.assign(col)
        else:
            binned[var] = col
    matrix = np.column_stack([binned[v] for v in variables])
    uniq, counts = np.unique(matrix, axis=0, return_counts=True)
    if len(uniq) > MAX_JOINT_SUPPORT:
        warnings.warn(
            f"joint support over {variables} has {len(uniq)} tuples; "
            "falling back to the product of per-variable marginals",
            RuntimeWarning,
            stacklevel=2,
        )
        return _product_of_marginals(variables, binned, binnings, n)
    support = []
    for row, count in zip(uniq, counts):
        t = tuple(_native(v, data.schema.attribute(var).kind)
                  for v, var in zip(row, variables))
        support.append((t, count / n))
    support.sort(key=lambda item: item[0])
    return EmpiricalJointDistribution(variables, support, binnings)


def _native(value, kind: str):
    return float(value) if kind == CONTINUOUS else int(value)


def _equal_frequency_binning(col: np.ndarray, bins: int) -> Binning:
    qs = np.quantile(col, np.linspace(0.0, 1.0, bins + 1))
    edges = np.unique(qs)
    if len(edges) < 2:
        # Constant column: one degenerate bin.
        return Binning(edges=(float(edges[0]), float(edges[0])), reps=(float(edges[0]),))
    inner = edges[1:-1]
    idx = np.searchsorted(inner, col, side="right")
    reps = []
    for b in range(len(edges) - 1):
        members = col[idx == b]
        reps.append(float(members.mean()) if len(members) else float(edges[b]))
    return Binning(edges=tuple(float(e) for e in edges), reps=tuple(reps))


def _product_of_marginals(
    variables: list[str],
    binned: Mapping[str, np.ndarray],
    binnings: Mapping[str, Binning],
    n: int,
) -> EmpiricalJointDistribution:
    marginals = []
    for var in variables:
        vals, counts = np.unique(binned[var], return_counts=True)
        marginals.append([(v.item(), c / n) for v, c in zip(vals, counts)])
    support: list[tuple[tuple, float]] = [((), 1.0)]
    for marginal in marginals:
        support = [
            (t + (v,), p * q) for t, p in support for v, q in marginal
        ]
    return EmpiricalJointDistribution(variables, support, binnings)


def load_distribution(text: str) -> EmpiricalJointDistribution:
    """Parse the distribution JSON written by ``to_json``."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid distribution JSON: {exc}") from None
    if not isinstance(obj, dict) or "variables" not in obj or "support" not in obj:
        raise DataError("distribution JSON needs 'variables' and 'support'")
    binning = {
        var: Binning(edges=tuple(b["edges"]), reps=tuple(b["reps"]))
        for var, b in obj.get("binning", {}).items()
    }
    support = []
    for entry in obj["support"]:
        if not isinstance(entry, list) or len(entry) != 2:
            raise DataError(f"malformed support entry {entry!r}")
        values, prob = entry
        support.append((tuple(values), prob))
    return EmpiricalJointDistribution(
        obj["variables"], support, binning, _tolerance=1e-6
    )
