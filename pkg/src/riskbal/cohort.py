"""Two-arm survival cohorts: schema, CSV ingestion and simple imputation.

A :class:`Cohort` is stored column-wise (numpy arrays) because every
downstream consumer works on the covariate matrix; :attr:`Cohort.records`
gives the row view when one is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ALONE = "alone"
CHEMO = "chemo"
ARMS = (ALONE, CHEMO)

NUMERIC = "numeric"
BINARY = "binary"
ORDINAL = "ordinal"
KINDS = (NUMERIC, BINARY, ORDINAL)

FIXED_COLUMNS = ("id", "time_months", "event", "arm")


class CohortError(ValueError):
    pass


class ParseError(CohortError):
    pass


class SchemaError(CohortError):
    pass


class UnimputableError(CohortError):
    pass


class EmptyArmError(CohortError):
    def __init__(self, arm: str):
        super().__init__(f"arm {arm!r} has no records")
        self.arm = arm


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = NUMERIC

    def __post_init__(self):
        if not self.name:
            raise SchemaError("covariate names must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown covariate kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class CovariateSchema:
    entries: tuple[Covariate, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [c.name for c in self.entries]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate covariate names in {names}")
        reserved = set(names) & set(FIXED_COLUMNS)
        if reserved:
            raise SchemaError(f"covariate names clash with fixed columns: {sorted(reserved)}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "CovariateSchema":
        return cls(tuple(Covariate(n, k) for n, k in pairs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.entries)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no covariate named {name!r}") from None

    def subset(self, names: Sequence[str]) -> "CovariateSchema":
        return CovariateSchema(tuple(self.entries[self.index(n)] for n in names))

    def to_dict(self) -> list[dict]:
        return [{"name": c.name, "kind": c.kind} for c in self.entries]

    @classmethod
    def from_dict(cls, items: list[Mapping]) -> "CovariateSchema":
        return cls.from_pairs((d["name"], d["kind"]) for d in items)


@dataclass(frozen=True)
class PatientRecord:
    id: str
    covariates: tuple[float | None, ...]
    time_months: float
    event: bool
    arm: str

    def __post_init__(self):
        if not (math.isfinite(self.time_months) and self.time_months > 0):
            raise CohortError(f"record {self.id!r}: time_months must be finite and > 0")
        if self.arm not in ARMS:
            raise SchemaError(f"record {self.id!r}: unknown arm {self.arm!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable column store of patient records.

    ``X`` holds covariates in schema order with ``nan`` for missing cells.
    ``excluded`` counts input rows dropped at load time because time, event
    or arm was missing.
    """

    schema: CovariateSchema
    ids: np.ndarray
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    provenance: str = ""
    excluded: int = 0

    def __post_init__(self):
        n = len(self.ids)
        ids = _frozen(np.asarray(self.ids, dtype=object))
        X = np.asarray(self.X, dtype=float).reshape(n, len(self.schema))
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event, dtype=bool)
        arm = np.asarray(self.arm, dtype=object)
        if not (len(time) == len(event) == len(arm) == n):
            raise CohortError("column lengths differ")
        if len(set(ids.tolist())) != n:
            raise CohortError("record ids must be unique within a cohort")
        if n and not (np.all(np.isfinite(time)) and np.all(time > 0)):
            raise CohortError("time_months must be finite and strictly positive")
        bad = set(arm.tolist()) - set(ARMS)
        if bad:
            raise SchemaError(f"unknown arm labels {sorted(bad)}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event))
        object.__setattr__(self, "arm", _frozen(arm))

    @classmethod
    def from_records(cls, schema: CovariateSchema, records: Sequence[PatientRecord],
                     provenance: str = "") -> "Cohort":
        for r in records:
            if len(r.covariates) != len(schema):
                raise SchemaError(f"record {r.id!r} has {len(r.covariates)} covariates, "
                                  f"schema has {len(schema)}")
        X = np.array([[np.nan if v is None else v for v in r.covariates] for r in records],
                     dtype=float).reshape(len(records), len(schema))
        return cls(schema, [r.id for r in records], X,
                   [r.time_months for r in records], [r.event for r in records],
                   [r.arm for r in records], provenance)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def records(self) -> list[PatientRecord]:
        out = []
        for i in range(self.n):
            cov = tuple(None if math.isnan(v) else float(v) for v in self.X[i])
            out.append(PatientRecord(str(self.ids[i]), cov, float(self.time[i]),
                                     bool(self.event[i]), str(self.arm[i])))
        return out

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any())

    def take(self, idx, ids: Sequence[str] | None = None,
             provenance: str | None = None) -> "Cohort":
        idx = np.asarray(idx, dtype=int)
        return Cohort(self.schema, self.ids[idx] if ids is None else ids, self.X[idx],
                      self.time[idx], self.event[idx], self.arm[idx],
                      self.provenance if provenance is None else provenance)

    def resample(self, idx) -> "Cohort":
        """Rows ``idx`` (repeats allowed), relabelled so ids stay unique."""
        idx = np.asarray(idx, dtype=int)
        ids = [f"{self.ids[i]}~{k}" for k, i in enumerate(idx)]
        return self.take(idx, ids=ids)

    def with_arm(self, arm: str) -> "Cohort":
        return self.take(np.flatnonzero(self.arm == arm))

    def select(self, names: Sequence[str]) -> "Cohort":
        cols = [self.schema.index(n) for n in names]
        return Cohort(self.schema.subset(names), self.ids, self.X[:, cols], self.time,
                      self.event, self.arm, self.provenance, self.excluded)

    def replace(self, **changes) -> "Cohort":
        fields_ = dict(schema=self.schema, ids=self.ids, X=self.X, time=self.time,
                       event=self.event, arm=self.arm, provenance=self.provenance,
                       excluded=self.excluded)
        fields_.update(changes)
        return Cohort(**fields_)


def concat(cohorts: Sequence[Cohort], provenance: str = "") -> Cohort:
    if not cohorts:
        raise CohortError("nothing to concatenate")
    schema = cohorts[0].schema
    for c in cohorts[1:]:
        if c.schema != schema:
            raise SchemaError("cannot concatenate cohorts with different schemas")
    return Cohort(schema,
                  np.concatenate([c.ids for c in cohorts]),
                  np.vstack([c.X for c in cohorts]),
                  np.concatenate([c.time for c in cohorts]),
                  np.concatenate([c.event for c in cohorts]),
                  np.concatenate([c.arm for c in cohorts]),
                  provenance)


# -- CSV ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return format(float(v), ".17g")


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def load_cohort(path: str | Path, schema: CovariateSchema) -> Cohort:
    """Read a cohort CSV.

    Columns may appear in any order; covariates are re-ordered to ``schema``
    order. Rows with an empty ``time_months``, ``event`` or ``arm`` cell are
    dropped and counted in :attr:`Cohort.excluded`. Extra columns are ignored.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header required") from None
        header = [h.strip() for h in header]
        missing = [c for c in (*FIXED_COLUMNS, *schema.names) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        pos = {name: header.index(name) for name in (*FIXED_COLUMNS, *schema.names)}
        ids, rows, times, events, arms = [], [], [], [], []
        excluded = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(raw)} cells, "
                                 f"expected {len(header)}")
            cell = {name: raw[p].strip() for name, p in pos.items()}
            if not cell["time_months"] or not cell["event"] or not cell["arm"]:
                excluded += 1
                continue
            t = _parse_float(cell["time_months"], lineno, "time_months")
            if t <= 0:
                raise ParseError(f"row {lineno}, column 'time_months': must be > 0, got {t}")
            if cell["event"] not in ("0", "1"):
                raise ParseError(f"row {lineno}, column 'event': expected 0/1, "
                                 f"got {cell['event']!r}")
            if cell["arm"] not in ARMS:
                raise SchemaError(f"row {lineno}, column 'arm': unknown arm label {cell['arm']!r}")
            ids.append(cell["id"])
            times.append(t)
            events.append(cell["event"] == "1")
            arms.append(cell["arm"])
            rows.append([np.nan if not cell[n] else _parse_float(cell[n], lineno, n)
                         for n in schema.names])
    X = np.array(rows, dtype=float).reshape(len(rows), len(schema))
    return Cohort(schema, ids, X, times, events, arms, provenance=str(path), excluded=excluded)


def write_cohort(path: str | Path, cohort: Cohort,
                 extra: Mapping[str, Sequence] | None = None) -> None:
    """Write ``cohort`` as CSV; ``extra`` appends named columns after the covariates."""
    extra = dict(extra or {})
    for k, v in extra.items():
        if len(v) != cohort.n:
            raise CohortError(f"extra column {k!r} has wrong length")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FIXED_COLUMNS, *cohort.schema.names, *extra])
        for i in range(cohort.n):
            w.writerow([cohort.ids[i], _fmt(cohort.time[i]), int(cohort.event[i]), cohort.arm[i],
                        *(_fmt(v) for v in cohort.X[i]),
                        *(_fmt(v[i]) if isinstance(v[i], (float, np.floating)) else v[i]
                          for v in extra.values())])


# -- imputation --------------------------------------------------------------

@dataclass(frozen=True)
class ImputedColumn:
    missing_count: int
    fill_value: float
    method: str


@dataclass(frozen=True)
class ImputationReport:
    columns: dict[str, ImputedColumn] = field(default_factory=dict)

    @property
    def total_missing(self) -> int:
        return sum(c.missing_count for c in self.columns.values())


def _mode_smallest(values: np.ndarray) -> float:
    levels, counts = np.unique(values, return_counts=True)
    return float(levels[np.argmax(counts)])  # argmax picks the first, i.e. smallest, level


def impute(cohort: Cohort) -> tuple[Cohort, ImputationReport]:
    """Median fill for numeric covariates, mode fill for binary/ordinal ones."""
    if cohort.n == 0:
        raise CohortError("cannot impute an empty cohort")
    X = cohort.X.copy()
    report = {}
    for k, cov in enumerate(cohort.schema.entries):
        col = X[:, k]
        miss = np.isnan(col)
        observed = col[~miss]
        if observed.size == 0:
            raise UnimputableError(f"covariate {cov.name!r} has no observed values")
        if cov.kind == NUMERIC:
            fill, method = float(np.median(observed)), "median"
        else:
            fill, method = _mode_smallest(observed), "mode"
        col[miss] = fill
        report[cov.name] = ImputedColumn(int(miss.sum()), fill, method)
    return cohort.replace(X=X), ImputationReport(report)


def split_by_arm(cohort: Cohort) -> tuple[Cohort, Cohort]:
    """Return ``(alone, chemo)`` subcohorts; raise :class:`EmptyArmError` if either is empty."""
    alone, chemo = cohort.with_arm(ALONE), cohort.with_arm(CHEMO)
    for arm, sub in ((ALONE, alone), (CHEMO, chemo)):
        if sub.n == 0:
            raise EmptyArmError(arm)
    return alone, chemo
