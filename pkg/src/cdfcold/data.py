"""Panel data model: one data center's T x A observation matrix plus mask.

Missing cells are carried by an explicit boolean mask; the value stored under
an unobserved cell is always the 0.0 sentinel so numeric kernels can never
pick up a stale measurement by accident.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CutOutOfRange,
    EmptyFile,
    InvalidRange,
    MissingColumn,
    NonNumericCell,
    PanelIoError,
    SchemaMismatch,
    UnknownAttribute,
)

ROLES = ("service-traffic", "machine-usage", "total-traffic", "other")
NA_TOKEN = "NA"


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]
    roles: tuple[str, ...]
    known_future: tuple[bool, ...]

    def __post_init__(self):
        names = tuple(self.names)
        roles = tuple(self.roles)
        kf = tuple(bool(k) for k in self.known_future)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "known_future", kf)
        if not names:
            raise ValueError("schema needs at least one attribute")
        if any(not n for n in names):
            raise ValueError("attribute names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        if len(roles) != len(names) or len(kf) != len(names):
            raise ValueError("roles and known_future must match names in length")
        bad = [r for r in roles if r not in ROLES]
        if bad:
            raise ValueError(f"unknown roles {bad}")

    @classmethod
    def simple(cls, names: Sequence[str], known_future: Iterable[str] = ()) -> "AttributeSchema":
        kf = set(known_future)
        return cls(tuple(names), ("other",) * len(names), tuple(n in kf for n in names))

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def known_idx(self) -> np.ndarray:
        """Column indices of O1 (future values available at forecast time)."""
        return np.array([j for j, k in enumerate(self.known_future) if k], dtype=int)

    @property
    def target_idx(self) -> np.ndarray:
        """Column indices of O2 (attributes that get forecast)."""
        return np.array([j for j, k in enumerate(self.known_future) if not k], dtype=int)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownAttribute(name) from None

    def indices(self, names: Iterable[str]) -> list[int]:
        return [self.index(n) for n in names]

    def subset(self, names: Sequence[str]) -> "AttributeSchema":
        idx = self.indices(names)
        return AttributeSchema(
            tuple(self.names[j] for j in idx),
            tuple(self.roles[j] for j in idx),
            tuple(self.known_future[j] for j in idx),
        )

    def to_dict(self) -> dict:
        return {"names": list(self.names), "roles": list(self.roles),
                "known_future": list(self.known_future)}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        return cls(tuple(d["names"]), tuple(d["roles"]), tuple(d["known_future"]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable T x A panel. Row t is the observation vector at time t."""

    id: str
    values: np.ndarray
    schema: AttributeSchema
    observed: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("panel values must be a 2-d matrix")
        if self.observed is None:
            observed = np.ones(values.shape, dtype=bool)
        else:
            observed = np.array(self.observed, dtype=bool)
        if observed.shape != values.shape:
            raise ValueError("values and observed mask differ in shape")
        T, A = values.shape
        if T < 1 or A < 1:
            raise ValueError("panel must have T >= 1 and A >= 1")
        if A != self.schema.size:
            raise SchemaMismatch(f"panel has {A} columns, schema has {self.schema.size}")
        if not np.all(np.isfinite(values[observed])):
            raise ValueError("observed cells must be finite")
        values[~observed] = 0.0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def A(self) -> int:
        return self.values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def replace(self, values=None, observed=None, schema=None, id=None) -> "Panel":
        return Panel(
            self.id if id is None else id,
            self.values if values is None else values,
            self.schema if schema is None else schema,
            self.observed if observed is None else observed,
        )

    def select(self, names: Sequence[str]) -> "Panel":
        idx = self.schema.indices(names)
        return Panel(self.id, self.values[:, idx], self.schema.subset(names), self.observed[:, idx])

    def equals(self, other: "Panel") -> bool:
        return (
            self.id == other.id
            and self.schema == other.schema
            and self.values.shape == other.values.shape
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Fleet:
    panels: tuple[Panel, ...]

    def __post_init__(self):
        panels = tuple(self.panels)
        object.__setattr__(self, "panels", panels)
        if panels:
            schema = panels[0].schema
            for p in panels[1:]:
                if p.schema != schema:
                    raise SchemaMismatch(f"panel {p.id!r} does not share the fleet schema")
        ids = [p.id for p in panels]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate panel ids in fleet")

    @property
    def schema(self) -> AttributeSchema:
        return self.panels[0].schema

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.panels]

    def __len__(self):
        return len(self.panels)

    def __iter__(self):
        return iter(self.panels)

    def __getitem__(self, key) -> Panel:
        if isinstance(key, str):
            for p in self.panels:
                if p.id == key:
                    return p
            raise KeyError(key)
        return self.panels[key]

    def replace_panel(self, panel: Panel) -> "Fleet":
        return Fleet(tuple(panel if p.id == panel.id else p for p in self.panels))


def load_panel(path, schema: AttributeSchema, panel_id: str | None = None) -> Panel:
    """Read a panel CSV. Columns are matched to the schema by header name."""
    path = os.fspath(path)
    if panel_id is None:
        panel_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(c.strip() for c in rows[0]):
        raise EmptyFile(path)
    header = [h.strip() for h in rows[0]]
    missing = [n for n in schema.names if n not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise EmptyFile(f"{path}: no data rows")
    cols = [header.index(n) for n in schema.names]
    T, A = len(body), len(cols)
    values = np.zeros((T, A))
    observed = np.ones((T, A), dtype=bool)
    for t, row in enumerate(body):
        for j, c in enumerate(cols):
            token = row[c].strip() if c < len(row) else ""
            if token == NA_TOKEN:
                observed[t, j] = False
                continue
            try:
                v = float(token)
            except ValueError:
                raise NonNumericCell(t, schema.names[j], token) from None
            if not np.isfinite(v):
                raise NonNumericCell(t, schema.names[j], token)
            values[t, j] = v
    return Panel(panel_id, values, schema, observed)


def save_panel(panel: Panel, path) -> None:
    """Write a panel CSV; floats use the shortest round-tripping repr."""
    path = os.fspath(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(panel.schema.names)
            for vals, obs in zip(panel.values, panel.observed):
                w.writerow([repr(float(v)) if o else NA_TOKEN for v, o in zip(vals, obs)])
    except OSError as exc:
        raise PanelIoError(f"cannot write panel to {path}: {exc}") from exc


def mask_history(panel: Panel, attrs: Iterable[str], cut: int) -> Panel:
    """Hide every value of ``attrs`` before time ``cut`` (cold-start protocol)."""
    attrs = list(attrs)
    idx = panel.schema.indices(attrs)
    if not 0 <= cut < panel.T:
        raise CutOutOfRange(f"cut {cut} outside [0, {panel.T})")
    if not idx:
        return panel
    observed = panel.observed.copy()
    observed[:cut, idx] = False
    return panel.replace(observed=observed)


def slice_panel(panel: Panel, t0: int, t1: int) -> Panel:
    if not 0 <= t0 < t1 <= panel.T:
        raise InvalidRange(f"slice [{t0}, {t1}) invalid for T={panel.T}")
    if t0 == 0 and t1 == panel.T:
        return panel
    return panel.replace(values=panel.values[t0:t1], observed=panel.observed[t0:t1])


def load_fleet(directory, schema: AttributeSchema) -> Fleet:
    """Load every ``*.csv`` in a directory (sorted by name) as one fleet."""
    directory = os.fspath(directory)
    files = sorted(f for f in os.listdir(directory) if f.endswith(".csv"))
    return Fleet(tuple(load_panel(os.path.join(directory, f), schema) for f in files))
