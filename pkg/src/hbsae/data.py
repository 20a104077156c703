"""CSV ingestion and linking of survey, census and area-covariate tables."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, NamedTuple, Sequence, Union

import numpy as np
import yaml

from .errors import (
    AreaWithZeroPopulation,
    BadEnumLevel,
    ConfigError,
    DatasetError,
    DuplicateCell,
    MissingColumn,
    MissingCovariateRow,
    NegativeCount,
    NonBinaryOutcome,
    NonpositiveWeight,
    RowError,
    UnknownArea,
)

log = logging.getLogger(__name__)

Source = Union[str, os.PathLike, IO[str]]

SURVEY_COLUMNS = ("area_id", "race", "ethnicity", "gender", "age_band", "y", "weight")
CENSUS_COLUMNS = ("area_id", "race", "ethnicity", "gender", "age_band", "count")
TRANSFORMS = ("identity", "logit")


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellSchema:
    """Levels of the demographic cell factors.

    Dense cell index is race-major, then ethnicity, gender and age band, so the
    race x ethnicity intercept slot of a cell is ``race * n_ethnicity + ethnicity``.
    """

    races: tuple[str, ...] = ("White", "Black", "Asian", "Other")
    ethnicities: tuple[str, ...] = ("NonHispanic", "Hispanic")
    genders: tuple[str, ...] = ("Male", "Female")
    n_age: int = 7

    @property
    def n_cells(self) -> int:
        return len(self.races) * len(self.ethnicities) * len(self.genders) * self.n_age

    @property
    def n_intercepts(self) -> int:
        return len(self.races) * len(self.ethnicities)

    @property
    def n_genders(self) -> int:
        return len(self.genders)

    def encode(self, key: "CellKey") -> int:
        r, e, g, a = self._levels(key)
        return ((r * len(self.ethnicities) + e) * len(self.genders) + g) * self.n_age + a

    def decode(self, index: int) -> "CellKey":
        if not 0 <= index < self.n_cells:
            raise IndexError(index)
        index, a = divmod(int(index), self.n_age)
        index, g = divmod(index, len(self.genders))
        r, e = divmod(index, len(self.ethnicities))
        return CellKey(self.races[r], self.ethnicities[e], self.genders[g], a + 1)

    def _levels(self, key: "CellKey") -> tuple[int, int, int, int]:
        try:
            levels = (
                self.races.index(key.race),
                self.ethnicities.index(key.ethnicity),
                self.genders.index(key.gender),
            )
        except ValueError as exc:
            raise BadEnumLevel(str(exc)) from None
        if not 1 <= key.age_band <= self.n_age:
            raise BadEnumLevel(f"age_band {key.age_band} outside 1..{self.n_age}")
        return (*levels, key.age_band - 1)

    # per-cell factor lookups, length n_cells
    def intercept_of_cells(self) -> np.ndarray:
        idx = np.arange(self.n_cells) // (self.n_age * len(self.genders))
        return idx.astype(np.int64)

    def gender_of_cells(self) -> np.ndarray:
        return ((np.arange(self.n_cells) // self.n_age) % len(self.genders)).astype(np.int64)

    def age_of_cells(self) -> np.ndarray:
        return (np.arange(self.n_cells) % self.n_age + 1).astype(np.int64)

    def intercept_label(self, slot: int) -> str:
        r, e = divmod(slot, len(self.ethnicities))
        return f"{self.races[r]}.{self.ethnicities[e]}"

    def match(self, factor: str, text: str, row: int | None = None) -> str:
        """Resolve a case-insensitive enum spelling to its canonical level."""
        levels = {"race": self.races, "ethnicity": self.ethnicities, "gender": self.genders}[factor]
        folded = text.strip().lower()
        for level in levels:
            if level.lower() == folded:
                return level
        raise BadEnumLevel(f"{factor} {text!r} not in {'|'.join(levels)}", row)

    @classmethod
    def from_mapping(cls, spec: dict | None) -> "CellSchema":
        if not spec:
            return cls()
        try:
            return cls(
                races=tuple(spec.get("race", cls.races)),
                ethnicities=tuple(spec.get("ethnicity", cls.ethnicities)),
                genders=tuple(spec.get("gender", cls.genders)),
                n_age=int(spec.get("age_bands", cls.n_age)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad cell_schema: {exc}") from None

    def to_mapping(self) -> dict:
        return {
            "race": list(self.races),
            "ethnicity": list(self.ethnicities),
            "gender": list(self.genders),
            "age_bands": self.n_age,
        }


DEFAULT_SCHEMA = CellSchema()


class CellKey(NamedTuple):
    race: str
    ethnicity: str
    gender: str
    age_band: int


class SurveyRecord(NamedTuple):
    area_id: int
    cell: CellKey
    y: int
    weight: float

    @property
    def age_band(self) -> int:
        return self.cell.age_band


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CellFrame:
    """Census counts, dense ``(m, n_cells)`` with rows ordered by ``area_ids``."""

    area_ids: np.ndarray
    counts: np.ndarray
    schema: CellSchema = DEFAULT_SCHEMA
    n_filled: int = 0

    def __post_init__(self):
        object.__setattr__(self, "area_ids", _frozen(np.asarray(self.area_ids, dtype=np.int64)))
        object.__setattr__(self, "counts", _frozen(np.asarray(self.counts, dtype=np.int64)))

    @property
    def m(self) -> int:
        return len(self.area_ids)

    @property
    def totals(self) -> np.ndarray:
        """N_i for each area."""
        return self.counts.sum(axis=1)

    def count(self, area_id: int, key: CellKey) -> int:
        i = int(np.searchsorted(self.area_ids, area_id))
        return int(self.counts[i, self.schema.encode(key)])


@dataclass(frozen=True)
class AreaCovariateTable:
    """Raw area-level covariates plus the declared transform of each column."""

    area_ids: np.ndarray
    names: tuple[str, ...]
    transforms: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "area_ids", _frozen(np.asarray(self.area_ids, dtype=np.int64)))
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))
        for name, t in zip(self.names, self.transforms):
            if t not in TRANSFORMS:
                raise ConfigError(f"covariate {name!r}: unknown transform {t!r}")

    def transformed(self) -> np.ndarray:
        out = np.array(self.values, dtype=np.float64)
        for j, t in enumerate(self.transforms):
            if t == "logit":
                out[:, j] = np.log(out[:, j]) - np.log1p(-out[:, j])
        return out


@dataclass(frozen=True)
class LinkedDataset:
    """Immutable analysis dataset.

    Records are held column-wise and sorted by (area, cell); ties keep input
    order. ``covariates`` is aligned with ``area_ids`` and holds NaN rows for
    areas that have no covariate row (allowed only when they have no sample).
    """

    schema: CellSchema
    area_ids: np.ndarray
    area: np.ndarray
    cell: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    counts: np.ndarray
    covariate_names: tuple[str, ...]
    covariate_transforms: tuple[str, ...]
    covariates: np.ndarray
    n_ig: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "area_ids", _frozen(np.asarray(self.area_ids, dtype=np.int64)))
        object.__setattr__(self, "area", _frozen(np.asarray(self.area, dtype=np.int64)))
        object.__setattr__(self, "cell", _frozen(np.asarray(self.cell, dtype=np.int64)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=np.int8)))
        object.__setattr__(self, "weight", _frozen(np.asarray(self.weight, dtype=np.float64)))
        object.__setattr__(self, "counts", _frozen(np.asarray(self.counts, dtype=np.int64)))
        object.__setattr__(self, "covariates", _frozen(np.asarray(self.covariates, dtype=np.float64)))
        m, G = self.counts.shape
        n_ig = np.zeros((m, G), dtype=np.int64)
        np.add.at(n_ig, (self.area, self.cell), 1)
        object.__setattr__(self, "n_ig", _frozen(n_ig))

    @property
    def m(self) -> int:
        return len(self.area_ids)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_i(self) -> np.ndarray:
        return self.n_ig.sum(axis=1)

    @property
    def G_i(self) -> np.ndarray:
        """Number of cells represented in the sample of each area."""
        return (self.n_ig > 0).sum(axis=1)

    @property
    def age_band(self) -> np.ndarray:
        return self.schema.age_of_cells()[self.cell]

    @property
    def N_i(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def covariate(self, name: str) -> np.ndarray:
        """Transformed values of one area covariate, aligned with ``area_ids``."""
        j = self.covariate_names.index(name)
        table = AreaCovariateTable(self.area_ids, self.covariate_names,
                                   self.covariate_transforms, self.covariates)
        return table.transformed()[:, j]

    def records(self) -> list[SurveyRecord]:
        return [
            SurveyRecord(int(self.area_ids[a]), self.schema.decode(int(c)), int(y), float(w))
            for a, c, y, w in zip(self.area, self.cell, self.y, self.weight)
        ]

    def cell_frame(self) -> CellFrame:
        return CellFrame(self.area_ids, self.counts, self.schema)

    def covariate_table(self) -> AreaCovariateTable:
        keep = ~np.isnan(self.covariates).all(axis=1) if self.covariates.size else np.ones(self.m, bool)
        return AreaCovariateTable(self.area_ids[keep], self.covariate_names,
                                  self.covariate_transforms, self.covariates[keep])

    def subset_records(self, mask: np.ndarray) -> "LinkedDataset":
        """Same census and covariates, only the records selected by ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        return LinkedDataset(self.schema, self.area_ids, self.area[mask], self.cell[mask],
                             self.y[mask], self.weight[mask], self.counts,
                             self.covariate_names, self.covariate_transforms, self.covariates)

    def with_outcomes(self, y: np.ndarray) -> "LinkedDataset":
        return LinkedDataset(self.schema, self.area_ids, self.area, self.cell, y,
                             self.weight, self.counts, self.covariate_names,
                             self.covariate_transforms, self.covariates)

    def with_weights(self, weight: np.ndarray) -> "LinkedDataset":
        return LinkedDataset(self.schema, self.area_ids, self.area, self.cell, self.y,
                             weight, self.counts, self.covariate_names,
                             self.covariate_transforms, self.covariates)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _open(source: Source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    return _NoClose(source)


class _NoClose:
    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        return False


def _reader(stream, required: Sequence[str]) -> tuple[csv.reader, dict[str, int]]:
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MissingColumn("empty file, header row required", 1) from None
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s) {', '.join(missing)}", 1)
    return reader, {name: header.index(name) for name in header}


def _raise_collected(errors: list[RowError]) -> None:
    if errors:
        first = errors[0]
        first.errors = errors
        raise first


def _parse_int(text: str, what: str, row: int, exc=BadEnumLevel) -> int:
    try:
        value = float(text)
    except ValueError:
        raise exc(f"{what} {text!r} is not a number", row) from None
    if not value.is_integer():
        raise exc(f"{what} {text!r} is not an integer", row)
    return int(value)


def _cell_from_row(fields, cols, schema: CellSchema, row: int) -> CellKey:
    race = schema.match("race", fields[cols["race"]], row)
    eth = schema.match("ethnicity", fields[cols["ethnicity"]], row)
    gender = schema.match("gender", fields[cols["gender"]], row)
    age = _parse_int(fields[cols["age_band"]], "age_band", row)
    if not 1 <= age <= schema.n_age:
        raise BadEnumLevel(f"age_band {age} outside 1..{schema.n_age}", row)
    return CellKey(race, eth, gender, age)


def parse_survey(source: Source, schema: CellSchema = DEFAULT_SCHEMA) -> list[SurveyRecord]:
    """Parse ``area_id,race,ethnicity,gender,age_band,y,weight`` rows.

    Every row is checked. If any fail, the first error is raised and its
    ``errors`` attribute lists all failing rows.
    """
    records: list[SurveyRecord] = []
    errors: list[RowError] = []
    with _open(source) as stream:
        reader, cols = _reader(stream, SURVEY_COLUMNS)
        for row, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            try:
                if len(fields) < len(cols):
                    raise MissingColumn(f"expected {len(cols)} fields, got {len(fields)}", row)
                area = _parse_int(fields[cols["area_id"]], "area_id", row)
                cell = _cell_from_row(fields, cols, schema, row)
                y_text = fields[cols["y"]].strip()
                if y_text not in {"0", "1", "0.0", "1.0"}:
                    raise NonBinaryOutcome(f"y {y_text!r} not in {{0,1}}", row)
                try:
                    w = float(fields[cols["weight"]])
                except ValueError:
                    raise NonpositiveWeight(f"weight {fields[cols['weight']]!r} is not a number", row) from None
                if not (math.isfinite(w) and w > 0):
                    raise NonpositiveWeight(f"weight {w!r} must be positive and finite", row)
                records.append(SurveyRecord(area, cell, int(float(y_text)), w))
            except RowError as exc:
                errors.append(exc)
    _raise_collected(errors)
    return records


def parse_census(source: Source, schema: CellSchema = DEFAULT_SCHEMA) -> CellFrame:
    """Parse ``area_id,race,ethnicity,gender,age_band,count`` into a dense frame.

    Cells absent from the file are filled with zero; how many were filled is
    logged and kept on ``CellFrame.n_filled``.
    """
    seen: dict[tuple[int, int], int] = {}
    errors: list[RowError] = []
    with _open(source) as stream:
        reader, cols = _reader(stream, CENSUS_COLUMNS)
        for row, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            try:
                if len(fields) < len(cols):
                    raise MissingColumn(f"expected {len(cols)} fields, got {len(fields)}", row)
                area = _parse_int(fields[cols["area_id"]], "area_id", row)
                g = schema.encode(_cell_from_row(fields, cols, schema, row))
                count = _parse_int(fields[cols["count"]], "count", row, exc=NegativeCount)
                if count < 0:
                    raise NegativeCount(f"count {count} is negative", row)
                if (area, g) in seen:
                    raise DuplicateCell(f"cell {schema.decode(g)} of area {area} repeated", row)
                seen[(area, g)] = count
            except RowError as exc:
                errors.append(exc)
    _raise_collected(errors)

    area_ids = np.array(sorted({a for a, _ in seen}), dtype=np.int64)
    counts = np.zeros((len(area_ids), schema.n_cells), dtype=np.int64)
    pos = {a: i for i, a in enumerate(area_ids.tolist())}
    for (a, g), c in seen.items():
        counts[pos[a], g] = c
    empty = area_ids[counts.sum(axis=1) == 0]
    if len(empty):
        raise AreaWithZeroPopulation(f"area(s) {empty.tolist()} have zero population")
    n_filled = counts.size - len(seen)
    if n_filled:
        log.warning("census: %d absent (area, cell) rows set to 0", n_filled)
    return CellFrame(area_ids, counts, schema, n_filled)


def parse_covariates(source: Source, transforms: dict[str, str] | None = None) -> AreaCovariateTable:
    """Parse ``area_id,<name>,...``; ``transforms`` maps column -> identity|logit."""
    transforms = dict(transforms or {})
    with _open(source) as stream:
        reader, cols = _reader(stream, ("area_id",))
        names = tuple(n for n in sorted(cols, key=cols.get) if n != "area_id")
        unknown = set(transforms) - set(names)
        if unknown:
            raise ConfigError(f"transforms declared for absent covariate(s) {sorted(unknown)}")
        tags = tuple(transforms.get(n, "identity") for n in names)
        ids, rows = [], []
        errors: list[RowError] = []
        for row, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            try:
                if len(fields) < len(cols):
                    raise MissingColumn(f"expected {len(cols)} fields, got {len(fields)}", row)
                ids.append(_parse_int(fields[cols["area_id"]], "area_id", row))
                vals = []
                for name, tag in zip(names, tags):
                    try:
                        v = float(fields[cols[name]])
                    except ValueError:
                        raise RowError(f"{name} {fields[cols[name]]!r} is not a number", row) from None
                    if not math.isfinite(v):
                        raise RowError(f"{name} is not finite", row)
                    if tag == "logit" and not 0.0 < v < 1.0:
                        raise RowError(f"{name}={v} must lie in (0,1) for a logit transform", row)
                    vals.append(v)
                rows.append(vals)
            except RowError as exc:
                errors.append(exc)
    _raise_collected(errors)
    if len(set(ids)) != len(ids):
        raise DatasetError("area_covariates: duplicate area_id rows")
    order = np.argsort(ids, kind="stable")
    values = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))[order]
    return AreaCovariateTable(np.array(ids, dtype=np.int64)[order], names, tags, values)


def read_transforms(path: Source) -> dict[str, str]:
    """Read a covariate sidecar: a mapping ``{transforms: {column: tag}}``."""
    with _open(path) as stream:
        doc = yaml.safe_load(stream) or {}
    tags = doc.get("transforms", doc)
    if not isinstance(tags, dict):
        raise ConfigError("covariate sidecar must map column names to identity|logit")
    return {str(k): str(v).lower() for k, v in tags.items()}


# ---------------------------------------------------------------------------
# linking
# ---------------------------------------------------------------------------


def link(records: Iterable[SurveyRecord], cells: CellFrame,
         covariates: AreaCovariateTable | None = None) -> LinkedDataset:
    """Cross-validate the three tables and build the analysis dataset."""
    schema = cells.schema
    records = list(records)
    pos = {a: i for i, a in enumerate(cells.area_ids.tolist())}
    area = np.empty(len(records), dtype=np.int64)
    cell = np.empty(len(records), dtype=np.int64)
    for k, rec in enumerate(records):
        if rec.area_id not in pos:
            raise UnknownArea(f"survey area {rec.area_id} is not in the census table")
        area[k] = pos[rec.area_id]
        cell[k] = schema.encode(rec.cell)
    y = np.array([r.y for r in records], dtype=np.int8)
    w = np.array([r.weight for r in records], dtype=np.float64)
    order = np.lexsort((cell, area))
    area, cell, y, w = area[order], cell[order], y[order], w[order]

    if covariates is None:
        covariates = AreaCovariateTable(np.empty(0, np.int64), (), (), np.empty((0, 0)))
    q = len(covariates.names)
    cov = np.full((cells.m, q), np.nan)
    for a, vals in zip(covariates.area_ids.tolist(), covariates.values):
        if a in pos:
            cov[pos[a]] = vals
    if q:
        sampled = np.unique(area)
        lacking = [int(cells.area_ids[i]) for i in sampled if np.isnan(cov[i]).any()]
        if lacking:
            raise MissingCovariateRow(f"sampled area(s) {lacking} have no covariate row")

    return LinkedDataset(schema, cells.area_ids, area, cell, y, w, cells.counts,
                         covariates.names, covariates.transforms, cov)


def load_dataset(survey: Source, census: Source, covariates: Source | None = None,
                 transforms: dict[str, str] | None = None,
                 schema: CellSchema = DEFAULT_SCHEMA) -> LinkedDataset:
    """Parse and link the three CSV inputs.

    When ``transforms`` is None and ``covariates`` is a path, a sidecar next to
    it with the same stem and a ``.yaml`` suffix is used if present.
    """
    records = parse_survey(survey, schema)
    cells = parse_census(census, schema)
    table = None
    if covariates is not None:
        if transforms is None and isinstance(covariates, (str, os.PathLike)):
            sidecar = Path(covariates).with_suffix(".yaml")
            transforms = read_transforms(sidecar) if sidecar.exists() else {}
        table = parse_covariates(covariates, transforms)
    return link(records, cells, table)


def load_dir(directory: str | os.PathLike, schema: CellSchema = DEFAULT_SCHEMA) -> LinkedDataset:
    d = Path(directory)
    cov = d / "area_covariates.csv"
    return load_dataset(d / "survey.csv", d / "census.csv", cov if cov.exists() else None,
                        schema=schema)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def survey_csv(ds: LinkedDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SURVEY_COLUMNS)
    for a, c, y, wt in zip(ds.area, ds.cell, ds.y, ds.weight):
        key = ds.schema.decode(int(c))
        w.writerow([int(ds.area_ids[a]), key.race, key.ethnicity, key.gender,
                    key.age_band, int(y), _fmt(wt)])
    return buf.getvalue()


def census_csv(ds: LinkedDataset | CellFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CENSUS_COLUMNS)
    schema = ds.schema
    for i, a in enumerate(ds.area_ids):
        for g in range(schema.n_cells):
            key = schema.decode(g)
            w.writerow([int(a), key.race, key.ethnicity, key.gender, key.age_band,
                        int(ds.counts[i, g])])
    return buf.getvalue()


def covariates_csv(ds: LinkedDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("area_id",) + ds.covariate_names)
    for a, row in zip(ds.area_ids, ds.covariates):
        if ds.covariate_names and np.isnan(row).all():
            continue
        w.writerow([int(a)] + [_fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_dataset(ds: LinkedDataset, directory: str | os.PathLike) -> Path:
    """Write survey.csv, census.csv, area_covariates.csv and its sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _atomic_write(d / "survey.csv", survey_csv(ds))
    _atomic_write(d / "census.csv", census_csv(ds))
    _atomic_write(d / "area_covariates.csv", covariates_csv(ds))
    sidecar = {"transforms": dict(zip(ds.covariate_names, ds.covariate_transforms))}
    _atomic_write(d / "area_covariates.yaml", yaml.safe_dump(sidecar, sort_keys=True))
    return d


def dataset_checksum(ds: LinkedDataset) -> str:
    """SHA-256 over the canonical CSV serialization."""
    h = hashlib.sha256()
    for part in (survey_csv(ds), census_csv(ds), covariates_csv(ds),
                 repr(sorted(zip(ds.covariate_names, ds.covariate_transforms))),
                 repr(ds.schema.to_mapping())):
        h.update(part.encode())
        h.update(b"\0")
    return h.hexdigest()


def validate(ds: LinkedDataset) -> list[str]:
    """Check dataset invariants; returns a list of violations (empty when valid)."""
    problems = []
    if ds.n_i.sum() != ds.n:
        problems.append("sum of n_i differs from n")
    if (ds.counts < 0).any():
        problems.append("negative census counts")
    if (ds.N_i <= 0).any():
        problems.append("area with zero population")
    if ds.n and ((ds.weight <= 0).any() or not np.isfinite(ds.weight).all()):
        problems.append("nonpositive or nonfinite weights")
    if ds.n and not np.isin(ds.y, (0, 1)).all():
        problems.append("non-binary outcomes")
    if ds.n and (ds.counts[ds.area, ds.cell] == 0).any():
        bad = int((ds.counts[ds.area, ds.cell] == 0).sum())
        log.warning("%d record(s) fall in census cells with zero population", bad)
    for j, t in enumerate(ds.covariate_transforms):
        col = ds.covariates[:, j]
        col = col[~np.isnan(col)]
        if t == "logit" and ((col <= 0) | (col >= 1)).any():
            problems.append(f"logit covariate {ds.covariate_names[j]} outside (0,1)")
    return problems
