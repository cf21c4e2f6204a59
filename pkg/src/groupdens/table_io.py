"""Reading and writing grouped summary tables.

Two encodings share one schema:

* delimited text (canonical)::

      # schema_version: 1
      # transform: log10
      lower,upper,freq,mean,sd,skewness,kurtosis_excess
      0,3.00,1168,2.462,0.580,-1.793,2.401

  Lines starting with ``#`` carry ``key: value`` metadata; blank lines are
  ignored.  Moment columns may be omitted or left empty.

* structured text (JSON)::

      {"schema_version": 1, "transform": "none",
       "classes": [{"lower": 0, "upper": 3, "freq": 1168, "mean": 2.462}]}

The encoding is detected from the first non-blank character.  Every problem
raises :class:`TableValidationError` carrying a machine-readable ``code`` and
the offending line (delimited text) or record number (JSON).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetError, GroupedDataset
from .density_model import convert_summary_to_central_moments

SCHEMA_VERSION = 1
BOUND_COLUMNS = ("lower", "upper", "freq")
MOMENT_COLUMNS = ("mean", "sd", "skewness", "kurtosis_excess")
COLUMNS = BOUND_COLUMNS + MOMENT_COLUMNS
ORDERS_BY_PREFIX = {0: 0, 1: 1, 2: 2, 4: 4}


class TableValidationError(DatasetError):
    """A summary table that cannot be turned into a grouped dataset."""

    def __init__(self, code: str, message: str, location: str | None = None):
        self.code = code
        self.location = location
        self.message = message
        super().__init__(f"{location}: {message}" if location else message)

    def as_dict(self) -> dict:
        return {"code": self.code, "location": self.location, "message": self.message}


@dataclass(frozen=True)
class SummaryRecord:
    """One class of a summary table; absent moments are ``None``."""

    lower: float
    upper: float
    freq: int
    mean: float | None = None
    sd: float | None = None
    skewness: float | None = None
    kurtosis_excess: float | None = None

    def moment_values(self) -> tuple:
        return tuple(getattr(self, c) for c in MOMENT_COLUMNS)

    @property
    def order(self) -> int:
        given = [v is not None for v in self.moment_values()]
        return sum(given) if all(given[:sum(given)]) else -1


@dataclass(frozen=True)
class SummaryTable:
    """Per-class records plus the transform tag and schema version."""

    records: tuple
    transform: str = "none"
    schema_version: int = SCHEMA_VERSION
    locations: tuple = field(default=(), compare=False, repr=False)

    @property
    def order(self) -> int:
        orders = {r.order for r in self.records if r.freq > 0 and r.order != 0}
        return orders.pop() if orders else 0

    def to_dataset(self) -> GroupedDataset:
        """Validated dataset; skewness and excess kurtosis become central moments."""
        validate_table(self)
        R = self.order
        cuts = [self.records[0].lower] + [r.upper for r in self.records]
        freqs = [r.freq for r in self.records]
        moments = np.full((len(self.records), 4), np.nan)
        for j, rec in enumerate(self.records):
            if R == 0 or rec.order == 0:
                continue
            vals = [v if v is not None else 0.0 for v in rec.moment_values()]
            moments[j] = convert_summary_to_central_moments(*vals)
        try:
            return GroupedDataset(np.array(cuts), np.array(freqs), moments, R, self.transform)
        except DatasetError as exc:
            raise TableValidationError("E_DATASET", str(exc)) from exc

    @classmethod
    def from_dataset(cls, dataset: GroupedDataset) -> "SummaryTable":
        """Inverse of :meth:`to_dataset` (up to floating-point rounding)."""
        R = dataset.order
        records = []
        for j in range(dataset.J):
            vals = [None] * 4
            if R >= 1 and dataset.freqs[j] > 0:
                m = dataset.moments[j]
                vals[0] = float(m[0])
                if R >= 2:
                    sd = math.sqrt(m[1])
                    vals[1] = sd
                if R == 4:
                    # a (numerically) degenerate class has zero higher moments
                    scale3, scale4 = sd ** 3, m[1] ** 2
                    vals[2] = float(m[2] / scale3) if scale3 > 0 else 0.0
                    vals[3] = float(m[3] / scale4 - 3.0) if scale4 > 0 else 0.0
            records.append(SummaryRecord(float(dataset.class_cuts[j]),
                                         float(dataset.class_cuts[j + 1]),
                                         int(dataset.freqs[j]), *vals))
        return cls(tuple(records), dataset.transform)


def _where(table: SummaryTable, j: int) -> str | None:
    return table.locations[j] if j < len(table.locations) else f"record {j + 1}"


def validate_table(table: SummaryTable) -> None:
    """Raise :class:`TableValidationError` on the first schema violation."""
    if table.schema_version != SCHEMA_VERSION:
        raise TableValidationError("E_VERSION",
                                   f"unsupported schema version {table.schema_version}")
    if table.transform not in ("none", "log10"):
        raise TableValidationError("E_TRANSFORM", f"unknown transform {table.transform!r}")
    if not table.records:
        raise TableValidationError("E_EMPTY", "table has no classes")
    order = None
    for j, rec in enumerate(table.records):
        where = _where(table, j)
        for name in ("lower", "upper") + MOMENT_COLUMNS:
            v = getattr(rec, name)
            if v is not None and not math.isfinite(v):
                raise TableValidationError("E_VALUE", f"{name} must be finite", where)
        if rec.freq < 0:
            raise TableValidationError("E_NEG_FREQ", f"negative frequency {rec.freq}", where)
        if not rec.lower < rec.upper:
            raise TableValidationError(
                "E_INTERVAL", f"lower {rec.lower} is not below upper {rec.upper}", where)
        if j > 0:
            prev = table.records[j - 1].upper
            if rec.lower < prev:
                raise TableValidationError(
                    "E_OVERLAP", f"interval starting at {rec.lower} overlaps the previous "
                    f"one ending at {prev}", where)
            if rec.lower > prev:
                raise TableValidationError(
                    "E_GAP", f"gap between boundary {prev} and {rec.lower}", where)
        R = rec.order
        if R < 0:
            raise TableValidationError(
                "E_MOMENT_PREFIX", "moment columns must be filled left to right "
                "(mean, sd, skewness, kurtosis_excess)", where)
        if R not in ORDERS_BY_PREFIX:
            raise TableValidationError(
                "E_MOMENT_ORDER", "skewness requires kurtosis_excess (orders 0, 1, 2, 4)", where)
        if rec.sd is not None and rec.sd < 0:
            raise TableValidationError("E_NEG_SD", f"negative standard deviation {rec.sd}",
                                       where)
        if rec.mean is not None and not rec.lower < rec.mean <= rec.upper:
            raise TableValidationError(
                "E_MEAN_OUTSIDE", f"mean {rec.mean} outside ({rec.lower}, {rec.upper}]", where)
        if R == 4 and rec.kurtosis_excess < rec.skewness ** 2 - 2.0 - 1e-12:
            raise TableValidationError(
                "E_MOMENT_INEQUALITY",
                "excess kurtosis below skewness^2 - 2 is impossible", where)
        if rec.freq == 0 and R == 0:
            continue  # empty classes may leave their moments blank
        if order is None:
            order = R
        elif R != order:
            raise TableValidationError(
                "E_MIXED_ORDER", f"class has moment order {R} but earlier classes have "
                f"{order}", where)
    if sum(r.freq for r in table.records) < 1:
        raise TableValidationError("E_EMPTY", "total frequency must be at least 1")


def _number(text: str, name: str, where: str, integer: bool = False):
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise TableValidationError("E_VALUE", f"{name}: {text!r} is not a number",
                                   where) from None
    if not math.isfinite(value):
        raise TableValidationError("E_VALUE", f"{name} must be finite", where)
    if integer:
        if value != round(value):
            raise TableValidationError("E_FREQ", f"frequency {text!r} is not an integer",
                                       where)
        return int(round(value))
    return value


def _record(values: dict, where: str) -> SummaryRecord:
    parsed = {}
    for name in COLUMNS:
        raw = values.get(name)
        if raw is None:
            parsed[name] = None
            continue
        if isinstance(raw, bool):
            raise TableValidationError("E_VALUE", f"{name} must be a number", where)
        if isinstance(raw, (int, float)):
            raw = repr(raw)
        elif not isinstance(raw, str):
            raise TableValidationError("E_VALUE", f"{name} must be a number", where)
        parsed[name] = _number(raw, name, where, integer=(name == "freq"))
    for name in BOUND_COLUMNS:
        if parsed[name] is None:
            raise TableValidationError("E_MISSING", f"missing value for {name}", where)
    return SummaryRecord(**parsed)


def _parse_metadata(line: str, meta: dict, where: str) -> None:
    body = line.lstrip("#").strip()
    if ":" not in body:
        return  # free comment
    key, value = (s.strip() for s in body.split(":", 1))
    if key == "schema_version":
        try:
            meta[key] = int(value)
        except ValueError:
            raise TableValidationError("E_VERSION", f"bad schema version {value!r}",
                                       where) from None
    elif key == "transform":
        meta[key] = value


def _read_delimited(text: str) -> SummaryTable:
    meta: dict = {}
    header = None
    records, locations = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"line {lineno}"
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            _parse_metadata(line, meta, where)
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip().lower() for c in cells]
            unknown = [c for c in header if c not in COLUMNS]
            if unknown:
                raise TableValidationError("E_COLUMN", f"unknown column {unknown[0]!r}", where)
            if len(set(header)) != len(header):
                raise TableValidationError("E_COLUMN", "duplicate column", where)
            missing = [c for c in BOUND_COLUMNS if c not in header]
            if missing:
                raise TableValidationError("E_COLUMN", f"missing column {missing[0]!r}", where)
            continue
        if len(cells) != len(header):
            raise TableValidationError(
                "E_ROW", f"expected {len(header)} fields, found {len(cells)}", where)
        records.append(_record(dict(zip(header, cells)), where))
        locations.append(where)
    if header is None:
        raise TableValidationError("E_EMPTY", "no header line found")
    return SummaryTable(tuple(records), meta.get("transform", "none"),
                        meta.get("schema_version", SCHEMA_VERSION), tuple(locations))


def _read_structured(text: str) -> SummaryTable:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TableValidationError("E_PARSE", exc.msg, f"line {exc.lineno}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), list):
        raise TableValidationError("E_SCHEMA", "expected an object with a 'classes' list")
    unknown = set(doc) - {"schema_version", "transform", "classes"}
    if unknown:
        raise TableValidationError("E_SCHEMA", f"unknown key {sorted(unknown)[0]!r}")
    records, locations = [], []
    for j, item in enumerate(doc["classes"]):
        where = f"record {j + 1}"
        if not isinstance(item, dict):
            raise TableValidationError("E_SCHEMA", "class entry must be an object", where)
        bad = set(item) - set(COLUMNS)
        if bad:
            raise TableValidationError("E_COLUMN", f"unknown field {sorted(bad)[0]!r}", where)
        records.append(_record(item, where))
        locations.append(where)
    version = doc.get("schema_version", SCHEMA_VERSION)
    if not isinstance(version, int) or isinstance(version, bool):
        raise TableValidationError("E_VERSION", f"bad schema version {version!r}")
    transform = doc.get("transform", "none")
    if not isinstance(transform, str):
        raise TableValidationError("E_TRANSFORM", "transform must be a string")
    return SummaryTable(tuple(records), transform, version, tuple(locations))


def read_summary_table(source) -> SummaryTable:
    """Parse a path, a text stream, or a string of table text (auto-detected)."""
    inline = isinstance(source, str) and ("\n" in source or source.lstrip().startswith("{"))
    if isinstance(source, (str, os.PathLike)) and not inline:
        path = Path(source)
        if not path.exists():
            raise TableValidationError("E_IO", f"no such file: {path}")
        text = path.read_text(encoding="utf-8")
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    table = (_read_structured(text) if text.lstrip().startswith("{")
             else _read_delimited(text))
    validate_table(table)
    return table


def parse_summary_table(source) -> GroupedDataset:
    """Summary table file (or stream) -> validated :class:`GroupedDataset`."""
    return read_summary_table(source).to_dataset()


def _fmt(value) -> str:
    if value is None:
        return ""
    return str(value) if isinstance(value, int) else repr(float(value))


def format_summary_table(table: SummaryTable, fmt: str = "csv") -> str:
    """Text of ``table``; floats use ``repr`` so re-reading is exact."""
    if fmt == "json":
        classes = []
        for rec in table.records:
            item = {"lower": rec.lower, "upper": rec.upper, "freq": rec.freq}
            for name in MOMENT_COLUMNS:
                if getattr(rec, name) is not None:
                    item[name] = getattr(rec, name)
            classes.append(item)
        doc = {"schema_version": table.schema_version, "transform": table.transform,
               "classes": classes}
        return json.dumps(doc, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown table format {fmt!r}")
    R = table.order
    cols = list(BOUND_COLUMNS) + list(MOMENT_COLUMNS[:R])
    buf = io.StringIO()
    buf.write(f"# schema_version: {table.schema_version}\n")
    buf.write(f"# transform: {table.transform}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rec in table.records:
        writer.writerow([_fmt(getattr(rec, c)) for c in cols])
    return buf.getvalue()


def write_summary_table(table, path, fmt: str | None = None) -> None:
    """Write a :class:`SummaryTable` or :class:`GroupedDataset` atomically."""
    if isinstance(table, GroupedDataset):
        table = SummaryTable.from_dataset(table)
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    from .reports import write_text_atomic
    write_text_atomic(path, format_summary_table(table, fmt))
