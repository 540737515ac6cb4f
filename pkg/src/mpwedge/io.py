"""CSV ingestion with schema checks and CSV emission at fixed precision.

Validation errors name the file, the 1-based line (the header is line 1)
and the column.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from mpwedge.errors import ValidationError
from mpwedge.mortgage import LOAN_COLUMNS

FLOAT_FORMAT = "%.10g"


@dataclass(frozen=True)
class Schema:
    """Column rules for one file kind.

    ``columns`` maps required column -> kind (``int``, ``float``, ``key``).
    ``optional`` columns may be absent; ``nullable`` ones may hold empty
    fields. ``extra`` is the kind for unlisted columns, or None to reject them.
    """

    columns: dict
    key: tuple = ()
    optional: dict = field(default_factory=dict)
    nullable: tuple = ()
    nonnegative: tuple = ()
    positive: tuple = ()
    extra: str | None = None
    fixed_order: bool = False


SCHEMAS = {
    "loans": Schema(
        columns={"loan_id": "key", "county": "int", "lender": "key", "vintage_year": "int",
                 "annual_rate": "float", "principal": "float"},
        key=("loan_id",), nonnegative=("annual_rate",), positive=("principal",),
        extra="float", fixed_order=True),
    "flows": Schema(columns={"origin": "int", "destination": "int", "count": "float"},
                    key=("origin", "destination"), nonnegative=("count",)),
    "centroids": Schema(columns={"cz": "int", "latitude": "float", "longitude": "float",
                                 "population": "float"},
                        key=("cz",), nonnegative=("population",)),
    "crosswalk": Schema(columns={"county": "int", "cz": "int", "weight": "float"},
                        key=("county", "cz"), nonnegative=("weight",)),
    "panel": Schema(columns={"unit": "int", "period": "int", "cluster": "key"},
                    optional={"group": "int", "weight": "float"},
                    key=("unit", "period", "group"), positive=("weight",), extra="float"),
    "exposure": Schema(columns={"cz": "int", "p_new": "float", "wop": "float", "mpw": "float"},
                       optional={"predicted_wop": "float"}, key=("cz",),
                       nullable=("p_new", "wop", "mpw", "predicted_wop")),
    "bartik": Schema(columns={"cz": "int", "soc": "int", "year": "int", "b": "float"},
                     optional={"b_raw": "float"}, key=("cz", "soc", "year")),
    "eventstudy": Schema(columns={"year": "int", "coef": "float", "se": "float",
                                  "ci_lo": "float", "ci_hi": "float", "reference": "int"},
                         key=("year",)),
}

RANGES = {("centroids", "latitude"): 90.0, ("centroids", "longitude"): 180.0}


def _fail(path, msg, line=None, column=None):
    raise ValidationError(msg, file=os.fspath(path), line=line, column=column)


def _convert(raw: pd.Series, kind: str, path, col: str, nullable: bool) -> pd.Series:
    text = raw.str.strip()
    empty = text == ""
    if empty.any() and not nullable:
        _fail(path, "missing value", int(np.flatnonzero(empty.to_numpy())[0]) + 2, col)
    if kind == "key":
        return text
    num = pd.to_numeric(text.where(~empty), errors="coerce")
    bad = num.isna() & ~empty
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        _fail(path, f"expected {kind}, got {raw.iloc[i]!r}", i + 2, col)
    if kind == "int":
        frac = num.notna() & (num != np.round(num))
        if frac.any():
            i = int(np.flatnonzero(frac.to_numpy())[0])
            _fail(path, f"expected int, got {raw.iloc[i]!r}", i + 2, col)
        if not empty.any():
            return num.astype(np.int64)
    return num.astype(float)


def read_table(path, kind: str) -> pd.DataFrame:
    """Read and validate one CSV file of the given ``kind``."""
    if kind not in SCHEMAS:
        raise ValueError(f"unknown table kind {kind!r}")
    schema = SCHEMAS[kind]
    if not os.path.exists(path):
        _fail(path, "file not found")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        _fail(path, f"unreadable CSV ({exc})", 1)
    header = list(raw.columns)
    dupes = sorted({c for c in header if header.count(c) > 1})
    if dupes or any(c.startswith("Unnamed:") for c in header):
        _fail(path, "duplicate or blank column name", 1, (dupes or [""])[0])
    required = list(schema.columns)
    for col in required:
        if col not in header:
            _fail(path, "required column missing", 1, col)
    if schema.fixed_order and header[:len(required)] != required:
        _fail(path, f"header must begin with {','.join(required)}", 1)
    kinds = {**schema.columns, **{c: k for c, k in schema.optional.items() if c in header}}
    for col in header:
        if col not in kinds:
            if schema.extra is None:
                _fail(path, "unknown column", 1, col)
            kinds[col] = schema.extra

    out = pd.DataFrame(index=raw.index)
    for col in header:
        out[col] = _convert(raw[col], kinds[col], path, col, col in schema.nullable)
        vals = out[col]
        if col in schema.nonnegative and (vals < 0).any():
            _fail(path, "negative value", int(np.flatnonzero((vals < 0).to_numpy())[0]) + 2, col)
        if col in schema.positive and (vals <= 0).any():
            _fail(path, "value must be positive",
                  int(np.flatnonzero((vals <= 0).to_numpy())[0]) + 2, col)
        bound = RANGES.get((kind, col))
        if bound is not None and (vals.abs() > bound).any():
            _fail(path, f"value outside [-{bound:g}, {bound:g}]",
                  int(np.flatnonzero((vals.abs() > bound).to_numpy())[0]) + 2, col)
    key = [k for k in schema.key if k in out]
    if key:
        dup = out.duplicated(subset=key, keep="first").to_numpy()
        if dup.any():
            _fail(path, f"duplicate key ({', '.join(key)})", int(np.flatnonzero(dup)[0]) + 2,
                  key[0])
    if kind == "exposure":
        _check_exposure_identity(out, path)
    if kind == "crosswalk":
        sums = out.groupby("county")["weight"].sum()
        bad = sums.index[(sums - 1.0).abs() > 1e-6]
        if len(bad):
            line = int(np.flatnonzero((out["county"] == bad[0]).to_numpy())[0]) + 2
            _fail(path, f"weights for county {bad[0]} sum to {sums[bad[0]]:.10g}, not 1", line,
                  "weight")
    return out


def _check_exposure_identity(e: pd.DataFrame, path) -> None:
    # tolerance covers 10-significant-digit round trips
    both = e[["p_new", "wop", "mpw"]].notna().all(axis=1).to_numpy()
    scale = np.maximum(1.0, np.maximum(e["p_new"].abs(), e["wop"].abs())).to_numpy()
    gap = np.abs(e["mpw"] - (e["p_new"] - e["wop"])).to_numpy()
    bad = both & (gap > 1e-9 * scale)
    if bad.any():
        _fail(path, "mpw differs from p_new - wop", int(np.flatnonzero(bad)[0]) + 2, "mpw")
    half = e["mpw"].notna().to_numpy() & ~both
    if half.any():
        _fail(path, "mpw present while p_new or wop is missing", int(np.flatnonzero(half)[0]) + 2,
              "mpw")


def covariates_of(loans: pd.DataFrame) -> list[str]:
    return [c for c in loans.columns if c not in LOAN_COLUMNS]


def describe(tables: dict[str, pd.DataFrame]) -> str:
    """Row/column counts and missing-value totals, one line per table."""
    lines = []
    for name in sorted(tables):
        t = tables[name]
        miss = t.isna().sum()
        miss = {c: int(v) for c, v in miss.items() if v}
        lines.append(f"{name}: {len(t)} rows, {t.shape[1]} columns, missing values: "
                     + (", ".join(f"{c}={v}" for c, v in miss.items()) if miss else "none"))
    return "\n".join(lines)


def ingest(paths: dict[str, str], kinds: dict[str, str] | None = None) -> dict[str, pd.DataFrame]:
    """Validate every file in ``paths`` (name -> path); names double as kinds by default."""
    kinds = kinds or {}
    return {name: read_table(path, kinds.get(name, name)) for name, path in paths.items()}


def write_csv(frame: pd.DataFrame, path) -> None:
    """Write with 10 significant digits, empty fields for missing, LF line ends."""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
