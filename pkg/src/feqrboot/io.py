"""Long-format panel CSV ingestion, covariate transforms and report output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateCell, NonPositiveLog, ParseError, UnbalancedPanel, ZeroQuadraticTerm
from .panel import PanelDataset

SCHEMA_VERSION = 1
TRANSFORM_OPS = ("log", "square", "none")


@dataclass(frozen=True)
class Transform:
    column: str
    op: str
    new_name: str

    def __post_init__(self):
        if self.op not in TRANSFORM_OPS:
            raise ValueError(f"unknown transform op {self.op!r}; expected one of {', '.join(TRANSFORM_OPS)}")
        if not self.column or not self.new_name:
            raise ValueError("transform needs a source column and a new name")


def parse_transforms(text: str | None) -> tuple:
    """Parse ``"gdp:log:ln_gdp,ln_gdp:square:ln_gdp_sq"`` into transforms."""
    if not text:
        return ()
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = [s.strip() for s in item.split(":")]
        if len(parts) != 3:
            raise ValueError(f"transform {item!r} must look like column:op:new_name")
        out.append(Transform(*parts))
    return tuple(out)


@dataclass(frozen=True)
class PanelCsvSpec:
    path: str
    unit_col: str
    time_col: str
    response_col: str
    covariate_cols: tuple = ()
    transforms: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        names = [self.unit_col, self.time_col, self.response_col, *self.covariate_cols]
        if len(set(names)) != len(names):
            raise ValueError(f"unit, time, response and covariate columns must be distinct: {names}")
        produced = [t.new_name for t in self.transforms]
        if len(set(produced)) != len(produced):
            raise ValueError("transform output names must be distinct")
        if {self.unit_col, self.time_col} & set(produced):
            raise ValueError("transforms cannot overwrite the unit or time column")


def _time_key(labels):
    try:
        vals = [float(t) for t in labels]
    except ValueError:
        return sorted(labels)
    return [t for _, t in sorted(zip(vals, labels))]


def _number(text, column, row):
    if text is None:
        raise ParseError(f"missing value for column {column!r}", row)
    s = text.strip()
    if not s:
        raise ParseError(f"empty value for column {column!r}", row)
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {s!r} as a number", row) from None
    if not math.isfinite(v):
        raise ParseError(f"column {column!r}: non-finite value {s!r}", row)
    return v


def load_panel(spec: PanelCsvSpec) -> PanelDataset:
    """Read a long-format (one row per unit-period) CSV into a balanced panel.

    Units keep their order of first appearance; periods are sorted
    numerically when every label is numeric and lexically otherwise.
    Transforms run per row in declared order and may read earlier outputs.
    Row numbers in errors count the header as row 1.
    """
    with open(spec.path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty; a header row is required", 1) from None
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header", 1)
        produced = set()
        for t in spec.transforms:
            if t.column not in header and t.column not in produced:
                raise ParseError(f"transform source column {t.column!r} not found", 1)
            if t.new_name in header:
                raise ParseError(f"transform output {t.new_name!r} collides with an existing column", 1)
            produced.add(t.new_name)
        for col in (spec.unit_col, spec.time_col, spec.response_col, *spec.covariate_cols):
            if col not in header and col not in produced:
                raise ParseError(f"column {col!r} not found", 1)
        needed = [t.column for t in spec.transforms] + [spec.response_col, *spec.covariate_cols]
        numeric = list(dict.fromkeys(c for c in needed if c not in produced))
        index = {h: k for k, h in enumerate(header)}
        ui, ti = index[spec.unit_col], index[spec.time_col]

        cells = {}
        unit_order = []
        seen_units = set()
        times = set()
        for rowno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(rec)}", rowno)
            unit, time = rec[ui].strip(), rec[ti].strip()
            if not unit or not time:
                raise ParseError("empty unit or time label", rowno)
            vals = {c: _number(rec[index[c]], c, rowno) for c in numeric}
            for t in spec.transforms:
                v = vals[t.column]
                if t.op == "log":
                    if v <= 0.0:
                        raise NonPositiveLog(f"row {rowno}: log of non-positive value {v!r} in column {t.column!r}")
                    v = math.log(v)
                elif t.op == "square":
                    v = v * v
                vals[t.new_name] = v
            key = (unit, time)
            if key in cells:
                raise DuplicateCell(f"row {rowno}: unit {unit!r} has period {time!r} twice")
            if unit not in seen_units:
                seen_units.add(unit)
                unit_order.append(unit)
            cells[key] = [vals[spec.response_col]] + [vals[c] for c in spec.covariate_cols]
            times.add(time)
    if not cells:
        raise ParseError("no data rows", 2)

    time_order = _time_key(times)
    per_unit = {u: 0 for u in unit_order}
    for u, _ in cells:
        per_unit[u] += 1
    short = [u for u in unit_order if per_unit[u] != len(time_order)]
    if short:
        missing = {u: sorted(set(time_order) - {t for (uu, t) in cells if uu == u}) for u in short}
        detail = "; ".join(f"{u} missing {m}" for u, m in missing.items())
        raise UnbalancedPanel(f"unbalanced panel: {detail}", short)

    n, T, p = len(unit_order), len(time_order), len(spec.covariate_cols)
    arr = np.empty((n, T, 1 + p))
    for i, u in enumerate(unit_order):
        for t, tl in enumerate(time_order):
            arr[i, t] = cells[(u, tl)]
    return PanelDataset(arr[:, :, 0], arr[:, :, 1:], tuple(unit_order), tuple(time_order), spec.covariate_cols)


def write_panel_csv(data: PanelDataset, path, response_name: str = "y") -> None:
    """Write a panel in long format with full-precision numbers."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "time", response_name, *data.covariate_names])
        for i, u in enumerate(data.unit_labels):
            for t, tl in enumerate(data.time_labels):
                wr.writerow([u, tl, repr(float(data.y[i, t])), *(repr(float(v)) for v in data.X[i, t])])


def turning_point(beta1: float, beta2: float) -> float:
    """Turning point ``-beta1 / (2 beta2)`` of a quadratic in the covariate."""
    if beta2 == 0.0:
        raise ZeroQuadraticTerm("quadratic coefficient is zero; no turning point")
    return -float(beta1) / (2.0 * float(beta2))


def is_ekc_shape(beta1: float, beta2: float) -> bool:
    """Inverted-U shape: rising linear term and negative quadratic term."""
    return beta1 > 0.0 and beta2 < 0.0


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_report(report: dict) -> str:
    """Serialize a report with ``schema_version`` first and full float precision."""
    body = {"schema_version": SCHEMA_VERSION}
    body.update({k: v for k, v in report.items() if k != "schema_version"})
    return json.dumps(to_jsonable(body), indent=2, allow_nan=False) + "\n"


def fmt6(v) -> str:
    """Six significant digits for tables."""
    if v is None:
        return ""
    return f"{float(v):.6g}"
