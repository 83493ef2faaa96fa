"""Loading and preprocessing of the raw trial file.

The raw file is read into :class:`RawRecord` rows using a JSON schema that
binds logical names to CSV headers. :func:`preprocess` then restricts the
data to the two analysed arms, drops unusable rows (with an audit trail) and
applies the covariate transforms used by every model in the package.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

__all__ = [
    "COVARIATES",
    "AnalysisDataset",
    "PreprocessOptions",
    "PreprocessingReport",
    "RawRecord",
    "TrialSchema",
    "load_trial_csv",
    "preprocess",
    "reconstitute",
    "load_prostate",
]

# Retained covariates, in design order.
COVARIATES = ("age", "wt_std", "hg", "logsz", "sg", "hx", "ekg_num", "stage4")
EXCLUDED = ("sbp", "dbp", "ap", "pf", "bm")

_REQUIRED = ("time", "status", "rx", "age", "wt", "sz", "hg", "sg", "hx", "ekg", "stage")
_OPTIONAL = ("id", "sbp", "dbp", "ap", "pf", "bm")
_NUMERIC = ("time", "age", "wt", "sbp", "dbp", "sz", "ap", "hg", "sg")
_INTEGER = ("hx", "bm", "stage")
_MISSING = {"", "na", "nan", "null", "none", "."}


@dataclass(frozen=True)
class TrialSchema:
    """Column mapping plus label codings for one source file."""

    columns: Mapping[str, str]
    arms: Mapping[str, int]
    censored_labels: tuple[str, ...] = ("alive",)
    ekg_codes: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in _REQUIRED if k not in self.columns]
        if missing:
            raise SchemaError(f"schema does not map required logical column(s): {', '.join(missing)}")
        unknown = [k for k in self.columns if k not in _REQUIRED + _OPTIONAL]
        if unknown:
            raise SchemaError(f"schema maps unknown logical column(s): {', '.join(unknown)}")
        bad = {label: code for label, code in self.arms.items() if code not in (0, 1)}
        if bad:
            raise SchemaError(f"arm codes must be 0 or 1, got {bad}")
        if not self.arms:
            raise SchemaError("schema defines no analysed arms")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrialSchema":
        try:
            return cls(
                columns=dict(d["columns"]),
                arms={str(k): int(v) for k, v in d["arms"].items()},
                censored_labels=tuple(d.get("censored_labels", ("alive",))),
                ekg_codes={str(k): int(v) for k, v in d.get("ekg_codes", {}).items()},
            )
        except KeyError as exc:
            raise SchemaError(f"schema file lacks key {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "TrialSchema":
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"schema file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from None

    @classmethod
    def prostate(cls) -> "TrialSchema":
        """Schema for the bundled Byar & Green file."""
        text = resources.files("aftite.data").joinpath("prostate_schema.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": dict(self.columns),
            "arms": dict(self.arms),
            "censored_labels": list(self.censored_labels),
            "ekg_codes": dict(self.ekg_codes),
        }


@dataclass(frozen=True)
class RawRecord:
    """One data row of the source file, parsed but untransformed.

    ``row`` is the 1-based line number in the file (the header is line 1).
    Missing cells are ``None``.
    """

    row: int
    patient_id: str
    rx_arm: str
    dtime: float | None
    status: str | None
    age: float | None
    wt: float | None
    sbp: float | None
    dbp: float | None
    sz: float | None
    ap: float | None
    hg: float | None
    sg: float | None
    pf: str | None
    hx: int | None
    bm: int | None
    ekg: int | None
    stage: int | None


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def _parse_float(cell: str, line: int, column: str) -> float | None:
    if _is_missing(cell):
        return None
    try:
        value = float(cell)
    except ValueError:
        raise SchemaError(f"line {line}, column {column!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(value):
        raise SchemaError(f"line {line}, column {column!r}: non-finite value {cell!r}")
    return value


def _parse_int(cell: str, line: int, column: str) -> int | None:
    value = _parse_float(cell, line, column)
    if value is None:
        return None
    if value != int(value):
        raise SchemaError(f"line {line}, column {column!r}: expected an integer code, got {cell!r}")
    return int(value)


def _parse_ekg(cell: str, line: int, column: str, codes: Mapping[str, int]) -> int | None:
    if _is_missing(cell):
        return None
    label = cell.strip()
    if label in codes:
        return codes[label]
    try:
        return _parse_int(label, line, column)
    except SchemaError:
        raise SchemaError(f"line {line}, column {column!r}: unknown ekg label {cell!r}") from None


def load_trial_csv(path: str | Path, schema: TrialSchema | None = None) -> list[RawRecord]:
    """Read a trial CSV into raw records.

    Raises :class:`SchemaError` for a missing file, a mapped column absent
    from the header, or a cell that cannot be parsed (the message names the
    line and column).
    """
    schema = schema or TrialSchema.prostate()
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty (a header row is required)") from None
        header = [h.strip() for h in header]
        index = {}
        for logical, col in schema.columns.items():
            if col not in header:
                raise SchemaError(f"column {col!r} (logical {logical!r}) not found in {path.name}")
            index[logical] = header.index(col)
        records = []
        for line, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) < len(header):
                raise SchemaError(f"line {line}: expected {len(header)} fields, found {len(cells)}")

            def cell(logical: str) -> str:
                return cells[index[logical]] if logical in index else ""

            values: dict[str, Any] = {}
            for name in _NUMERIC:
                values[name] = _parse_float(cell(name), line, schema.columns.get(name, name))
            for name in _INTEGER:
                values[name] = _parse_int(cell(name), line, schema.columns.get(name, name))
            status = cell("status").strip()
            pf = cell("pf").strip()
            records.append(RawRecord(
                row=line,
                patient_id=cell("id").strip() or str(line - 1),
                rx_arm=cell("rx").strip(),
                dtime=values["time"],
                status=None if _is_missing(status) else status,
                age=values["age"],
                wt=values["wt"],
                sbp=values["sbp"],
                dbp=values["dbp"],
                sz=values["sz"],
                ap=values["ap"],
                hg=values["hg"],
                sg=values["sg"],
                pf=None if _is_missing(pf) else pf,
                hx=values["hx"],
                bm=values["bm"],
                ekg=_parse_ekg(cell("ekg"), line, schema.columns["ekg"], schema.ekg_codes),
                stage=values["stage"],
            ))
    return records


@dataclass(frozen=True)
class PreprocessOptions:
    """Preprocessing rules.

    ``time_offset`` is added to every follow-up time and ``sz_offset`` to
    every tumor size before taking logs. The defaults (0.5 month, 1 cm²)
    keep the 16 deaths recorded at month 0 and the 7 zero tumor sizes of the
    bundled file in the analysis set instead of dropping them.
    """

    arms: Mapping[str, int] = field(default_factory=lambda: dict(TrialSchema.prostate().arms))
    censored_labels: tuple[str, ...] = ("alive",)
    time_offset: float = 0.5
    sz_offset: float = 1.0
    drop_nonpositive_sz: bool = False

    @classmethod
    def from_schema(cls, schema: TrialSchema, **kwargs) -> "PreprocessOptions":
        return cls(arms=dict(schema.arms), censored_labels=tuple(schema.censored_labels), **kwargs)


@dataclass(frozen=True)
class PreprocessingReport:
    """Audit trail of :func:`preprocess`.

    ``input_rows == retained + sum(dropped.values())`` always holds.
    """

    input_rows: int
    retained: int
    dropped: dict[str, int]
    dropped_rows: list[dict[str, Any]]
    arm_counts: dict[str, int]
    events_by_arm: dict[str, int]
    n_events: int
    wt_mean: float
    wt_sd: float
    time_offset: float
    sz_offset: float
    raw_means: dict[str, float]
    covariate_ranges: dict[str, list[float]]
    excluded_columns: list[str]
    source: str = "csv"
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), indent=kwargs.pop("indent", 2), **kwargs)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PreprocessingReport":
        return cls(**dict(d))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AnalysisDataset:
    """Model-ready data. ``x`` columns follow ``names``."""

    time: np.ndarray
    event: np.ndarray
    z: np.ndarray
    x: np.ndarray
    names: tuple[str, ...]
    ids: tuple[str, ...]
    report: PreprocessingReport | None = None

    def __post_init__(self):
        n = len(self.time)
        object.__setattr__(self, "time", _readonly(np.asarray(self.time, dtype=float)))
        object.__setattr__(self, "event", _readonly(np.asarray(self.event, dtype=np.int8)))
        object.__setattr__(self, "z", _readonly(np.asarray(self.z, dtype=np.int8)))
        object.__setattr__(self, "x", _readonly(np.asarray(self.x, dtype=float).reshape(n, -1)))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "ids", tuple(self.ids) if self.ids else tuple(str(i + 1) for i in range(n)))
        if not (len(self.event) == len(self.z) == self.x.shape[0] == len(self.ids) == n):
            raise DataError("time, event, z, x and ids must have the same number of rows")
        if self.x.shape[1] != len(self.names):
            raise DataError(f"x has {self.x.shape[1]} columns but {len(self.names)} names were given")
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate covariate names: {self.names}")
        if np.any(~np.isfinite(self.time)) or np.any(self.time <= 0):
            raise DataError("all survival times must be finite and > 0")
        if not np.all(np.isin(self.event, (0, 1))) or not np.all(np.isin(self.z, (0, 1))):
            raise DataError("event and z must be coded 0/1")
        if not np.all(np.isfinite(self.x)):
            raise DataError("covariates must be finite")

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def column(self, name: str) -> np.ndarray:
        if name == "z":
            return self.z.astype(float)
        try:
            return self.x[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"unknown covariate {name!r}; available: {', '.join(self.names)}") from None

    def raw_mean_profile(self) -> dict[str, float]:
        """Covariate values of a patient at the raw-scale sample means.

        For ``logsz`` this is ``log(mean(sz) + sz_offset)``, not the mean of
        ``logsz``; the other columns are linear in their raw values.
        """
        out = {name: float(self.column(name).mean()) for name in self.names}
        if self.report is not None and "logsz" in out and "sz" in self.report.raw_means:
            out["logsz"] = math.log(self.report.raw_means["sz"] + self.report.sz_offset)
        return out


def _drop_reason(r: RawRecord, opts: PreprocessOptions) -> str | None:
    for name, value in (("time", r.dtime), ("status", r.status), ("age", r.age), ("wt", r.wt),
                        ("hg", r.hg), ("sz", r.sz), ("sg", r.sg), ("hx", r.hx), ("ekg", r.ekg),
                        ("stage", r.stage)):
        if value is None:
            return f"missing_{name}"
    if r.dtime + opts.time_offset <= 0:
        return "nonpositive_time"
    if r.sz + opts.sz_offset <= 0 or (opts.drop_nonpositive_sz and r.sz <= 0):
        return "nonpositive_sz"
    if r.stage not in (3, 4):
        return "invalid_stage"
    return None


def preprocess(records: Sequence[RawRecord], opts: PreprocessOptions | None = None) -> AnalysisDataset:
    """Filter to the analysed arms, drop unusable rows and transform covariates.

    Produces ``age, wt_std, hg, logsz, sg, hx, ekg_num, stage4``. Weight is
    standardized with the mean and SD (ddof=1) of the retained rows; those
    constants are kept in the report for scoring new profiles.
    """
    opts = opts or PreprocessOptions()
    if not records:
        raise DataError("no records to preprocess")
    dropped: dict[str, int] = {}
    dropped_rows: list[dict[str, Any]] = []
    kept: list[RawRecord] = []
    for r in records:
        reason = "arm_not_analyzed" if r.rx_arm not in opts.arms else _drop_reason(r, opts)
        if reason is None:
            kept.append(r)
        else:
            dropped[reason] = dropped.get(reason, 0) + 1
            if reason != "arm_not_analyzed":
                dropped_rows.append({"row": r.row, "patient_id": r.patient_id, "reason": reason})
    if not kept:
        raise DataError("no rows survive arm filtering and missing-value exclusion")

    time = np.array([r.dtime + opts.time_offset for r in kept])
    event = np.array([0 if r.status in opts.censored_labels else 1 for r in kept])
    z = np.array([opts.arms[r.rx_arm] for r in kept])
    wt = np.array([r.wt for r in kept])
    sz = np.array([r.sz for r in kept])
    if len(kept) < 2 or wt.std(ddof=1) == 0:
        raise DataError("column 'wt' is constant over retained rows; cannot standardize")
    wt_mean, wt_sd = float(wt.mean()), float(wt.std(ddof=1))
    x = np.column_stack([
        [r.age for r in kept],
        (wt - wt_mean) / wt_sd,
        [r.hg for r in kept],
        np.log(sz + opts.sz_offset),
        [r.sg for r in kept],
        [r.hx for r in kept],
        [r.ekg for r in kept],
        [1.0 if r.stage == 4 else 0.0 for r in kept],
    ]).astype(float)
    for j, name in enumerate(COVARIATES):
        if np.ptp(x[:, j]) == 0:
            raise DataError(f"retained covariate {name!r} is constant over the analysis rows")
    if len(np.unique(z)) < 2:
        raise DataError("only one treatment arm survives filtering")

    arm_counts: dict[str, int] = {}
    events_by_arm: dict[str, int] = {}
    for code, label in ((0, "z=0"), (1, "z=1")):
        arm_counts[label] = int((z == code).sum())
        events_by_arm[label] = int(event[z == code].sum())
    raw_means = {
        "age": float(x[:, 0].mean()),
        "wt": wt_mean,
        "hg": float(x[:, 2].mean()),
        "sz": float(sz.mean()),
        "sg": float(x[:, 4].mean()),
        "hx": float(x[:, 5].mean()),
        "ekg": float(x[:, 6].mean()),
        "stage4": float(x[:, 7].mean()),
    }
    report = PreprocessingReport(
        input_rows=len(records),
        retained=len(kept),
        dropped=dropped,
        dropped_rows=dropped_rows,
        arm_counts=arm_counts,
        events_by_arm=events_by_arm,
        n_events=int(event.sum()),
        wt_mean=wt_mean,
        wt_sd=wt_sd,
        time_offset=opts.time_offset,
        sz_offset=opts.sz_offset,
        raw_means=raw_means,
        covariate_ranges={name: [float(x[:, j].min()), float(x[:, j].max())] for j, name in enumerate(COVARIATES)},
        excluded_columns=list(EXCLUDED),
    )
    return AnalysisDataset(time=time, event=event, z=z, x=x, names=COVARIATES,
                           ids=tuple(r.patient_id for r in kept), report=report)


def reconstitute(data: AnalysisDataset, opts: PreprocessOptions | None = None) -> list[RawRecord]:
    """Invert the transforms of :func:`preprocess` back to raw records.

    Columns dropped at preprocessing come back as ``None``.
    """
    opts = opts or PreprocessOptions()
    if data.report is None:
        raise DataError("dataset has no preprocessing report to invert")
    label_for = {}
    for label, code in opts.arms.items():
        label_for.setdefault(code, label)
    dead = "dead" if "dead" not in opts.censored_labels else "died"
    rep = data.report
    out = []
    for i in range(data.n):
        age, wt_std, hg, logsz, sg, hx, ekg, stage4 = (float(v) for v in data.x[i])
        out.append(RawRecord(
            row=i + 2,
            patient_id=data.ids[i],
            rx_arm=label_for[int(data.z[i])],
            dtime=float(data.time[i]) - rep.time_offset,
            status=dead if data.event[i] else opts.censored_labels[0],
            age=age,
            wt=wt_std * rep.wt_sd + rep.wt_mean,
            sbp=None, dbp=None,
            sz=math.exp(logsz) - rep.sz_offset,
            ap=None,
            hg=hg,
            sg=sg,
            pf=None,
            hx=int(round(hx)),
            bm=None,
            ekg=int(round(ekg)),
            stage=4 if stage4 else 3,
        ))
    return out


def load_prostate(opts: PreprocessOptions | None = None) -> AnalysisDataset:
    """Load and preprocess the bundled Byar & Green prostate trial file."""
    schema = TrialSchema.prostate()
    path = resources.files("aftite.data").joinpath("prostate.csv")
    with resources.as_file(path) as p:
        records = load_trial_csv(p, schema)
    if opts is None:
        opts = PreprocessOptions.from_schema(schema)
    return preprocess(records, opts)


def with_notes(report: PreprocessingReport, *notes: str) -> PreprocessingReport:
    return replace(report, notes=[*report.notes, *notes])
