"""Versioned CSV artifacts: per-epoch metrics, report rows, sweep summaries and curve dumps.

Every file starts with a ``# <schema> v<version>`` line followed by a header
row. Floats are written with ``repr`` so a re-parse reproduces them exactly.

Report rows hold only deterministic fields; each row's wall-clock time goes
to a sibling ``timing.csv`` so that two identical runs give byte-identical
reports.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .trainer import METRIC_FIELDS

METRICS_SCHEMA = ("pmp-metrics", 1)
REPORT_SCHEMA = ("pmp-report", 1)
TIMING_SCHEMA = ("pmp-timing", 1)
SUMMARY_SCHEMA = ("pmp-summary", 1)
PSI_SCHEMA = ("pmp-psi", 1)
BINS_SCHEMA = ("pmp-bins", 1)

REPORT_FIELDS = ("fixed_pr", "observed_pr", "gap", "target_kind", "accuracy", "seed", "status")
TIMING_FIELDS = ("fixed_pr", "target_kind", "seed", "wall_time")
SUMMARY_FIELDS = ("fixed_pr", "target_kind", "runs", "observed_pr", "gap", "accuracy")
PSI_FIELDS = ("w_hat", "psi", "w_psi")
BINS_FIELDS = ("bin_center", "probability")


class SchemaError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvWriter:
    """Streams rows to a versioned CSV, flushing after each row."""

    def __init__(self, path, schema: tuple[str, int], fields: Sequence[str]):
        self.path = Path(path)
        self.fields = tuple(fields)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# {schema[0]} v{schema[1]}\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.fields)

    def write(self, row: dict) -> None:
        self._w.writerow([fmt(row[k]) for k in self.fields])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path, schema, fields, rows: Iterable[dict]) -> Path:
    with CsvWriter(path, schema, fields) as w:
        for row in rows:
            w.write(row)
    return Path(path)


def read_csv(path, schema: tuple[str, int]) -> tuple[tuple[str, ...], list[list[str]]]:
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        want = f"# {schema[0]} v{schema[1]}"
        if first != want:
            raise SchemaError(f"{path}: expected schema line {want!r}, got {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: missing header row")
        return tuple(header), [row for row in reader if row]


# ------------------------------------------------------------------- reports

@dataclass
class ReportRow:
    fixed_pr: float
    observed_pr: float
    gap: float
    target_kind: str
    accuracy: float
    seed: int
    wall_time: float = 0.0
    status: str = "ok"

    @classmethod
    def make(cls, fixed_pr: float, observed_pr: float, target_kind: str, accuracy: float, seed: int,
             wall_time: float = 0.0, status: str = "ok") -> "ReportRow":
        return cls(float(fixed_pr), float(observed_pr), abs(float(observed_pr) - float(fixed_pr)),
                   target_kind, float(accuracy), int(seed), float(wall_time), status)

    @classmethod
    def failed(cls, fixed_pr: float, target_kind: str, seed: int, message: str,
               wall_time: float = 0.0) -> "ReportRow":
        nan = float("nan")
        return cls(float(fixed_pr), nan, nan, target_kind, nan, int(seed), float(wall_time),
                   "error: " + " ".join(message.split()))

    @property
    def key(self) -> tuple:
        return (self.fixed_pr, self.target_kind, self.seed)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_FIELDS + ("wall_time",)}


def write_report(out_dir, rows: Sequence[ReportRow]) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    dicts = [r.as_dict() for r in rows]
    rep = write_csv(out_dir / "report.csv", REPORT_SCHEMA, REPORT_FIELDS, dicts)
    tim = write_csv(out_dir / "timing.csv", TIMING_SCHEMA, TIMING_FIELDS, dicts)
    return rep, tim


def read_report(path) -> list[ReportRow]:
    """Rows of ``report.csv``; wall times are joined from ``timing.csv`` when present."""
    path = Path(path)
    header, raw = read_csv(path, REPORT_SCHEMA)
    if header != REPORT_FIELDS:
        raise SchemaError(f"{path}: unexpected columns {header}")
    rows = []
    for rec in raw:
        d = dict(zip(header, rec))
        rows.append(ReportRow(float(d["fixed_pr"]), float(d["observed_pr"]), float(d["gap"]),
                              d["target_kind"], float(d["accuracy"]), int(d["seed"]), 0.0, d["status"]))
    timing = path.with_name("timing.csv")
    if timing.exists():
        th, traw = read_csv(timing, TIMING_SCHEMA)
        times = {(float(t[0]), t[1], int(t[2])): float(t[3]) for t in traw}
        for r in rows:
            r.wall_time = times.get(r.key, 0.0)
    return rows


def summarize(rows: Sequence[ReportRow]) -> list[dict]:
    """Mean observed rate, gap and accuracy per (fixed rate, target) over successful rows."""
    cells: dict[tuple, list[ReportRow]] = {}
    for r in rows:
        cells.setdefault((r.fixed_pr, r.target_kind), []).append(r)
    out = []
    for (rate, kind), rs in cells.items():
        ok = [r for r in rs if r.status == "ok"]
        mean = (lambda xs: math.fsum(xs) / len(xs)) if ok else (lambda xs: float("nan"))
        out.append({"fixed_pr": rate, "target_kind": kind, "runs": len(ok),
                    "observed_pr": mean([r.observed_pr for r in ok]),
                    "gap": mean([r.gap for r in ok]),
                    "accuracy": mean([r.accuracy for r in ok])})
    return out


def read_metrics(path) -> list[dict]:
    header, raw = read_csv(path, METRICS_SCHEMA)
    if header != METRIC_FIELDS:
        raise SchemaError(f"{path}: unexpected columns {header}")
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in zip(header, rec)} for rec in raw]
