"""Delimited result files: per-replication records plus a summary block.

Every output is schema-validated CSV.  Floats are written with
``repr``-fidelity so a written report re-parses to bit-identical values.
Files are written to a temporary sibling and renamed into place, so a
failed run never leaves a partial file behind.
"""

from __future__ import annotations

import csv
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParseError
from .simulate import FitResult, SimulationReport, method_label


@contextmanager
def atomic_write(path):
    """Open a temporary file that is renamed to ``path`` on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse_float(cell: str) -> float:
    return float(cell)


def _parse_opt_float(cell: str) -> Optional[float]:
    return float(cell) if cell != "" else None


def _parse_int(cell: str) -> int:
    return int(cell)


def _parse_bool(cell: str) -> bool:
    if cell in ("0", "1"):
        return cell == "1"
    raise ValueError(f"expected 0/1 flag, got {cell!r}")


SIM_RECORD_SCHEMA = (
    ("replication", _parse_int),
    ("method", str),
    ("n", _parse_int),
    ("level", _parse_float),
    ("coef", _parse_int),
    ("estimate", _parse_float),
    ("lower", _parse_float),
    ("upper", _parse_float),
    ("covered", _parse_bool),
    ("length", _parse_float),
)

SIM_SUMMARY_SCHEMA = (
    ("method", str),
    ("n", _parse_int),
    ("level", _parse_float),
    ("cp", _parse_float),
    ("cp_se", _parse_float),
    ("al", _parse_float),
    ("al_se", _parse_float),
    ("release_budget", _parse_opt_float),
)

ANALYSIS_RECORD_SCHEMA = (
    ("n", _parse_int),
    ("coef", str),
    ("method", str),
    ("level", _parse_float),
    ("estimate", _parse_float),
    ("lower", _parse_float),
    ("upper", _parse_float),
)

ANALYSIS_SUMMARY_SCHEMA = (
    ("coef", str),
    ("method", str),
    ("level", _parse_float),
    ("estimate", _parse_float),
    ("lower", _parse_float),
    ("upper", _parse_float),
    ("release_budget", _parse_opt_float),
)


def write_rows(path, schema, rows) -> None:
    header = [name for name, _ in schema]
    with atomic_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in header])


def read_rows(path, schema) -> List[dict]:
    """Parse a records file back, enforcing the schema exactly."""
    expected = [name for name, _ in schema]
    converters = dict(schema)
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty report file") from None
        if header != expected:
            raise ParseError(
                f"unexpected header {header!r}; expected {expected!r}",
                row=1)
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(expected):
                raise ParseError(
                    f"expected {len(expected)} fields, got {len(cells)}",
                    row=lineno)
            row = {}
            for name, cell in zip(expected, cells):
                try:
                    row[name] = converters[name](cell)
                except ValueError as exc:
                    raise ParseError(str(exc), row=lineno,
                                     column=name) from exc
            out.append(row)
    return out


# ---------------------------------------------------------------------------
# simulation reports


def simulation_record_rows(report: SimulationReport):
    truth = report.design.truth()
    eval_ns = report.design.eval_ns
    levels = report.design.levels
    for kind, bounds in report.intervals.items():
        label = report.methods[kind]
        reps, n_evals, n_levels, dim, _ = bounds.shape
        for rep in range(reps):
            for ei in range(n_evals):
                for li in range(n_levels):
                    for j in range(dim):
                        lo = bounds[rep, ei, li, j, 0]
                        hi = bounds[rep, ei, li, j, 1]
                        yield {
                            "replication": rep,
                            "method": label,
                            "n": eval_ns[ei],
                            "level": levels[li],
                            "coef": j,
                            "estimate": report.theta_bar[rep, ei, j],
                            "lower": lo,
                            "upper": hi,
                            "covered": bool(lo <= truth[j] <= hi),
                            "length": hi - lo,
                        }


def simulation_summary_rows(report: SimulationReport):
    for row in report.summary:
        yield {
            "method": row.method,
            "n": row.n,
            "level": row.level,
            "cp": row.cp,
            "cp_se": row.cp_se,
            "al": row.al,
            "al_se": row.al_se,
            "release_budget": report.release_budget,
        }


def write_simulation_report(report: SimulationReport, stem: str
                            ) -> Dict[str, str]:
    """Write ``<stem>.records.csv`` and ``<stem>.summary.csv``."""
    paths = {"records": f"{stem}.records.csv",
             "summary": f"{stem}.summary.csv"}
    write_rows(paths["records"], SIM_RECORD_SCHEMA,
               simulation_record_rows(report))
    write_rows(paths["summary"], SIM_SUMMARY_SCHEMA,
               simulation_summary_rows(report))
    return paths


# ---------------------------------------------------------------------------
# single-dataset analysis reports


@dataclass
class AnalysisReport:
    """Streaming-fit output on one dataset: trajectory checkpoints with
    both interval constructions, plus the final estimates."""

    columns: Tuple[str, ...]
    fit: FitResult
    private: bool

    def labels(self) -> Dict[str, str]:
        return {k: method_label(k, self.private) for k in self.fit.intervals}

    def record_rows(self):
        fit = self.fit
        for kind, label in self.labels().items():
            bounds = fit.intervals[kind]
            for ei, nn in enumerate(fit.eval_ns):
                for li, level in enumerate(fit.levels):
                    for j, name in enumerate(self.columns):
                        yield {
                            "n": nn,
                            "coef": name,
                            "method": label,
                            "level": level,
                            "estimate": fit.theta_bar[ei, j],
                            "lower": bounds[ei, li, j, 0],
                            "upper": bounds[ei, li, j, 1],
                        }

    def summary_rows(self):
        fit = self.fit
        final = len(fit.eval_ns) - 1
        for kind, label in self.labels().items():
            bounds = fit.intervals[kind]
            for li, level in enumerate(fit.levels):
                for j, name in enumerate(self.columns):
                    yield {
                        "coef": name,
                        "method": label,
                        "level": level,
                        "estimate": fit.theta_bar[final, j],
                        "lower": bounds[final, li, j, 0],
                        "upper": bounds[final, li, j, 1],
                        "release_budget": fit.release_budget,
                    }


def write_analysis_report(report: AnalysisReport, stem: str
                          ) -> Dict[str, str]:
    paths = {"records": f"{stem}.records.csv",
             "summary": f"{stem}.summary.csv"}
    write_rows(paths["records"], ANALYSIS_RECORD_SCHEMA,
               report.record_rows())
    write_rows(paths["summary"], ANALYSIS_SUMMARY_SCHEMA,
               report.summary_rows())
    return paths
