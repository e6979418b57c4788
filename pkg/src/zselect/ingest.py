"""Corpus ingestion: confidence intervals to truncated absolute z-scores.

Input rows carry ratio-scale 95% confidence intervals ``[lower, upper]``.
The standard error and z-score are recovered on the log scale:

    se = (log(upper) - log(lower)) / (2 * 1.96)
    z  = (log(upper) + log(lower)) / (2 * se)

One record per study id is kept (a seeded uniform draw breaks ties), signs
are discarded, and values outside the selection region are dropped.  The
pre-truncation counts feed the publication risk ratio.  Corpus files are
dirty; malformed rows are skipped and counted rather than fatal.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .floc import InsufficientDataError, TruncatedSample
from .kernel import Z_CRIT, SelectionRegion

__all__ = [
    "CiRecord",
    "ZRecord",
    "IngestReport",
    "ci_to_z",
    "z_to_ci",
    "dedupe_one_per_id",
    "fold_and_truncate",
    "read_ci_csv",
    "write_z_csv",
    "read_z_csv",
    "ingest_corpus",
]


@dataclass(frozen=True)
class CiRecord:
    study_id: str
    lower: float
    upper: float
    year: int | None = None


@dataclass(frozen=True)
class ZRecord:
    study_id: str
    z: float
    se: float


@dataclass
class IngestReport:
    n_rows: int = 0
    n_parsed: int = 0
    n_skipped: int = 0
    n_dedup: int = 0
    n_published: int = 0
    n_sig: int = 0
    n_trun: int = 0

    def as_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_parsed": self.n_parsed,
            "n_skipped": self.n_skipped,
            "n_dedup": self.n_dedup,
            "n_published": self.n_published,
            "n_sig": self.n_sig,
            "n_trun": self.n_trun,
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")


def _nominal_z(ci_level: float) -> float:
    if ci_level == 0.95:
        return Z_CRIT
    if not (0.0 < ci_level < 1.0):
        raise ValueError(f"confidence level must lie in (0, 1), got {ci_level}")
    return float(ndtri(1.0 - (1.0 - ci_level) / 2.0))


def ci_to_z(rec: CiRecord, ci_level: float = 0.95) -> ZRecord:
    """Convert one ratio-scale confidence interval to a z-score.

    Raises:
        ValueError: for nonpositive bounds or a degenerate (lower >= upper)
            interval.
    """
    if rec.lower <= 0 or rec.upper <= 0:
        raise ValueError(f"{rec.study_id}: ratio-scale bounds must be positive")
    if rec.lower >= rec.upper:
        raise ValueError(f"{rec.study_id}: degenerate interval [{rec.lower}, {rec.upper}]")
    zq = _nominal_z(ci_level)
    log_l, log_u = math.log(rec.lower), math.log(rec.upper)
    se = (log_u - log_l) / (2.0 * zq)
    z = (log_u + log_l) / (2.0 * se)
    return ZRecord(rec.study_id, z, se)


def z_to_ci(study_id: str, z: float, se: float, ci_level: float = 0.95) -> CiRecord:
    """Inverse construction, used to synthesize corpora for testing."""
    zq = _nominal_z(ci_level)
    center = z * se
    return CiRecord(study_id, math.exp(center - zq * se), math.exp(center + zq * se))


def dedupe_one_per_id(records: list[ZRecord], seed: int) -> list[ZRecord]:
    """Keep exactly one record per study id, chosen by a seeded uniform draw.

    Deterministic given the seed and input order; ids keep their first
    appearance order.
    """
    groups: dict[str, list[ZRecord]] = {}
    order: list[str] = []
    for rec in records:
        if rec.study_id not in groups:
            groups[rec.study_id] = []
            order.append(rec.study_id)
        groups[rec.study_id].append(rec)
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = []
    for sid in order:
        group = groups[sid]
        pick = 0 if len(group) == 1 else int(rng.integers(len(group)))
        out.append(group[pick])
    return out


def fold_and_truncate(records: list[ZRecord], region: SelectionRegion) -> TruncatedSample:
    """Fold to |z|, truncate to the region (closed boundary), keep counts.

    Raises:
        InsufficientDataError: if nothing survives truncation.
    """
    absz = np.abs(np.array([r.z for r in records], dtype=float))
    inside = region.contains(absz) if absz.size else np.zeros(0, dtype=bool)
    if not np.any(inside):
        raise InsufficientDataError(
            f"no absolute z-scores inside {region.describe()} among {absz.size} records"
        )
    return TruncatedSample(
        values=np.sort(absz[inside]),
        region=region,
        n_published=int(absz.size),
        n_sig=int(np.count_nonzero(absz >= Z_CRIT)),
    )


def read_ci_csv(path, report: IngestReport | None = None) -> list[CiRecord]:
    """Parse a study_id,lower,upper[,year] CSV, skipping malformed rows.

    The header is required.  Skipped rows are tallied on the report.
    """
    report = report if report is not None else IngestReport()
    records: list[CiRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["study_id", "lower", "upper"]:
            raise ValueError(f"{path}: expected header study_id,lower,upper[,year]")
        has_year = len(header) > 3 and header[3].strip().lower() == "year"
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            report.n_rows += 1
            try:
                sid = row[0].strip()
                lo, hi = float(row[1]), float(row[2])
                if not sid or not (0 < lo < hi) or not math.isfinite(lo) or not math.isfinite(hi):
                    raise ValueError
                year = int(row[3]) if has_year and len(row) > 3 and row[3].strip() else None
                records.append(CiRecord(sid, lo, hi, year))
                report.n_parsed += 1
            except (ValueError, IndexError):
                report.n_skipped += 1
    return records


def write_z_csv(records: list[ZRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("study_id,z,se\n")
        for r in records:
            fh.write(f"{r.study_id},{r.z!r},{r.se!r}\n")


def read_z_csv(path) -> list[ZRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["study_id", "z", "se"]:
            raise ValueError(f"{path}: expected header study_id,z,se")
        for row in reader:
            if not row:
                continue
            out.append(ZRecord(row[0], float(row[1]), float(row[2])))
    return out


def ingest_corpus(
    path,
    region: SelectionRegion,
    seed: int,
    ci_level: float = 0.95,
) -> tuple[list[ZRecord], TruncatedSample, IngestReport]:
    """Full pipeline: parse, convert, dedupe, fold, truncate."""
    report = IngestReport()
    ci_records = read_ci_csv(path, report)
    z_all = [ci_to_z(rec, ci_level) for rec in ci_records]
    z_records = dedupe_one_per_id(z_all, seed)
    report.n_dedup = report.n_parsed - len(z_records)
    sample = fold_and_truncate(z_records, region)
    report.n_published = sample.n_published
    report.n_sig = sample.n_sig
    report.n_trun = sample.n_trun
    return z_records, sample, report
