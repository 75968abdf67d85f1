"""Patient-level event-log records: parsing, cleaning, waits and cohort splits."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .timeutil import format_minute, parse_minute, to_minutes

TRIAGE_LEVELS = ("minor", "major", "urgent", "resus")
ARRIVAL_MODES = ("ambulance", "other")
PATIENT_GROUPS = ("10", "20", "30", "40", "50", "60", "70", "80")
HRG_CODES = tuple(f"VB{i:02d}Z" for i in range(1, 13))

LOG_HEADER = [
    "patient_id", "t_reg", "t_assess", "t_treat", "t_depart",
    "age", "sex", "arrival_mode", "triage", "patient_group",
    "hrg_code", "staff_code",
]

# Cleaning thresholds: waits of 14 hours or more and implausible ages are
# discarded outright rather than imputed.
MAX_WAIT_MINUTES = 840
MAX_AGE_YEARS = 110

_REQUIRED = ("patient_id", "t_reg", "t_treat", "t_depart", "age", "sex",
             "arrival_mode", "staff_code")
_ASSESS_FIELDS = ("t_assess", "triage", "patient_group", "hrg_code")


class EventLogError(Exception):
    """Unrecoverable event-log problem (missing file, bad header)."""


@dataclass(frozen=True)
class PatientRecord:
    """One ED episode. Raw records may carry missing fields; after
    ``clean`` all required fields are present, timestamps are ordered and
    assessment fields are jointly present or jointly absent."""

    patient_id: str
    t_reg: Optional[datetime]
    t_assess: Optional[datetime]
    t_treat: Optional[datetime]
    t_depart: Optional[datetime]
    age: Optional[int]
    sex: Optional[int]              # 0 male, 1 female
    arrival_mode: Optional[str]     # "ambulance" | "other"
    triage: Optional[str]
    patient_group: Optional[str]
    hrg_code: Optional[str]
    staff_code: Optional[str]

    def is_low_acuity(self) -> bool:
        """Forecasting cohort: minor/major triage, or never assessed
        (urgent & resuscitation cases are always assessed on arrival)."""
        return self.triage is None or self.triage in ("minor", "major")


@dataclass(frozen=True)
class WaitPair:
    t1: int
    t2: Optional[int]


@dataclass(frozen=True)
class Diagnostic:
    row: int
    reason: str


@dataclass(frozen=True)
class CohortSplit:
    train: tuple
    holdout: tuple
    test: tuple
    warnings: tuple = ()


def _parse_ts(text: str, field: str, row: int):
    if text == "":
        return None, None
    try:
        return parse_minute(text), None
    except ValueError:
        return None, Diagnostic(row, f"unparseable timestamp in {field}: {text!r}")


def _parse_int(text: str, field: str, row: int):
    if text == "":
        return None, None
    try:
        return int(text), None
    except ValueError:
        return None, Diagnostic(row, f"unparseable integer in {field}: {text!r}")


def parse_log(path) -> tuple[list[PatientRecord], list[Diagnostic]]:
    """Read an event-log CSV into raw records plus per-row diagnostics.

    Parsing does not judge timestamp ordering or value ranges (that is the
    cleaning stage); it only rejects rows that cannot be represented:
    unparseable fields, unknown enum codes, or assessment fields that are
    not jointly present/absent. No row is silently dropped.
    """
    path = Path(path)
    if not path.exists():
        raise EventLogError(f"event log not found: {path}")
    records: list[PatientRecord] = []
    diagnostics: list[Diagnostic] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EventLogError(f"empty event log: {path}") from None
        if header != LOG_HEADER:
            raise EventLogError(f"malformed header in {path}: {header}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(LOG_HEADER):
                diagnostics.append(Diagnostic(row_no, f"expected {len(LOG_HEADER)} fields, got {len(row)}"))
                continue
            vals = dict(zip(LOG_HEADER, row))
            bad = False
            ts = {}
            for f in ("t_reg", "t_assess", "t_treat", "t_depart"):
                ts[f], diag = _parse_ts(vals[f], f, row_no)
                if diag:
                    diagnostics.append(diag)
                    bad = True
            age, diag = _parse_int(vals["age"], "age", row_no)
            if diag:
                diagnostics.append(diag)
                bad = True
            sex, diag = _parse_int(vals["sex"], "sex", row_no)
            if diag:
                diagnostics.append(diag)
                bad = True
            if bad:
                continue
            if sex is not None and sex not in (0, 1):
                diagnostics.append(Diagnostic(row_no, f"invalid sex code: {sex}"))
                continue
            mode = vals["arrival_mode"] or None
            if mode is not None and mode not in ARRIVAL_MODES:
                diagnostics.append(Diagnostic(row_no, f"invalid arrival_mode: {mode!r}"))
                continue
            triage = vals["triage"] or None
            if triage is not None and triage not in TRIAGE_LEVELS:
                diagnostics.append(Diagnostic(row_no, f"invalid triage: {triage!r}"))
                continue
            assess_vals = (ts["t_assess"], triage, vals["patient_group"] or None, vals["hrg_code"] or None)
            present = [v is not None for v in assess_vals]
            if any(present) and not all(present):
                diagnostics.append(Diagnostic(row_no, "assessment fields inconsistent"))
                continue
            records.append(PatientRecord(
                patient_id=vals["patient_id"] or None,
                t_reg=ts["t_reg"],
                t_assess=ts["t_assess"],
                t_treat=ts["t_treat"],
                t_depart=ts["t_depart"],
                age=age,
                sex=sex,
                arrival_mode=mode,
                triage=triage,
                patient_group=vals["patient_group"] or None,
                hrg_code=vals["hrg_code"] or None,
                staff_code=vals["staff_code"] or None,
            ))
    return records, diagnostics


def write_log(records: Sequence[PatientRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow([
                r.patient_id or "",
                format_minute(r.t_reg) if r.t_reg else "",
                format_minute(r.t_assess) if r.t_assess else "",
                format_minute(r.t_treat) if r.t_treat else "",
                format_minute(r.t_depart) if r.t_depart else "",
                "" if r.age is None else r.age,
                "" if r.sex is None else r.sex,
                r.arrival_mode or "",
                r.triage or "",
                r.patient_group or "",
                r.hrg_code or "",
                r.staff_code or "",
            ])


# Rejection reasons, checked in this order; a record is tallied once under
# the first rule it violates.
REASON_NULL = "null"
REASON_NEGATIVE = "negative"
REASON_LONG_WAIT = "long_wait"
REASON_AGE = "age"


def _rejection_reason(r: PatientRecord) -> Optional[str]:
    if any(getattr(r, f) is None for f in _REQUIRED):
        return REASON_NULL
    spans = [to_minutes(r.t_treat) - to_minutes(r.t_reg),
             to_minutes(r.t_depart) - to_minutes(r.t_treat)]
    if r.t_assess is not None:
        spans.append(to_minutes(r.t_assess) - to_minutes(r.t_reg))
        spans.append(to_minutes(r.t_treat) - to_minutes(r.t_assess))
    if any(s < 0 for s in spans):
        return REASON_NEGATIVE
    t1 = to_minutes(r.t_treat) - to_minutes(r.t_reg)
    total = to_minutes(r.t_depart) - to_minutes(r.t_reg)
    long_wait = t1 >= MAX_WAIT_MINUTES or total >= MAX_WAIT_MINUTES
    if r.t_assess is not None:
        long_wait = long_wait or (to_minutes(r.t_treat) - to_minutes(r.t_assess)) >= MAX_WAIT_MINUTES
    if long_wait:
        return REASON_LONG_WAIT
    if r.age < 0 or r.age >= MAX_AGE_YEARS:
        return REASON_AGE
    return None


def clean(records: Sequence[PatientRecord]) -> tuple[list[PatientRecord], Counter]:
    """Drop records with null required fields, negative stage durations,
    waits of 14 hours or more (any stage, and registration-to-departure),
    or age outside [0, 110). Returns kept records and a rejection tally."""
    kept = []
    tally: Counter = Counter()
    for r in records:
        reason = _rejection_reason(r)
        if reason is None:
            kept.append(r)
        else:
            tally[reason] += 1
    return kept, tally


def write_tally(tally: Counter, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["reason", "count"])
        for reason in sorted(tally):
            writer.writerow([reason, tally[reason]])


def waits(record: PatientRecord) -> WaitPair:
    """Waiting times in minutes: registration to treatment, and (when the
    patient was assessed) assessment to treatment."""
    t1 = to_minutes(record.t_treat) - to_minutes(record.t_reg)
    t2 = None
    if record.t_assess is not None:
        t2 = to_minutes(record.t_treat) - to_minutes(record.t_assess)
    return WaitPair(t1=t1, t2=t2)


def sort_records(records: Sequence[PatientRecord]) -> list[PatientRecord]:
    """Chronological order with patient_id breaking minute ties."""
    return sorted(records, key=lambda r: (to_minutes(r.t_reg), r.patient_id))


def split(records: Sequence[PatientRecord], boundaries: Sequence[datetime]) -> CohortSplit:
    """Partition chronologically sorted records into train / holdout / test.

    ``boundaries`` are ascending period starts plus a final end; intervals
    are half-open ``[b_k, b_{k+1})``. The last interval is the test period,
    the one before it the tuning holdout, and the training period spans
    everything before the test interval (so holdout is a subset of train).
    """
    if len(boundaries) < 3:
        raise ValueError("need at least three boundaries (two periods)")
    bl = [to_minutes(b) for b in boundaries]
    if any(b2 <= b1 for b1, b2 in zip(bl, bl[1:])):
        raise ValueError("boundaries must be strictly increasing")
    train, holdout, test = [], [], []
    for r in records:
        t = to_minutes(r.t_reg)
        if t < bl[0] or t >= bl[-1]:
            raise ValueError(f"record {r.patient_id} at {r.t_reg} outside boundaries")
        if t >= bl[-2]:
            test.append(r)
        else:
            train.append(r)
            if t >= bl[-3]:
                holdout.append(r)
    warnings = tuple(
        f"empty {name} partition: hyperparameter tuning impossible"
        for name, part in (("train", train), ("holdout", holdout), ("test", test))
        if not part
    )
    return CohortSplit(train=tuple(train), holdout=tuple(holdout), test=tuple(test), warnings=warnings)


def corrupt(records: Sequence[PatientRecord], probability: float, seed: int) -> list[PatientRecord]:
    """Inject cleaning-stage defects (nulls, negative spans, absurd ages,
    14-hour waits) with the given per-record probability. Test plumbing for
    the cleaning rules; the simulator itself only emits valid episodes."""
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        if rng.uniform() >= probability:
            out.append(r)
            continue
        kind = rng.integers(0, 4)
        if kind == 0:
            out.append(replace(r, staff_code=None))
        elif kind == 1:
            out.append(replace(r, t_treat=r.t_reg - timedelta(minutes=30)))
        elif kind == 2:
            out.append(replace(r, age=int(MAX_AGE_YEARS + rng.integers(0, 40))))
        else:
            bump = timedelta(minutes=MAX_WAIT_MINUTES + int(rng.integers(0, 240)))
            out.append(replace(r, t_treat=r.t_reg + bump,
                               t_depart=r.t_reg + bump + (r.t_depart - r.t_treat)))
    return out
