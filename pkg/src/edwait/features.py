"""Feature engineering: five feature categories evaluated at registration
or at initial assessment.

Every feature is a function of the event-log prefix up to the evaluation
time; stage membership uses half-open [entry, exit) intervals so a patient
departing at t no longer occupies the ED at t.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .eventlog import PatientRecord, TRIAGE_LEVELS, waits
from .timeutil import (HolidayCalendar, from_minutes, hour_of_day, day_of_week,
                       hour_of_week, to_minutes)

AT_REGISTRATION = "at_registration"
AT_ASSESSMENT = "at_assessment"

NUMERIC = "numeric"
CATEGORICAL = "categorical"

UNSEEN = "__unseen__"

# Staff inference looks back over this window, stepping back whole hours
# when no departures fall inside it.
STAFF_WINDOW_MINUTES = 240
STAFF_CARRY_MAX_STEPS = 168

BREACH_WINDOW_MINUTES = 1440
BREACH_4H = 240
BREACH_12H = 720

N_LAG_DAYS = 7


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    category: int            # 1 calendar, 2 demographics, 3 staffing, 4 workload, 5 condition
    kind: str                # numeric | categorical
    levels: tuple = ()

    def to_json(self) -> dict:
        d = {"name": self.name, "category": self.category, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureDescriptor":
        return cls(obj["name"], int(obj["category"]), obj["kind"],
                   tuple(obj.get("levels", ())))


@dataclass(frozen=True)
class FeatureSchema:
    stage: str
    descriptors: tuple

    def __post_init__(self):
        names = [d.name for d in self.descriptors]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")

    @property
    def names(self) -> list:
        return [d.name for d in self.descriptors]

    def descriptor(self, name: str) -> FeatureDescriptor:
        for d in self.descriptors:
            if d.name == name:
                return d
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"stage": self.stage, "features": [d.to_json() for d in self.descriptors]}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        return cls(obj["stage"], tuple(FeatureDescriptor.from_json(o) for o in obj["features"]))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with Path(path).open() as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class FeatureVector:
    values: tuple
    eval_time: datetime
    stage: str
    names: tuple

    def get(self, name: str):
        return self.values[self.names.index(name)]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))


class FeatureTable:
    """Column-oriented batch of feature vectors sharing one schema."""

    def __init__(self, schema: FeatureSchema, eval_minutes: np.ndarray,
                 columns: dict, patient_ids: Optional[list] = None):
        self.schema = schema
        self.eval_minutes = eval_minutes
        self.columns = columns
        self.patient_ids = patient_ids
        self._names = tuple(schema.names)

    def __len__(self) -> int:
        return int(self.eval_minutes.size)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def row(self, i: int) -> FeatureVector:
        vals = tuple(self.columns[n][i] for n in self._names)
        return FeatureVector(values=vals, eval_time=from_minutes(int(self.eval_minutes[i])),
                             stage=self.schema.stage, names=self._names)


# ---------------------------------------------------------------------------
# Calendar features (category 1)

def calendar_features(timestamp: datetime, calendar: HolidayCalendar) -> dict:
    """Hour-of-day/week, day-of-week, month, and the three-level holiday
    code (0 normal, 1 holiday, 2 days around Christmas)."""
    m = to_minutes(timestamp)
    return {
        "hour_of_day": hour_of_day(m),
        "hour_of_week": hour_of_week(m),
        "day_of_week": day_of_week(m),
        "month": timestamp.month,
        "holiday": calendar.code(timestamp.date()),
    }


def _calendar_columns(minutes: np.ndarray, calendar: HolidayCalendar) -> dict:
    mins = minutes.astype(np.int64)
    hod = (mins // 60) % 24 + 1
    dow = (mins // 1440 + 3) % 7 + 1
    how = (dow - 1) * 24 + hod
    days = mins // 1440
    # month via datetime64 arithmetic
    d64 = days.astype("datetime64[D]")
    month = (d64.astype("datetime64[M]").astype(int) % 12) + 1
    uniq, inv = np.unique(days, return_inverse=True)
    codes = np.array([calendar.code(from_minutes(int(d) * 1440).date()) for d in uniq])
    return {
        "hour_of_day": hod.astype(float),
        "hour_of_week": how.astype(float),
        "day_of_week": dow.astype(float),
        "month": month.astype(float),
        "holiday": codes[inv].astype(float),
    }


# ---------------------------------------------------------------------------
# Workload snapshots (category 4)

_STAGE_NAMES = ("ed_total", "reg_unassessed", "assessed_untreated", "in_treatment")

_MODE_SUFFIXES = ("", "_ambulance", "_other")
_TRIAGE_SUFFIXES = tuple(f"_{t}" for t in TRIAGE_LEVELS)
_AMB_TRIAGE_SUFFIXES = tuple(f"_amb_{t}" for t in TRIAGE_LEVELS)


def workload_feature_names() -> list:
    names = []
    for stage in ("ed_total", "reg_unassessed"):
        names.extend(stage + s for s in _MODE_SUFFIXES)
    for stage in ("assessed_untreated", "in_treatment"):
        names.extend(stage + s for s in _MODE_SUFFIXES)
        names.extend(stage + s for s in _TRIAGE_SUFFIXES)
        names.extend(stage + s for s in _AMB_TRIAGE_SUFFIXES)
    return names


WORKLOAD_COUNT_FEATURES = tuple(workload_feature_names())


class LogIndex:
    """Immutable, time-indexed view of a cleaned event log.

    Sorted entry/exit arrays per (stage, subset) give O(log n) interval
    counts; departures carry cumulative breach counts and factorized staff
    codes; waits are bucketed by absolute clock-start hour for the lagged
    features.
    """

    def __init__(self, records: Sequence[PatientRecord]):
        n = len(records)
        self.n = n
        reg = np.empty(n, np.int64)
        assess = np.full(n, -1, np.int64)
        treat = np.empty(n, np.int64)
        depart = np.empty(n, np.int64)
        amb = np.zeros(n, bool)
        triage = np.full(n, -1, np.int8)
        staff = []
        for i, r in enumerate(records):
            reg[i] = to_minutes(r.t_reg)
            if r.t_assess is not None:
                assess[i] = to_minutes(r.t_assess)
            treat[i] = to_minutes(r.t_treat)
            depart[i] = to_minutes(r.t_depart)
            amb[i] = r.arrival_mode == "ambulance"
            if r.triage is not None:
                triage[i] = TRIAGE_LEVELS.index(r.triage)
            staff.append(r.staff_code)
        self.reg = reg
        self.assess = assess
        self.treat = treat
        self.depart = depart
        self.amb = amb
        self.triage = triage
        self.start_minute = int(reg.min()) if n else 0

        assessed = assess >= 0
        # Stage interval bounds per record: [entry, exit)
        unassess_exit = np.where(assessed, assess, treat)
        self._intervals = {
            "ed_total": (reg, depart, np.ones(n, bool)),
            "reg_unassessed": (reg, unassess_exit, np.ones(n, bool)),
            "assessed_untreated": (assess, treat, assessed),
            "in_treatment": (treat, depart, np.ones(n, bool)),
        }
        self._sorted: dict = {}
        for stage, (entry, exit_, base) in self._intervals.items():
            subsets = {"": base, "_ambulance": base & amb, "_other": base & ~amb}
            if stage in ("assessed_untreated", "in_treatment"):
                for k, level in enumerate(TRIAGE_LEVELS):
                    subsets[f"_{level}"] = base & (triage == k)
                    subsets[f"_amb_{level}"] = base & amb & (triage == k)
            for suffix, mask in subsets.items():
                self._sorted[stage + suffix] = (np.sort(entry[mask]), np.sort(exit_[mask]))

        # Departure-ordered views for staffing and breach features.
        dep_order = np.argsort(depart, kind="stable")
        self.dep_sorted = depart[dep_order]
        span = depart - reg
        span_sorted = span[dep_order]
        self._breach4_cum = np.concatenate(([0], np.cumsum(span_sorted > BREACH_4H)))
        self._breach12_cum = np.concatenate(([0], np.cumsum(span_sorted > BREACH_12H)))
        codes, code_ids = np.unique(np.array(staff) if n else np.array([], dtype=str),
                                    return_inverse=True)
        self.staff_codes = codes
        self.dep_staff = code_ids[dep_order] if n else np.array([], np.int64)

        # Hourly wait buckets keyed by clock-start hour.
        t1 = treat - reg
        self._bucket_t1 = _HourBuckets(reg // 60, t1.astype(float))
        w2 = assessed
        self._bucket_t2 = _HourBuckets(assess[w2] // 60, (treat[w2] - assess[w2]).astype(float))

    def counts(self, key: str, t: np.ndarray) -> np.ndarray:
        entry, exit_ = self._sorted[key]
        return (np.searchsorted(entry, t, side="right")
                - np.searchsorted(exit_, t, side="right"))

    def bucket(self, stage: str) -> "_HourBuckets":
        return self._bucket_t1 if stage == AT_REGISTRATION else self._bucket_t2


class _HourBuckets:
    """Mean wait per absolute clock-start hour."""

    def __init__(self, hours: np.ndarray, values: np.ndarray):
        if hours.size == 0:
            self.h0 = 0
            self.sums = np.zeros(1)
            self.cnts = np.zeros(1, np.int64)
            return
        self.h0 = int(hours.min())
        span = int(hours.max()) - self.h0 + 1
        self.sums = np.zeros(span)
        self.cnts = np.zeros(span, np.int64)
        np.add.at(self.sums, hours - self.h0, values)
        np.add.at(self.cnts, hours - self.h0, 1)

    def mean_at(self, hours: np.ndarray) -> tuple:
        idx = hours - self.h0
        valid = (idx >= 0) & (idx < self.cnts.size)
        idx_c = np.clip(idx, 0, self.cnts.size - 1)
        cnt = np.where(valid, self.cnts[idx_c], 0)
        s = np.where(valid, self.sums[idx_c], 0.0)
        has = cnt > 0
        mean = np.divide(s, cnt, out=np.zeros_like(s), where=has)
        return mean, has


def workload_snapshot(log, t: datetime, extras=()) -> dict:
    """Category-4 stage counts at time ``t``: every (stage, arrival-mode,
    triage) split of Table-1 shape, computed over all triage categories.
    Returns zero counts plus a cold-start flag when ``t`` precedes the log."""
    index = log if isinstance(log, LogIndex) else LogIndex(list(log))
    tm = np.array([to_minutes(t)], np.int64)
    out = {}
    for key in WORKLOAD_COUNT_FEATURES:
        out[key] = int(index.counts(key, tm)[0])
    for rec in extras:
        _add_extra_counts(out, rec, int(tm[0]))
    out["cold_start"] = int(index.n == 0 or int(tm[0]) < index.start_minute)
    return out


def _add_extra_counts(out: dict, rec: PatientRecord, t: int) -> None:
    reg = to_minutes(rec.t_reg)
    assess = to_minutes(rec.t_assess) if rec.t_assess else None
    treat = to_minutes(rec.t_treat)
    depart = to_minutes(rec.t_depart)
    amb = rec.arrival_mode == "ambulance"
    mode_sfx = "_ambulance" if amb else "_other"

    def bump(stage, with_triage=False):
        out[stage] += 1
        out[stage + mode_sfx] += 1
        if with_triage and rec.triage is not None:
            out[f"{stage}_{rec.triage}"] += 1
            if amb:
                out[f"{stage}_amb_{rec.triage}"] += 1

    if reg <= t < depart:
        bump("ed_total")
        unassess_exit = assess if assess is not None else treat
        if t < unassess_exit:
            bump("reg_unassessed")
        elif assess is not None and t < treat:
            bump("assessed_untreated", with_triage=True)
        elif t >= treat:
            bump("in_treatment", with_triage=True)


@dataclass(frozen=True)
class StaffCount:
    count: int
    carried: bool
    cold: bool


def staff_count(log, t: datetime) -> StaffCount:
    """Distinct discharging staff codes over the four hours ending at ``t``.
    When the window holds no departures it steps back one hour at a time and
    reports the most recent non-empty window, flagged as carried."""
    index = log if isinstance(log, LogIndex) else LogIndex(list(log))
    tm = to_minutes(t)
    cnt, carried, cold = _staff_single(index, tm)
    return StaffCount(cnt, carried, cold)


def _staff_single(index: LogIndex, tm: int) -> tuple:
    dep = index.dep_sorted
    for step in range(STAFF_CARRY_MAX_STEPS + 1):
        hi = np.searchsorted(dep, tm - 60 * step, side="right")
        lo = np.searchsorted(dep, tm - 60 * step - STAFF_WINDOW_MINUTES, side="right")
        if hi > lo:
            cnt = int(np.unique(index.dep_staff[lo:hi]).size)
            return cnt, step > 0, False
    return 0, False, True


def breach_counts(log, t: datetime) -> tuple:
    """Patients departing in (t-24h, t] whose registration-to-departure span
    exceeded the 4-hour / 12-hour targets (strict >)."""
    index = log if isinstance(log, LogIndex) else LogIndex(list(log))
    tm = np.array([to_minutes(t)], np.int64)
    n4, n12 = _breach_batch(index, tm)
    return int(n4[0]), int(n12[0])


def _breach_batch(index: LogIndex, tm: np.ndarray) -> tuple:
    hi = np.searchsorted(index.dep_sorted, tm, side="right")
    lo = np.searchsorted(index.dep_sorted, tm - BREACH_WINDOW_MINUTES, side="right")
    return (index._breach4_cum[hi] - index._breach4_cum[lo],
            index._breach12_cum[hi] - index._breach12_cum[lo])


def lagged_waits(log, t: datetime, stage: str, fallback_hourly: Optional[np.ndarray] = None) -> tuple:
    """Mean wait of patients whose clock started in the same hour-of-day on
    each of the 7 previous days. Empty buckets fall back to the supplied
    training hour-of-day mean (zeros when absent) and are counted in the
    returned fallback tally."""
    index = log if isinstance(log, LogIndex) else LogIndex(list(log))
    tm = np.array([to_minutes(t)], np.int64)
    lags, n_fallback = _lagged_batch(index, tm, stage, fallback_hourly)
    return [float(lags[d][0]) for d in range(N_LAG_DAYS)], int(n_fallback[0])


def _lagged_batch(index: LogIndex, tm: np.ndarray, stage: str,
                  fallback_hourly: Optional[np.ndarray]) -> tuple:
    bucket = index.bucket(stage)
    hour = tm // 60
    hod = (hour % 24).astype(int)
    fb = np.zeros(24) if fallback_hourly is None else np.asarray(fallback_hourly, float)
    lags = []
    n_fallback = np.zeros(tm.size, np.int64)
    for d in range(1, N_LAG_DAYS + 1):
        mean, has = bucket.mean_at(hour - 24 * d)
        vals = np.where(has, mean, fb[hod])
        n_fallback += ~has
        lags.append(vals)
    return lags, n_fallback


def hourly_mean_waits(records: Sequence[PatientRecord], stage: str) -> np.ndarray:
    """Training-period mean wait per hour-of-day; the lagged-wait fallback."""
    sums = np.zeros(24)
    cnts = np.zeros(24, np.int64)
    for r in records:
        w = waits(r)
        if stage == AT_REGISTRATION:
            h = (to_minutes(r.t_reg) // 60) % 24
            sums[h] += w.t1
            cnts[h] += 1
        elif r.t_assess is not None:
            h = (to_minutes(r.t_assess) // 60) % 24
            sums[h] += w.t2
            cnts[h] += 1
    overall = sums.sum() / max(cnts.sum(), 1)
    return np.where(cnts > 0, sums / np.maximum(cnts, 1), overall)


# ---------------------------------------------------------------------------
# Schema construction

def build_schema(stage: str, train_records: Sequence[PatientRecord]) -> FeatureSchema:
    """Schema with categorical levels frozen from the training data."""
    desc = [
        FeatureDescriptor("hour_of_day", 1, NUMERIC),
        FeatureDescriptor("hour_of_week", 1, NUMERIC),
        FeatureDescriptor("day_of_week", 1, NUMERIC),
        FeatureDescriptor("month", 1, NUMERIC),
        FeatureDescriptor("holiday", 1, CATEGORICAL, ("0", "1", "2")),
        FeatureDescriptor("age", 2, NUMERIC),
        FeatureDescriptor("sex", 2, CATEGORICAL, ("0", "1")),
        FeatureDescriptor("staff_count", 3, NUMERIC),
    ]
    for name in WORKLOAD_COUNT_FEATURES:
        desc.append(FeatureDescriptor(name, 4, NUMERIC))
    desc.append(FeatureDescriptor("breach_4h", 4, NUMERIC))
    desc.append(FeatureDescriptor("breach_12h", 4, NUMERIC))
    for d in range(1, N_LAG_DAYS + 1):
        desc.append(FeatureDescriptor(f"lag_wait_d{d}", 4, NUMERIC))
    desc.append(FeatureDescriptor("cold_start", 4, NUMERIC))
    desc.append(FeatureDescriptor("staff_carried", 4, NUMERIC))
    desc.append(FeatureDescriptor("lag_fallback_count", 4, NUMERIC))
    if stage == AT_ASSESSMENT:
        triage_levels = tuple(sorted({r.triage for r in train_records if r.triage},
                                     key=TRIAGE_LEVELS.index)) or TRIAGE_LEVELS
        groups = tuple(sorted({r.patient_group for r in train_records if r.patient_group}))
        hrgs = tuple(sorted({r.hrg_code for r in train_records if r.hrg_code}))
        desc.append(FeatureDescriptor("triage", 5, CATEGORICAL, triage_levels))
        desc.append(FeatureDescriptor("patient_group", 5, CATEGORICAL, groups or ("80",)))
        desc.append(FeatureDescriptor("hrg_code", 5, CATEGORICAL, hrgs or ("VB04Z",)))
        desc.append(FeatureDescriptor("elapsed_since_reg", 5, NUMERIC))
    elif stage != AT_REGISTRATION:
        raise ValueError(f"unknown stage: {stage}")
    return FeatureSchema(stage=stage, descriptors=tuple(desc))


# ---------------------------------------------------------------------------
# The extractor

class FeatureExtractor:
    """Evaluates feature vectors against a frozen log index, plus optional
    dynamic arrivals appended during routing simulations."""

    def __init__(self, index: LogIndex, calendar: HolidayCalendar,
                 fallback_t1: Optional[np.ndarray] = None,
                 fallback_t2: Optional[np.ndarray] = None,
                 schema_reg: Optional[FeatureSchema] = None,
                 schema_assess: Optional[FeatureSchema] = None):
        self.index = index
        self.calendar = calendar
        self.fallback_t1 = fallback_t1
        self.fallback_t2 = fallback_t2
        self.schema_reg = schema_reg
        self.schema_assess = schema_assess
        self.extras: list = []

    def schema_for(self, stage: str) -> FeatureSchema:
        schema = self.schema_reg if stage == AT_REGISTRATION else self.schema_assess
        if schema is None:
            raise ValueError(f"no schema attached for stage {stage}")
        return schema

    def add_arrival(self, record: PatientRecord) -> None:
        """Feedback hook: subsequent snapshots see this arrival."""
        self.extras.append(record)

    # -- batch extraction ---------------------------------------------------

    def extract(self, records: Sequence[PatientRecord], stage: str) -> FeatureTable:
        schema = self.schema_for(stage)
        n = len(records)
        if stage == AT_ASSESSMENT:
            missing = [r.patient_id for r in records if r.t_assess is None]
            if missing:
                raise ValueError(f"records lack t_assess for assessment-stage features: {missing[:3]}")
            tm = np.array([to_minutes(r.t_assess) for r in records], np.int64)
        else:
            tm = np.array([to_minutes(r.t_reg) for r in records], np.int64)
        cols = self._state_columns(tm, stage)
        cols["age"] = np.array([float(r.age) for r in records])
        cols["sex"] = np.array([str(r.sex) for r in records], dtype=object)
        if stage == AT_ASSESSMENT:
            cols["triage"] = np.array([r.triage for r in records], dtype=object)
            cols["patient_group"] = np.array([r.patient_group for r in records], dtype=object)
            cols["hrg_code"] = np.array([r.hrg_code for r in records], dtype=object)
            cols["elapsed_since_reg"] = np.array(
                [float(to_minutes(r.t_assess) - to_minutes(r.t_reg)) for r in records])
        return FeatureTable(schema, tm, cols, [r.patient_id for r in records])

    def extract_at_times(self, minutes: np.ndarray, age: int, sex: int,
                         arrival_mode: str) -> FeatureTable:
        """Registration-stage vectors for one hypothetical patient at many
        candidate registration times (the routing pathway)."""
        schema = self.schema_for(AT_REGISTRATION)
        tm = np.asarray(minutes, np.int64)
        cols = self._state_columns(tm, AT_REGISTRATION)
        cols["age"] = np.full(tm.size, float(age))
        cols["sex"] = np.array([str(sex)] * tm.size, dtype=object)
        return FeatureTable(schema, tm, cols, None)

    def _state_columns(self, tm: np.ndarray, stage: str) -> dict:
        index = self.index
        cols = _calendar_columns(tm, self.calendar)
        cols["holiday"] = np.array([str(int(v)) for v in cols["holiday"]], dtype=object)

        for key in WORKLOAD_COUNT_FEATURES:
            cols[key] = index.counts(key, tm).astype(float)
        if self.extras:
            self._apply_extras(cols, tm)

        n4, n12 = _breach_batch(index, tm)
        cols["breach_4h"] = n4.astype(float)
        cols["breach_12h"] = n12.astype(float)

        staff = np.empty(tm.size)
        carried = np.zeros(tm.size)
        cold_staff = np.zeros(tm.size, bool)
        for i, t in enumerate(tm):
            c, carry, cold = _staff_single(index, int(t))
            staff[i] = c
            carried[i] = float(carry)
            cold_staff[i] = cold
        cols["staff_count"] = staff
        cols["staff_carried"] = carried

        fb = self.fallback_t1 if stage == AT_REGISTRATION else self.fallback_t2
        lags, n_fallback = _lagged_batch(index, tm, stage, fb)
        for d in range(N_LAG_DAYS):
            cols[f"lag_wait_d{d + 1}"] = lags[d]
        cols["lag_fallback_count"] = n_fallback.astype(float)

        cold = (index.n == 0) | (tm < index.start_minute)
        cols["cold_start"] = (cold | cold_staff).astype(float)
        return cols

    def _apply_extras(self, cols: dict, tm: np.ndarray) -> None:
        for rec in self.extras:
            reg = to_minutes(rec.t_reg)
            assess = to_minutes(rec.t_assess) if rec.t_assess else None
            treat = to_minutes(rec.t_treat)
            depart = to_minutes(rec.t_depart)
            amb = rec.arrival_mode == "ambulance"
            sfx = "_ambulance" if amb else "_other"
            in_ed = (tm >= reg) & (tm < depart)
            if not in_ed.any():
                continue
            add = in_ed.astype(float)
            cols["ed_total"] += add
            cols["ed_total" + sfx] += add
            unassess_exit = assess if assess is not None else treat
            pre = in_ed & (tm < unassess_exit)
            cols["reg_unassessed"] += pre
            cols["reg_unassessed" + sfx] += pre
            treating = in_ed & (tm >= treat)
            cols["in_treatment"] += treating
            cols["in_treatment" + sfx] += treating
            if rec.triage is not None:
                cols[f"in_treatment_{rec.triage}"] += treating
                if amb:
                    cols[f"in_treatment_amb_{rec.triage}"] += treating
            if assess is not None:
                mid = in_ed & (tm >= assess) & (tm < treat)
                cols["assessed_untreated"] += mid
                cols["assessed_untreated" + sfx] += mid
                if rec.triage is not None:
                    cols[f"assessed_untreated_{rec.triage}"] += mid
                    if amb:
                        cols[f"assessed_untreated_amb_{rec.triage}"] += mid

    # -- single-record API ----------------------------------------------------

    def featurize(self, record: PatientRecord, stage: str) -> FeatureVector:
        if stage == AT_ASSESSMENT and record.t_assess is None:
            raise ValueError(f"record {record.patient_id} was never assessed")
        return self.extract([record], stage).row(0)


def featurize(record: PatientRecord, log, stage: str,
              calendar: Optional[HolidayCalendar] = None,
              fallback_t1=None, fallback_t2=None) -> FeatureVector:
    """Single-record convenience wrapper around :class:`FeatureExtractor`."""
    index = log if isinstance(log, LogIndex) else LogIndex(list(log))
    extractor = FeatureExtractor(index, calendar or HolidayCalendar(),
                                 fallback_t1=fallback_t1, fallback_t2=fallback_t2,
                                 schema_reg=build_schema(AT_REGISTRATION, []),
                                 schema_assess=build_schema(AT_ASSESSMENT, []))
    return extractor.featurize(record, stage)


# ---------------------------------------------------------------------------
# Fluid ratios (workload / staff), appended for the Lasso benchmark only.

def fluid_ratios(vector: FeatureVector, staff: float) -> FeatureVector:
    """Append workload/staff ratios for every stage-count feature; a zero
    staff count clamps the divisor to one."""
    denom = max(float(staff), 1.0)
    extra_names = tuple("q_" + n for n in WORKLOAD_COUNT_FEATURES)
    extra_vals = tuple(float(vector.get(n)) / denom for n in WORKLOAD_COUNT_FEATURES)
    return FeatureVector(values=vector.values + extra_vals,
                         eval_time=vector.eval_time, stage=vector.stage,
                         names=vector.names + extra_names)


def fluid_ratio_matrix(table: FeatureTable) -> tuple:
    """Batched fluid ratios: (extra column names, matrix of ratios)."""
    denom = np.maximum(table.column("staff_count"), 1.0)
    names = ["q_" + n for n in WORKLOAD_COUNT_FEATURES]
    mat = np.column_stack([table.column(n) / denom for n in WORKLOAD_COUNT_FEATURES])
    return names, mat


# ---------------------------------------------------------------------------
# Encoding to a numeric design matrix

class SchemaEncoder:
    """One-hot encodes categoricals against frozen training levels, with an
    explicit unseen bucket; numeric features pass through."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        names = []
        cats = []
        base = []
        for d in schema.descriptors:
            if d.kind == NUMERIC:
                names.append(d.name)
                cats.append(d.category)
                base.append(d.name)
            else:
                for level in d.levels + (UNSEEN,):
                    names.append(f"{d.name}={level}")
                    cats.append(d.category)
                    base.append(d.name)
        self.column_names = names
        self.column_categories = np.array(cats)
        self.column_base = base

    @property
    def m(self) -> int:
        return len(self.column_names)

    def encode(self, table: FeatureTable) -> np.ndarray:
        n = len(table)
        X = np.zeros((n, self.m))
        j = 0
        for d in self.schema.descriptors:
            col = table.column(d.name)
            if d.kind == NUMERIC:
                X[:, j] = np.asarray(col, float)
                j += 1
            else:
                as_str = np.array([str(v) for v in col])
                seen = np.zeros(n, bool)
                for k, level in enumerate(d.levels):
                    hit = as_str == level
                    X[:, j + k] = hit
                    seen |= hit
                X[:, j + len(d.levels)] = ~seen
                j += len(d.levels) + 1
        return X


# ---------------------------------------------------------------------------
# CSV round-trips

def write_feature_table(table: FeatureTable, labels: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = table.schema.names
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "eval_minute", "label"] + list(names))
        pids = table.patient_ids or [""] * len(table)
        for i in range(len(table)):
            row = [pids[i], int(table.eval_minutes[i]), _fmt(labels[i])]
            row.extend(_fmt(table.columns[n][i]) for n in names)
            writer.writerow(row)


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return v
    f = float(v)
    if f == int(f):
        return str(int(f))
    return f"{f:.4f}"


def read_feature_table(path, schema: FeatureSchema) -> tuple:
    """Returns (FeatureTable, labels)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = header[3:]
    if names != schema.names:
        raise ValueError("feature file does not match schema")
    n = len(rows)
    pids = [r[0] for r in rows]
    tm = np.array([int(r[1]) for r in rows], np.int64)
    labels = np.array([float(r[2]) for r in rows])
    cols = {}
    for j, name in enumerate(names):
        d = schema.descriptor(name)
        raw = [r[3 + j] for r in rows]
        if d.kind == NUMERIC:
            cols[name] = np.array([float(v) for v in raw])
        else:
            cols[name] = np.array(raw, dtype=object)
    return FeatureTable(schema, tm, cols, pids), labels
