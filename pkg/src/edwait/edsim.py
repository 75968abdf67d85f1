"""Discrete-event ED simulator producing synthetic event logs.

The simulator is a surrogate for confidential hospital data. It is tuned to
reproduce qualitative signatures only: strong diurnal demand with
midmorning/evening peaks, right-skewed waiting times, autocorrelated
consecutive waits, a ~95% low-acuity share, and a pediatric fast-track that
makes age genuinely predictive. No fidelity beyond those signatures is
claimed.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .eventlog import HRG_CODES, PATIENT_GROUPS, PatientRecord, TRIAGE_LEVELS, waits
from .timeutil import HOURS_PER_WEEK, HolidayCalendar, from_minutes, hour_of_week, to_minutes

LOW_ACUITY = ("minor", "major")
URGENT_CLASSES = ("urgent", "resus")

PEDIATRIC_AGE_MAX = 16


class SimConfigError(ValueError):
    """Rejected simulator configuration."""


@dataclass(frozen=True)
class Lognormal:
    """Lognormal in minutes, parameterized by median and log-scale sigma."""

    median: float
    sigma: float

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.median <= 0:
            return np.zeros(n)
        return np.exp(np.log(self.median) + self.sigma * rng.standard_normal(n))


@dataclass(frozen=True)
class SimConfig:
    start_date: date
    horizon_days: int
    arrival_rate_profile: tuple          # 168 hourly base rates, Monday 00h first
    holiday_calendar: HolidayCalendar
    staff_roster: tuple                  # 168 hourly staff counts
    treatment_capacity_per_staff: int
    assess_staff_fraction: float         # assessment pool = fraction of staff
    assess_call_delay: Lognormal         # registration-to-queue delay before assessment
    assess_duration: Lognormal
    treat_duration: dict                 # triage -> Lognormal, time in treatment
    prep_lag: dict                       # keys: adult, child, urgent (Lognormal)
    group_lag_multiplier: tuple          # per patient-group scaling of prep lag
    triage_mix: dict                     # triage -> probability
    p_skip_assess: float                 # low-acuity only
    age_dist: dict                       # p_child, child_max, adult_mean, adult_sd
    sex_dist: float                      # P(female)
    arrival_mode_dist: float             # P(ambulance)
    minor_age_priority_boost: float      # 0..1, queue boost for age <= 16
    seed: int
    overflow_wait_minutes: int = 600     # escalation: nobody waits longer than this
    max_service_minutes: int = 180
    max_prep_lag_minutes: int = 240

    def validate(self) -> None:
        if self.horizon_days < 1:
            raise SimConfigError("horizon_days must be >= 1")
        if len(self.arrival_rate_profile) != HOURS_PER_WEEK:
            raise SimConfigError("arrival_rate_profile must have 168 entries")
        if len(self.staff_roster) != HOURS_PER_WEEK:
            raise SimConfigError("staff_roster must have 168 entries")
        if any(r < 0 for r in self.arrival_rate_profile):
            raise SimConfigError("arrival rates must be nonnegative")
        if any(s < 0 for s in self.staff_roster):
            raise SimConfigError("staff counts must be nonnegative")
        if all(s == 0 for s in self.staff_roster):
            raise SimConfigError("staff roster is zero for the entire horizon (unbounded queue)")
        if self.treatment_capacity_per_staff < 1:
            raise SimConfigError("treatment_capacity_per_staff must be >= 1")
        mix = [self.triage_mix.get(t, 0.0) for t in TRIAGE_LEVELS]
        if any(p < 0 or p > 1 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise SimConfigError("triage_mix must be probabilities summing to 1")
        for p in (self.p_skip_assess, self.sex_dist, self.arrival_mode_dist,
                  self.assess_staff_fraction, self.minor_age_priority_boost):
            if not 0.0 <= p <= 1.0:
                raise SimConfigError("probabilities and fractions must lie in [0, 1]")
        if len(self.group_lag_multiplier) != len(PATIENT_GROUPS):
            raise SimConfigError("group_lag_multiplier must cover the 8 patient groups")

    def to_json(self) -> dict:
        return {
            "start_date": self.start_date.isoformat(),
            "horizon_days": self.horizon_days,
            "arrival_rate_profile": list(self.arrival_rate_profile),
            "holiday_calendar": self.holiday_calendar.to_json(),
            "staff_roster": list(self.staff_roster),
            "treatment_capacity_per_staff": self.treatment_capacity_per_staff,
            "assess_staff_fraction": self.assess_staff_fraction,
            "assess_call_delay": {"median": self.assess_call_delay.median, "sigma": self.assess_call_delay.sigma},
            "assess_duration": {"median": self.assess_duration.median, "sigma": self.assess_duration.sigma},
            "treat_duration": {k: {"median": v.median, "sigma": v.sigma} for k, v in self.treat_duration.items()},
            "prep_lag": {k: {"median": v.median, "sigma": v.sigma} for k, v in self.prep_lag.items()},
            "group_lag_multiplier": list(self.group_lag_multiplier),
            "triage_mix": dict(self.triage_mix),
            "p_skip_assess": self.p_skip_assess,
            "age_dist": dict(self.age_dist),
            "sex_dist": self.sex_dist,
            "arrival_mode_dist": self.arrival_mode_dist,
            "minor_age_priority_boost": self.minor_age_priority_boost,
            "seed": self.seed,
            "overflow_wait_minutes": self.overflow_wait_minutes,
            "max_service_minutes": self.max_service_minutes,
            "max_prep_lag_minutes": self.max_prep_lag_minutes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        return cls(
            start_date=date.fromisoformat(obj["start_date"]),
            horizon_days=int(obj["horizon_days"]),
            arrival_rate_profile=tuple(float(x) for x in obj["arrival_rate_profile"]),
            holiday_calendar=HolidayCalendar.from_json(obj["holiday_calendar"]),
            staff_roster=tuple(int(x) for x in obj["staff_roster"]),
            treatment_capacity_per_staff=int(obj["treatment_capacity_per_staff"]),
            assess_staff_fraction=float(obj["assess_staff_fraction"]),
            assess_call_delay=Lognormal(**obj["assess_call_delay"]),
            assess_duration=Lognormal(**obj["assess_duration"]),
            treat_duration={k: Lognormal(**v) for k, v in obj["treat_duration"].items()},
            prep_lag={k: Lognormal(**v) for k, v in obj["prep_lag"].items()},
            group_lag_multiplier=tuple(float(x) for x in obj["group_lag_multiplier"]),
            triage_mix={k: float(v) for k, v in obj["triage_mix"].items()},
            p_skip_assess=float(obj["p_skip_assess"]),
            age_dist=dict(obj["age_dist"]),
            sex_dist=float(obj["sex_dist"]),
            arrival_mode_dist=float(obj["arrival_mode_dist"]),
            minor_age_priority_boost=float(obj["minor_age_priority_boost"]),
            seed=int(obj["seed"]),
            overflow_wait_minutes=int(obj.get("overflow_wait_minutes", 600)),
            max_service_minutes=int(obj.get("max_service_minutes", 180)),
            max_prep_lag_minutes=int(obj.get("max_prep_lag_minutes", 240)),
        )

    @classmethod
    def load(cls, path) -> "SimConfig":
        with Path(path).open() as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def diurnal_rate(profile: Sequence[float], timestamp, calendar: Optional[HolidayCalendar] = None) -> float:
    """Arrival rate (patients/hour) at a timestamp: the hour-of-week base
    rate scaled by the holiday multiplier for that date."""
    minutes = to_minutes(timestamp)
    rate = float(profile[hour_of_week(minutes) - 1])
    if calendar is not None:
        rate *= calendar.multiplier(from_minutes(minutes).date())
    return rate


# Event kinds, in no particular priority (heap orders by time then sequence).
_ARRIVAL, _JOIN_ASSESS, _ASSESS_DONE, _READY, _TREAT_DONE, _OVERFLOW, _HOUR = range(7)


class _Patient:
    __slots__ = ("seq", "t_reg", "age", "sex", "mode", "triage", "skip", "group",
                 "hrg", "prep_lag", "call_delay", "assess_offset", "assess_dur",
                 "treat_dur", "staff_u", "t_assess", "t_treat", "t_depart", "overflowed")

    def __init__(self, seq, t_reg, age, sex, mode, triage, skip, group, hrg,
                 prep_lag, call_delay, assess_offset, assess_dur, treat_dur, staff_u):
        self.seq = seq
        self.t_reg = t_reg
        self.age = age
        self.sex = sex
        self.mode = mode
        self.triage = triage
        self.skip = skip
        self.group = group
        self.hrg = hrg
        self.prep_lag = prep_lag
        self.call_delay = call_delay
        self.assess_offset = assess_offset
        self.assess_dur = assess_dur
        self.treat_dur = treat_dur
        self.staff_u = staff_u
        self.t_assess = None
        self.t_treat = None
        self.t_depart = None
        self.overflowed = False


def _generate_arrivals(config: SimConfig, rng: np.random.Generator) -> list[_Patient]:
    start_min = to_minutes_from_date(config.start_date)
    patients: list[_Patient] = []
    triage_levels = list(TRIAGE_LEVELS)
    mix = np.array([config.triage_mix.get(t, 0.0) for t in triage_levels])
    mix = mix / mix.sum()
    age_cfg = config.age_dist
    seq = 0
    for day in range(config.horizon_days):
        day_date = config.start_date + timedelta(days=day)
        mult = config.holiday_calendar.multiplier(day_date)
        day_start = start_min + day * 1440
        for hour in range(24):
            hour_start = day_start + hour * 60
            rate = config.arrival_rate_profile[hour_of_week(hour_start) - 1] * mult
            n = int(rng.poisson(rate)) if rate > 0 else 0
            if n == 0:
                continue
            offsets = np.sort(rng.integers(0, 60, size=n))
            for k in range(n):
                t_reg = int(hour_start + offsets[k])
                is_child = rng.uniform() < age_cfg["p_child"]
                if is_child:
                    age = int(rng.integers(0, int(age_cfg["child_max"]) + 1))
                else:
                    raw = rng.normal(age_cfg["adult_mean"], age_cfg["adult_sd"])
                    age = int(np.clip(round(raw), int(age_cfg["child_max"]) + 1, 109))
                sex = int(rng.uniform() < config.sex_dist)
                mode = "ambulance" if rng.uniform() < config.arrival_mode_dist else "other"
                triage = triage_levels[int(rng.choice(len(triage_levels), p=mix))]
                skip = triage in LOW_ACUITY and rng.uniform() < config.p_skip_assess
                group = PATIENT_GROUPS[int(rng.integers(0, len(PATIENT_GROUPS)))]
                hrg = HRG_CODES[int(rng.integers(0, len(HRG_CODES)))]
                if triage in URGENT_CLASSES:
                    lag_dist = config.prep_lag["urgent"]
                elif age <= PEDIATRIC_AGE_MAX:
                    lag_dist = config.prep_lag["child"]
                else:
                    lag_dist = config.prep_lag["adult"]
                lag = lag_dist.draw(rng, 1)[0] * config.group_lag_multiplier[PATIENT_GROUPS.index(group)]
                lag = int(min(round(lag), config.max_prep_lag_minutes))
                call_delay = int(np.clip(round(config.assess_call_delay.draw(rng, 1)[0]), 0, 60))
                assess_offset = int(rng.integers(1, 4))
                assess_dur = int(np.clip(round(config.assess_duration.draw(rng, 1)[0]), 1, 60))
                treat_dur = int(np.clip(round(config.treat_duration[triage].draw(rng, 1)[0]),
                                        1, config.max_service_minutes))
                patients.append(_Patient(seq, t_reg, age, sex, mode, triage, skip, group, hrg,
                                         lag, call_delay, assess_offset, assess_dur,
                                         treat_dur, float(rng.uniform())))
                seq += 1
    return patients


def to_minutes_from_date(d: date) -> int:
    return to_minutes(datetime(d.year, d.month, d.day))


def simulate(config: SimConfig) -> list[PatientRecord]:
    """Run the event loop and emit records sorted by (t_reg, patient_id).

    Identical seeds give identical logs; the loop is single-threaded and all
    per-patient randomness is pre-drawn in arrival order. Urgent and
    resuscitation patients join the treatment queue with strictly dominating
    priority; low-acuity children get a configurable boost. An escalation
    rule starts treatment for anyone who has waited ``overflow_wait_minutes``,
    which bounds every waiting time below the cleaning threshold.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    patients = _generate_arrivals(config, rng)

    start_min = to_minutes_from_date(config.start_date)
    end_min = start_min + config.horizon_days * 1440

    events: list = []
    counter = 0

    def push(time: int, kind: int, payload) -> None:
        nonlocal counter
        heapq.heappush(events, (time, counter, kind, payload))
        counter += 1

    for p in patients:
        push(p.t_reg, _ARRIVAL, p)
    for h in range(start_min, end_min + 3 * 1440, 60):
        push(h, _HOUR, None)

    roster = config.staff_roster
    cap_per_staff = config.treatment_capacity_per_staff
    frac = config.assess_staff_fraction

    def treat_cap(t: int) -> int:
        return roster[hour_of_week(t) - 1] * cap_per_staff

    def assess_cap(t: int) -> int:
        return max(1, round(frac * roster[hour_of_week(t) - 1]))

    assess_queue: list = []   # (t_reg, seq, patient)
    treat_queue: list = []    # (class_rank, child_rank, t_reg, seq, patient)
    busy_assess = 0
    busy_treat = 0

    boost = config.minor_age_priority_boost

    def queue_key(p: _Patient):
        if p.triage in URGENT_CLASSES:
            return (0, 0.0, p.t_reg, p.seq)
        child_rank = 1.0 - boost if p.age <= PEDIATRIC_AGE_MAX else 1.0
        return (1, child_rank, p.t_reg, p.seq)

    def try_assess(t: int) -> None:
        nonlocal busy_assess
        cap = assess_cap(t)
        while assess_queue and busy_assess < cap:
            _, _, p = assess_queue[0]
            heapq.heappop(assess_queue)
            if p.t_assess is not None or p.t_treat is not None:
                continue
            p.t_assess = t
            busy_assess += 1
            push(t + p.assess_dur, _ASSESS_DONE, p)

    def try_treat(t: int) -> None:
        nonlocal busy_treat
        cap = treat_cap(t)
        while treat_queue and busy_treat < cap:
            p = treat_queue[0][4]
            heapq.heappop(treat_queue)
            if p.t_treat is not None:
                continue
            p.t_treat = t
            busy_treat += 1
            push(t + p.treat_dur, _TREAT_DONE, p)

    while events:
        t, _, kind, p = heapq.heappop(events)
        if kind == _ARRIVAL:
            push(t + config.overflow_wait_minutes, _OVERFLOW, p)
            if p.triage in URGENT_CLASSES:
                p.t_assess = t + p.assess_offset
                push(p.t_assess, _READY, p)
            elif p.skip:
                push(t + p.prep_lag, _READY, p)
            else:
                push(t + p.call_delay, _JOIN_ASSESS, p)
        elif kind == _JOIN_ASSESS:
            if p.t_assess is None and p.t_treat is None:
                heapq.heappush(assess_queue, (t, p.seq, p))
                try_assess(t)
        elif kind == _ASSESS_DONE:
            busy_assess -= 1
            if p.t_treat is None:
                push(max(t, p.t_reg + p.prep_lag), _READY, p)
            try_assess(t)
        elif kind == _READY:
            if p.t_treat is None:
                heapq.heappush(treat_queue, queue_key(p) + (p,))
                try_treat(t)
        elif kind == _TREAT_DONE:
            p.t_depart = t
            if not p.overflowed:
                busy_treat -= 1
                try_treat(t)
        elif kind == _OVERFLOW:
            if p.t_treat is None:
                if p.t_assess is None and not p.skip:
                    p.t_assess = t
                p.t_treat = t
                p.overflowed = True
                push(t + p.treat_dur, _TREAT_DONE, p)
        else:  # _HOUR
            try_assess(t)
            try_treat(t)

    records = []
    width = max(7, len(str(len(patients))))
    for p in patients:
        assessed = p.t_assess is not None
        records.append(PatientRecord(
            patient_id=f"P{p.seq:0{width}d}",
            t_reg=from_minutes(p.t_reg),
            t_assess=from_minutes(p.t_assess) if assessed else None,
            t_treat=from_minutes(p.t_treat),
            t_depart=from_minutes(p.t_depart),
            age=p.age,
            sex=p.sex,
            arrival_mode=p.mode,
            triage=p.triage if assessed else None,
            patient_group=p.group if assessed else None,
            hrg_code=p.hrg if assessed else None,
            staff_code=_staff_code(p, roster),
        ))
    records.sort(key=lambda r: (to_minutes(r.t_reg), r.patient_id))
    return records


def _staff_code(p: _Patient, roster) -> str:
    how = hour_of_week(p.t_depart)
    n_staff = max(1, roster[how - 1])
    idx = min(int(p.staff_u * n_staff), n_staff - 1)
    shift = (how - 1) // 8
    return f"W{shift:02d}N{idx:02d}"


def year_boundaries(start: date, n_years: int) -> list:
    """Calendar-year boundaries from ``start`` (inclusive) spanning
    ``n_years`` whole years, as naive datetimes."""
    return [datetime(start.year + k, start.month, start.day) for k in range(n_years + 1)]


def cohort_summary(records: Sequence[PatientRecord]) -> dict:
    """Counts and wait moments echoed by the simulate command."""
    n = len(records)
    if n == 0:
        return {"n": 0, "low_acuity_share": 0.0, "assessed": 0,
                "t1_mean": 0.0, "t1_sd": 0.0, "t1_median": 0.0,
                "t2_mean": 0.0, "t2_sd": 0.0}
    t1 = np.array([waits(r).t1 for r in records], dtype=float)
    t2 = np.array([waits(r).t2 for r in records if r.t_assess is not None], dtype=float)
    low = sum(1 for r in records if r.is_low_acuity())
    return {
        "n": n,
        "low_acuity_share": low / n,
        "assessed": int(sum(1 for r in records if r.t_assess is not None)),
        "t1_mean": float(t1.mean()),
        "t1_sd": float(t1.std()),
        "t1_median": float(np.median(t1)),
        "t2_mean": float(t2.mean()) if t2.size else 0.0,
        "t2_sd": float(t2.std()) if t2.size else 0.0,
    }


def lag1_autocorrelation(values: Sequence[float]) -> float:
    """Lag-1 autocorrelation of consecutive values."""
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        return 0.0
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0:
        return 0.0
    return float((x[:-1] @ x[1:]) / denom)


def _diurnal_profile(base: float, hourly_shape: Sequence[float], dow_factor: Sequence[float]) -> tuple:
    prof = []
    for d in range(7):
        for h in range(24):
            prof.append(base * hourly_shape[h] * dow_factor[d])
    return tuple(prof)


_HOURLY_SHAPE = (0.55, 0.42, 0.35, 0.30, 0.30, 0.35, 0.50, 0.80,
                 1.20, 1.60, 1.80, 1.75, 1.60, 1.50, 1.45, 1.40,
                 1.50, 1.65, 1.75, 1.60, 1.30, 1.05, 0.85, 0.65)
_DOW_FACTOR = (1.12, 1.00, 0.97, 0.94, 1.00, 1.08, 1.10)


def _default_roster() -> tuple:
    roster = []
    for d in range(7):
        for h in range(24):
            if h < 8:
                staff = 1
            elif h < 22:
                staff = 2
            else:
                staff = 1
            if d in (5, 6) and 10 <= h < 22:
                staff += 1
            roster.append(staff)
    return tuple(roster)


def default_config(seed: int = 20140101, horizon_days: int = 1826,
                   start: date = date(2014, 1, 1), rate_scale: float = 1.0) -> SimConfig:
    """The shipped Hospital-1-style configuration: five calendar years at
    desk scale (~55k arrivals)."""
    years = range(start.year, start.year + max(1, math.ceil(horizon_days / 365)) + 1)
    return SimConfig(
        start_date=start,
        horizon_days=horizon_days,
        arrival_rate_profile=_diurnal_profile(1.16 * rate_scale, _HOURLY_SHAPE, _DOW_FACTOR),
        holiday_calendar=HolidayCalendar.default(years),
        staff_roster=_default_roster(),
        treatment_capacity_per_staff=1,
        assess_staff_fraction=0.75,
        assess_call_delay=Lognormal(median=11.0, sigma=0.50),
        assess_duration=Lognormal(median=8.0, sigma=0.35),
        treat_duration={"minor": Lognormal(42.0, 0.45), "major": Lognormal(55.0, 0.45),
                        "urgent": Lognormal(70.0, 0.40), "resus": Lognormal(90.0, 0.35)},
        prep_lag={"adult": Lognormal(58.0, 0.50), "child": Lognormal(16.0, 0.45),
                  "urgent": Lognormal(0.0, 0.0)},
        group_lag_multiplier=(0.80, 0.90, 0.95, 1.00, 1.05, 1.10, 1.20, 1.30),
        triage_mix={"minor": 0.44, "major": 0.51, "urgent": 0.04, "resus": 0.01},
        p_skip_assess=0.16,
        age_dist={"p_child": 0.24, "child_max": 16, "adult_mean": 48.0, "adult_sd": 22.0},
        sex_dist=0.52,
        arrival_mode_dist=0.36,
        minor_age_priority_boost=0.5,
        seed=seed,
    )


def small_hospital_config(seed: int = 20140102, horizon_days: int = 1826,
                          start: date = date(2014, 1, 1)) -> SimConfig:
    """A smaller second site: lower demand, leaner staffing."""
    base = default_config(seed=seed, horizon_days=horizon_days, start=start, rate_scale=0.55)
    roster = tuple(max(1, s - 1) for s in base.staff_roster)
    return replace(base, staff_roster=roster)
