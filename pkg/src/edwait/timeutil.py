"""Minute-resolution time arithmetic and the holiday calendar."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

_EPOCH = datetime(1970, 1, 1)
_MINUTE = timedelta(minutes=1)

MINUTES_PER_HOUR = 60
MINUTES_PER_DAY = 1440
MINUTES_PER_WEEK = 10080
HOURS_PER_WEEK = 168

# 1970-01-01 was a Thursday; Monday-indexed day offset of the epoch.
_EPOCH_WEEKDAY = 3


def to_minutes(ts: datetime) -> int:
    """Naive timestamp -> whole minutes since 1970-01-01 00:00."""
    return (ts - _EPOCH) // _MINUTE


def from_minutes(minutes: int) -> datetime:
    return _EPOCH + int(minutes) * _MINUTE


def parse_minute(text: str) -> datetime:
    """Parse an ISO-8601 timestamp, truncating anything below the minute."""
    ts = datetime.fromisoformat(text)
    return ts.replace(second=0, microsecond=0)


def format_minute(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M")


def hour_of_day(minutes: int) -> int:
    """1..24, bucket 1 covers 00:00-00:59."""
    return (minutes // MINUTES_PER_HOUR) % 24 + 1


def day_of_week(minutes: int) -> int:
    """1..7 with Monday = 1."""
    return (minutes // MINUTES_PER_DAY + _EPOCH_WEEKDAY) % 7 + 1


def hour_of_week(minutes: int) -> int:
    """1..168; hour 1 is Monday 00:00-00:59."""
    return (day_of_week(minutes) - 1) * 24 + hour_of_day(minutes)


# Holiday feature codes.
NORMAL_DAY = 0
HOLIDAY = 1
AROUND_CHRISTMAS = 2

_AROUND_CHRISTMAS_DAYS = tuple(range(20, 25)) + tuple(range(27, 32))


@dataclass(frozen=True)
class HolidayCalendar:
    """Fixed-date holidays plus per-date arrival-rate multipliers.

    ``code`` yields the three-level feature coding (0 normal, 1 holiday,
    2 days around Christmas); ``multiplier`` scales simulated arrival rates.
    """

    holidays: frozenset = field(default_factory=frozenset)
    multipliers: dict = field(default_factory=dict)

    def code(self, day: date) -> int:
        if day in self.holidays:
            return HOLIDAY
        if day.month == 12 and day.day in _AROUND_CHRISTMAS_DAYS:
            return AROUND_CHRISTMAS
        return NORMAL_DAY

    def multiplier(self, day: date) -> float:
        return self.multipliers.get(day, 1.0)

    @classmethod
    def default(cls, years: range) -> "HolidayCalendar":
        """New Year, Christmas Day and Boxing Day for each year, with a
        mild surge multiplier on the holidays themselves."""
        days = []
        mult = {}
        for y in years:
            for d in (date(y, 1, 1), date(y, 12, 25), date(y, 12, 26)):
                days.append(d)
                mult[d] = 1.3
        return cls(holidays=frozenset(days), multipliers=mult)

    def to_json(self) -> dict:
        return {
            "holidays": sorted(d.isoformat() for d in self.holidays),
            "multipliers": {d.isoformat(): m for d, m in sorted(self.multipliers.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HolidayCalendar":
        return cls(
            holidays=frozenset(date.fromisoformat(s) for s in obj.get("holidays", [])),
            multipliers={date.fromisoformat(s): float(m) for s, m in obj.get("multipliers", {}).items()},
        )
