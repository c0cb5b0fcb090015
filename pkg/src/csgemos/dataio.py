"""Dataset parsing, grouping configuration and tabular serialization.

The dataset container is a CSV with header ``date,station,obs,<members...>``,
ISO dates, values in millimetres and ``NA`` (or an empty field) for missing
entries.  Rows with missing members or observations are excluded according
to the missing-data policy: ``date-drop`` (default) removes every station's
row for an affected date, ``row-drop`` removes only the affected row.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass
from typing import Sequence

from .emos import GroupingScheme, WindowScore
from .errors import DataError, GroupingError

__all__ = [
    "ForecastCase",
    "Dataset",
    "Exclusion",
    "parse_dataset",
    "write_dataset",
    "parse_grouping",
    "write_tuning_table",
]

_MISSING_TOKENS = {"", "na", "nan", "null"}


@dataclass(frozen=True)
class ForecastCase:
    """Dated, station-tagged ensemble with its verifying observation."""

    date: dt.date
    station: str
    members: tuple[float, ...]
    observation: float | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of forecast cases sharing one member layout."""

    member_names: tuple[str, ...]
    cases: tuple[ForecastCase, ...]

    def __post_init__(self):
        seen = set()
        for case in self.cases:
            key = (case.date, case.station)
            if key in seen:
                raise DataError(f"duplicate case for {case.date} {case.station}")
            seen.add(key)

    @property
    def dates(self) -> tuple[dt.date, ...]:
        return tuple(sorted({c.date for c in self.cases}))

    @property
    def stations(self) -> tuple[str, ...]:
        return tuple(sorted({c.station for c in self.cases}))

    def cases_on(self, date: dt.date) -> tuple[ForecastCase, ...]:
        return tuple(c for c in self.cases if c.date == date)

    def cases_for_dates(self, dates: Sequence[dt.date]) -> tuple[ForecastCase, ...]:
        wanted = set(dates)
        return tuple(c for c in self.cases if c.date in wanted)


@dataclass(frozen=True)
class Exclusion:
    """One dropped input row and the reason it was dropped."""

    date: str
    station: str
    reason: str


def _parse_value(token: str, what: str, row_no: int) -> float | None:
    token = token.strip()
    if token.lower() in _MISSING_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError as exc:
        raise DataError(f"row {row_no}: cannot parse {what} value {token!r}") from exc
    if value != value or value in (float("inf"), float("-inf")):
        raise DataError(f"row {row_no}: non-finite {what} value {token!r}")
    if value < 0.0:
        raise DataError(f"row {row_no}: negative {what} value {token!r}")
    return value


def parse_dataset(text: str, policy: str = "date-drop",
                  require_obs: bool = True) -> tuple[Dataset, list[Exclusion]]:
    """Parse dataset CSV text, applying the missing-data policy.

    Returns the retained dataset and an exclusion log with one entry per
    dropped row, so retained + excluded always equals the input row count.
    With ``require_obs=False`` (pure prediction) missing observations do
    not cause exclusion.
    """
    if policy not in ("date-drop", "row-drop"):
        raise DataError(f"unknown missing-data policy {policy!r}")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty dataset: missing header row") from None
    header = [h.strip() for h in header]
    if len(header) < 4 or header[0] != "date" or header[1] != "station" or header[2] != "obs":
        raise DataError(
            "malformed header: expected 'date,station,obs,<member columns...>'"
        )
    member_names = tuple(header[3:])
    if len(set(member_names)) != len(member_names):
        raise DataError("member column names must be unique")

    rows = []  # (row_no, date_str, date, station, obs, members, missing_reason)
    seen = set()
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise DataError(
                f"row {row_no}: {len(row)} fields, header has {len(header)} "
                "(inconsistent member count)"
            )
        date_str = row[0].strip()
        try:
            date = dt.date.fromisoformat(date_str)
        except ValueError as exc:
            raise DataError(f"row {row_no}: unparseable date {date_str!r}") from exc
        station = row[1].strip()
        if not station:
            raise DataError(f"row {row_no}: empty station id")
        if (date, station) in seen:
            raise DataError(f"row {row_no}: duplicate case for {date} {station}")
        seen.add((date, station))
        obs = _parse_value(row[2], "observation", row_no)
        members = [_parse_value(tok, f"member {name}", row_no)
                   for name, tok in zip(member_names, row[3:])]
        reason = None
        missing_members = [name for name, v in zip(member_names, members) if v is None]
        if missing_members:
            reason = f"missing member {', '.join(missing_members)}"
        elif obs is None and require_obs:
            reason = "missing observation"
        rows.append((row_no, date_str, date, station, obs, members, reason))

    exclusions: list[Exclusion] = []
    if policy == "date-drop":
        bad_dates = {}
        for _, date_str, date, station, _, _, reason in rows:
            if reason is not None:
                bad_dates.setdefault(date, f"{reason} at station {station}")
        kept = []
        for _, date_str, date, station, obs, members, reason in rows:
            if date in bad_dates:
                why = reason or f"date excluded: {bad_dates[date]}"
                exclusions.append(Exclusion(date_str, station, why))
            else:
                kept.append(ForecastCase(date, station, tuple(members), obs))
    else:
        kept = []
        for _, date_str, date, station, obs, members, reason in rows:
            if reason is not None:
                exclusions.append(Exclusion(date_str, station, reason))
            else:
                kept.append(ForecastCase(date, station, tuple(members), obs))

    return Dataset(member_names, tuple(kept)), exclusions


def write_dataset(dataset: Dataset) -> str:
    """Serialize a dataset back to CSV (values round-trip exactly)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["date", "station", "obs", *dataset.member_names])
    for case in dataset.cases:
        obs = "NA" if case.observation is None else repr(case.observation)
        writer.writerow([case.date.isoformat(), case.station, obs,
                         *(repr(v) for v in case.members)])
    return out.getvalue()


def parse_grouping(text: str, member_names: Sequence[str]) -> GroupingScheme:
    """Build a grouping scheme from JSON mapping group names to member lists.

    The lists must be disjoint and jointly cover every member column; a
    singleton group per member yields the non-exchangeable model.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid grouping JSON: {exc}") from exc
    if not isinstance(doc, dict) or not doc:
        raise GroupingError("grouping JSON must be a nonempty object of name -> members")
    index = {name: i for i, name in enumerate(member_names)}
    groups: list[tuple[int, ...]] = []
    names: list[str] = []
    assigned: set[str] = set()
    for group_name, group_members in doc.items():
        if not isinstance(group_members, list) or not group_members:
            raise GroupingError(f"group {group_name!r} must list at least one member")
        idx = []
        for member in group_members:
            if member not in index:
                raise GroupingError(f"group {group_name!r} names unknown member {member!r}")
            if member in assigned:
                raise GroupingError(f"member {member!r} appears in more than one group")
            assigned.add(member)
            idx.append(index[member])
        groups.append(tuple(idx))
        names.append(str(group_name))
    missing = [m for m in member_names if m not in assigned]
    if missing:
        raise GroupingError(f"members not assigned to any group: {', '.join(missing)}")
    return GroupingScheme(tuple(member_names), tuple(groups), tuple(names))


def write_tuning_table(rows: Sequence[WindowScore]) -> str:
    """CSV table of window-tuning results: ``n,mean_crps,mae``."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["n", "mean_crps", "mae"])
    for row in rows:
        writer.writerow([row.window, repr(row.mean_crps), repr(row.mae)])
    return out.getvalue()
