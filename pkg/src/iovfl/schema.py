"""Canonical CSV layouts and categorical vocabularies for the two road datasets.

Both files are plain comma-separated text with a header row.

AADF file (``AADF_COLUMNS``)::

    area_id,year,day_of_year,aadf_count
    3,2004,120,5400

Accident file (``ACCIDENT_COLUMNS``)::

    location_id,day,hour,light,weather,road_surface,severity
    12,2021-03-07,23:15,darkness_lit,rain,wet,1

``day`` is either a weekday category 1..7 (ISO numbering, Monday = 1) or a
calendar date; dates are reduced to their ISO weekday. ``hour`` is an integer
0..23 or a ``HH:MM`` clock time. Categorical columns must use the values in
``VOCABULARIES``; real exports with other spellings are translated through a
:class:`ColumnMapping`.

Severity classes are 0 (slight), 1 (serious), 2 (fatal).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

AADF_COLUMNS = ("area_id", "year", "day_of_year", "aadf_count")
ACCIDENT_COLUMNS = ("location_id", "day", "hour", "light", "weather", "road_surface", "severity")

VOCABULARIES: dict[str, tuple[str, ...]] = {
    "light": ("daylight", "darkness_lit", "darkness_unlit", "darkness_no_lighting"),
    "weather": ("fine", "rain", "snow", "fog", "high_wind"),
    "road_surface": ("dry", "wet", "snow", "ice", "flood"),
}

NUM_DAYS = 7
NUM_HOURS = 24
NUM_SEVERITIES = 3
DAYS_PER_YEAR = 365


@dataclass
class ColumnMapping:
    """Adapter from a source export to the canonical schema.

    ``columns`` maps canonical column name -> header in the source file.
    ``values`` maps canonical categorical column -> {source value: canonical value}.
    ``date_format`` is a ``strptime`` pattern for the ``day`` column when it
    holds dates in a non-ISO layout (e.g. ``"%d/%m/%Y"``).
    """

    columns: dict[str, str] = field(default_factory=dict)
    values: dict[str, dict[str, str]] = field(default_factory=dict)
    date_format: str | None = None

    def source(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)

    def translate(self, column: str, raw: str) -> str:
        return self.values.get(column, {}).get(raw, raw)

    @classmethod
    def load(cls, path: str | Path) -> "ColumnMapping":
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        values = {k: {str(a): str(b) for a, b in v.items()} for k, v in (doc.get("values") or {}).items()}
        return cls(columns=dict(doc.get("columns") or {}), values=values, date_format=doc.get("date_format"))
