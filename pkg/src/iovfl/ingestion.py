"""Reading, writing and synthesising the traffic-flow and accident datasets."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Generic, Iterator, TypeVar

import numpy as np

from .schema import (
    ACCIDENT_COLUMNS, AADF_COLUMNS, DAYS_PER_YEAR, NUM_DAYS, NUM_HOURS, NUM_SEVERITIES,
    VOCABULARIES, ColumnMapping,
)

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class AreaRecord:
    area_id: int
    year: int
    day_of_year: int
    aadf_count: float

    def __post_init__(self):
        if not 1 <= self.day_of_year <= DAYS_PER_YEAR:
            raise ValueError(f"day_of_year {self.day_of_year} outside 1..{DAYS_PER_YEAR}")
        if not self.aadf_count >= 0:  # also rejects NaN
            raise ValueError("aadf_count must be non-negative")


@dataclass(frozen=True)
class AccidentRecord:
    """One accident; categorical columns hold indices into ``VOCABULARIES``."""

    location_id: int
    day_category: int  # ISO weekday, Monday = 1
    hour_category: int
    light: int
    weather: int
    road_surface: int
    severity: int

    def __post_init__(self):
        if self.location_id < 1:
            raise ValueError("location_id must be >= 1")
        if not 1 <= self.day_category <= NUM_DAYS:
            raise ValueError("day_category outside 1..7")
        if not 0 <= self.hour_category < NUM_HOURS:
            raise ValueError("hour_category outside 0..23")
        for name in VOCABULARIES:
            if not 0 <= getattr(self, name) < len(VOCABULARIES[name]):
                raise ValueError(f"{name} code out of range")
        if self.severity not in range(NUM_SEVERITIES):
            raise ValueError("severity must be 0, 1 or 2")


@dataclass
class ParseResult(Generic[T]):
    """Parsed records plus the number of rows that were dropped."""

    records: list[T] = field(default_factory=list)
    skipped: int = 0

    @property
    def rows_read(self) -> int:
        return len(self.records) + self.skipped

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[T]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _open_rows(path, columns, mapping: ColumnMapping):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in columns if mapping.source(c) not in header]
    if missing:
        fh.close()
        raise ValueError(f"{path}: header lacks columns {missing}")
    return fh, reader


def parse_aadf_csv(path, mapping: ColumnMapping | None = None) -> ParseResult[AreaRecord]:
    mapping = mapping or ColumnMapping()
    out: ParseResult[AreaRecord] = ParseResult()
    fh, reader = _open_rows(path, AADF_COLUMNS, mapping)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = AreaRecord(
                    area_id=int(row[mapping.source("area_id")]),
                    year=int(row[mapping.source("year")]),
                    day_of_year=int(row[mapping.source("day_of_year")]),
                    aadf_count=float(row[mapping.source("aadf_count")]),
                )
            except (TypeError, ValueError) as exc:
                out.skipped += 1
                log.warning("%s:%d skipped (%s)", path, lineno, exc)
                continue
            out.records.append(rec)
    log.info("%s: %d AADF rows parsed, %d skipped", path, len(out.records), out.skipped)
    return out


def _day_category(raw: str, date_format: str | None) -> int:
    raw = raw.strip()
    if raw.isdigit() and len(raw) <= 1:
        return int(raw)
    if date_format:
        return dt.datetime.strptime(raw, date_format).isoweekday()
    return dt.date.fromisoformat(raw).isoweekday()


def _hour_category(raw: str) -> int:
    raw = raw.strip()
    if ":" in raw:
        raw = raw.split(":", 1)[0]
    return int(raw)


def _code(column: str, raw: str, mapping: ColumnMapping) -> int:
    value = mapping.translate(column, raw.strip())
    try:
        return VOCABULARIES[column].index(value)
    except ValueError:
        raise ValueError(f"unknown {column} value {raw!r}") from None


def parse_accident_csv(path, mapping: ColumnMapping | None = None,
                       max_location: int | None = None) -> ParseResult[AccidentRecord]:
    mapping = mapping or ColumnMapping()
    out: ParseResult[AccidentRecord] = ParseResult()
    fh, reader = _open_rows(path, ACCIDENT_COLUMNS, mapping)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                get = lambda c: row[mapping.source(c)]  # noqa: E731
                rec = AccidentRecord(
                    location_id=int(get("location_id")),
                    day_category=_day_category(get("day"), mapping.date_format),
                    hour_category=_hour_category(get("hour")),
                    light=_code("light", get("light"), mapping),
                    weather=_code("weather", get("weather"), mapping),
                    road_surface=_code("road_surface", get("road_surface"), mapping),
                    severity=int(mapping.translate("severity", get("severity").strip())),
                )
                if max_location is not None and rec.location_id > max_location:
                    raise ValueError(f"location_id {rec.location_id} > {max_location}")
            except (TypeError, ValueError, AttributeError) as exc:
                out.skipped += 1
                log.warning("%s:%d skipped (%s)", path, lineno, exc)
                continue
            out.records.append(rec)
    log.info("%s: %d accident rows parsed, %d skipped", path, len(out.records), out.skipped)
    return out


def write_aadf_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AADF_COLUMNS)
        for r in records:
            w.writerow([r.area_id, r.year, r.day_of_year, repr(float(r.aadf_count))])


def write_accident_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCIDENT_COLUMNS)
        for r in records:
            w.writerow([r.location_id, r.day_category, r.hour_category,
                        VOCABULARIES["light"][r.light], VOCABULARIES["weather"][r.weather],
                        VOCABULARIES["road_surface"][r.road_surface], r.severity])


# --- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_areas: int = 190
    num_locations: int = 20
    num_samples: int = 20_000
    significant_fraction: float = 0.5
    aadf_high_mean: float = 8000.0
    aadf_low_mean: float = 2000.0
    seed: int = 0
    days_per_area: int = 24  # count points per area; V_d only needs relative scale
    year: int = 2020
    label_noise: float = 0.35  # Gumbel temperature on severity logits
    location_effect: float = 1.0  # spread of per-location severity effects
    condition_effect: float = 0.8  # spread of hour-band and road-condition effects
    class_skew: float = 1.0  # added to the slight-severity logit; > 0 makes it the majority

    def __post_init__(self):
        if self.num_areas < 1 or self.num_locations < 1 or self.num_samples < 0:
            raise ValueError("num_areas and num_locations must be >= 1, num_samples >= 0")
        if not 0 < self.significant_fraction < 1:
            raise ValueError("significant_fraction must lie in (0, 1)")
        if self.aadf_high_mean <= 0 or self.aadf_low_mean <= 0:
            raise ValueError("AADF means must be positive")
        if not 1 <= self.days_per_area <= DAYS_PER_YEAR:
            raise ValueError("days_per_area must lie in 1..365")
        if min(self.label_noise, self.location_effect, self.condition_effect) < 0:
            raise ValueError("noise and effect scales must be >= 0")

    @property
    def num_significant(self) -> int:
        return int(round(self.significant_fraction * self.num_areas))


def synth_generate(cfg: SynthConfig) -> tuple[list[AreaRecord], list[AccidentRecord]]:
    """Schema-compatible stand-in for the real datasets, a pure function of ``cfg``.

    Significant areas draw daily counts around ``aadf_high_mean``, the rest
    around ``aadf_low_mean`` (gamma, shape 4). Accident severity is the
    noisy argmax of additive effects of location, weekday, hour band and the
    three road conditions, so it is learnable but not deterministic.
    """
    rng = np.random.default_rng(cfg.seed)
    high = np.zeros(cfg.num_areas, dtype=bool)
    high[rng.permutation(cfg.num_areas)[:cfg.num_significant]] = True
    areas = []
    for d in range(cfg.num_areas):
        mean = cfg.aadf_high_mean if high[d] else cfg.aadf_low_mean
        days = np.sort(rng.choice(DAYS_PER_YEAR, cfg.days_per_area, replace=False)) + 1
        counts = np.round(rng.gamma(4.0, mean / 4.0, cfg.days_per_area), 1)
        areas.extend(AreaRecord(d + 1, cfg.year, int(day), float(c)) for day, c in zip(days, counts))

    L = cfg.num_locations
    nl, nw, ns = (len(VOCABULARIES[k]) for k in ("light", "weather", "road_surface"))
    ce = cfg.condition_effect
    eff_loc = rng.normal(0.0, cfg.location_effect, (L, NUM_SEVERITIES))
    eff_day = rng.normal(0.0, 0.5 * ce, (NUM_DAYS, NUM_SEVERITIES))
    eff_hour = rng.normal(0.0, ce, (6, NUM_SEVERITIES))  # 4-hour bands
    eff_light = rng.normal(0.0, ce, (nl, NUM_SEVERITIES))
    eff_weather = rng.normal(0.0, ce, (nw, NUM_SEVERITIES))
    eff_surface = rng.normal(0.0, ce, (ns, NUM_SEVERITIES))

    n = cfg.num_samples
    loc = rng.integers(0, L, n)
    day = rng.integers(0, NUM_DAYS, n)
    hour = rng.integers(0, NUM_HOURS, n)
    light = rng.choice(nl, n, p=_skewed(nl))
    weather = rng.choice(nw, n, p=_skewed(nw))
    surface = rng.choice(ns, n, p=_skewed(ns))
    logits = (np.array([cfg.class_skew, 0.0, 0.0]) + eff_loc[loc] + eff_day[day] + eff_hour[hour // 4] + eff_light[light]
              + eff_weather[weather] + eff_surface[surface])
    noise = rng.gumbel(0.0, 1.0, logits.shape) * cfg.label_noise
    severity = np.argmax(logits + noise, axis=1)
    accidents = [AccidentRecord(int(loc[i]) + 1, int(day[i]) + 1, int(hour[i]), int(light[i]),
                                int(weather[i]), int(surface[i]), int(severity[i])) for i in range(n)]
    return areas, accidents


def _skewed(k: int) -> np.ndarray:
    """Category frequencies decaying geometrically, first category most common."""
    w = 0.5 ** np.arange(k)
    return w / w.sum()
