"""Trip-record parsing and time discretisation.

Raw trip files are delimiter-separated text with a header row.  Valid rows
become :class:`TripRecord` objects; :func:`discretize` then buckets them by
pickup time into ``P`` half-open intervals per day on a global timeline and
aggregates them into (interval, origin, dest, count) edge-list rows.
"""
from __future__ import annotations

import csv
import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
EDGE_LIST_HEADER = ("interval", "origin", "dest", "count")


class Platform(str, enum.Enum):
    TAXI = "taxi"
    AUX = "aux"


class ConfigError(ValueError):
    """Bad configuration: missing columns, invalid registry, bad P."""


class DataError(ValueError):
    """Input data that cannot be used at all."""


@dataclass(frozen=True)
class TripRecord:
    pickup_time: int
    dropoff_time: int
    pickup_zone: int
    dropoff_zone: int
    platform: Platform


@dataclass(frozen=True)
class TripSchema:
    """Column names of a raw trip file.  Defaults follow the NYC TLC layout."""

    pickup_time: str = "tpep_pickup_datetime"
    dropoff_time: str = "tpep_dropoff_datetime"
    pickup_zone: str = "PULocationID"
    dropoff_zone: str = "DOLocationID"
    delimiter: str = ","

    @classmethod
    def for_platform(cls, platform: Platform) -> "TripSchema":
        if Platform(platform) is Platform.AUX:
            # high-volume for-hire vehicle files
            return cls(pickup_time="pickup_datetime", dropoff_time="dropoff_datetime")
        return cls()


class ZoneRegistry:
    """Ordered zone ids and their dense 0..M-1 index."""

    def __init__(self, zone_ids: Iterable[int]):
        ids = [int(z) for z in zone_ids]
        if not ids:
            raise ConfigError("zone registry is empty")
        if len(set(ids)) != len(ids):
            dupes = sorted(z for z, c in Counter(ids).items() if c > 1)
            raise ConfigError(f"zone registry has duplicate ids: {dupes[:10]}")
        self.zone_ids = ids
        self._index = {z: i for i, z in enumerate(ids)}

    @classmethod
    def default(cls, m: int = 265) -> "ZoneRegistry":
        return cls(range(1, m + 1))

    @classmethod
    def from_file(cls, path) -> "ZoneRegistry":
        """One zone id per line; blank lines and ``#`` comments are ignored."""
        ids = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                ids.append(int(line))
        return cls(ids)

    def __len__(self) -> int:
        return len(self.zone_ids)

    def __contains__(self, zone_id) -> bool:
        return zone_id in self._index

    def index(self, zone_id: int) -> int:
        return self._index[zone_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, ZoneRegistry) and self.zone_ids == other.zone_ids

    def __repr__(self) -> str:
        return f"ZoneRegistry(M={len(self)})"


@dataclass(frozen=True)
class IntervalIndex:
    global_index: int
    P: int

    @property
    def day(self) -> int:
        return self.global_index // self.P

    @property
    def slot(self) -> int:
        return self.global_index % self.P

    @classmethod
    def from_day_slot(cls, day: int, slot: int, P: int) -> "IntervalIndex":
        if not 0 <= slot < P:
            raise ValueError(f"slot {slot} outside 0..{P - 1}")
        return cls(day * P + slot, P)


@dataclass
class ParseStats:
    accepted: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1


def parse_timestamp(text: str) -> int:
    """UTC seconds from an ISO-like datetime or a plain integer epoch value."""
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_trips(path, platform, schema: TripSchema | None = None,
                registry: ZoneRegistry | None = None,
                stats: ParseStats | None = None) -> Iterator[TripRecord]:
    """Yield a TripRecord for every usable row of ``path``.

    Rows with unparseable fields, a dropoff before the pickup, or zones outside
    ``registry`` are skipped and tallied in ``stats``.  A header missing one of
    the schema's columns raises :class:`ConfigError` before anything is yielded.
    """
    platform = Platform(platform)
    schema = schema or TripSchema.for_platform(platform)
    registry = registry or ZoneRegistry.default()
    stats = stats if stats is not None else ParseStats()
    needed = (schema.pickup_time, schema.dropoff_time, schema.pickup_zone, schema.dropoff_zone)

    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: file has no header row")
        header = [h.strip() for h in header]
        missing = [c for c in needed if c not in header]
        if missing:
            raise ConfigError(f"{path}: header lacks columns {missing}")
        cols = [header.index(c) for c in needed]
        width = max(cols)

        for row in reader:
            if not row:
                continue
            if len(row) <= width:
                stats.skip("short row")
                continue
            try:
                pu_t = parse_timestamp(row[cols[0]])
                do_t = parse_timestamp(row[cols[1]])
                pu_z = int(row[cols[2]])
                do_z = int(row[cols[3]])
            except ValueError:
                stats.skip("unparseable field")
                continue
            if do_t < pu_t:
                stats.skip("dropoff before pickup")
                continue
            if pu_z not in registry or do_z not in registry:
                stats.skip("zone not in registry")
                continue
            stats.accepted += 1
            yield TripRecord(pu_t, do_t, pu_z, do_z, platform)

    logger.info("%s: %d trips accepted, %d skipped %s", path, stats.accepted,
                stats.skipped, dict(stats.reasons))


def epoch_seconds(epoch) -> int:
    if isinstance(epoch, (int, float)):
        return int(epoch)
    if isinstance(epoch, str):
        epoch = date.fromisoformat(epoch)
    if isinstance(epoch, datetime):
        dt = epoch if epoch.tzinfo else epoch.replace(tzinfo=timezone.utc)
    else:
        dt = datetime(epoch.year, epoch.month, epoch.day, tzinfo=timezone.utc)
    return int(dt.timestamp())


def discretize(records: Iterable[TripRecord], epoch, P: int, days: int | None = None,
               stats: ParseStats | None = None) -> list[tuple[int, int, int, int]]:
    """Aggregate trips into sorted (interval, origin, dest, count) rows.

    A trip belongs to the interval holding its pickup time; intervals are
    half-open.  Trips before ``epoch`` or at/after ``epoch + days`` are skipped.
    """
    if P <= 0 or SECONDS_PER_DAY % P:
        raise ConfigError(f"P={P} must divide {SECONDS_PER_DAY}")
    width = SECONDS_PER_DAY // P
    start = epoch_seconds(epoch)
    horizon = None if days is None else start + days * SECONDS_PER_DAY
    stats = stats if stats is not None else ParseStats()

    counts: Counter = Counter()
    for rec in records:
        if rec.pickup_time < start or (horizon is not None and rec.pickup_time >= horizon):
            stats.skip("outside horizon")
            continue
        interval = (rec.pickup_time - start) // width
        counts[(interval, rec.pickup_zone, rec.dropoff_zone)] += 1
    return [(i, o, d, c) for (i, o, d), c in sorted(counts.items())]


def write_edge_list(path, rows: Sequence[tuple[int, int, int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EDGE_LIST_HEADER)
        writer.writerows(rows)


def read_edge_list(path) -> list[tuple[int, int, int, int]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EDGE_LIST_HEADER:
            raise DataError(f"{path}: expected edge-list header {','.join(EDGE_LIST_HEADER)}")
        rows = []
        for n, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(tuple(int(v) for v in row))
            except ValueError as exc:
                raise DataError(f"{path}:{n}: bad edge-list row {row}") from exc
            if len(rows[-1]) != 4:
                raise DataError(f"{path}:{n}: expected 4 fields, got {len(row)}")
    return rows


def ingest_files(paths: Sequence, platform, epoch, P: int, days: int | None = None,
                 schema: TripSchema | None = None, registry: ZoneRegistry | None = None,
                 stats: ParseStats | None = None) -> list[tuple[int, int, int, int]]:
    """Parse several trip files of one platform and merge them into one edge list."""
    stats = stats if stats is not None else ParseStats()
    merged: Counter = Counter()
    for path in paths:
        recs = parse_trips(path, platform, schema, registry, stats)
        for i, o, d, c in discretize(recs, epoch, P, days, stats):
            merged[(i, o, d)] += c
    return [(i, o, d, c) for (i, o, d), c in sorted(merged.items())]
