"""Pixel-day tables, fire events and mark transformations.

A :class:`PixelDayTable` holds one row per (cell, day) discretisation cell
with its covariates and observed fire count.  Fire events carry the burnt
area mark and are attached to their pixel-day by :func:`attach_marks`.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CountMismatchError, DataError, DuplicateKeyError, OrphanEventError

log = logging.getLogger(__name__)

DEFAULT_SEASON = (6, 7, 8, 9, 10)
DEFAULT_VOLUME = 64.0
MARK_EPS = 1e-6

PIXEL_DAY_COLUMNS = ("cell_id", "day_index", "year", "month", "x_km", "y_km",
                     "fwi", "fa", "count", "volume")
FIRE_COLUMNS = ("fire_id", "cell_id", "day_index", "burnt_area_ha")

_INT_COLUMNS = ("cell_id", "day_index", "year", "month", "count")
_FLOAT_COLUMNS = ("x_km", "y_km", "fwi", "fa", "volume")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PixelDayTable:
    """Column store of pixel-day records.

    All columns are read-only numpy arrays of equal length.  Row order is the
    order of construction (file order when loaded from CSV).
    """

    cell_id: np.ndarray
    day_index: np.ndarray
    year: np.ndarray
    month: np.ndarray
    x_km: np.ndarray
    y_km: np.ndarray
    fwi: np.ndarray
    fa: np.ndarray
    count: np.ndarray
    volume: np.ndarray
    season: tuple = DEFAULT_SEASON
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in _INT_COLUMNS:
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        for name in _FLOAT_COLUMNS:
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        object.__setattr__(self, "season", tuple(int(m) for m in self.season))
        n = len(self.cell_id)
        for name in PIXEL_DAY_COLUMNS:
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        self._validate()
        index = {}
        for i, key in enumerate(zip(self.cell_id.tolist(), self.day_index.tolist())):
            if key in index:
                raise DuplicateKeyError(
                    f"duplicate pixel-day (cell_id={key[0]}, day_index={key[1]})", line=None)
            index[key] = i
        object.__setattr__(self, "_index", index)

    def _validate(self):
        checks = [
            ("count", self.count < 0, "count must be >= 0"),
            ("volume", ~(self.volume > 0), "volume must be > 0"),
            ("fwi", ~(self.fwi >= 0), "fwi must be >= 0"),
            ("fa", ~((self.fa >= 0) & (self.fa <= 100)), "fa must lie in [0, 100]"),
            ("month", ~np.isin(self.month, self.season),
             f"month outside season {self.season}"),
        ]
        for name, bad, msg in checks:
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise DataError(f"{msg} (row {i}: {name}={getattr(self, name)[i]})", field=name)
        for name in ("x_km", "y_km"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} must be finite", field=name)

    def __len__(self):
        return len(self.cell_id)

    def row_of(self, cell_id, day_index):
        """Row index of a (cell, day) pair, or ``None``."""
        return self._index.get((int(cell_id), int(day_index)))

    def rows_of(self, cell_ids, day_indices):
        out = np.empty(len(cell_ids), dtype=np.int64)
        for k, key in enumerate(zip(np.asarray(cell_ids).tolist(), np.asarray(day_indices).tolist())):
            out[k] = self._index.get(key, -1)
        return out

    def subset(self, rows):
        rows = np.asarray(rows)
        return PixelDayTable(**{c: getattr(self, c)[rows] for c in PIXEL_DAY_COLUMNS},
                             season=self.season)

    def with_counts(self, counts):
        cols = {c: getattr(self, c) for c in PIXEL_DAY_COLUMNS}
        cols["count"] = counts
        return PixelDayTable(**cols, season=self.season)

    def columns(self):
        return {c: getattr(self, c) for c in PIXEL_DAY_COLUMNS}

    def equals(self, other):
        return self.season == other.season and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in PIXEL_DAY_COLUMNS)

    @property
    def cells(self):
        return np.unique(self.cell_id)


@dataclass(frozen=True, eq=False)
class FireEventList:
    fire_id: np.ndarray
    cell_id: np.ndarray
    day_index: np.ndarray
    burnt_area: np.ndarray

    def __post_init__(self):
        for name in ("fire_id", "cell_id", "day_index"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        object.__setattr__(self, "burnt_area", _frozen(self.burnt_area, np.float64))
        bad = ~(self.burnt_area > 1.0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"burnt_area must exceed 1 ha (fire_id={self.fire_id[i]}, "
                            f"burnt_area={self.burnt_area[i]})", field="burnt_area_ha")

    def __len__(self):
        return len(self.fire_id)


@dataclass(frozen=True, eq=False)
class MarkedDataset:
    """Pixel-day table with fire events grouped by pixel-day.

    ``event_row[k]`` is the table row of event ``k``; events are sorted by
    table row then fire id.  ``exceed[k]`` is 1 when the mark is strictly
    above ``u``.
    """

    table: PixelDayTable
    events: FireEventList
    u: float
    event_row: np.ndarray
    exceed: np.ndarray

    @property
    def burnt_area(self):
        return self.events.burnt_area

    def moderate(self):
        return self.exceed == 0

    def extreme(self):
        return self.exceed == 1


def _parse_rows(path, columns):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    out = {c: [] for c in columns}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (header required)", line=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}", line=1)
        pos = [header.index(c) for c in columns]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno)
            for c, p in zip(columns, pos):
                text = row[p].strip()
                try:
                    out[c].append(int(text) if c in _INT_COLUMNS or c in ("fire_id",) else float(text))
                except ValueError:
                    raise DataError(f"{path}: cannot parse {c}={text!r}", line=lineno, field=c) from None
    return out


def load_pixel_days(path, season=DEFAULT_SEASON):
    """Read ``pixel_days.csv`` into a validated :class:`PixelDayTable`.

    Raises
    ------
    DataError
        On malformed rows (with line number), out-of-range fields or
        out-of-season months.
    DuplicateKeyError
        When a (cell_id, day_index) pair occurs twice.
    """
    cols = _parse_rows(path, PIXEL_DAY_COLUMNS)
    # re-run row checks with line numbers so errors point into the file
    keys = {}
    for i, key in enumerate(zip(cols["cell_id"], cols["day_index"])):
        if key in keys:
            raise DuplicateKeyError(
                f"{path}: duplicate pixel-day (cell_id={key[0]}, day_index={key[1]}), "
                f"first seen on line {keys[key] + 2}", line=i + 2)
        keys[key] = i
    for i in range(len(cols["cell_id"])):
        fa, month = cols["fa"][i], cols["month"][i]
        if not 0.0 <= fa <= 100.0:
            raise DataError(f"{path}: fa={fa} outside [0, 100]", line=i + 2, field="fa")
        if month not in season:
            raise DataError(f"{path}: month={month} outside season {tuple(season)}",
                            line=i + 2, field="month")
        if cols["count"][i] < 0:
            raise DataError(f"{path}: count={cols['count'][i]} is negative", line=i + 2, field="count")
        if not cols["volume"][i] > 0:
            raise DataError(f"{path}: volume={cols['volume'][i]} must be positive",
                            line=i + 2, field="volume")
        if not cols["fwi"][i] >= 0:
            raise DataError(f"{path}: fwi={cols['fwi'][i]} must be non-negative",
                            line=i + 2, field="fwi")
    table = PixelDayTable(**cols, season=tuple(season))
    log.info("loaded %d pixel-day rows from %s", len(table), path)
    return table


def load_fire_events(path):
    cols = _parse_rows(path, FIRE_COLUMNS)
    for i, y in enumerate(cols["burnt_area_ha"]):
        if not y > 1.0:
            raise DataError(f"{path}: burnt_area_ha={y} must exceed 1 ha", line=i + 2,
                            field="burnt_area_ha")
    events = FireEventList(cols["fire_id"], cols["cell_id"], cols["day_index"], cols["burnt_area_ha"])
    log.info("loaded %d fire events from %s", len(events), path)
    return events


def _fmt(v):
    # repr() of a Python float is the shortest string that round-trips exactly
    return repr(float(v))


def write_pixel_days(table, path, extra=None, tags=None):
    """Write a table in the ``pixel_days.csv`` schema.

    ``extra`` maps additional column names to per-row arrays and ``tags``
    to constant strings (both appended; readers ignore unknown columns).
    """
    extra = extra or {}
    tags = tags or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(PIXEL_DAY_COLUMNS) + list(extra) + list(tags))
        cols = [getattr(table, c) for c in PIXEL_DAY_COLUMNS]
        ext = [np.asarray(v) for v in extra.values()]
        for i in range(len(table)):
            row = []
            for c, a in zip(PIXEL_DAY_COLUMNS, cols):
                row.append(str(int(a[i])) if c in _INT_COLUMNS else _fmt(a[i]))
            row.extend(_fmt(a[i]) for a in ext)
            row.extend(tags.values())
            w.writerow(row)


def write_fire_events(events, path, tags=None):
    tags = tags or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FIRE_COLUMNS) + list(tags))
        for i in range(len(events)):
            w.writerow([int(events.fire_id[i]), int(events.cell_id[i]),
                        int(events.day_index[i]), _fmt(events.burnt_area[i])]
                       + list(tags.values()))


def attach_marks(table, events, u):
    """Group events by pixel-day and compute exceedance indicators.

    Every event must reference an existing pixel-day, and each pixel-day
    must carry exactly ``count`` events.
    """
    u = float(u)
    rows = table.rows_of(events.cell_id, events.day_index)
    if np.any(rows < 0):
        k = int(np.flatnonzero(rows < 0)[0])
        raise OrphanEventError(
            f"fire_id={events.fire_id[k]} references missing pixel-day "
            f"(cell_id={events.cell_id[k]}, day_index={events.day_index[k]})")
    attached = np.bincount(rows, minlength=len(table))
    bad = attached != table.count
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise CountMismatchError(
            f"pixel-day (cell_id={table.cell_id[i]}, day_index={table.day_index[i]}) has "
            f"count={table.count[i]} but {attached[i]} attached events")
    order = np.lexsort((events.fire_id, rows))
    ev = FireEventList(events.fire_id[order], events.cell_id[order],
                       events.day_index[order], events.burnt_area[order])
    exceed = (ev.burnt_area > u).astype(np.int8)
    exceed.flags.writeable = False
    return MarkedDataset(table, ev, u, _frozen(rows[order], np.int64), exceed)


def transform_moderate_mark(y, u, eps=MARK_EPS):
    """Map a moderate mark ``y`` in (1, u] to the unit interval.

    Returns ``(y - 1) / (u - 1)`` clamped to ``[eps, 1 - eps]``; the Beta
    density is not defined on the boundary.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 1.0) or np.any(y > u):
        raise DataError(f"moderate marks must lie in (1, {u}]")
    z = np.clip((y - 1.0) / (u - 1.0), eps, 1.0 - eps)
    return float(z) if z.ndim == 0 else z
