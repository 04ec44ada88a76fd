"""Gap-aware univariate time series, gap scanning and CSV input/output.

Missing samples are NaN in memory. On disk a missing value is an empty
field or the literal ``NaN``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gapfill.errors import CSVParseError, GapFillError

__all__ = [
    "TimeSeries",
    "GapSegment",
    "FillContext",
    "as_series",
    "scan_gaps",
    "extract_context",
    "read_csv",
    "write_csv",
    "format_value",
]


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Equally spaced scalar samples with NaN as the missing marker.

    The array is copied on construction and frozen, so instances are safe
    to share between threads.
    """

    values: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if arr.size < 1:
            raise GapFillError("time series must contain at least one sample")
        if np.isinf(arr).any():
            raise GapFillError("time series must not contain infinities")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "origin_index", int(self.origin_index))

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.origin_index == other.origin_index
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values, equal_nan=True))
        )

    def __repr__(self) -> str:
        return (
            f"TimeSeries(n={len(self)}, missing={self.n_missing}, "
            f"origin_index={self.origin_index})"
        )

    @property
    def missing(self) -> np.ndarray:
        """Boolean mask, True where the sample is missing."""
        return np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.values).sum())

    @property
    def is_complete(self) -> bool:
        return self.n_missing == 0

    def replace(self, values: np.ndarray) -> TimeSeries:
        """Same origin, new sample values."""
        return TimeSeries(values, self.origin_index)

    def reversed(self) -> TimeSeries:
        return TimeSeries(self.values[::-1], self.origin_index)


def as_series(data: TimeSeries | Iterable[float]) -> TimeSeries:
    """Coerce array-likes (``None`` counts as missing) into a TimeSeries."""
    if isinstance(data, TimeSeries):
        return data
    vals = [math.nan if v is None else v for v in data]
    return TimeSeries(np.asarray(vals, dtype=float))


@dataclass(frozen=True)
class GapSegment:
    """A maximal run of missing samples ``[start, start + length)``."""

    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length

    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class FillContext:
    """Observed windows immediately before and after a gap."""

    gap: GapSegment
    pre_window: np.ndarray
    post_window: np.ndarray


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start and stop indices of the True runs in a boolean mask."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def scan_gaps(series: TimeSeries | Sequence[float]) -> list[GapSegment]:
    """Return the maximal missing runs of ``series`` in ascending order."""
    series = as_series(series)
    starts, stops = _runs(series.missing)
    return [GapSegment(int(a), int(b - a)) for a, b in zip(starts, stops)]


def extract_context(
    series: TimeSeries | Sequence[float], gap: GapSegment, w1: int, w2: int
) -> FillContext:
    """Collect up to ``w1`` observed samples before and ``w2`` after ``gap``.

    Each window is the longest run of consecutive observed samples touching
    the gap, so it stops at a neighbouring gap or at the series boundary.
    """
    series = as_series(series)
    if w1 < 1 or w2 < 1:
        raise ValueError("window lengths must be positive")
    vals = series.values
    miss = series.missing
    n = vals.size

    lo = gap.start
    limit = max(0, gap.start - w1)
    while lo > limit and not miss[lo - 1]:
        lo -= 1
    hi = gap.stop
    limit = min(n, gap.stop + w2)
    while hi < limit and not miss[hi]:
        hi += 1
    return FillContext(gap, vals[lo:gap.start].copy(), vals[gap.stop:hi].copy())


def format_value(v: float) -> str:
    """Shortest exact text form of a float; empty for missing."""
    if math.isnan(v):
        return ""
    return repr(float(v))


def _parse_value(text: str, line: int) -> float:
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise CSVParseError(f"cannot parse value {text!r}", line) from None
    if math.isinf(v):
        raise CSVParseError("infinite value", line)
    return v


def read_csv(path: str | os.PathLike, header: bool = False) -> TimeSeries:
    """Read an ``index,value`` CSV file into a TimeSeries.

    The index column is informational; samples are taken in file order and
    the first index (when it is an integer) becomes ``origin_index``.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    values: list[float] = []
    origin = 0
    for lineno, raw in enumerate(lines, start=1):
        if header and lineno == 1:
            continue
        row = raw.strip()
        if not row:
            continue
        parts = row.split(",")
        if len(parts) != 2:
            raise CSVParseError(f"expected 2 fields, got {len(parts)}", lineno)
        idx_text = parts[0].strip()
        if not idx_text:
            raise CSVParseError("missing index field", lineno)
        if not values:
            try:
                origin = int(idx_text)
            except ValueError:
                origin = 0
        values.append(_parse_value(parts[1], lineno))
    if not values:
        raise CSVParseError("file contains no data rows")
    return TimeSeries(np.asarray(values), origin)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def series_to_csv_text(series: TimeSeries) -> str:
    rows = [
        f"{series.origin_index + i},{format_value(v)}"
        for i, v in enumerate(series.values)
    ]
    return "\n".join(rows) + "\n"


def write_csv(series: TimeSeries, path: str | os.PathLike) -> None:
    """Write ``series`` as ``index,value`` rows (LF endings, no header)."""
    atomic_write_text(path, series_to_csv_text(as_series(series)))
