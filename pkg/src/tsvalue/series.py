"""Multivariate time series ingestion, splitting, and segmentation.

A series is a T x M float64 matrix (rows = time steps, columns = channels).
All downstream work is index-based: holdout splits are chronological,
blocks are fixed-length (possibly overlapping) windows, sample windows are
the non-overlapping selection units, and fold plans partition samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import (
    BlockLongerThanRange,
    MissingFile,
    NaNEncountered,
    NonMonotonicTimestamps,
    NonNumericCell,
    SampleLongerThanRange,
    TargetTooShort,
    TooFewSamples,
    ZeroStd,
)

_TIMESTAMP_HEADERS = {"timestamp", "time", "date", "datetime"}


@dataclass(frozen=True)
class TimeSeries:
    """Immutable T x M series with channel names and a source identifier."""

    values: np.ndarray
    channel_names: tuple[str, ...]
    origin: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"series values must be T x M with T,M >= 1, got shape {values.shape}")
        if not np.isfinite(values).all():
            bad = np.argwhere(~np.isfinite(values))[0]
            raise NaNEncountered(int(bad[0]), int(bad[1]), "non-finite entry in series")
        if len(self.channel_names) != values.shape[1]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {values.shape[1]} channels"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        """Contiguous sub-series over [start, stop)."""
        if not (0 <= start < stop <= self.length):
            raise ValueError(f"invalid slice [{start}, {stop}) of series of length {self.length}")
        return TimeSeries(self.values[start:stop].copy(), self.channel_names,
                          f"{self.origin}[{start}:{stop}]")


@dataclass(frozen=True)
class Block:
    """Index window [start, start+length) used as one valuation unit."""

    start: int
    length: int

    def __post_init__(self):
        if self.start < 0 or self.length < 2:
            raise ValueError(f"block needs start >= 0 and length >= 2, got {self}")

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class SampleWindow:
    """Non-overlapping index window [start, start+length); the selection unit."""

    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class HoldoutSplit:
    """Chronological target/test split: target = [0, target_end), test = [target_end, total)."""

    target_end: int
    total: int

    @property
    def target_range(self) -> tuple[int, int]:
        return (0, self.target_end)

    @property
    def test_range(self) -> tuple[int, int]:
        return (self.target_end, self.total)


@dataclass(frozen=True)
class FoldPlan:
    """Partition of sample indices into k folds, reproducible from seed."""

    k: int
    assignment: np.ndarray  # fold id per sample index
    seed: int

    def indices_in(self, fold_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold_id)

    def indices_not_in(self, fold_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold_id)


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std computed on the target split only."""

    mean: np.ndarray
    std: np.ndarray
    constant_channels: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class IngestOptions:
    interpolate_nans: bool = False


def load_csv(path: str | Path, options: IngestOptions = IngestOptions()) -> TimeSeries:
    """Read a UTF-8 comma-separated file with a header row of channel names.

    A leading timestamp column (ISO-8601) is detected either by a
    conventional header name or by its first data cell not parsing as a
    number; timestamps are validated strictly increasing, then dropped.
    NaN cells are rejected unless ``interpolate_nans`` is set, in which
    case interior NaN runs are filled linearly and NaNs at either end of a
    channel remain an error.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]  # drop blank lines
    while rows and rows[0][0].lstrip().startswith("#"):
        rows = rows[1:]  # leading comment lines carry provenance
    if len(rows) < 2:
        raise NonNumericCell(0, 0, "file has no data rows")
    header, data_rows = rows[0], rows[1:]

    has_timestamps = header[0].strip().lower() in _TIMESTAMP_HEADERS
    if not has_timestamps:
        try:
            float(data_rows[0][0])
        except ValueError:
            has_timestamps = True

    if has_timestamps:
        _check_timestamps([r[0] for r in data_rows])
        header = header[1:]
        data_rows = [r[1:] for r in data_rows]
        col_offset = 1
    else:
        col_offset = 0
    if not header:
        raise NonNumericCell(0, 0, "no value columns after timestamp column")

    values = np.empty((len(data_rows), len(header)), dtype=np.float64)
    for i, row in enumerate(data_rows):
        if len(row) != len(header):
            raise NonNumericCell(i + 1, len(row) + col_offset, "row has wrong cell count")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise NonNumericCell(i + 1, j + col_offset, cell) from None

    nan_mask = np.isnan(values)
    if nan_mask.any():
        if not options.interpolate_nans:
            i, j = np.argwhere(nan_mask)[0]
            raise NaNEncountered(int(i) + 1, int(j) + col_offset)
        values = _interpolate_interior_nans(values, col_offset)

    return TimeSeries(values, tuple(h.strip() for h in header), origin=str(path))


def _check_timestamps(cells: list[str]) -> None:
    parsed = []
    for i, cell in enumerate(cells):
        try:
            parsed.append(datetime.fromisoformat(cell.strip().replace("Z", "+00:00")))
        except ValueError:
            raise NonMonotonicTimestamps(
                f"unparseable ISO-8601 timestamp at row {i + 1}: {cell!r}"
            ) from None
    for i in range(1, len(parsed)):
        if parsed[i] <= parsed[i - 1]:
            raise NonMonotonicTimestamps(
                f"timestamps not strictly increasing at row {i + 1}: "
                f"{cells[i]!r} <= {cells[i - 1]!r}"
            )


def _interpolate_interior_nans(values: np.ndarray, col_offset: int) -> np.ndarray:
    out = values.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nan = np.isnan(col)
        if not nan.any():
            continue
        if nan[0]:
            raise NaNEncountered(1, j + col_offset, "leading NaN cannot be interpolated")
        if nan[-1]:
            raise NaNEncountered(len(col), j + col_offset, "trailing NaN cannot be interpolated")
        idx = np.arange(len(col))
        col[nan] = np.interp(idx[nan], idx[~nan], col[~nan])
    return out


def split_holdout(series: TimeSeries, test_fraction: float,
                  min_target_length: int = 2) -> HoldoutSplit:
    """Chronological split: first ceil(T*(1-f)) steps are the target, rest is test."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    t = series.length
    target_end = math.ceil(t * (1.0 - test_fraction))
    if target_end < min_target_length:
        raise TargetTooShort(
            f"target split of {target_end} steps is shorter than required {min_target_length}"
        )
    return HoldoutSplit(target_end=target_end, total=t)


def segment_blocks(range_: tuple[int, int], length: int, stride: int = 1) -> list[Block]:
    """Blocks of `length` starting every `stride` steps while they fit in the range."""
    begin, end = range_
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if length > end - begin:
        raise BlockLongerThanRange(
            f"block length {length} exceeds range length {end - begin}"
        )
    return [Block(s, length) for s in range(begin, end - length + 1, stride)]


def enumerate_samples(range_: tuple[int, int], sample_length: int) -> list[SampleWindow]:
    """Non-overlapping consecutive windows; a trailing remainder is dropped."""
    begin, end = range_
    if sample_length > end - begin:
        raise SampleLongerThanRange(
            f"sample length {sample_length} exceeds range length {end - begin}"
        )
    n = (end - begin) // sample_length
    return [SampleWindow(begin + i * sample_length, sample_length) for i in range(n)]


def make_folds(n_samples: int, k: int, seed: int) -> FoldPlan:
    """Seeded random permutation, round-robin fold assignment (sizes differ by <= 1)."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    if n_samples < k:
        raise TooFewSamples(f"{n_samples} samples cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n_samples)
    assignment = np.empty(n_samples, dtype=np.int64)
    assignment[perm] = np.arange(n_samples) % k
    assignment.setflags(write=False)
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def compute_norm_stats(series: TimeSeries, target_end: int,
                       on_constant: str = "unit") -> NormStats:
    """Per-channel mean/std over [0, target_end).

    Constant channels get std = 1 and are recorded (``on_constant="unit"``),
    or rejected (``on_constant="reject"``).
    """
    target = series.values[:target_end]
    mean = target.mean(axis=0)
    std = target.std(axis=0)
    constant = np.flatnonzero(std == 0.0)
    if constant.size:
        if on_constant == "reject":
            raise ZeroStd(f"constant channels {constant.tolist()} have zero std")
        std = std.copy()
        std[constant] = 1.0
    mean.setflags(write=False)
    std.setflags(write=False)
    return NormStats(mean=mean, std=std, constant_channels=tuple(int(c) for c in constant))


def normalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    """Per-channel z-score transform."""
    values = (series.values - stats.mean) / stats.std
    return TimeSeries(values, series.channel_names, series.origin)


def denormalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    """Inverse of :func:`normalize`; restores original units."""
    values = series.values * stats.std + stats.mean
    return TimeSeries(values, series.channel_names, series.origin)
