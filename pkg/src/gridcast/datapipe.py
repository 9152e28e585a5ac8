"""Data pipeline: trip records to demand cubes, period selection via
additive decomposition, and 3D volume sample construction.

Axis conventions. A demand cube is counts[row, col, time] where row
indexes latitude bands (south to north) and col indexes longitude bands
(west to east). A volume input stacks time slices newest-first:
[x_{t-1} .. x_{t-t_recent}, x_{t-L-1} .. x_{t-L-t_period}], so the
depth axis mixes the recent window with the same-phase window one
period back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError, FormatError, RangeError
from .tensor import format_value

# --- domain types -----------------------------------------------------


@dataclass(frozen=True)
class TripRecord:
    timestamp: float  # epoch seconds, UTC
    longitude: float
    latitude: float


@dataclass(frozen=True)
class GridSpec:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    rows: int  # latitude bands
    cols: int  # longitude bands
    t0: float  # epoch seconds of the first interval
    dt: float  # interval length, seconds
    t_count: int

    def __post_init__(self) -> None:
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ConfigError("grid bounding box is empty or inverted")
        if self.rows < 1 or self.cols < 1 or self.t_count < 1:
            raise ConfigError("grid needs rows, cols, t_count >= 1")
        if not self.dt > 0:
            raise ConfigError("interval length dt must be > 0")

    def locate(self, record: TripRecord):
        """Cell (row, col, time index) for a record, or None when it falls
        outside the box or the observation window. Cells are half-open on
        every axis, so a point on an interior boundary belongs to the
        higher-index cell."""
        cw = (self.lon_max - self.lon_min) / self.cols
        ch = (self.lat_max - self.lat_min) / self.rows
        j = math.floor((record.longitude - self.lon_min) / cw)
        i = math.floor((record.latitude - self.lat_min) / ch)
        k = math.floor((record.timestamp - self.t0) / self.dt)
        if 0 <= i < self.rows and 0 <= j < self.cols and 0 <= k < self.t_count:
            return i, j, k
        return None


class DemandCube:
    """Per-cell, per-interval request counts (stored as floats)."""

    def __init__(self, grid: GridSpec, counts) -> None:
        a = np.ascontiguousarray(counts, dtype=np.float64)
        expected = (grid.rows, grid.cols, grid.t_count)
        if a.shape != expected:
            raise DataError(f"counts shape {a.shape} does not match grid {expected}")
        if np.any(a < 0):
            raise DataError("demand counts must be nonnegative")
        self.grid = grid
        self.counts = a

    def total_series(self) -> np.ndarray:
        """City-wide demand per interval (sum over all cells)."""
        return self.counts.sum(axis=(0, 1))


@dataclass(frozen=True)
class VolumeSample:
    t: int
    input: np.ndarray  # [rows, cols, t_depth]
    target: np.ndarray  # [rows, cols]


@dataclass(frozen=True)
class Decomposition:
    period: int
    trend: np.ndarray  # NaN on the half-window edges
    periodic: np.ndarray  # length-`period` profile, mean 0
    residual: np.ndarray  # NaN where trend is undefined
    residual_variance: float


# --- trip parsing and ingestion ---------------------------------------


def _parse_epoch(text: str) -> float:
    return float(text)


def _parse_iso(text: str) -> float:
    cleaned = text.strip().replace("Z", "+00:00")
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


_HEADER_LINE = "timestamp,longitude,latitude"


def read_trips(path: str):
    """Parse a trip file: one `timestamp,longitude,latitude` per line.

    The timestamp style (epoch seconds vs ISO-8601) is sniffed once from
    the first data line and applied to the whole file. Bad lines are
    skipped and returned as line-numbered diagnostics; only an unreadable
    file raises.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read trip file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"trip file {path} is not UTF-8 text: {exc}") from exc

    records: list[TripRecord] = []
    diagnostics: list[str] = []
    parse_ts = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.lower() == _HEADER_LINE:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            diagnostics.append(f"line {lineno}: expected 3 comma-separated fields, "
                               f"got {len(parts)}")
            continue
        if parse_ts is None:
            # sniff the timestamp style from the first data line
            try:
                _parse_epoch(parts[0])
                parse_ts = _parse_epoch
            except ValueError:
                parse_ts = _parse_iso
        try:
            ts = parse_ts(parts[0])
            lon = float(parts[1])
            lat = float(parts[2])
        except ValueError as exc:
            diagnostics.append(f"line {lineno}: {exc}")
            continue
        if not (math.isfinite(ts) and math.isfinite(lon) and math.isfinite(lat)):
            diagnostics.append(f"line {lineno}: non-finite field")
            continue
        records.append(TripRecord(ts, lon, lat))
    return records, diagnostics


def ingest(records, grid: GridSpec):
    """Fold records into a DemandCube. Returns (cube, out_of_range count);
    a record either increments exactly one cell or is counted out."""
    counts = np.zeros((grid.rows, grid.cols, grid.t_count))
    out_of_range = 0
    for rec in records:
        cell = grid.locate(rec)
        if cell is None:
            out_of_range += 1
        else:
            counts[cell] += 1.0
    return DemandCube(grid, counts), out_of_range


# --- cube file format -------------------------------------------------
#
# Line 1: `rows cols t_count t0 dt lon_min lon_max lat_min lat_max`.
# Then t_count blocks, time ascending, each `rows` lines of `cols`
# space-separated values; row = latitude band, column = longitude band.


def write_cube(cube: DemandCube, path: str) -> None:
    g = cube.grid
    out = [" ".join([str(g.rows), str(g.cols), str(g.t_count),
                     format_value(g.t0), format_value(g.dt),
                     format_value(g.lon_min), format_value(g.lon_max),
                     format_value(g.lat_min), format_value(g.lat_max)])]
    for t in range(g.t_count):
        for i in range(g.rows):
            out.append(" ".join(format_value(v) for v in cube.counts[i, :, t]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def read_cube(path: str) -> DemandCube:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read cube file {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"cube file {path} is empty")
    head = lines[0].split()
    if len(head) != 9:
        raise FormatError(f"cube header needs 9 fields, got {len(head)}")
    try:
        rows, cols, t_count = int(head[0]), int(head[1]), int(head[2])
        t0, dt = float(head[3]), float(head[4])
        lon_min, lon_max = float(head[5]), float(head[6])
        lat_min, lat_max = float(head[7]), float(head[8])
    except ValueError as exc:
        raise FormatError(f"bad cube header: {exc}") from exc
    grid = GridSpec(lon_min, lon_max, lat_min, lat_max, rows, cols, t0, dt, t_count)
    expected = 1 + rows * t_count
    if len(lines) < expected:
        raise FormatError(f"cube file truncated: {len(lines)} lines, expected {expected}")
    counts = np.zeros((rows, cols, t_count))
    lineno = 1
    for t in range(t_count):
        for i in range(rows):
            values = lines[lineno].split()
            if len(values) != cols:
                raise FormatError(f"line {lineno + 1}: expected {cols} values, "
                                  f"got {len(values)}")
            try:
                counts[i, :, t] = [float(v) for v in values]
            except ValueError as exc:
                raise FormatError(f"line {lineno + 1}: {exc}") from exc
            lineno += 1
    return DemandCube(grid, counts)


# --- additive decomposition and period selection ----------------------


def moving_average_trend(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; even windows use the classic half-weight
    endpoint scheme (2xL). Entries whose window runs off either end are
    NaN."""
    n = series.shape[0]
    if window % 2 == 0:
        weights = np.full(window + 1, 1.0 / window)
        weights[0] *= 0.5
        weights[-1] *= 0.5
        half = window // 2
    else:
        weights = np.full(window, 1.0 / window)
        half = (window - 1) // 2
    trend = np.full(n, np.nan)
    trend[half:n - half] = np.convolve(series, weights, mode="valid")
    return trend


def decompose(series, period: int) -> Decomposition:
    """Additive decomposition: series = trend + periodic(phase) + residual.

    Trend is the centered moving average with window `period`; the
    periodic profile is the per-phase mean of the detrended series,
    re-centered to mean 0; the residual is whatever remains, so the
    reconstruction is exact wherever the trend is defined. The residual
    variance (ddof=1, over defined entries) is the model-selection score.
    """
    x = np.ascontiguousarray(series, dtype=np.float64).ravel()
    n = x.shape[0]
    if period < 2:
        raise ConfigError(f"period must be >= 2, got {period}")
    if n < 2 * period:
        raise RangeError(f"series length {n} is too short for period {period} "
                         f"(need at least {2 * period})")
    trend = moving_average_trend(x, period)
    detrended = x - trend
    valid = ~np.isnan(trend)
    profile = np.zeros(period)
    phases = np.arange(n) % period
    for p in range(period):
        sel = valid & (phases == p)
        profile[p] = detrended[sel].mean() if np.any(sel) else 0.0
    profile -= profile.mean()
    residual = x - trend - profile[phases]
    variance = float(np.var(residual[valid], ddof=1))
    return Decomposition(period, trend, profile, residual, variance)


def select_period(series, candidates) -> int:
    """The candidate whose decomposition leaves the least residual
    variance; ties go to the smaller period."""
    if not candidates:
        raise ConfigError("no period candidates given")
    best = None
    for cand in candidates:
        var = decompose(series, int(cand)).residual_variance
        key = (var, int(cand))
        if best is None or key < best:
            best = key
    return best[1]


# --- volume samples ---------------------------------------------------


def volume_input(array, t: int, t_recent: int, t_period: int, period: int) -> np.ndarray:
    """Stack the input depth slices for target time t from any
    [rows, cols, time] array, newest-first recent window then the
    same-phase window one period back."""
    a = np.asarray(array)
    idx = list(range(t - 1, t - t_recent - 1, -1)) \
        + list(range(t - period - 1, t - period - t_period - 1, -1))
    if min(idx) < 0 or max(idx) >= a.shape[2]:
        raise RangeError(f"volume for t={t} reaches outside [0, {a.shape[2]})")
    return np.ascontiguousarray(a[:, :, idx], dtype=np.float64)


def earliest_sample_index(t_recent: int, t_period: int, period: int) -> int:
    """Smallest target index whose every input slice exists."""
    return max(t_recent, period + t_period)


def make_samples(cube: DemandCube, t_recent: int, t_period: int, period: int,
                 t_lo: int, t_hi: int):
    """VolumeSamples for every target index in [t_lo, t_hi) with full
    history. Returns (samples, skipped count)."""
    if t_recent < 1 or t_period < 1:
        raise ConfigError(f"t_recent and t_period must be >= 1, "
                          f"got {t_recent}, {t_period}")
    counts = cube.counts
    total = counts.shape[2]
    earliest = earliest_sample_index(t_recent, t_period, period)
    samples = []
    for t in range(max(t_lo, 0), min(t_hi, total)):
        if t < earliest:
            continue
        samples.append(VolumeSample(
            t, volume_input(counts, t, t_recent, t_period, period),
            counts[:, :, t].copy()))
    skipped = (t_hi - t_lo) - len(samples)
    return samples, skipped


# --- differencing -----------------------------------------------------


def difference_transform(cube: DemandCube, period: int):
    """Seasonal difference then first difference:
    y_t = (x_t - x_{t-period}) - (x_{t-1} - x_{t-1-period}).

    Returns (diff array, invert). The diff array matches the cube's shape
    with zeros before index period+1 (where y is undefined); `invert(t,
    value)` maps a predicted difference at time t back to demand scale
    through the cube's stored history, exactly reversing the transform.
    """
    counts = cube.counts
    total = counts.shape[2]
    if total <= period + 1:
        raise RangeError(f"cube spans {total} intervals; differencing at period "
                         f"{period} needs more than {period + 1}")
    diff = np.zeros_like(counts)
    t0 = period + 1
    diff[:, :, t0:] = (counts[:, :, t0:] - counts[:, :, t0 - period:total - period]) \
        - (counts[:, :, t0 - 1:total - 1] - counts[:, :, t0 - period - 1:total - period - 1])

    def invert(t: int, value):
        if t < t0 or t >= total:
            raise RangeError(f"cannot invert at t={t}; valid range [{t0}, {total})")
        return (np.asarray(value, dtype=np.float64)
                + counts[:, :, t - period] + counts[:, :, t - 1]
                - counts[:, :, t - period - 1])

    return diff, invert


# --- train/test split -------------------------------------------------


def split(cube: DemandCube, train_days: float, test_days: float):
    """Contiguous (train, test) index ranges: the first train_days of the
    cube, then the next test_days. Returns ((lo, hi), (lo, hi))."""
    if train_days <= 0 or test_days <= 0:
        raise ConfigError("train_days and test_days must be positive")
    per_day = 86400.0 / cube.grid.dt
    n_train = train_days * per_day
    n_test = test_days * per_day
    if abs(n_train - round(n_train)) > 1e-9 or abs(n_test - round(n_test)) > 1e-9:
        raise ConfigError(f"day lengths must be whole interval counts "
                          f"(dt={cube.grid.dt}s gives {per_day} per day)")
    n_train = int(round(n_train))
    n_test = int(round(n_test))
    if n_train + n_test > cube.grid.t_count:
        raise ConfigError(f"cube spans {cube.grid.t_count} intervals; "
                          f"{n_train + n_test} requested")
    return (0, n_train), (n_train, n_train + n_test)
