"""Uniformly sampled time series: ingestion, scaling, noise, windows, metrics.

Everything here is a pure function over immutable values. Arrays handed out by
:class:`TimeSeries` are read-only views so a series can be shared freely.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TimeSeries",
    "Scaler",
    "WindowPair",
    "SplitSpec",
    "NoiseSpec",
    "SeriesError",
    "load_csv",
    "standardize",
    "unscale",
    "add_noise",
    "make_windows",
    "window_arrays",
    "split",
    "mae",
    "synth",
    "SYNTH_NAMES",
]


class SeriesError(ValueError):
    """Raised for malformed series, files or preprocessing requests."""


def _frozen(values, ndmin=1) -> np.ndarray:
    arr = np.array(values, dtype=float, ndmin=ndmin)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Signal sampled at ``t0 + i * dt``.

    ``values`` has shape ``(N,)`` for a scalar series or ``(N, d)`` for a
    vector-valued one (only the ``sine_pair`` generator produces the latter).
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        if not self.dt > 0 or not math.isfinite(self.dt):
            raise SeriesError(f"dt must be positive and finite, got {self.dt}")
        if len(values) < 1:
            raise SeriesError("a time series needs at least one sample")
        if not np.all(np.isfinite(values)):
            raise SeriesError("time series values must be finite")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.t0, self.dt, values)


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise SeriesError(f"scaler std must be positive, got {self.std}")

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std


@dataclass(frozen=True)
class WindowPair:
    history: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0.0 < f < 1.0 for f in fracs):
            raise SeriesError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise SeriesError(f"split fractions must sum to 1, got {sum(fracs)!r}")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0


def load_csv(path, column: str, time_column: str | None = None) -> TimeSeries:
    """Read one value column of a CSV file on a uniform numeric time grid.

    The time column defaults to the first header field. ``dt`` is taken from
    the first two timestamps; any step deviating from it by more than
    ``1e-9 * dt`` is rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SeriesError(f"{path}: empty file") from None
        time_column = time_column or header[0]
        for name in (time_column, column):
            if name not in header:
                raise SeriesError(f"{path}: missing column {name!r} (have {header})")
        ti, vi = header.index(time_column), header.index(column)
        times, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                times.append(float(row[ti]))
                values.append(float(row[vi]))
            except (ValueError, IndexError):
                raise SeriesError(f"{path}:{lineno}: unparseable cell in {row!r}") from None

    if not values:
        raise SeriesError(f"{path}: no data rows")
    times = np.asarray(times)
    if len(times) == 1:
        return TimeSeries(times[0], 1.0, values)
    dt = times[1] - times[0]
    if not dt > 0:
        raise SeriesError(f"{path}: time column must be increasing")
    steps = np.diff(times)
    worst = np.max(np.abs(steps - dt))
    if worst > 1e-9 * dt:
        bad = int(np.argmax(np.abs(steps - dt)))
        raise SeriesError(
            f"{path}: non-uniform grid, step {steps[bad]!r} at row {bad + 2} differs from dt={dt!r}"
        )
    return TimeSeries(times[0], dt, values)


def standardize(ts: TimeSeries) -> tuple[TimeSeries, Scaler]:
    """Shift and scale to zero mean, unit population standard deviation."""
    if len(ts) < 2:
        raise SeriesError("standardize needs at least two samples")
    mean = float(np.mean(ts.values))
    std = float(np.std(ts.values))
    if std == 0.0:
        raise SeriesError("cannot standardize a constant series")
    scaler = Scaler(mean, std)
    return ts.with_values(scaler.apply(ts.values)), scaler


def unscale(values, scaler: Scaler) -> np.ndarray:
    return np.asarray(values, dtype=float) * scaler.std + scaler.mean


def add_noise(ts: TimeSeries, spec: NoiseSpec) -> TimeSeries:
    """Add i.i.d. zero-mean Gaussian noise drawn from ``spec.seed``."""
    if spec.sigma < 0:
        raise SeriesError(f"noise sigma must be non-negative, got {spec.sigma}")
    if spec.sigma == 0:
        return ts
    rng = np.random.default_rng(spec.seed)
    return ts.with_values(ts.values + rng.normal(0.0, spec.sigma, size=ts.values.shape))


def make_windows(ts: TimeSeries, m: int, n: int, stride: int = 1) -> list[WindowPair]:
    """Contiguous (history, target) pairs: ``m`` samples followed by ``n``."""
    hist, targ = window_arrays(ts.values, m, n, stride)
    return [WindowPair(h, t) for h, t in zip(hist, targ)]


def window_arrays(values, m: int, n: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stacked form of :func:`make_windows`: arrays of shape ``(count, m)`` and ``(count, n)``."""
    values = np.asarray(values, dtype=float)
    if m < 1 or n < 0 or stride < 1:
        raise SeriesError(f"invalid window request m={m}, n={n}, stride={stride}")
    if m + n > len(values):
        raise SeriesError(f"series of length {len(values)} is too short for m={m}, n={n}")
    count = (len(values) - m - n) // stride + 1
    starts = np.arange(count) * stride
    hist = values[starts[:, None] + np.arange(m)]
    targ = values[starts[:, None] + m + np.arange(n)]
    return hist, targ


def split(ts: TimeSeries, spec: SplitSpec = SplitSpec()) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Chronological train/val/test segments; rounding remainder goes to test."""
    N = len(ts)
    n_train = math.floor(spec.train_frac * N)
    n_val = math.floor(spec.val_frac * N)
    n_test = N - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise SeriesError(f"split of length {N} leaves an empty segment ({n_train}/{n_val}/{n_test})")
    v = ts.values
    return (
        TimeSeries(ts.t0, ts.dt, v[:n_train]),
        TimeSeries(ts.t0 + n_train * ts.dt, ts.dt, v[n_train : n_train + n_val]),
        TimeSeries(ts.t0 + (n_train + n_val) * ts.dt, ts.dt, v[n_train + n_val :]),
    )


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise SeriesError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise SeriesError("mae of empty sequences is undefined")
    return float(np.mean(np.abs(pred - truth)))


SYNTH_NAMES = ("sine_pair", "two_tone", "seasonal24")


def synth(name: str, count: int, t_start: float, t_end: float) -> TimeSeries:
    """Synthetic generators on the periodic grid ``t_start + i*(t_end - t_start)/count``.

    The end point is excluded so a whole number of periods lands exactly on
    Fourier bins (``two_tone`` over ``[0, 4*pi)`` puts its tones on bins 2 and 4).
    """
    if count < 2:
        raise SeriesError("synth needs count >= 2")
    if not t_end > t_start:
        raise SeriesError("synth needs t_end > t_start")
    dt = (t_end - t_start) / count
    t = t_start + dt * np.arange(count)
    if name == "sine_pair":
        values = np.column_stack([np.sin(t), np.cos(t)])
    elif name == "two_tone":
        values = 4.0 * np.sin(t) - 5.0 * np.sin(2.0 * t)
    elif name == "seasonal24":
        values = np.sin(2.0 * np.pi * t / 24.0)
    else:
        raise SeriesError(f"unknown synthetic series {name!r}; choose from {SYNTH_NAMES}")
    return TimeSeries(t_start, dt, values)
