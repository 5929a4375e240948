"""Charging-session ingestion, preprocessing, splits and rank transforms.

A session is three continuous features: arrival time as decimal hours
shifted so the day starts at 06:00, charging duration in hours, and
energy in kWh.  Timestamps are kept only to order events for the
chronological split and to measure the observation span.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import rankdata

FEATURE_NAMES = ("arrival_shifted", "duration", "energy")

ARRIVAL_ORIGIN_HOUR = 6.0  # day origin at 06:00 keeps overnight sessions contiguous

_HOURS_PER_DAY = 24.0


def shift_arrival(hour_of_day: float) -> float:
    """Map a clock hour in [0, 24) to hours since 06:00, same range."""
    h = np.asarray(hour_of_day, dtype=np.float64)
    if np.any(h < 0.0) or np.any(h >= _HOURS_PER_DAY):
        raise ValueError("hour_of_day must lie in [0, 24)")
    out = np.mod(h - ARRIVAL_ORIGIN_HOUR, _HOURS_PER_DAY)
    return float(out) if np.isscalar(hour_of_day) else out


def unshift_arrival(shifted):
    """Inverse of :func:`shift_arrival`: back to clock hours."""
    return np.mod(np.asarray(shifted, dtype=np.float64) + ARRIVAL_ORIGIN_HOUR, _HOURS_PER_DAY)


@dataclass(frozen=True)
class Session:
    """One charging event."""

    arrival_shifted: float
    duration: float
    energy: float
    timestamp: np.datetime64

    def __post_init__(self):
        if not 0.0 <= self.arrival_shifted < _HOURS_PER_DAY:
            raise ValueError("arrival_shifted out of [0, 24)")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if self.energy < 0.0:
            raise ValueError("energy must be non-negative")


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of sessions, stored column-wise.

    ``dropped`` counts raw rows discarded during loading (invalid
    timestamps, non-positive durations, negative energy).
    """

    name: str
    arrival: np.ndarray
    duration: np.ndarray
    energy: np.ndarray
    timestamps: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        n = len(self.arrival)
        for arr in (self.duration, self.energy, self.timestamps):
            if len(arr) != n:
                raise ValueError("column length mismatch")
        if n:
            if np.any(self.arrival < 0.0) or np.any(self.arrival >= _HOURS_PER_DAY):
                raise ValueError("arrival_shifted out of [0, 24)")
            if np.any(self.duration <= 0.0):
                raise ValueError("durations must be positive")
            if np.any(self.energy < 0.0):
                raise ValueError("energy must be non-negative")
            if np.any(np.diff(self.timestamps.astype("datetime64[ns]")) < np.timedelta64(0)):
                raise ValueError("sessions must be sorted by timestamp")

    def __len__(self) -> int:
        return len(self.arrival)

    def row(self, i: int) -> Session:
        return Session(
            float(self.arrival[i]), float(self.duration[i]), float(self.energy[i]), self.timestamps[i]
        )

    def features(self) -> np.ndarray:
        """n x 3 float matrix in the canonical feature order."""
        return np.column_stack([self.arrival, self.duration, self.energy]).astype(np.float64)

    def span_days(self) -> int:
        """Calendar days covered from first to last timestamp, inclusive."""
        if len(self) == 0:
            return 1
        days = self.timestamps.astype("datetime64[D]")
        return int((days[-1] - days[0]) / np.timedelta64(1, "D")) + 1

    def replace(self, **kw) -> "Dataset":
        data = {
            "name": self.name,
            "arrival": self.arrival,
            "duration": self.duration,
            "energy": self.energy,
            "timestamps": self.timestamps,
            "dropped": self.dropped,
        }
        data.update(kw)
        return Dataset(**data)


@dataclass(frozen=True)
class SplitBundle:
    train: Dataset
    valid: Dataset
    test: Dataset


@dataclass(frozen=True)
class ColumnSchema:
    """Maps raw CSV column names to session fields.

    Exactly one of ``duration`` (decimal hours) or ``end`` (plug-out
    timestamp, from which duration is derived) must be given.
    """

    start: str
    energy: str
    duration: str | None = None
    end: str | None = None

    def __post_init__(self):
        if (self.duration is None) == (self.end is None):
            raise ValueError("schema needs exactly one of a duration or an end-time column")


def _decimal_hours(ts: pd.Series) -> np.ndarray:
    return ((ts - ts.dt.normalize()).dt.total_seconds() / 3600.0).to_numpy()


def load_csv(path, schema: ColumnSchema, name: str | None = None) -> Dataset:
    """Read a raw charging log into a preprocessed :class:`Dataset`.

    Rows with unparseable timestamps, non-positive duration or negative
    energy are dropped; the count is kept on ``Dataset.dropped``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = pd.read_csv(path)
    needed = [schema.start, schema.energy] + ([schema.duration] if schema.duration else [schema.end])
    missing = [c for c in needed if c not in raw.columns]
    if missing:
        raise ValueError(f"columns not found in {path.name}: {missing} (header: {list(raw.columns)})")

    start = pd.to_datetime(raw[schema.start], errors="coerce", format="mixed")
    energy = pd.to_numeric(raw[schema.energy], errors="coerce")
    if schema.duration is not None:
        duration = pd.to_numeric(raw[schema.duration], errors="coerce")
    else:
        end = pd.to_datetime(raw[schema.end], errors="coerce", format="mixed")
        duration = (end - start).dt.total_seconds() / 3600.0

    ok = start.notna() & np.isfinite(duration) & np.isfinite(energy)
    ok &= (duration > 0) & (energy >= 0)
    dropped = int(len(raw) - ok.sum())
    if ok.sum() == 0:
        raise ValueError(f"no valid rows in {path.name}")

    start = start[ok]
    order = np.argsort(start.to_numpy(), kind="stable")
    start = start.iloc[order]
    arrival = np.mod(_decimal_hours(start) - ARRIVAL_ORIGIN_HOUR, _HOURS_PER_DAY)
    return Dataset(
        name=name or path.stem,
        arrival=arrival,
        duration=duration[ok].to_numpy(dtype=np.float64)[order],
        energy=energy[ok].to_numpy(dtype=np.float64)[order],
        timestamps=start.to_numpy(),
        dropped=dropped,
    )


def write_csv(ds: Dataset, path) -> None:
    """Write the preprocessed columns (plus timestamp) back to CSV."""
    frame = pd.DataFrame(
        {
            "arrival_shifted": ds.arrival,
            "duration": ds.duration,
            "energy": ds.energy,
            "timestamp": pd.to_datetime(ds.timestamps),
        }
    )
    frame.to_csv(path, index=False)


def read_preprocessed_csv(path, name: str | None = None) -> Dataset:
    """Read a CSV produced by :func:`write_csv` (timestamp column optional)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    frame = pd.read_csv(path)
    for col in FEATURE_NAMES:
        if col not in frame.columns:
            raise ValueError(f"missing column {col!r} in {path.name}")
    if "timestamp" in frame.columns:
        ts = pd.to_datetime(frame["timestamp"]).to_numpy()
    else:
        ts = np.arange(len(frame)).astype("datetime64[s]")
    order = np.argsort(ts, kind="stable")
    return Dataset(
        name=name or path.stem,
        arrival=frame["arrival_shifted"].to_numpy(dtype=np.float64)[order],
        duration=frame["duration"].to_numpy(dtype=np.float64)[order],
        energy=frame["energy"].to_numpy(dtype=np.float64)[order],
        timestamps=ts[order],
    )


def chronological_split(ds: Dataset) -> SplitBundle:
    """80/10/10 split in time order: floor(0.8n), floor(0.1n), remainder."""
    n = len(ds)
    if n < 10:
        raise ValueError(f"dataset too small to split: {n} < 10 sessions")
    n_train = int(np.floor(0.8 * n))
    n_valid = int(np.floor(0.1 * n))
    idx = np.arange(n)
    parts = (idx[:n_train], idx[n_train : n_train + n_valid], idx[n_train + n_valid :])
    labels = ("train", "valid", "test")
    out = [_take(ds, p, f"{ds.name}/{lab}") for p, lab in zip(parts, labels)]
    return SplitBundle(*out)


def _take(ds: Dataset, idx: np.ndarray, name: str) -> Dataset:
    return Dataset(
        name=name,
        arrival=ds.arrival[idx],
        duration=ds.duration[idx],
        energy=ds.energy[idx],
        timestamps=ds.timestamps[idx],
    )


def subsample(ds: Dataset, cap: int, seed: int) -> Dataset:
    """Uniform subsample without replacement when the dataset exceeds ``cap``."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if len(ds) <= cap:
        return ds
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ds), size=cap, replace=False))
    return _take(ds, idx, ds.name)


def pseudo_observations(data) -> np.ndarray:
    """Rank-based pseudo-observations in (0, 1): average ranks over n + 1.

    Accepts a :class:`Dataset` or an n x d array; columns with a single
    distinct value are rejected, since copula densities need values
    strictly inside the unit interval with nonzero spread.
    """
    x = data.features() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows for pseudo-observations")
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        col = x[:, j]
        if np.all(col == col[0]):
            raise ValueError(f"degenerate column {j}: all values equal")
        out[:, j] = rankdata(col, method="average") / (n + 1.0)
    return out


@dataclass(frozen=True)
class EmpiricalMarginal:
    """Empirical CDF/quantile pair for one feature, linearly interpolated.

    The CDF places mass k/(n+1) at the k-th order statistic (average
    positions for ties), matching the pseudo-observation convention, so
    ``inverse`` is the exact back-transform for rank-space samples.
    """

    sorted_values: np.ndarray
    feature_index: int
    _grid: np.ndarray = field(init=False, repr=False)
    _uniq_vals: np.ndarray = field(init=False, repr=False)
    _uniq_cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        col = self.sorted_values
        if col.size < 2 or col[0] == col[-1]:
            raise ValueError(
                f"degenerate feature {self.feature_index}: fewer than 2 distinct values"
            )
        n = col.size
        grid = np.arange(1, n + 1) / (n + 1.0)
        # collapse ties to their average CDF position so cdf() is a function
        uniq, start = np.unique(col, return_index=True)
        counts = np.diff(np.append(start, n))
        avg = (grid[start] + grid[start + counts - 1]) / 2.0
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_uniq_vals", uniq)
        object.__setattr__(self, "_uniq_cdf", avg)

    def cdf(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=np.float64), self._uniq_vals, self._uniq_cdf, left=0.0, right=1.0)

    def inverse(self, u) -> np.ndarray:
        n = self.sorted_values.size
        uc = np.clip(np.asarray(u, dtype=np.float64), 1.0 / (n + 1), n / (n + 1.0))
        return np.interp(uc, self._grid, self.sorted_values)


def marginal_fit(data, feature: int) -> EmpiricalMarginal:
    """Fit the empirical marginal transform for one feature column."""
    x = data.features() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    col = np.sort(x[:, feature].astype(np.float64))
    return EmpiricalMarginal(sorted_values=col, feature_index=feature)


def fit_all_marginals(data) -> list[EmpiricalMarginal]:
    x = data.features() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    return [marginal_fit(x, j) for j in range(x.shape[1])]


def dataset_from_features(features: np.ndarray, name: str = "synthetic") -> Dataset:
    """Wrap an n x 3 feature matrix as a Dataset with placeholder timestamps."""
    f = np.asarray(features, dtype=np.float64)
    ts = np.arange(len(f)).astype("datetime64[s]")
    return Dataset(name=name, arrival=f[:, 0], duration=f[:, 1], energy=f[:, 2], timestamps=ts)
