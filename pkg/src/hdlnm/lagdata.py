"""Time-series count data and lag-aligned design inputs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "TimeSeriesDataset",
    "LagFrame",
    "build_lag_frame",
    "validate_dataset",
    "read_csv",
    "day_of_year",
    "day_of_week",
]

DERIVED_VARIABLES = ("doy", "dow", "year", "time")


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Daily count series with covariates, optional offset and group labels.

    ``time`` is stored as ``datetime64[D]``; missing covariate values are NaN.
    """

    time: np.ndarray
    y: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    offset: np.ndarray | None = None
    group: np.ndarray | None = None

    def __post_init__(self):
        time = np.asarray(self.time, dtype="datetime64[D]")
        y = np.asarray(self.y, dtype=float)
        n = len(time)
        if y.shape != (n,):
            raise ValueError("y and time must have the same length")
        covs = {}
        for name, values in self.covariates.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (n,):
                raise ValueError(f"covariate {name!r} has wrong length")
            covs[name] = values
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", covs)
        if self.offset is not None:
            offset = np.asarray(self.offset, dtype=float)
            if offset.shape != (n,):
                raise ValueError("offset has wrong length")
            object.__setattr__(self, "offset", offset)
        if self.group is not None:
            group = np.asarray(self.group).astype(str)
            if group.shape != (n,):
                raise ValueError("group has wrong length")
            object.__setattr__(self, "group", group)

    def __len__(self):
        return len(self.time)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, date="date", count="count",
                   offset="offset", group="group") -> "TimeSeriesDataset":
        """Build a dataset from a DataFrame; every other numeric column is a covariate."""
        if date not in df.columns:
            raise ValueError(f"missing required column {date!r}")
        time = pd.to_datetime(df[date]).to_numpy().astype("datetime64[D]")
        if count in df.columns:
            y = df[count].to_numpy(dtype=float)
        else:
            y = np.full(len(df), np.nan)
        reserved = {date, count, offset, group}
        covs = {
            c: df[c].to_numpy(dtype=float)
            for c in df.columns
            if c not in reserved and pd.api.types.is_numeric_dtype(df[c])
        }
        off = df[offset].to_numpy(dtype=float) if offset in df.columns else None
        grp = df[group].to_numpy().astype(str) if group in df.columns else None
        return cls(time=time, y=y, covariates=covs, offset=off, group=grp)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"date": self.time.astype(str), "count": self.y})
        for name, values in self.covariates.items():
            df[name] = values
        if self.offset is not None:
            df["offset"] = self.offset
        if self.group is not None:
            df["group"] = self.group
        return df

    def subset(self, idx) -> "TimeSeriesDataset":
        return TimeSeriesDataset(
            time=self.time[idx],
            y=self.y[idx],
            covariates={k: v[idx] for k, v in self.covariates.items()},
            offset=None if self.offset is None else self.offset[idx],
            group=None if self.group is None else self.group[idx],
        )

    def variable(self, name: str) -> np.ndarray:
        """Covariate values, or a calendar variable derived from the dates."""
        if name in self.covariates:
            return self.covariates[name]
        if name == "doy":
            return day_of_year(self.time)
        if name == "dow":
            return day_of_week(self.time).astype(float)
        if name == "year":
            return self.time.astype("datetime64[Y]").astype(int) + 1970.0
        if name == "time":
            return (self.time - np.datetime64("1970-01-01", "D")).astype(float)
        raise KeyError(f"unknown covariate {name!r}")

    def group_positions(self) -> list[tuple[str | None, np.ndarray]]:
        """Row positions per group, each sorted by time (stable)."""
        if self.group is None:
            return [(None, np.argsort(self.time, kind="stable"))]
        out = []
        for g in sorted(set(self.group)):
            pos = np.flatnonzero(self.group == g)
            out.append((g, pos[np.argsort(self.time[pos], kind="stable")]))
        return out


def read_csv(path) -> TimeSeriesDataset:
    """Read the CSV input format (``date``, ``count``, optional ``offset``/``group``)."""
    df = pd.read_csv(path, comment="#")
    if "count" not in df.columns:
        raise ValueError("missing required column 'count'")
    return TimeSeriesDataset.from_frame(df)


def day_of_year(time) -> np.ndarray:
    """Day of year on a 1..365 scale with Feb 29 mapped to 59.5.

    Keeps the cyclic domain identical across leap and non-leap years.
    """
    time = np.asarray(time, dtype="datetime64[D]")
    year_start = time.astype("datetime64[Y]").astype("datetime64[D]")
    doy = (time - year_start).astype(int) + 1.0
    years = time.astype("datetime64[Y]").astype(int) + 1970
    leap = (years % 4 == 0) & ((years % 100 != 0) | (years % 400 == 0))
    doy = np.where(leap & (doy == 60), 59.5, doy)
    doy = np.where(leap & (doy > 60), doy - 1.0, doy)
    return doy


def day_of_week(time) -> np.ndarray:
    """0 = Monday ... 6 = Sunday."""
    time = np.asarray(time, dtype="datetime64[D]")
    # 1970-01-01 was a Thursday
    return ((time - np.datetime64("1970-01-01", "D")).astype(int) + 3) % 7


@dataclass(frozen=True)
class LagFrame:
    """Rows usable in the likelihood, each with its full lag history.

    ``xlag[name][i, l]`` is covariate ``name`` observed ``l`` days before row ``i``.
    ``index`` maps rows back to positions in the source dataset.
    """

    L: int
    index: np.ndarray
    time: np.ndarray
    y: np.ndarray
    xlag: dict[str, np.ndarray]
    lag_matrix: np.ndarray
    offset: np.ndarray | None = None
    group: np.ndarray | None = None

    def __len__(self):
        return len(self.index)

    @property
    def n(self) -> int:
        return len(self.index)

    def subset(self, mask) -> "LagFrame":
        return LagFrame(
            L=self.L,
            index=self.index[mask],
            time=self.time[mask],
            y=self.y[mask],
            xlag={k: v[mask] for k, v in self.xlag.items()},
            lag_matrix=self.lag_matrix[mask],
            offset=None if self.offset is None else self.offset[mask],
            group=None if self.group is None else self.group[mask],
        )


def _check_daily(time, label):
    if len(time) > 1:
        step = np.diff(time).astype(int)
        if np.any(step != 1):
            where = "" if label is None else f" in group {label!r}"
            raise ValueError(f"non-constant time step{where}; daily series required")


def build_lag_frame(data: TimeSeriesDataset, L: int, covariate_names,
                    require_counts: bool = True) -> LagFrame:
    """Align each named covariate with its ``L`` previous values.

    The first ``L`` rows of every group, and any row whose lag window touches
    a missing covariate value, are dropped. Missing counts are an error unless
    ``require_counts`` is False (prediction).
    """
    L = int(L)
    if L < 0:
        raise ValueError("L must be nonnegative")
    covariate_names = list(covariate_names)
    for name in covariate_names:
        if name not in data.covariates and name not in DERIVED_VARIABLES:
            raise KeyError(f"unknown covariate {name!r}")

    pieces = []
    for label, pos in data.group_positions():
        time = data.time[pos]
        _check_daily(time, label)
        n_g = len(pos)
        if L >= n_g:
            raise ValueError(f"L={L} is not shorter than the series length {n_g}")
        rows = np.arange(L, n_g)
        # windows[i, l] = position of row i's value l days earlier
        windows = rows[:, None] - np.arange(L + 1)[None, :]
        keep = np.ones(len(rows), dtype=bool)
        lagged = {}
        for name in covariate_names:
            series = data.variable(name)[pos]
            mat = series[windows]
            keep &= ~np.isnan(mat).any(axis=1)
            lagged[name] = mat
        pieces.append((pos[rows], keep, lagged))

    index = np.concatenate([row_pos[keep] for row_pos, keep, _ in pieces])
    xlag = {
        name: np.concatenate([lagged[name][keep] for _, keep, lagged in pieces])
        .reshape(-1, L + 1)
        for name in covariate_names
    }
    if len(index) == 0:
        raise ValueError("no rows with complete lag history")
    lag_matrix = np.broadcast_to(np.arange(L + 1, dtype=float), (len(index), L + 1)).copy()
    y = data.y[index]
    if require_counts and np.any(np.isnan(y)):
        raise ValueError("counts may not be missing")
    return LagFrame(
        L=L,
        index=index,
        time=data.time[index],
        y=y,
        xlag=xlag,
        lag_matrix=lag_matrix,
        offset=None if data.offset is None else data.offset[index],
        group=None if data.group is None else data.group[index],
    )


def validate_dataset(data: TimeSeriesDataset) -> list[dict]:
    """Report data problems without raising.

    Each finding is a dict with ``kind``, ``row`` (position) and ``detail``.
    """
    findings = []
    for label, pos in data.group_positions():
        time = data.time[pos]
        if len(time) > 1:
            step = np.diff(time).astype(int)
            for i in np.flatnonzero(step == 0):
                findings.append({"kind": "duplicate time", "row": int(pos[i + 1]),
                                 "detail": f"{time[i + 1]} (group {label})"})
            for i in np.flatnonzero(step > 1):
                findings.append({"kind": "gap", "row": int(pos[i + 1]),
                                 "detail": f"{step[i] - 1} day(s) missing before {time[i + 1]}"})
    y = data.y
    for i in np.flatnonzero(np.isnan(y)):
        findings.append({"kind": "missing count", "row": int(i), "detail": ""})
    for i in np.flatnonzero(y < 0):
        findings.append({"kind": "negative count", "row": int(i), "detail": str(y[i])})
    for i in np.flatnonzero(np.isfinite(y) & (y != np.round(y))):
        findings.append({"kind": "non-integer count", "row": int(i), "detail": str(y[i])})
    if data.offset is not None:
        for i in np.flatnonzero(~(data.offset > 0)):
            findings.append({"kind": "non-positive offset", "row": int(i),
                             "detail": str(data.offset[i])})
    for name, values in data.covariates.items():
        n_missing = int(np.isnan(values).sum())
        if n_missing:
            findings.append({"kind": "missing covariate", "row": int(np.flatnonzero(np.isnan(values))[0]),
                             "detail": f"{name}: {n_missing} value(s)"})
    return findings
