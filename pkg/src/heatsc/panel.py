"""Balanced spatio-temporal panels and outcome preprocessing.

A :class:`Panel` is a fully validated N-units x T-days grid of outcomes,
optionally accompanied by a heat series and population denominators.
Panels are immutable after construction (arrays are locked), so they can
be shared freely across parallel workers.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllZeroWindowError,
    DuplicateCellError,
    HeatscError,
    MissingCellError,
    NonFiniteValueError,
    WindowOutOfRangeError,
)

RAW_RATE = "raw_rate"
LOG_RATE = "log_rate"
SIMULATED_LOG_RATE = "simulated_log_rate"
_SCALES = (RAW_RATE, LOG_RATE, SIMULATED_LOG_RATE)


def _lock(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Panel:
    """Balanced unit x day grid of outcomes with optional heat/population.

    Attributes
    ----------
    units : tuple of str
        Unit identifiers (e.g. county FIPS), unique and non-empty.
    outcome : ndarray, shape (N, T)
        Outcome matrix on the scale declared by ``scale``.
    scale : str
        One of ``raw_rate``, ``log_rate``, ``simulated_log_rate``.
    heat : ndarray or None, shape (N, T)
        Daily heat index per unit.
    population : ndarray or None, shape (N, T)
        Strictly positive denominators.
    dates : tuple of datetime.date or None
        Calendar dates for the T columns, contiguous daily when present.
    """

    units: tuple[str, ...]
    outcome: np.ndarray
    scale: str = RAW_RATE
    heat: np.ndarray | None = None
    population: np.ndarray | None = None
    dates: tuple[dt.date, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.units) == 0:
            raise HeatscError("panel needs at least one unit")
        if len(set(self.units)) != len(self.units):
            raise DuplicateCellError("unit ids must be unique")
        if any(not u for u in self.units):
            raise HeatscError("unit ids must be non-empty strings")
        if self.scale not in _SCALES:
            raise HeatscError(f"unknown scale {self.scale!r}")
        out = np.asarray(self.outcome, dtype=float)
        if out.ndim != 2 or out.shape[0] != len(self.units):
            raise HeatscError("outcome must be an (N, T) matrix")
        if not np.all(np.isfinite(out)):
            raise NonFiniteValueError("outcome contains non-finite values")
        object.__setattr__(self, "outcome", _lock(out))
        for name in ("heat", "population"):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.asarray(m, dtype=float)
            if m.shape != out.shape:
                raise HeatscError(f"{name} must match outcome shape {out.shape}")
            if not np.all(np.isfinite(m)):
                raise NonFiniteValueError(f"{name} contains non-finite values")
            if name == "population" and np.any(m <= 0):
                raise HeatscError("population must be strictly positive")
            object.__setattr__(self, name, _lock(m))
        if self.dates is not None:
            if len(self.dates) != out.shape[1]:
                raise HeatscError("dates length must equal T")
            deltas = {
                (b - a).days for a, b in zip(self.dates[:-1], self.dates[1:])
            }
            if deltas not in ({1}, set()):
                raise HeatscError("dates must be contiguous daily")

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_times(self) -> int:
        return self.outcome.shape[1]

    def unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise HeatscError(f"unknown unit {unit!r}") from None

    def with_outcome(self, outcome: np.ndarray, scale: str) -> "Panel":
        return Panel(self.units, outcome, scale, self.heat, self.population, self.dates)

    def to_records(self) -> list[tuple]:
        """Export the grid as (unit, time, outcome[, heat[, population]]) rows."""
        times: list = (
            list(self.dates) if self.dates is not None else list(range(self.n_times))
        )
        rows = []
        for i, u in enumerate(self.units):
            for t, time in enumerate(times):
                row: list = [u, time, float(self.outcome[i, t])]
                if self.heat is not None:
                    row.append(float(self.heat[i, t]))
                if self.population is not None:
                    row.append(float(self.population[i, t]))
                rows.append(tuple(row))
        return rows


@dataclass(frozen=True)
class EpisodeWindow:
    """Analysis window around one treatment onset.

    ``t0`` is the onset day (column index); the pre block is the
    ``pre_len`` days ending at ``t0 - 1`` and the post block the
    ``post_len`` days starting at ``t0``.
    """

    treated_unit: str
    t0: int
    pre_len: int
    post_len: int

    def __post_init__(self) -> None:
        if self.pre_len < 1 or self.post_len < 1:
            raise HeatscError("pre_len and post_len must be >= 1")

    @property
    def pre_slice(self) -> slice:
        return slice(self.t0 - self.pre_len, self.t0)

    @property
    def post_slice(self) -> slice:
        return slice(self.t0, self.t0 + self.post_len)

    def check_fits(self, n_times: int) -> None:
        if self.t0 - self.pre_len < 0 or self.t0 + self.post_len > n_times:
            raise WindowOutOfRangeError(
                f"window [{self.t0 - self.pre_len}, {self.t0 + self.post_len}) "
                f"outside panel range [0, {n_times})"
            )


@dataclass(frozen=True)
class CovariateTable:
    """Per-unit covariate vectors used for donor screening."""

    units: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape != (len(self.units), len(self.names)):
            raise HeatscError("values must be (n_units, n_covariates)")
        if len(self.names) < 1:
            raise HeatscError("need at least one covariate")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError("covariates contain non-finite values")
        object.__setattr__(self, "values", _lock(vals))

    def row(self, unit: str) -> np.ndarray:
        return self.values[self.units.index(unit)]


def build_panel(records, scale: str = RAW_RATE) -> Panel:
    """Assemble a validated Panel from long-format records.

    Parameters
    ----------
    records : iterable of tuples
        ``(unit, time, outcome)`` rows, optionally extended with heat and
        population values. ``time`` may be an int day index or a
        ``datetime.date``; the records must cover the full unit x time
        cross product exactly once.

    Raises
    ------
    MissingCellError, DuplicateCellError, NonFiniteValueError
    """
    records = list(records)
    if not records:
        raise MissingCellError("no records")
    width = len(records[0])
    if width < 3 or width > 5:
        raise HeatscError("records must have 3 to 5 fields")
    if any(len(r) != width for r in records):
        raise HeatscError("ragged records: inconsistent field counts")

    units: list[str] = []
    seen_units = set()
    times_set = set()
    for r in records:
        u = str(r[0])
        if u not in seen_units:
            seen_units.add(u)
            units.append(u)
        times_set.add(r[1])

    use_dates = isinstance(next(iter(times_set)), dt.date)
    times = sorted(times_set)
    if use_dates:
        span = (times[-1] - times[0]).days + 1
    else:
        times = [int(t) for t in times]
        span = times[-1] - times[0] + 1
    if span != len(times):
        raise MissingCellError("time axis has gaps: panel must be balanced daily")

    n, t_len = len(units), len(times)
    uidx = {u: i for i, u in enumerate(units)}
    tidx = {t: j for j, t in enumerate(times)}

    outcome = np.full((n, t_len), np.nan)
    heat = np.full((n, t_len), np.nan) if width >= 4 else None
    pop = np.full((n, t_len), np.nan) if width == 5 else None
    for r in records:
        i, j = uidx[str(r[0])], tidx[r[1]]
        if not np.isnan(outcome[i, j]):
            raise DuplicateCellError(f"duplicate cell ({r[0]}, {r[1]})")
        outcome[i, j] = float(r[2])
        if heat is not None:
            heat[i, j] = float(r[3])
        if pop is not None:
            pop[i, j] = float(r[4])

    holes = np.argwhere(np.isnan(outcome))
    if len(holes):
        i, j = holes[0]
        raise MissingCellError(f"missing cell ({units[i]}, {times[j]})")

    dates = tuple(times) if use_dates else None
    return Panel(tuple(units), outcome, scale, heat, pop, dates)


def _rolling_mean_trunc(series: np.ndarray, window: int) -> np.ndarray:
    """Centered rolling mean of odd width, truncated at the edges."""
    t_len = len(series)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(series)])
    lo = np.maximum(np.arange(t_len) - half, 0)
    hi = np.minimum(np.arange(t_len) + half + 1, t_len)
    return (csum[hi] - csum[lo]) / (hi - lo)


def log_transform_rates(panel: Panel, window: int = 7, smooth_all: bool = False) -> Panel:
    """Log-transform a raw-rate panel, imputing zero cells first.

    Zero-rate cells are replaced by the centered rolling mean of width
    ``window`` (zeros included in the average, edge windows truncated);
    the result is then logged elementwise. With ``smooth_all`` the rolling
    average is applied to every day before the log, not only zero cells.

    Raises
    ------
    AllZeroWindowError
        If a zero cell's entire rolling window is zero.
    """
    if panel.scale != RAW_RATE:
        raise HeatscError("log_transform_rates expects a raw_rate panel")
    if window < 1 or window % 2 == 0:
        raise HeatscError("window must be odd and >= 1")
    if np.any(panel.outcome < 0):
        raise HeatscError("rates must be nonnegative")

    out = panel.outcome.copy()
    for i in range(panel.n_units):
        smoothed = _rolling_mean_trunc(out[i], window)
        if smooth_all:
            out[i] = smoothed
        else:
            zero = out[i] == 0.0
            out[i, zero] = smoothed[zero]
        if np.any(out[i] <= 0.0):
            t = int(np.argmax(out[i] <= 0.0))
            raise AllZeroWindowError(
                f"unit {panel.units[i]} day {t}: rolling window is all zero, "
                "cannot take log"
            )
    return panel.with_outcome(np.log(out), LOG_RATE)


def slice_window(
    panel: Panel, window: EpisodeWindow, donors: list[str]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cut the treated pre/post vectors and donor pre/post matrices.

    Returns
    -------
    treated_pre : ndarray, shape (pre_len,)
    treated_post : ndarray, shape (post_len,)
    donors_pre : ndarray, shape (pre_len, J)
    donors_post : ndarray, shape (post_len, J)
    """
    window.check_fits(panel.n_times)
    if not donors:
        raise HeatscError("donor list must be non-empty")
    ti = panel.unit_index(window.treated_unit)
    di = [panel.unit_index(d) for d in donors]
    if ti in di:
        raise HeatscError("treated unit cannot be its own donor")
    treated_pre = panel.outcome[ti, window.pre_slice].copy()
    treated_post = panel.outcome[ti, window.post_slice].copy()
    donors_pre = panel.outcome[np.ix_(di, range(*window.pre_slice.indices(panel.n_times)))].T.copy()
    donors_post = panel.outcome[np.ix_(di, range(*window.post_slice.indices(panel.n_times)))].T.copy()
    return treated_pre, treated_post, donors_pre, donors_post


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

_PANEL_COLUMNS = ("unit_id", "date", "outcome", "heat", "population")


def read_panel_csv(path, scale: str = RAW_RATE) -> Panel:
    """Read a long-format panel CSV: ``unit_id,date,outcome[,heat,population]``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeatscError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if tuple(header) not in {_PANEL_COLUMNS[:k] for k in (3, 4, 5)}:
            raise HeatscError(
                f"{path}: header must be unit_id,date,outcome[,heat[,population]], "
                f"got {header}"
            )
        width = len(header)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise HeatscError(f"{path}: row {lineno}: expected {width} fields")
            try:
                date = dt.date.fromisoformat(row[1].strip())
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise HeatscError(f"{path}: row {lineno}: {exc}") from None
            records.append((row[0].strip(), date, *vals))
    return build_panel(records, scale=scale)


def write_panel_csv(panel: Panel, path) -> None:
    cols = list(_PANEL_COLUMNS[:3])
    if panel.heat is not None:
        cols.append("heat")
    if panel.population is not None:
        cols.append("population")
    if panel.heat is None and panel.population is not None:
        raise HeatscError("cannot write population without heat column")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in panel.to_records():
            unit, time, *vals = row
            date = time.isoformat() if isinstance(time, dt.date) else time
            writer.writerow([unit, date] + [repr(v) for v in vals])


def read_covariates_csv(path) -> CovariateTable:
    """Read per-unit covariates: ``unit_id,<name1>,<name2>,...``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2 or header[0].strip() != "unit_id":
            raise HeatscError(f"{path}: header must start with unit_id")
        names = tuple(h.strip() for h in header[1:])
        units, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise HeatscError(f"{path}: row {lineno}: expected {len(header)} fields")
            units.append(row[0].strip())
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise HeatscError(f"{path}: row {lineno}: {exc}") from None
    return CovariateTable(tuple(units), names, np.asarray(rows))
