"""Heatwave episode detection and treatment masks.

A heatwave is a maximal run of consecutive days on which a unit's heat
index is at or above its percentile threshold, kept only when the run is
at least ``min_duration`` days long. Threshold ties use the weak
inequality (H >= q).
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySeriesError, HeatscError
from .panel import Panel

PER_YEAR = "per_year"
WHOLE_PERIOD = "whole_period"
WARM_SEASON = "warm_season"
_REFERENCES = (PER_YEAR, WHOLE_PERIOD, WARM_SEASON)

DEFAULT_SEASON = ((5, 1), (9, 30))


@dataclass(frozen=True)
class HeatwaveDefinition:
    """Percentile/duration criterion for calling a heatwave."""

    percentile: float = 95.0
    min_duration: int = 2
    reference: str = PER_YEAR
    season: tuple[tuple[int, int], tuple[int, int]] = DEFAULT_SEASON

    def __post_init__(self) -> None:
        if not 0.0 < self.percentile < 100.0:
            raise HeatscError("percentile must be in (0, 100)")
        if self.min_duration < 1:
            raise HeatscError("min_duration must be >= 1")
        if self.reference not in _REFERENCES:
            raise HeatscError(f"unknown reference {self.reference!r}")


@dataclass(frozen=True)
class HeatwaveEpisode:
    """One detected exposure interval: onset day index and length in days."""

    unit: str
    start: int
    length: int

    @property
    def end(self) -> int:
        """First day index after the episode."""
        return self.start + self.length


def percentile_threshold(series: np.ndarray, r: float) -> float:
    """Nearest-rank percentile: the ceil(r/100 * n)-th smallest value."""
    series = np.asarray(series, dtype=float).ravel()
    if series.size == 0:
        raise EmptySeriesError("cannot take a percentile of an empty series")
    if not np.all(np.isfinite(series)):
        raise HeatscError("series must be finite")
    if not 0.0 < r < 100.0:
        raise HeatscError("percentile must be in (0, 100)")
    rank = math.ceil(r / 100.0 * series.size)
    return float(np.sort(series, kind="stable")[rank - 1])


def _in_season(date: dt.date, season) -> bool:
    (m0, d0), (m1, d1) = season
    return (date.month, date.day) >= (m0, d0) and (date.month, date.day) <= (m1, d1)


def _thresholds(panel: Panel, definition: HeatwaveDefinition) -> np.ndarray:
    """Per-cell threshold matrix q[i, t] under the chosen reference period."""
    heat = panel.heat
    n, t_len = heat.shape
    q = np.empty((n, t_len))
    if definition.reference == WHOLE_PERIOD or panel.dates is None:
        # Without calendar dates the whole panel is a single reference block.
        for i in range(n):
            q[i, :] = percentile_threshold(heat[i], definition.percentile)
        return q
    if definition.reference == PER_YEAR:
        years = np.array([d.year for d in panel.dates])
        for year in np.unique(years):
            cols = years == year
            for i in range(n):
                q[i, cols] = percentile_threshold(heat[i, cols], definition.percentile)
        return q
    # warm season: pool in-season days across years into one threshold per unit
    cols = np.array([_in_season(d, definition.season) for d in panel.dates])
    if not np.any(cols):
        raise EmptySeriesError("no in-season days in the panel")
    for i in range(n):
        q[i, :] = percentile_threshold(heat[i, cols], definition.percentile)
    return q


def detect_heatwaves(
    panel: Panel, definition: HeatwaveDefinition
) -> tuple[list[HeatwaveEpisode], np.ndarray]:
    """Find all heatwave episodes and the binary treatment mask.

    Returns
    -------
    episodes : list of HeatwaveEpisode
        Maximal runs with heat at or above threshold on every day and
        length >= min_duration, ordered by unit then start day.
    mask : ndarray of int8, shape (N, T)
        1 exactly on the days of kept episodes.
    """
    if panel.heat is None:
        raise HeatscError("panel has no heat series")
    q = _thresholds(panel, definition)
    hot = panel.heat >= q
    episodes: list[HeatwaveEpisode] = []
    mask = np.zeros(hot.shape, dtype=np.int8)
    for i, unit in enumerate(panel.units):
        t = 0
        t_len = hot.shape[1]
        while t < t_len:
            if not hot[i, t]:
                t += 1
                continue
            run = t
            while run < t_len and hot[i, run]:
                run += 1
            length = run - t
            if length >= definition.min_duration:
                episodes.append(HeatwaveEpisode(unit, t, length))
                mask[i, t:run] = 1
            t = run
    return episodes, mask


def first_of_season(
    episodes: list[HeatwaveEpisode],
    dates: tuple[dt.date, ...] | None,
    season: tuple[tuple[int, int], tuple[int, int]] = DEFAULT_SEASON,
) -> list[HeatwaveEpisode]:
    """Keep one episode per unit and season: the earliest in-season onset.

    Episodes whose onset falls outside the season bounds are dropped.
    Without calendar dates the whole panel counts as a single season.
    """
    keep: dict[tuple[str, int], HeatwaveEpisode] = {}
    for ep in sorted(episodes, key=lambda e: (e.unit, e.start)):
        if dates is None:
            key = (ep.unit, 0)
        else:
            onset = dates[ep.start]
            if not _in_season(onset, season):
                continue
            key = (ep.unit, onset.year)
        keep.setdefault(key, ep)
    return sorted(keep.values(), key=lambda e: (e.unit, e.start))


def write_episodes_csv(episodes, path, dates=None) -> None:
    """Write ``unit_id,start_date,length_days`` (start index when undated)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "start_date", "length_days"])
        for ep in episodes:
            start = dates[ep.start].isoformat() if dates is not None else ep.start
            writer.writerow([ep.unit, start, ep.length])
