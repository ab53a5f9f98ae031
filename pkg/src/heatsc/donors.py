"""Donor pool construction and covariate screening.

Two eligibility predicates are supported and never mixed silently:
graph separation (exclude units within ``s0`` contiguity steps of any
treated unit) and a metric buffer (exclude units within ``buffer_km``
of any treated unit). Eligibility is evaluated over the union of the
pre and post windows, so a donor is untreated throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPoolError, HeatscError
from .panel import CovariateTable, EpisodeWindow

STANDARD = "standard"
SPATIAL_BUFFERED = "spatial_buffered"


@dataclass(frozen=True)
class DonorPool:
    """Ordered donor set for one treated episode.

    ``ranking`` carries the ordering statistic per donor: minimum
    separation degrees (spatial pools on a graph), minimum distance in
    km (metric buffers), or the original panel order (standard pools).
    """

    treated_unit: str
    window: EpisodeWindow
    donors: tuple[str, ...]
    pool_kind: str
    s0: int | None = None
    buffer_km: float | None = None
    ranking: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.treated_unit in self.donors:
            raise HeatscError("treated unit cannot appear among donors")


def eligible_donors(
    units: tuple[str, ...],
    mask: np.ndarray,
    window: EpisodeWindow,
    kind: str = STANDARD,
    separation: np.ndarray | None = None,
    s0: int | None = None,
    distances: np.ndarray | None = None,
    buffer_km: float | None = None,
) -> DonorPool:
    """Build the donor pool for one episode window.

    Parameters
    ----------
    units : tuple of str
        Panel unit ids, aligned with the rows of ``mask``.
    mask : ndarray (N, T)
        Binary treatment indicator.
    window : EpisodeWindow
        Pre+post window; donors must be untreated on every day of it.
    kind : str
        ``standard`` keeps all untreated units; ``spatial_buffered``
        additionally excludes units within ``s0`` separation degrees
        (pass ``separation``) or within ``buffer_km`` kilometers (pass
        ``distances``) of any unit treated during the window.

    Returns
    -------
    DonorPool with donors ordered nearest-eligible first for spatial
    pools (separation exactly s0+1 first, then increasing), original
    unit order for standard pools.
    """
    mask = np.asarray(mask)
    window.check_fits(mask.shape[1])
    ti = units.index(window.treated_unit)
    cols = slice(window.t0 - window.pre_len, window.t0 + window.post_len)
    treated_any = mask[:, cols].any(axis=1)
    untreated = ~treated_any
    untreated[ti] = False

    if kind == STANDARD:
        idx = np.nonzero(untreated)[0]
        pool = DonorPool(
            window.treated_unit, window, tuple(units[i] for i in idx), STANDARD,
            ranking=tuple(float(i) for i in idx),
        )
    elif kind == SPATIAL_BUFFERED:
        treated_set = np.nonzero(treated_any)[0]
        if not len(treated_set):
            treated_set = np.asarray([ti])
        if (separation is None) == (distances is None):
            raise HeatscError("pass exactly one of separation/distances")
        if separation is not None:
            if s0 is None or s0 < 0:
                raise HeatscError("graph buffering needs s0 >= 0")
            nearest = separation[:, treated_set].min(axis=1)
            ok = untreated & (nearest > s0)
            metric = nearest
        else:
            if buffer_km is None or buffer_km < 0:
                raise HeatscError("metric buffering needs buffer_km >= 0")
            nearest = distances[:, treated_set].min(axis=1)
            ok = untreated & (nearest > buffer_km)
            metric = nearest
        idx = sorted(np.nonzero(ok)[0], key=lambda i: (metric[i], units[i]))
        pool = DonorPool(
            window.treated_unit, window, tuple(units[i] for i in idx),
            SPATIAL_BUFFERED, s0=s0, buffer_km=buffer_km,
            ranking=tuple(float(metric[i]) for i in idx),
        )
    else:
        raise HeatscError(f"unknown pool kind {kind!r}")

    if not pool.donors:
        raise EmptyPoolError(
            f"no eligible donor for {window.treated_unit} "
            f"(kind={kind}, s0={s0}, buffer_km={buffer_km})"
        )
    return pool


def mahalanobis_distances(
    x: np.ndarray, center: np.ndarray, ridge_scale: float = 1e-6
) -> np.ndarray:
    """Squared Mahalanobis distance of each row of ``x`` to ``center``.

    The covariance is the sample covariance of ``x``; a ridge
    ``lambda*I`` with lambda = ridge_scale * mean(diag) is added when the
    covariance is near-singular (or has fewer rows than columns).
    """
    x = np.asarray(x, dtype=float)
    diffs = x - np.asarray(center, dtype=float)
    if x.shape[0] < 2:
        return (diffs**2).sum(axis=1)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    mean_diag = float(np.mean(np.diag(cov)))
    if mean_diag <= 0:
        mean_diag = 1.0
    near_singular = (
        x.shape[0] <= x.shape[1]
        or np.linalg.cond(cov) > 1e12
        or not np.isfinite(np.linalg.cond(cov))
    )
    if near_singular:
        cov = cov + ridge_scale * mean_diag * np.eye(cov.shape[0])
    sol = np.linalg.solve(cov, diffs.T)
    return np.einsum("ij,ji->i", diffs, sol)


def mahalanobis_screen(
    pool: DonorPool, covariates: CovariateTable, k: int = 20
) -> DonorPool:
    """Keep the k donors closest to the treated unit in covariate space.

    Distances use the pool's sample covariance; ties break by unit id.
    A pool smaller than k is returned whole with a warning.
    """
    if k < 1:
        raise HeatscError("k must be >= 1")
    if len(pool.donors) <= k:
        if len(pool.donors) < k:
            warnings.warn(
                f"pool for {pool.treated_unit} has only {len(pool.donors)} donors "
                f"(requested {k}); keeping all",
                stacklevel=2,
            )
        return pool
    rows = np.stack([covariates.row(d) for d in pool.donors])
    center = covariates.row(pool.treated_unit)
    d2 = mahalanobis_distances(rows, center)
    order = sorted(range(len(pool.donors)), key=lambda j: (d2[j], pool.donors[j]))
    keep = order[:k]
    return DonorPool(
        pool.treated_unit, pool.window,
        tuple(pool.donors[j] for j in keep), pool.pool_kind,
        s0=pool.s0, buffer_km=pool.buffer_km,
        ranking=tuple(float(d2[j]) for j in keep),
    )
