"""Spatial structure: distances, kernel weights, contiguity, separation.

Distances are great-circle kilometers between unit centroids. Weight
matrices are dense ndarrays (panels here have a few hundred units at
most) kept row-stochastic, with zero rows resolved by the identity
convention: an isolated unit keeps all weight on itself.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, HeatscError, SingularSystemError

EARTH_RADIUS_KM = 6371.0088


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    lat1, lon1, lat2, lon2 = map(np.radians, (a[0], a[1], b[0], b[1]))
    s = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0))))


def _pairwise_haversine(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    latr = np.radians(lat)[:, None]
    lonr = np.radians(lon)[:, None]
    s = (
        np.sin((latr.T - latr) / 2.0) ** 2
        + np.cos(latr) * np.cos(latr.T) * np.sin((lonr.T - lonr) / 2.0) ** 2
    )
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class SpatialIndex:
    """Unit centroids plus the full pairwise distance matrix (km)."""

    units: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    distances: np.ndarray = field(repr=False)

    @classmethod
    def from_centroids(cls, units, lat, lon) -> "SpatialIndex":
        units = tuple(str(u) for u in units)
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if len(units) != lat.size or lat.size != lon.size:
            raise HeatscError("units, lat, lon must have equal length")
        if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
            raise HeatscError("latitude must be in [-90, 90], longitude in [-180, 180]")
        d = _pairwise_haversine(lat, lon)
        for a in (lat, lon, d):
            a.flags.writeable = False
        return cls(units, lat, lon, d)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def unit_index(self, unit: str) -> int:
        return self.units.index(unit)


@dataclass(frozen=True)
class GeoWeightMatrix:
    """Row-stochastic geographic weight matrix from a k-NN kernel."""

    units: tuple[str, ...]
    w: np.ndarray = field(repr=False)
    k: int = 0
    bandwidth_km: float = float("nan")


def row_standardize(w: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; a zero row becomes identity (island)."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise HeatscError("weights must be nonnegative")
    sums = w.sum(axis=1)
    out = np.zeros_like(w)
    live = sums > 0
    out[live] = w[live] / sums[live, None]
    for i in np.nonzero(~live)[0]:
        out[i, i] = 1.0
    return out


def knn_kernel_weights(
    index: SpatialIndex, k: int = 4, bandwidth_factor: float = 0.5
) -> GeoWeightMatrix:
    """Exponential-kernel weights on each unit's k nearest neighbors.

    Kernel values exp(-d/c) are placed on the k nearest neighbors of each
    row, the matrix is symmetrized by max(W, W^T), then row-standardized.
    The bandwidth is ``c = bandwidth_factor * median_i(median of unit i's
    k-NN distances)``.
    """
    n = index.n_units
    if not 1 <= k < n:
        raise HeatscError(f"need 1 <= k < n_units, got k={k}, n={n}")
    d = index.distances
    off = d + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    if not np.any(np.isfinite(off) & (off > 0)):
        raise DegenerateGeometryError("all centroids coincide")
    # k nearest neighbors per row (ties resolved by stable index order)
    order = np.argsort(off, axis=1, kind="stable")[:, :k]
    knn_d = np.take_along_axis(off, order, axis=1)
    c = bandwidth_factor * float(np.median(np.median(knn_d, axis=1)))
    if c <= 0:
        raise DegenerateGeometryError("zero kernel bandwidth: coincident centroids")
    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    cols = order.ravel()
    w[rows, cols] = np.exp(-off[rows, cols] / c)
    w = np.maximum(w, w.T)
    return GeoWeightMatrix(index.units, row_standardize(w), k, c)


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric binary contiguity matrix (1 = shares a border)."""

    units: tuple[str, ...]
    a: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.a)
        if a.shape != (len(self.units),) * 2:
            raise HeatscError("adjacency must be square over units")
        if not np.array_equal(a, a.T):
            raise HeatscError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise HeatscError("adjacency diagonal must be zero")
        if not np.all((a == 0) | (a == 1)):
            raise HeatscError("adjacency must be binary")
        a = a.astype(np.int8)
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @classmethod
    def from_edges(cls, units, edges) -> "AdjacencyGraph":
        units = tuple(str(u) for u in units)
        idx = {u: i for i, u in enumerate(units)}
        a = np.zeros((len(units), len(units)), dtype=np.int8)
        for u, v in edges:
            u, v = str(u), str(v)
            if u == v:
                raise HeatscError(f"self-loop on {u!r} rejected")
            if u not in idx or v not in idx:
                raise HeatscError(f"edge on unknown unit: ({u}, {v})")
            a[idx[u], idx[v]] = 1
            a[idx[v], idx[u]] = 1
        return cls(units, a)


def read_centroids_csv(path) -> SpatialIndex:
    """Read centroids: ``unit_id,lat,lon``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["unit_id", "lat", "lon"]:
            raise HeatscError(f"{path}: header must be unit_id,lat,lon")
        units, lat, lon = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                units.append(row[0].strip())
                lat.append(float(row[1]))
                lon.append(float(row[2]))
            except (IndexError, ValueError) as exc:
                raise HeatscError(f"{path}: row {lineno}: {exc}") from None
    return SpatialIndex.from_centroids(units, lat, lon)


def read_adjacency_csv(path, units) -> AdjacencyGraph:
    """Read an undirected edge list: ``unit_a,unit_b``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["unit_a", "unit_b"]:
            raise HeatscError(f"{path}: header must be unit_a,unit_b")
        edges = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise HeatscError(f"{path}: row {lineno}: expected 2 fields")
            edges.append((row[0].strip(), row[1].strip()))
    return AdjacencyGraph.from_edges(units, edges)


def degrees_of_separation(adj: AdjacencyGraph) -> np.ndarray:
    """All-pairs graph distance in contiguity steps via BFS from each unit.

    Unreachable pairs get +inf; the diagonal is 0.
    """
    n = len(adj.units)
    neighbors = [np.nonzero(adj.a[i])[0] for i in range(n)]
    sep = np.full((n, n), np.inf)
    for src in range(n):
        sep[src, src] = 0.0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            nxt = sep[src, u] + 1.0
            for v in neighbors[u]:
                if sep[src, v] == np.inf:
                    sep[src, v] = nxt
                    queue.append(v)
    return sep


def sar_smooth(w: np.ndarray | GeoWeightMatrix, varpi: float, nu: np.ndarray) -> np.ndarray:
    """Apply the spatial smoothing operator (I - varpi*W)^{-1} to ``nu``.

    Requires |varpi| < 1 with row-stochastic W, which keeps the system
    nonsingular; a singular solve is reported rather than propagated as
    a LinAlgError.
    """
    if isinstance(w, GeoWeightMatrix):
        w = w.w
    if abs(varpi) >= 1.0:
        raise HeatscError(f"need |varpi| < 1, got {varpi}")
    nu = np.asarray(nu, dtype=float)
    a = np.eye(w.shape[0]) - varpi * w
    try:
        x = np.linalg.solve(a, nu)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from None
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("smoothing solve produced non-finite values")
    return x
