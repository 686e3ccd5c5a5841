"""Great-circle and topographically adjusted distances, DEM loading, k-means."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator
from sklearn.cluster import KMeans

EARTH_RADIUS_KM = 6371.0088


def haversine(s1, s2):
    """Great-circle distance in km between ``(lon, lat)`` points (degrees).

    Both arguments may be ``(..., 2)`` arrays and broadcast against each other.
    """
    a = np.asarray(s1, dtype=float)
    b = np.asarray(s2, dtype=float)
    lon1, lat1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lon2, lat2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    out = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(out) if out.ndim == 0 else out


def distance_matrix(lonlat, dem: "Dem | None" = None, step: float = 0.1):
    """Symmetric matrix of haversine (or topographic, when ``dem`` is given) distances."""
    pts = np.asarray(lonlat, dtype=float)
    n = len(pts)
    if dem is None:
        return haversine(pts[:, None, :], pts[None, :, :])
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = topo_distance(pts[i], pts[j], dem, step)
    return D


@dataclass(frozen=True)
class Dem:
    """Regular longitude/latitude grid of elevations in metres.

    ``elev[i, j]`` is the elevation at ``(lon[j], lat[i])``; both coordinate
    vectors are strictly increasing.
    """

    lon: np.ndarray
    lat: np.ndarray
    elev: np.ndarray

    def __post_init__(self):
        lon = np.asarray(self.lon, dtype=float)
        lat = np.asarray(self.lat, dtype=float)
        elev = np.asarray(self.elev, dtype=float)
        if elev.shape != (lat.size, lon.size):
            raise ValueError("DEM grid must be rectangular with shape (n_lat, n_lon)")
        if lon.size < 2 or lat.size < 2 or np.any(np.diff(lon) <= 0) or np.any(np.diff(lat) <= 0):
            raise ValueError("DEM coordinates must be strictly increasing with at least 2 nodes")
        if not np.all(np.isfinite(elev)):
            raise ValueError("DEM elevations must be finite")
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "elev", elev)
        object.__setattr__(self, "_interp", RegularGridInterpolator((lat, lon), elev, method="linear"))

    @property
    def bounds(self):
        return self.lon[0], self.lat[0], self.lon[-1], self.lat[-1]

    def contains(self, lonlat) -> np.ndarray:
        p = np.asarray(lonlat, dtype=float)
        lo0, la0, lo1, la1 = self.bounds
        return (p[..., 0] >= lo0) & (p[..., 0] <= lo1) & (p[..., 1] >= la0) & (p[..., 1] <= la1)

    def elevation(self, lonlat):
        """Bilinear elevation at ``(lon, lat)`` points."""
        p = np.atleast_2d(np.asarray(lonlat, dtype=float))
        if not np.all(self.contains(p)):
            raise ValueError("point outside DEM bounds")
        return self._interp(p[:, ::-1])


def read_esri_ascii(path) -> Dem:
    """Load an ESRI ASCII grid (cell-centre or corner registration)."""
    header = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines) and lines[i].split() and lines[i].split()[0][0].isalpha():
        key, val = lines[i].split()[:2]
        header[key.lower()] = float(val)
        i += 1
    ncols, nrows, cell = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    data = np.array(" ".join(lines[i:]).split(), dtype=float).reshape(nrows, ncols)
    if "xllcenter" in header:
        x0, y0 = header["xllcenter"], header["yllcenter"]
    else:
        x0, y0 = header["xllcorner"] + cell / 2, header["yllcorner"] + cell / 2
    nodata = header.get("nodata_value")
    if nodata is not None and np.any(data == nodata):
        raise ValueError("DEM contains no-data cells")
    lon = x0 + cell * np.arange(ncols)
    lat = y0 + cell * np.arange(nrows)
    return Dem(lon, lat, data[::-1])


def read_dem_csv(path) -> Dem:
    """Load a DEM from a CSV with columns ``lon, lat, elev`` covering a full grid."""
    df = pd.read_csv(path)
    grid = df.pivot(index="lat", columns="lon", values="elev").sort_index().sort_index(axis=1)
    if grid.isna().any().any():
        raise ValueError("DEM CSV does not cover a full rectangular grid")
    return Dem(grid.columns.to_numpy(float), grid.index.to_numpy(float), grid.to_numpy(float))


def _unit(lonlat):
    lon, lat = np.radians(lonlat[..., 0]), np.radians(lonlat[..., 1])
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def great_circle_path(s1, s2, n_seg: int):
    """``n_seg + 1`` points equally spaced along the great circle from ``s1`` to ``s2``."""
    a, b = _unit(np.asarray(s1, dtype=float)), _unit(np.asarray(s2, dtype=float))
    omega = np.arccos(np.clip(a @ b, -1.0, 1.0))
    t = np.linspace(0.0, 1.0, n_seg + 1)
    if omega < 1e-12:
        pts = np.outer(1 - t, a) + np.outer(t, b)
    else:
        pts = (np.sin((1 - t) * omega)[:, None] * a + np.sin(t * omega)[:, None] * b) / np.sin(omega)
    lat = np.degrees(np.arcsin(np.clip(pts[:, 2], -1, 1)))
    lon = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
    return np.column_stack([lon, lat])


def topo_distance(s1, s2, dem: Dem, step: float = 0.1) -> float:
    """Along-path distance (km) over the DEM surface.

    The great-circle path is cut into segments of at most ``step`` km and
    each segment contributes ``sqrt(dh^2 + dz^2)`` with ``dz`` taken from
    bilinear DEM elevations (metres converted to km).
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if not (dem.contains(s1) and dem.contains(s2)):
        raise ValueError("both points must lie inside the DEM bounds")
    H = haversine(s1, s2)
    if H == 0.0:
        return 0.0
    n = max(1, int(np.ceil(H / step)))
    path = great_circle_path(s1, s2, n)
    lo0, la0, lo1, la1 = dem.bounds
    path[:, 0] = np.clip(path[:, 0], lo0, lo1)
    path[:, 1] = np.clip(path[:, 1], la0, la1)
    z = dem.elevation(path) / 1000.0
    dz = np.diff(z)
    return float(np.sum(np.sqrt((H / n) ** 2 + dz * dz)))


def project_km(lonlat, origin=None):
    """Local equirectangular projection to km around ``origin`` (default: centroid)."""
    p = np.asarray(lonlat, dtype=float)
    o = p.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
    kx = np.radians(1.0) * EARTH_RADIUS_KM * np.cos(np.radians(o[1]))
    ky = np.radians(1.0) * EARTH_RADIUS_KM
    return np.column_stack([(p[:, 0] - o[0]) * kx, (p[:, 1] - o[1]) * ky])


def kmeans(sites, k: int = 4, seed: int = 0, n_init: int = 50, return_inertia: bool = False):
    """k-means labels (k-means++ start, ``n_init`` restarts, best inertia kept).

    Labels are renumbered by order of first appearance so that the output
    does not depend on the internal cluster numbering.
    """
    X = np.asarray(sites, dtype=float)
    if X.ndim != 2:
        raise ValueError("sites must be an (n, dim) array")
    if k > len(X):
        raise ValueError(f"cannot form {k} clusters from {len(X)} sites")
    if len(np.unique(X, axis=0)) < k:
        warnings.warn("fewer distinct sites than clusters; jittering duplicates", RuntimeWarning, stacklevel=2)
        rng = np.random.default_rng(seed)
        X = X + rng.normal(scale=1e-6 * (np.ptp(X) + 1.0), size=X.shape)
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed).fit(X)
    raw = km.labels_
    _, first = np.unique(raw, return_index=True)
    seen = raw[np.sort(first)]
    remap = np.empty(k, dtype=int)
    remap[seen] = np.arange(seen.size)
    labels = remap[raw]
    if return_inertia:
        return labels, float(km.inertia_)
    return labels
