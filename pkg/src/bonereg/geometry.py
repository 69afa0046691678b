"""Spatial queries and local surface features.

Each point gets a unit normal and curvature from the eigendecomposition
of its k-neighborhood covariance, plus the normal's spherical angles.
Matching uses two distances: d_c, plain Euclidean distance, and d_s, a
weighted L1 distance on the (r, phi, theta) feature triples with the
azimuth difference wrapped onto the circle.

Queries are deterministic: candidates are re-ranked by (squared
distance, index) computed with plain numpy arithmetic, so results match
a brute-force scan exactly, ties resolving to the lowest point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import LocalFeatures, PointCloud

TWO_PI = 2.0 * np.pi

# extra neighbors fetched so boundary distance ties can be detected
_TIE_PAD = 8
# radius inflation covering kd-tree rounding at the boundary
_R_INFLATE = 1.0 + 1e-9


class SpatialIndex:
    """Immutable k-d tree over a cloud's points (or a raw (n, 3) array)."""

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("index needs points of shape (n, 3)")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def knn_batch(self, queries: np.ndarray, k: int) -> np.ndarray:
        """(m, k) neighbor indices for m query points, each row sorted by
        (distance, index)."""
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside 1..{n}")
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        m = queries.shape[0]
        kq = min(k + _TIE_PAD, n)
        _, idx = self._tree.query(queries, k=kq)
        idx = idx.reshape(m, kq)
        diffs = self.points[idx] - queries[:, None, :]
        d2 = np.sum(diffs * diffs, axis=2)
        rows = np.repeat(np.arange(m), kq)
        order = np.lexsort((idx.ravel(), d2.ravel(), rows))
        d2s = d2.ravel()[order].reshape(m, kq)
        out = idx.ravel()[order].reshape(m, kq)[:, :k].copy()
        if kq < n:
            # a tie group at the k-th distance may extend past the window
            unsure = np.nonzero(d2s[:, -1] <= d2s[:, k - 1] * (1.0 + 1e-12))[0]
            if unsure.size:
                radii = np.sqrt(d2s[unsure, k - 1]) * _R_INFLATE
                lists = self._tree.query_ball_point(queries[unsure], radii)
                for row, cand in zip(unsure, lists):
                    cand = np.asarray(cand, dtype=np.int64)
                    diff = self.points[cand] - queries[row]
                    dd = np.sum(diff * diff, axis=1)
                    best = np.lexsort((cand, dd))[:k]
                    out[row] = cand[best]
        return out

    def ball_batch(self, centers: np.ndarray, radius) -> list[np.ndarray]:
        """Per-center index arrays of all points within radius (inclusive)."""
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        lists = self._tree.query_ball_point(centers, np.asarray(radius) * _R_INFLATE)
        r2 = np.square(radius)
        out = []
        for c, lst, rr in zip(centers, lists, np.broadcast_to(r2, centers.shape[0])):
            cand = np.sort(np.asarray(lst, dtype=np.int64))
            diff = self.points[cand] - c
            d2 = np.sum(diff * diff, axis=1)
            out.append(cand[d2 <= rr])
        return out


def knn(index: SpatialIndex, query, k: int) -> np.ndarray:
    """Indices of the k nearest points to query; equal distances resolve
    to the lowest index."""
    q = np.asarray(query, dtype=float).reshape(3)
    return index.knn_batch(q[None, :], k)[0]


def radius_neighbors(index: SpatialIndex, center, r_th: float) -> np.ndarray:
    """Indices of all points within r_th of center, ascending."""
    if not r_th > 0:
        raise ValueError("r_th must be positive")
    c = np.asarray(center, dtype=float).reshape(3)
    return index.ball_batch(c[None, :], float(r_th))[0]


def jacobi_eigh3(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of symmetric 3x3 matrices by cyclic Jacobi
    rotations, batched over leading dimensions.

    Returns (eigenvalues, eigenvectors): eigenvalues sorted descending,
    eigenvectors in the matching columns. Sweeps stop once every
    off-diagonal magnitude falls below 1e-12 of the matrix trace (hard
    cap of 60 sweeps).
    """
    a = np.array(mats, dtype=float)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.shape[-2:] != (3, 3):
        raise ValueError("expected 3x3 matrices")
    flat = a.reshape(-1, 3, 3).copy()
    n = flat.shape[0]
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    trace = flat[:, 0, 0] + flat[:, 1, 1] + flat[:, 2, 2]
    thresh = 1e-12 * np.abs(trace)
    eye = np.eye(3)
    for _ in range(60):
        off = np.maximum(np.abs(flat[:, 0, 1]),
                         np.maximum(np.abs(flat[:, 0, 2]), np.abs(flat[:, 1, 2])))
        if np.all(off <= thresh):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = flat[:, p, q]
            rot = np.abs(apq) > thresh
            if not rot.any():
                continue
            denom = np.where(rot, 2.0 * apq, 1.0)
            theta = (flat[:, q, q] - flat[:, p, p]) / denom
            sign = np.where(theta >= 0.0, 1.0, -1.0)
            t = np.where(rot, sign / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            g = np.broadcast_to(eye, (n, 3, 3)).copy()
            g[:, p, p] = c
            g[:, q, q] = c
            g[:, p, q] = s
            g[:, q, p] = -s
            flat = np.swapaxes(g, 1, 2) @ flat @ g
            v = v @ g
    vals = np.stack([flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(v, order[:, None, :], axis=2)
    shape = a.shape[:-2]
    vals = vals.reshape(shape + (3,))
    vecs = vecs.reshape(shape + (3, 3))
    if single:
        return vals[0], vecs[0]
    return vals, vecs


@dataclass(frozen=True, eq=False)
class NeighborhoodStats:
    """Centroid, covariance (sum of outer products of demeaned points),
    and descending eigenvalues of one neighborhood."""

    centroid: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray


def neighborhood_stats(neighbor_pts) -> NeighborhoodStats:
    nb = np.asarray(neighbor_pts, dtype=float)
    if nb.ndim != 2 or nb.shape[1] != 3 or nb.shape[0] < 1:
        raise ValueError("need a (k, 3) neighborhood")
    centroid = nb.mean(axis=0)
    centered = nb - centroid
    cov = centered.T @ centered
    vals, _ = jacobi_eigh3(cov)
    return NeighborhoodStats(centroid, cov, vals)


def _canonical_sign(normals: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Flip normals so they point away from the whole-cloud centroid;
    exact ties fall back to nz >= 0, then ny >= 0, then nx >= 0."""
    center = pts.mean(axis=0)
    d = np.einsum("ni,ni->n", normals, pts - center)
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    tie = d == 0.0
    flip = (d < 0.0) | (tie & ((nz < 0.0)
                               | ((nz == 0.0) & ((ny < 0.0)
                                                 | ((ny == 0.0) & (nx < 0.0))))))
    return np.where(flip[:, None], -normals, normals)


def _feature_arrays(pts: np.ndarray, k: int, index: SpatialIndex | None = None):
    """(normals, curvature, phi, theta) arrays for every point of pts."""
    if index is None:
        index = SpatialIndex(pts)
    nbr = index.knn_batch(pts, k)
    nb = pts[nbr]
    centroids = nb.mean(axis=1)
    centered = nb - centroids[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered)
    vals, vecs = jacobi_eigh3(cov)
    normals = vecs[:, :, 2]
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    normals = _canonical_sign(normals, pts)
    trace = vals.sum(axis=1)
    safe = np.where(trace > 0.0, trace, 1.0)
    # clip absorbs the tiny negatives a numerically zero lambda_min can take
    curvature = np.clip(np.where(trace > 0.0, vals[:, 2] / safe, 0.0), 0.0, 1.0 / 3.0)
    theta = np.arccos(np.clip(normals[:, 2], -1.0, 1.0))
    phi = np.arctan2(normals[:, 1], normals[:, 0])
    phi = np.where(phi == -np.pi, np.pi, phi)
    phi = np.where((normals[:, 0] == 0.0) & (normals[:, 1] == 0.0), 0.0, phi)
    return normals, curvature, phi, theta


def estimate_features(cloud: PointCloud, k: int) -> PointCloud:
    """Attach per-point features estimated from k-nearest neighborhoods.

    The neighborhood of a point includes the point itself. The normal is
    the eigenvector of the smallest covariance eigenvalue, curvature its
    share of the eigenvalue sum, and (r, phi, theta) the spherical triple
    built from them (phi from the two-argument arctangent).
    """
    n = len(cloud)
    if not 3 <= k <= n:
        raise ValueError(f"k={k} outside 3..{n}")
    normals, curvature, phi, theta = _feature_arrays(cloud.points, k)
    feats = LocalFeatures(normals=normals, curvature=curvature,
                          r=curvature.copy(), phi=phi, theta=theta)
    return cloud.with_features(feats)


def d_s(a, b, weights=(1.0, 1.0, 1.0)):
    """Feature-space distance between (r, phi, theta) triples.

    Weighted sum of absolute differences; the azimuth term is wrapped,
    min(|dphi|, 2*pi - |dphi|), so angles near +/-pi stay close.
    Broadcasts over leading dimensions.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wr, wphi, wtheta = (float(w) for w in weights)
    if min(wr, wphi, wtheta) < 0:
        raise ValueError("feature weights must be non-negative")
    dr = np.abs(a[..., 0] - b[..., 0])
    dphi = np.abs(a[..., 1] - b[..., 1])
    dphi = np.minimum(dphi, TWO_PI - dphi)
    dtheta = np.abs(a[..., 2] - b[..., 2])
    return wr * dr + wphi * dphi + wtheta * dtheta


def d_c(a, b):
    """Euclidean distance, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    return np.sqrt(np.sum(diff * diff, axis=-1))
