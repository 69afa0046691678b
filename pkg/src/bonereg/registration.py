"""Rigid registration of point clouds.

Two algorithms share one iteration loop: the feature-refined variant
(csn_icp) matches each moving point to its Cartesian nearest neighbor,
re-picks the match inside an r_th-ball by minimum feature distance, and
drops pairs whose distances exceed median-relative thresholds before the
SVD solve; the classic baseline (icp_classic) uses plain nearest
neighbors with no refinement or rejection. partition_register splits the
moving cloud into contiguous x-sorted bins and registers each bin
independently, modeling articulated motion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import PointCloud
from .geometry import SpatialIndex, TWO_PI, _feature_arrays
from . import metrics


class RegistrationError(Exception):
    """Registration could not proceed."""


class DivergenceError(RegistrationError):
    """Too few correspondence pairs survived rejection."""


class DegenerateGeometryError(RegistrationError):
    """Point configuration does not determine a rigid transform."""


def _g17(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation matrix plus translation vector, applied as R @ p + T."""

    rotation: np.ndarray
    translation: np.ndarray

    _TOL = 1e-9

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > self._TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > self._TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rodrigues rotation about a (nonzero) axis plus translation."""
        axis = np.asarray(axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ValueError("rotation axis must be nonzero")
        kx, ky, kz = axis / norm
        k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
        r = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
        return cls(r, np.asarray(translation, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, inner: RigidTransform) -> RigidTransform:
        """self after inner: (self o inner)(p) == self(inner(p))."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def rotation_angle(self) -> float:
        """Magnitude of the rotation, in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def to_json(self) -> str:
        rows = ["[" + ", ".join(_g17(x) for x in row) + "]" for row in self.rotation]
        t = ", ".join(_g17(x) for x in self.translation)
        return '{"R": [' + ", ".join(rows) + '], "T": [' + t + "]}"

    @classmethod
    def from_json(cls, text: str) -> RigidTransform:
        doc = json.loads(text)
        return cls(np.asarray(doc["R"], dtype=float), np.asarray(doc["T"], dtype=float))


def rotation_angle_between(a: RigidTransform, b: RigidTransform) -> float:
    """Angle of the relative rotation between two transforms, radians."""
    return RigidTransform(a.rotation @ b.rotation.T, np.zeros(3)).rotation_angle()


@dataclass(frozen=True)
class Correspondence:
    source_index: int
    target_index: int
    cartesian_distance: float
    feature_distance: float


@dataclass(frozen=True)
class CsnIcpConfig:
    """Tuning knobs for registration.

    r_th=None picks 2% of the target bounding-box diagonal. Rejection
    multipliers scale the running medians of the pair distances; pass
    float('inf') to disable a channel.
    """

    k: int = 20
    r_th: float | None = None
    dc_reject_multiplier: float = 3.0
    ds_reject_multiplier: float = 3.0
    max_iterations: int = 100
    rmse_tolerance: float = 1e-6
    partitions: int = 1
    feature_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center_align: bool = True
    record_correspondences: bool = False

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("k must be at least 3")
        if self.r_th is not None and not self.r_th > 0:
            raise ValueError("r_th must be positive")
        if not (self.dc_reject_multiplier > 0 and self.ds_reject_multiplier > 0):
            raise ValueError("rejection multipliers must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.rmse_tolerance > 0:
            raise ValueError("rmse_tolerance must be positive")
        if self.partitions < 1:
            raise ValueError("partitions must be at least 1")
        w = tuple(float(x) for x in self.feature_weights)
        if len(w) != 3 or min(w) < 0:
            raise ValueError("feature_weights must be three non-negative values")
        object.__setattr__(self, "feature_weights", w)


@dataclass
class RegistrationReport:
    """Outcome of one registration run.

    per_iteration_rmse holds the nearest-neighbor RMSE after each applied
    iteration; final_transforms has one entry per partition.
    """

    per_iteration_rmse: list[float]
    final_transforms: list[RigidTransform]
    accepted_pairs: int
    rejected_pairs: int
    converged: bool
    iterations_used: int
    correspondence_history: list[np.ndarray] | None = None

    @property
    def final_rmse(self) -> float | None:
        return self.per_iteration_rmse[-1] if self.per_iteration_rmse else None


def report_to_dict(report: RegistrationReport) -> dict:
    return {
        "per_iteration_rmse": [float(x) for x in report.per_iteration_rmse],
        "final_transforms": [
            {"R": [[float(_g17(x)) for x in row] for row in t.rotation],
             "T": [float(_g17(x)) for x in t.translation]}
            for t in report.final_transforms
        ],
        "accepted_pairs": int(report.accepted_pairs),
        "rejected_pairs": int(report.rejected_pairs),
        "converged": bool(report.converged),
        "iterations_used": int(report.iterations_used),
    }


def solve_rigid(source_pts, target_pts) -> RigidTransform:
    """Least-squares rigid transform mapping source points onto targets.

    Kabsch solve: demean both sets, SVD of the cross-covariance, with a
    determinant guard so reflections are never returned.
    """
    a = np.asarray(source_pts, dtype=float)
    b = np.asarray(target_pts, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape != b.shape:
        raise ValueError("point lists must both have shape (n, 3)")
    if a.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 point pairs")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, sing, vt = np.linalg.svd(h)
    if sing[1] <= sing[0] * 1e-12:
        raise DegenerateGeometryError("point pairs are collinear or coincident")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cb - r @ ca)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Transformed copy of the cloud; features are dropped because normals
    would need re-estimation."""
    return PointCloud(t.apply(cloud.points))


def _default_r_th(target: PointCloud) -> float:
    return 0.02 * target.bbox_diagonal()


def _correspond_arrays(moving_pts, moving_sph, tgt_index, tgt_sph, r_th, weights):
    """Two-stage match: Cartesian nearest neighbor, then the minimum
    feature distance inside the r_th-ball around it. Ties prefer the
    primary neighbor, then the lowest index. Returns (target_idx, dc, ds)
    for every moving point."""
    n = moving_pts.shape[0]
    primary = tgt_index.knn_batch(moving_pts, 1)[:, 0]
    balls = tgt_index.ball_batch(tgt_index.points[primary], r_th)
    counts = np.fromiter((len(b) for b in balls), dtype=np.int64, count=n)
    flat = np.concatenate(balls) if n else np.zeros(0, dtype=np.int64)
    rows = np.repeat(np.arange(n), counts)
    wr, wphi, wtheta = weights
    sa = moving_sph[rows]
    sb = tgt_sph[flat]
    dphi = np.abs(sa[:, 1] - sb[:, 1])
    ds_all = (wr * np.abs(sa[:, 0] - sb[:, 0])
              + wphi * np.minimum(dphi, TWO_PI - dphi)
              + wtheta * np.abs(sa[:, 2] - sb[:, 2]))
    not_primary = (flat != primary[rows]).astype(np.int8)
    order = np.lexsort((flat, not_primary, ds_all, rows))
    rows_sorted = rows[order]
    first = np.empty(order.size, dtype=bool)
    first[0] = True
    first[1:] = rows_sorted[1:] != rows_sorted[:-1]
    sel = order[first]
    chosen = flat[sel]
    diff = moving_pts - tgt_index.points[chosen]
    dc = np.sqrt(np.sum(diff * diff, axis=1))
    return chosen, dc, ds_all[sel]


def find_correspondences(source: PointCloud, target: PointCloud,
                         target_index: SpatialIndex | None = None,
                         r_th: float | None = None,
                         weights=(1.0, 1.0, 1.0)) -> list[Correspondence]:
    """Feature-refined correspondence of every source point to a target
    point. Both clouds must carry features."""
    if source.features is None or target.features is None:
        raise ValueError("both clouds must carry features")
    if len(target) == 0:
        raise ValueError("empty target")
    if target_index is None:
        target_index = SpatialIndex(target)
    if r_th is None:
        r_th = _default_r_th(target)
    if not r_th > 0:
        raise ValueError("r_th must be positive")
    chosen, dc, ds = _correspond_arrays(source.points, source.features.spherical,
                                        target_index, target.features.spherical,
                                        float(r_th), tuple(float(w) for w in weights))
    return [Correspondence(int(i), int(j), float(a), float(b))
            for i, (j, a, b) in enumerate(zip(chosen, dc, ds))]


def _reject_mask(dc: np.ndarray, ds: np.ndarray, config: CsnIcpConfig) -> np.ndarray:
    tc = math.inf if math.isinf(config.dc_reject_multiplier) \
        else config.dc_reject_multiplier * float(np.median(dc))
    ts = math.inf if math.isinf(config.ds_reject_multiplier) \
        else config.ds_reject_multiplier * float(np.median(ds))
    keep = (dc <= tc) & (ds <= ts)
    if keep.sum() < 3:
        raise DivergenceError(f"only {int(keep.sum())} correspondence pairs survived rejection")
    return keep


def reject_pairs(pairs: list[Correspondence], config: CsnIcpConfig) -> list[Correspondence]:
    """Drop pairs whose d_c or d_s exceeds its multiplier times the median
    over the current pair set; at least 3 pairs must survive."""
    if not pairs:
        raise ValueError("no pairs to filter")
    dc = np.array([p.cartesian_distance for p in pairs])
    ds = np.array([p.feature_distance for p in pairs])
    keep = _reject_mask(dc, ds, config)
    return [p for p, k in zip(pairs, keep) if k]


def _iterate(source: PointCloud, target: PointCloud, config: CsnIcpConfig,
             make_step) -> RegistrationReport:
    """Shared ICP loop. make_step(moving_pts, tgt_index) returns
    (target_idx, keep_mask) for the current moving points.

    Each iteration solves on the kept pairs, composes the step into the
    running transform and records the full-cloud RMSE. The loop stops on
    |delta RMSE| < tolerance, or reverts the step and stops if the RMSE
    would increase, so the recorded trace never rises.
    """
    tgt_index = SpatialIndex(target)
    moving = source.points.copy()
    total = RigidTransform.identity()
    if config.center_align:
        shift = target.points.mean(axis=0) - moving.mean(axis=0)
        moving = moving + shift
        total = RigidTransform(np.eye(3), shift)
    prev = metrics.nn_rmse(moving, tgt_index)
    trace: list[float] = []
    history: list[np.ndarray] | None = [] if config.record_correspondences else None
    converged = False
    accepted = rejected = 0
    for _ in range(config.max_iterations):
        tgt_idx, keep = make_step(moving, tgt_index)
        kept = np.nonzero(keep)[0]
        step = solve_rigid(moving[kept], tgt_index.points[tgt_idx[kept]])
        candidate = step.apply(moving)
        cur = metrics.nn_rmse(candidate, tgt_index)
        if trace and cur > trace[-1]:
            converged = True
            break
        moving = candidate
        total = step.compose(total)
        trace.append(cur)
        accepted = int(kept.size)
        rejected = int(keep.size - kept.size)
        if history is not None:
            history.append(np.column_stack([kept, tgt_idx[kept]]))
        if abs(prev - cur) < config.rmse_tolerance:
            converged = True
            break
        prev = cur
    return RegistrationReport(trace, [total], accepted, rejected,
                              converged, len(trace), history)


def csn_icp(source: PointCloud, target: PointCloud,
            config: CsnIcpConfig | None = None) -> RegistrationReport:
    """Register source onto target with feature-refined correspondences
    and median-relative pair rejection.

    Target features are estimated once; source features are re-estimated
    every iteration because normals move with the cloud.
    """
    config = config or CsnIcpConfig()
    if len(source) < config.k or len(target) < config.k:
        raise DegenerateGeometryError(
            f"clouds must have at least k={config.k} points "
            f"(got {len(source)} and {len(target)})")
    r_th = config.r_th if config.r_th is not None else _default_r_th(target)
    tgt_index = SpatialIndex(target)
    _, t_curv, t_phi, t_theta = _feature_arrays(target.points, config.k, tgt_index)
    tgt_sph = np.column_stack([t_curv, t_phi, t_theta])

    def make_step(moving_pts, index):
        _, curv, phi, theta = _feature_arrays(moving_pts, config.k)
        sph = np.column_stack([curv, phi, theta])
        tgt_idx, dc, ds = _correspond_arrays(moving_pts, sph, index, tgt_sph,
                                             r_th, config.feature_weights)
        return tgt_idx, _reject_mask(dc, ds, config)

    return _iterate(source, target, config, make_step)


def icp_classic(source: PointCloud, target: PointCloud,
                config: CsnIcpConfig | None = None) -> RegistrationReport:
    """Classic point-to-point ICP: nearest-neighbor correspondences, no
    refinement, no rejection, same solve and stopping rule as csn_icp."""
    config = config or CsnIcpConfig()
    if len(source) == 0 or len(target) == 0:
        raise ValueError("clouds must be non-empty")

    def make_step(moving_pts, index):
        tgt_idx = index.knn_batch(moving_pts, 1)[:, 0]
        return tgt_idx, np.ones(len(moving_pts), dtype=bool)

    return _iterate(source, target, config, make_step)


def partition_indices(source: PointCloud, partitions: int) -> list[np.ndarray]:
    """Contiguous equal-count bins of point indices after sorting by x;
    each bin is returned in ascending original index order."""
    if partitions < 1:
        raise ValueError("partitions must be at least 1")
    order = np.argsort(source.points[:, 0], kind="stable")
    return [np.sort(b) for b in np.array_split(order, partitions)]


def partition_register(source: PointCloud, target: PointCloud,
                       config: CsnIcpConfig | None = None) -> RegistrationReport:
    """Register x-sorted bins of the source independently onto the full
    target; one transform per bin.

    With partitions=1 this is exactly csn_icp. For multiple bins the
    centroid pre-alignment is disabled (aligning a bin's centroid to the
    whole target would mis-center it). The reported trace is the RMSE of
    the union of the transformed bins, with bins that converge early held
    at their final pose.
    """
    config = config or CsnIcpConfig()
    if config.partitions == 1:
        return csn_icp(source, target, config)
    bins = partition_indices(source, config.partitions)
    if min(b.size for b in bins) < config.k:
        raise DegenerateGeometryError(
            f"a partition holds fewer than k={config.k} points")
    sub_config = replace(config, partitions=1, center_align=False,
                         record_correspondences=False)
    reports = [csn_icp(PointCloud(source.points[b]), target, sub_config) for b in bins]
    sizes = np.array([b.size for b in bins], dtype=float)
    iters = max(r.iterations_used for r in reports)
    tgt_index = SpatialIndex(target)
    per_bin = []
    for b, rep in zip(bins, reports):
        vals = list(rep.per_iteration_rmse)
        if not vals:
            vals = [metrics.nn_rmse(rep.final_transforms[0].apply(source.points[b]), tgt_index)]
        vals += [vals[-1]] * (iters - len(vals))
        per_bin.append(np.array(vals[:iters]) if iters else np.zeros(0))
    if iters:
        ms = np.array([v * v for v in per_bin])
        trace = list(np.sqrt((sizes[:, None] * ms).sum(axis=0) / sizes.sum()))
    else:
        trace = []
    return RegistrationReport(
        per_iteration_rmse=trace,
        final_transforms=[r.final_transforms[0] for r in reports],
        accepted_pairs=sum(r.accepted_pairs for r in reports),
        rejected_pairs=sum(r.rejected_pairs for r in reports),
        converged=all(r.converged for r in reports),
        iterations_used=iters,
    )
