"""Evaluation metrics: confusion-matrix overlap scores, point-cloud RMSE,
and slice-level region disagreement computed on resliced masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cloud import PointCloud
from .geometry import SpatialIndex
from .mask_io import SliceMask


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: SliceMask, truth: SliceMask) -> ConfusionCounts:
    """Per-pixel classification counts of pred against truth."""
    if pred.bits.shape != truth.bits.shape:
        raise ValueError("mask dimensions differ")
    p = pred.bits.astype(bool)
    t = truth.bits.astype(bool)
    return ConfusionCounts(tp=int((p & t).sum()), fp=int((p & ~t).sum()),
                           fn=int((~p & t).sum()), tn=int((~p & ~t).sum()))


def iou(c: ConfusionCounts) -> float:
    den = c.tp + c.fn + c.fp
    if den == 0:
        raise ValueError("IOU undefined: both masks are empty")
    return c.tp / den


def dice(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fn + c.fp
    if den == 0:
        raise ValueError("Dice undefined: both masks are empty")
    return 2 * c.tp / den


def nn_rmse(points: np.ndarray, target_index: SpatialIndex) -> float:
    """Root mean squared nearest-neighbor distance from points to the
    indexed cloud."""
    d, _ = target_index._tree.query(np.asarray(points, dtype=float), k=1)
    return float(np.sqrt(np.mean(d * d)))


def rmse(moving: PointCloud, target: PointCloud,
         target_index: SpatialIndex | None = None) -> float:
    """Registration residual: for every moving point, the distance to its
    nearest target point, root-mean-squared over the moving cloud only."""
    if len(moving) == 0 or len(target) == 0:
        raise ValueError("empty cloud")
    if target_index is None:
        target_index = SpatialIndex(target)
    return nn_rmse(moving.points, target_index)


def binary_close(bits: np.ndarray, iterations: int = 2) -> np.ndarray:
    """Morphological closing with a 3x3 square element: dilate then erode,
    out-of-bounds treated as background."""
    if iterations <= 0:
        return bits.astype(np.uint8)
    st = np.ones((3, 3), dtype=bool)
    b = ndimage.binary_dilation(bits.astype(bool), st, iterations=iterations)
    b = ndimage.binary_erosion(b, st, iterations=iterations, border_value=0)
    return b.astype(np.uint8)


@dataclass(frozen=True)
class RasterGrid:
    """Pixel grid for reslicing; origin is the low corner of pixel (0, 0)
    in cloud x-y coordinates."""

    width: int
    height: int
    pixel_pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel pitch must be positive")


def reslice(cloud: PointCloud, z_center: float, thickness: float,
            grid: RasterGrid, closing_iterations: int = 2) -> SliceMask:
    """Rasterize the points inside a z band to a region mask.

    Points with |z - z_center| <= thickness/2 land in their containing
    pixel; a morphological closing then fills small interior gaps.
    Points outside the grid are dropped.
    """
    if not thickness > 0:
        raise ValueError("thickness must be positive")
    pts = cloud.points
    band = np.abs(pts[:, 2] - z_center) <= thickness / 2.0
    ix = np.floor((pts[band, 0] - grid.origin[0]) / grid.pixel_pitch).astype(int)
    iy = np.floor((pts[band, 1] - grid.origin[1]) / grid.pixel_pitch).astype(int)
    ok = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    bits = np.zeros((grid.height, grid.width), dtype=np.uint8)
    bits[iy[ok], ix[ok]] = 1
    return SliceMask(binary_close(bits, closing_iterations), z_index=0)


def d_mr_d_ct(mr_mask: SliceMask, ct_mask: SliceMask) -> tuple[float, float]:
    """Fraction of each region lying outside the common registration
    region: (1 - |A_MR & A_CT|/|A_MR|, 1 - |A_MR & A_CT|/|A_CT|)."""
    if mr_mask.bits.shape != ct_mask.bits.shape:
        raise ValueError("mask dimensions differ")
    a_mr = int(mr_mask.bits.sum())
    a_ct = int(ct_mask.bits.sum())
    if a_mr == 0 or a_ct == 0:
        raise ValueError("zero-area mask")
    inter = int((mr_mask.bits & ct_mask.bits).sum())
    return 1.0 - inter / a_mr, 1.0 - inter / a_ct


@dataclass
class OverlapReport:
    """Aggregate slice-overlap scores plus the cloud RMSE. iou and dice
    come from confusion counts summed over all slices; d_mr and d_ct are
    means over the slices where the respective region is non-empty."""

    iou: float
    dice: float
    d_mr: float
    d_ct: float
    rmse: float
    per_slice: list[dict] | None = None


def overlap_report_to_dict(report: OverlapReport) -> dict:
    doc = {
        "iou": float(report.iou),
        "dice": float(report.dice),
        "d_mr": float(report.d_mr),
        "d_ct": float(report.d_ct),
        "rmse": float(report.rmse),
    }
    if report.per_slice is not None:
        doc["slices"] = report.per_slice
    return doc


def evaluate_slices(moving: PointCloud, target: PointCloud,
                    slice_count: int = 8, thickness: float | None = None,
                    pixel_pitch: float | None = None,
                    closing_iterations: int = 2) -> OverlapReport:
    """Reslice both clouds over the joint z range and score the overlap.

    The moving (MR-side) cloud plays the predicted region, the target
    (CT-side) cloud the reference. Bands tile the joint z range; the
    default thickness equals the band step, the default pixel pitch is
    1/128 of the larger x-y extent.
    """
    if slice_count < 1:
        raise ValueError("slice_count must be at least 1")
    rmse_value = rmse(moving, target)
    all_pts = np.vstack([moving.points, target.points])
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    z_span = hi[2] - lo[2]
    step = z_span / slice_count if z_span > 0 else 1.0
    if thickness is None:
        thickness = step
    if pixel_pitch is None:
        extent = max(hi[0] - lo[0], hi[1] - lo[1])
        pixel_pitch = extent / 128.0 if extent > 0 else 1.0
    margin = closing_iterations + 1
    width = int(np.floor((hi[0] - lo[0]) / pixel_pitch)) + 1 + 2 * margin
    height = int(np.floor((hi[1] - lo[1]) / pixel_pitch)) + 1 + 2 * margin
    grid = RasterGrid(width, height, pixel_pitch,
                      (lo[0] - margin * pixel_pitch, lo[1] - margin * pixel_pitch))
    agg = np.zeros(4, dtype=np.int64)
    rows = []
    mr_vals = []
    ct_vals = []
    for i in range(slice_count):
        z_center = lo[2] + (i + 0.5) * step
        mr = reslice(moving, z_center, thickness, grid, closing_iterations)
        ct = reslice(target, z_center, thickness, grid, closing_iterations)
        c = confusion(mr, ct)
        agg += (c.tp, c.fp, c.fn, c.tn)
        a_mr = int(mr.bits.sum())
        a_ct = int(ct.bits.sum())
        inter = int((mr.bits & ct.bits).sum())
        row = {"z_center": float(z_center), "a_mr": a_mr, "a_ct": a_ct}
        if a_mr > 0:
            row["d_mr"] = 1.0 - inter / a_mr
            mr_vals.append(row["d_mr"])
        if a_ct > 0:
            row["d_ct"] = 1.0 - inter / a_ct
            ct_vals.append(row["d_ct"])
        rows.append(row)
    total = ConfusionCounts(*(int(x) for x in agg))
    if not mr_vals or not ct_vals:
        raise ValueError("no slice contains bone content")
    return OverlapReport(iou=iou(total), dice=dice(total),
                         d_mr=float(np.mean(mr_vals)), d_ct=float(np.mean(ct_vals)),
                         rmse=rmse_value, per_slice=rows)
