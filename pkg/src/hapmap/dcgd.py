"""Depth-cut based ground detection (DCGD).

The depth image is sliced into bins of width dz along the optical axis.
Within each bin, the lowest 3D point of every column forms a cut curve.
Cut entries near the ground elevation are concave (ground candidates);
entries rising above it are convex (objects) and are stripped together
with everything above them in their column/bin cell.  Iterating the cuts
from near to far accumulates the ground pixel mask.

The concave/convex criterion used here: a per-cut baseline found as the
median of unclaimed entry elevations, with entries claimed as object when
they exceed the baseline by more than ``baseline_tol``.  A global
low-percentile elevation prior seeds the claims so that cuts seeing only
object surfaces (no ground in the bin) are rejected whole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthio import DepthFrame, Intrinsics


@dataclass(frozen=True)
class DcgdParams:
    z0: float = 800.0
    zf: float = 4000.0
    dz: float = 50.0
    baseline_tol: float = 50.0
    #: pixels within a concave cell count as ground when their elevation is
    #: within include_tol of the cell entry (the cell's lowest point);
    #: 20mm clears Kinect-scale elevation noise (~4mm sigma) while keeping
    #: the floor-level strip at the bottom of object fronts out of the mask
    include_tol: float = 20.0

    def __post_init__(self):
        if self.z0 >= self.zf:
            raise ValueError("z0 must be below zf")
        if self.dz <= 0 or self.baseline_tol <= 0 or self.include_tol <= 0:
            raise ValueError("dz and tolerances must be positive")

    @property
    def n_cuts(self) -> int:
        return int(np.floor((self.zf - self.z0) / self.dz)) + 1


@dataclass
class DepthCut:
    """Per-column lowest points at slice depth z: rows[c] = -1, y[c] = nan
    where the column has no pixel in the bin."""

    index: int
    z: float
    rows: np.ndarray    # (width,) int32
    y: np.ndarray       # (width,) float64, elevation in mm (y up)

    @property
    def columns(self) -> np.ndarray:
        return np.flatnonzero(self.rows >= 0)

    @property
    def is_empty(self) -> bool:
        return not np.any(self.rows >= 0)


@dataclass(frozen=True)
class SubCut:
    start: int          # first column, inclusive
    end: int            # last column, inclusive
    kind: str           # "concave" | "convex"
    y: np.ndarray       # entry elevations over the span's columns

    def __post_init__(self):
        if self.kind not in ("concave", "convex"):
            raise ValueError("kind must be concave or convex")


def _pixel_geometry(frame: DepthFrame, k: Intrinsics, z0: float, zf: float,
                    dz: float):
    """Per-pixel (z, y, bin) arrays; bin = -1 outside [z0, zf] or invalid."""
    z = frame.data.astype(np.float64) * k.depth_scale
    vs = np.arange(frame.height, dtype=np.float64)[:, None]
    y = (k.cy - vs) * z / k.fy
    n = int(np.floor((zf - z0) / dz))
    # nearest-bin assignment; the half-up tie break keeps |z - z_i| <= dz/2
    bins = np.floor((z - z0) / dz + 0.5).astype(np.int64)
    bad = (frame.data == 0) | (bins < 0) | (bins > n)
    bins[bad] = -1
    return z, y, bins


def compute_depth_cuts(frame: DepthFrame, k: Intrinsics, z0: float = 800.0,
                       zf: float = 4000.0, dz: float = 50.0) -> list[DepthCut]:
    """All n+1 cuts for z_i = z0 + i*dz, zf = z0 + n*dz (cuts may be empty).

    A pixel joins cut i when |z - z_i| <= dz/2; per column the entry is the
    pixel with the minimal back-projected y.
    """
    if z0 >= zf or dz <= 0:
        raise ValueError("need z0 < zf and dz > 0")
    _, y, bins = _pixel_geometry(frame, k, z0, zf, dz)
    n = int(np.floor((zf - z0) / dz))
    cuts = []
    for i in range(n + 1):
        mask = bins == i
        ycol = np.where(mask, y, np.inf)
        rows = np.argmin(ycol, axis=0).astype(np.int32)
        occupied = mask.any(axis=0)
        rows[~occupied] = -1
        yentry = np.where(occupied, ycol[rows, np.arange(frame.width)], np.nan)
        cuts.append(DepthCut(index=i, z=z0 + i * dz, rows=rows, y=yentry))
    return cuts


def split_subcuts(cut: DepthCut, baseline_tol: float = 50.0,
                  ground_prior: float | None = None) -> list[SubCut]:
    """Split a cut into maximal concave/convex column runs.

    The baseline is the median elevation of entries not claimed as object;
    claims start from the optional ground_prior (entries above
    prior + tol) and grow by re-running the median until stable.  Runs
    break at unoccupied columns and at kind changes.
    """
    cols = cut.columns
    if cols.size == 0:
        raise ValueError("cut has no entries")
    yv = cut.y[cols]
    claimed = np.zeros(cols.size, dtype=bool)
    if ground_prior is not None:
        claimed = yv > ground_prior + baseline_tol
    while not claimed.all():
        baseline = np.median(yv[~claimed])
        newly = yv > baseline + baseline_tol
        if not np.any(newly & ~claimed):
            break
        claimed |= newly

    subcuts = []
    run_start = 0
    for idx in range(1, cols.size + 1):
        boundary = (idx == cols.size
                    or cols[idx] != cols[idx - 1] + 1
                    or claimed[idx] != claimed[idx - 1])
        if boundary:
            kind = "convex" if claimed[run_start] else "concave"
            subcuts.append(SubCut(start=int(cols[run_start]),
                                  end=int(cols[idx - 1]), kind=kind,
                                  y=yv[run_start:idx].copy()))
            run_start = idx
    return subcuts


def detect_ground(frame: DepthFrame, k: Intrinsics,
                  params: DcgdParams = DcgdParams()) -> np.ndarray:
    """Ground pixel mask over the frame (bool, frame shape).

    Pixels belong to the ground when their column/bin cell has a concave
    entry and their own elevation is within include_tol of that entry.
    Convex cells contribute nothing: the entry and everything above it in
    the cell stays excluded.
    """
    mask = np.zeros((frame.height, frame.width), dtype=bool)
    _, y, bins = _pixel_geometry(frame, k, params.z0, params.zf, params.dz)
    in_band = bins >= 0
    if not in_band.any():
        return mask

    # Elevation prior: the ground is the lowest surface in view.
    prior = float(np.percentile(y[in_band], 2.0))

    for cut in compute_depth_cuts(frame, k, params.z0, params.zf, params.dz):
        if cut.is_empty:
            continue
        for sub in split_subcuts(cut, params.baseline_tol, ground_prior=prior):
            if sub.kind != "concave":
                continue
            span = slice(sub.start, sub.end + 1)
            cell = (bins[:, span] == cut.index)
            low = y[:, span] <= cut.y[span][None, :] + params.include_tol
            mask[:, span] |= cell & low
    return mask


def ground_elevation(frame: DepthFrame, k: Intrinsics,
                     mask: np.ndarray) -> float:
    """Detected ground elevation: median y over the mask's pixels (mm)."""
    if not mask.any():
        raise ValueError("empty ground mask")
    z = frame.data.astype(np.float64) * k.depth_scale
    vs = np.arange(frame.height, dtype=np.float64)[:, None]
    y = (k.cy - vs) * z / k.fy
    return float(np.median(y[mask]))
