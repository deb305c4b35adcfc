"""Trapezoid pin-grid synthesis: the tactile rendering of the scene.

The synthesis area is a uniformly scaled top view of the camera's
ground-plane view field: a trapezoid whose small basis (the near depth
plane) spans ``small_basis`` pins, so world coordinates map through one
scale factor.  Pins take five levels: 0 holes, 1 ground, 2 object
footprints, and 2..4 for glyph dots driven by the object's height class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .depthio import Intrinsics
from .labeling import GlyphSheet, ObjectDescriptor, builtin_sheet, glyph_for, label_level

INACTIVE = -1
ASCII_INACTIVE = "·"   # middle dot


class FrustumError(ValueError):
    pass


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AreaGeometry:
    """Mapping constants between the ground plane (mm) and the pin grid.

    half_tan is tan of half the horizontal field of view, width/(2 fx);
    the near-plane view-field width is d = 2 * near * half_tan and the
    grid scale is small_basis / d pins per millimeter.
    """

    near: float = 800.0
    far: float = 4000.0
    half_tan: float = 640.0 / (2.0 * 575.8)
    small_basis: int = 24
    rows: int = 96
    cols: int = 120

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.half_tan <= 0:
            raise ValueError("field of view must be positive")
        if self.small_basis <= 0 or self.rows <= 0 or self.cols <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.small_basis * self.far / self.near > self.cols:
            raise ValueError("far basis exceeds the grid width")
        if self.v_max > self.rows - 1:
            raise ValueError("depth extent exceeds the grid height")

    @property
    def hfov(self) -> float:
        return 2.0 * math.atan(self.half_tan)

    @property
    def near_width(self) -> float:
        """View-field width at the near plane, mm (the trapezoid small basis)."""
        return 2.0 * self.near * self.half_tan

    @property
    def scale(self) -> float:
        """Pins per millimeter."""
        return self.small_basis / self.near_width

    @property
    def v_max(self) -> int:
        return _round_half_up(self.scale * (self.far - self.near))

    @classmethod
    def from_intrinsics(cls, k: Intrinsics, width: int, near: float = 800.0,
                        far: float = 4000.0, small_basis: int = 24,
                        rows: int = 96, cols: int = 120) -> "AreaGeometry":
        return cls(near=near, far=far, half_tan=width / (2.0 * k.fx),
                   small_basis=small_basis, rows=rows, cols=cols)


def map_continuous(x: float, z: float, g: AreaGeometry) -> tuple[float, float]:
    """Unrounded pin coordinates: u centered on the grid, v measured from near."""
    return g.scale * x + g.cols / 2.0, g.scale * (z - g.near)


def map_to_area(x: float, z: float, g: AreaGeometry) -> tuple[int, int]:
    """Map a ground-plane point (mm) to its pin, rounding half up.

    Raises FrustumError for points outside the view field; results are
    clamped into the grid so frustum-edge points land on boundary pins.
    """
    tol = 1e-9 * max(abs(x), abs(z), 1.0)
    if not (g.near - tol <= z <= g.far + tol) or abs(x) > z * g.half_tan + tol:
        raise FrustumError("outside view field")
    uf, vf = map_continuous(x, z, g)
    u = min(max(_round_half_up(uf), 0), g.cols - 1)
    v = min(max(_round_half_up(vf), 0), g.rows - 1)
    return u, v


def trapezoid_mask(g: AreaGeometry) -> np.ndarray:
    """Active-pin mask: pins whose rounding pre-image meets the view field."""
    mask = np.zeros((g.rows, g.cols), dtype=bool)
    for v in range(g.v_max + 1):
        z_hi = min(g.far, g.near + (v + 0.5) / g.scale)
        half = g.scale * z_hi * g.half_tan
        lo = max(_round_half_up(g.cols / 2.0 - half), 0)
        hi = min(_round_half_up(g.cols / 2.0 + half), g.cols - 1)
        mask[v, lo:hi + 1] = True
    return mask


@dataclass
class PinGrid:
    cells: np.ndarray   # (rows, cols) int8; -1 inactive, else level 0..4

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2:
            raise ValueError("grid must be 2-D")
        if cells.size and (cells.min() < INACTIVE or cells.max() > 4):
            raise ValueError("pin levels must lie in -1..4")
        self.cells = cells

    @property
    def active(self) -> np.ndarray:
        return self.cells != INACTIVE

    @classmethod
    def empty(cls, g: AreaGeometry) -> "PinGrid":
        cells = np.full((g.rows, g.cols), INACTIVE, dtype=np.int8)
        cells[trapezoid_mask(g)] = 1   # ground level everywhere in view
        return cls(cells)

    def __eq__(self, other):
        return isinstance(other, PinGrid) and np.array_equal(self.cells, other.cells)


# ---------------------------------------------------------------------------
# Polygon helpers
# ---------------------------------------------------------------------------

def clip_polygon_to_frustum(poly: np.ndarray, g: AreaGeometry) -> np.ndarray:
    """Sutherland-Hodgman clip of an (x, z) polygon against the view field."""
    planes = (
        lambda p: p[1] - g.near,                    # z >= near
        lambda p: g.far - p[1],                     # z <= far
        lambda p: p[1] * g.half_tan - p[0],         # x <= z tan
        lambda p: p[1] * g.half_tan + p[0],         # x >= -z tan
    )
    pts = [np.asarray(p, dtype=np.float64) for p in np.asarray(poly).reshape(-1, 2)]
    for side in planes:
        if not pts:
            break
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            f_cur, f_prev = side(cur), side(prev)
            if f_prev >= 0 and f_cur >= 0:
                out.append(cur)
            elif f_prev >= 0 or f_cur >= 0:
                t = f_prev / (f_prev - f_cur)
                out.append(prev + t * (cur - prev))
                if f_cur >= 0:
                    out.append(cur)
        pts = out
    return np.array(pts).reshape(-1, 2)


def _fill_polygon(cells: np.ndarray, active: np.ndarray, poly_uv: np.ndarray,
                  level: int, mode: str) -> None:
    """Scanline fill over pin centers; boundary pins included."""
    if poly_uv.shape[0] < 3:
        return
    eps = 1e-9
    v_lo = max(int(math.ceil(poly_uv[:, 1].min() - eps)), 0)
    v_hi = min(int(math.floor(poly_uv[:, 1].max() + eps)), cells.shape[0] - 1)
    m = poly_uv.shape[0]
    for v in range(v_lo, v_hi + 1):
        us = []
        for i in range(m):
            pu, pv = poly_uv[i]
            qu, qv = poly_uv[(i + 1) % m]
            if (pv - v) * (qv - v) <= 0:
                if pv == qv:
                    us.extend((pu, qu))
                else:
                    us.append(pu + (v - pv) * (qu - pu) / (qv - pv))
        if not us:
            continue
        lo = max(int(math.ceil(min(us) - eps)), 0)
        hi = min(int(math.floor(max(us) + eps)), cells.shape[1] - 1)
        if lo > hi:
            continue
        span = slice(lo, hi + 1)
        row_active = active[v, span]
        if mode == "max":
            cells[v, span] = np.where(row_active,
                                      np.maximum(cells[v, span], level),
                                      cells[v, span])
        else:
            cells[v, span] = np.where(row_active, level, cells[v, span])


def _map_polygon(poly_xz: np.ndarray, g: AreaGeometry) -> np.ndarray:
    uv = np.empty_like(np.asarray(poly_xz, dtype=np.float64))
    for i, (x, z) in enumerate(poly_xz):
        uv[i] = map_continuous(x, z, g)
    return uv


def clamp_into_frustum(x: float, z: float, g: AreaGeometry) -> tuple[float, float]:
    z = min(max(z, g.near), g.far)
    lim = z * g.half_tan
    return min(max(x, -lim), lim), z


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize_scene(ground_holes, objects: list[ObjectDescriptor],
                    g: AreaGeometry, sheet: GlyphSheet | None = None) -> PinGrid:
    """Compose the tactile scene: ground 1, holes 0, footprints 2, glyphs 2..4.

    Hole footprints and object footprints are (x, z) polygons in mm;
    objects outside the view field are clipped.  Overlaps take the maximum
    level, so object order does not matter.  Objects with a gated-off
    class get their footprint only; accepted classes also stamp their
    glyph centered on the mapped barycenter, clipped at the trapezoid
    border rather than shifted.
    """
    if sheet is None:
        sheet = builtin_sheet()
    grid = PinGrid.empty(g)
    active = grid.active

    for hole in ground_holes:
        poly = clip_polygon_to_frustum(np.asarray(hole, dtype=np.float64), g)
        if poly.shape[0] >= 3:
            _fill_polygon(grid.cells, active, _map_polygon(poly, g), 0, "set")

    for obj in objects:
        if not obj.footprint.degenerate:
            poly = clip_polygon_to_frustum(obj.footprint.hull, g)
            if poly.shape[0] >= 3:
                _fill_polygon(grid.cells, active, _map_polygon(poly, g), 2, "max")
        if obj.label is None:
            continue
        glyph = glyph_for(obj.label, obj.stairs_dir, sheet)
        level = label_level(obj.geometry.height_class)
        bx, _, bz = obj.footprint.barycenter
        u0, v0 = map_to_area(*clamp_into_frustum(bx, bz, g), g)
        bitmap = glyph.as_array()
        for r in range(bitmap.shape[0]):
            for c in range(bitmap.shape[1]):
                if not bitmap[r, c]:
                    continue
                u = u0 + (c - 2)
                v = v0 + (2 - r)      # glyph top row points away from the user
                if 0 <= v < g.rows and 0 <= u < g.cols and active[v, u]:
                    grid.cells[v, u] = max(grid.cells[v, u], level)
    return grid


def rasterize_raw(cloud: np.ndarray, g: AreaGeometry,
                  ground_y: float | None = None, n_levels: int = 5,
                  max_height: float = 2000.0) -> PinGrid:
    """Map raw points straight onto the grid, pin level from height bands.

    Heights above ground quantize into n_levels - 1 equal bands over
    [0, max_height] (ground itself is band 0, level 1); each pin keeps the
    maximum level of the points that land on it.  Points outside the view
    field are dropped; when ground_y is not given, the 2nd percentile of
    the cloud's elevations stands in for the ground.
    """
    if n_levels < 2 or n_levels > 5:
        raise ValueError("n_levels must lie in 2..5")
    grid = PinGrid.empty(g)
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return grid
    if ground_y is None:
        ground_y = float(np.percentile(pts[:, 1], 2.0))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    keep = (z >= g.near) & (z <= g.far) & (np.abs(x) <= z * g.half_tan)
    x, y, z = x[keep], y[keep], z[keep]
    if x.size == 0:
        return grid
    u = np.clip(np.floor(g.scale * x + g.cols / 2.0 + 0.5).astype(int), 0, g.cols - 1)
    v = np.clip(np.floor(g.scale * (z - g.near) + 0.5).astype(int), 0, g.rows - 1)
    band = max_height / (n_levels - 1)
    h = np.maximum(y - ground_y, 0.0)
    level = 1 + np.minimum(np.floor(h / band), n_levels - 2).astype(np.int8)
    active = grid.active
    ok = active[v, u]
    np.maximum.at(grid.cells, (v[ok], u[ok]), level[ok])
    return grid


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def emit(grid: PinGrid, format: str) -> bytes:
    """Serialize the grid: json round-trips, ascii for eyes, pgm for viewers.

    pgm bytes are 0 for inactive pins and 40 + 50 * level otherwise.
    """
    rows, cols = grid.cells.shape
    if format == "json":
        doc = {"rows": rows, "cols": cols,
               "cells": [int(c) for c in grid.cells.ravel()]}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")
    if format == "ascii":
        lines = []
        for row in grid.cells:
            lines.append("".join(ASCII_INACTIVE if c == INACTIVE else str(int(c))
                                 for c in row))
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "pgm":
        body = np.where(grid.cells == INACTIVE, 0,
                        40 + 50 * grid.cells.astype(np.int16)).astype(np.uint8)
        header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
        return header + body.tobytes()
    raise ValueError(f"unknown format {format!r}")


def parse_grid_json(blob: bytes) -> PinGrid:
    doc = json.loads(blob.decode("utf-8"))
    cells = np.array(doc["cells"], dtype=np.int8).reshape(doc["rows"], doc["cols"])
    return PinGrid(cells)
