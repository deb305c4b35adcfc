"""End-to-end orchestration: depth frame in, tactile pin grid plus report out."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import dcgd, depthio, geomfeat, segment as seg
from .config import PipelineConfig
from .labeling import ObjectDescriptor, parse_glyph_sheet, builtin_sheet, stairs_direction
from .synthgrid import AreaGeometry, PinGrid, emit, map_to_area, clamp_into_frustum, rasterize_scene

REPORT_HEADER = "# segment\tclass\theight_mm\tarea_m2\theight_class\tarea_class\tpin"


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class PipelineResult:
    grid: PinGrid
    emitted: bytes
    report: str
    descriptors: list[ObjectDescriptor]
    pins: list[tuple[int, int]]
    ground_mask: np.ndarray


def _class_cell(desc: ObjectDescriptor) -> str:
    if desc.label is not None:
        if desc.label == "stairs":
            return f"stairs_{desc.stairs_dir}"
        return desc.label
    if desc.confidence is not None:
        return f"rejected(p={desc.confidence:.2f})"
    return "none"


def format_report(descriptors, pins) -> str:
    lines = [REPORT_HEADER]
    for desc, (u, v) in zip(descriptors, pins):
        g = desc.geometry
        lines.append("\t".join([
            str(desc.segment_id),
            _class_cell(desc),
            f"{g.height_mm:.1f}",
            f"{g.area_m2:.4f}",
            str(g.height_class),
            str(g.area_class),
            f"{u},{v}",
        ]))
    return "\n".join(lines) + "\n"


def run_pipeline(config: PipelineConfig, depth_path: str | Path) -> PipelineResult:
    """Run every stage on one depth frame.

    Without a model file the pipeline degrades to geometry-only output:
    every object keeps its footprint and geometric classes, no glyphs.
    Given identical config and inputs the result is byte-stable.
    """
    with _stage("depthio"):
        frame = depthio.load_depth_pgm(Path(depth_path).read_bytes())
        if config.intrinsics_path:
            k = depthio.load_intrinsics(Path(config.intrinsics_path).read_text())
        else:
            k = depthio.DEFAULT_INTRINSICS

    with _stage("dcgd"):
        ground = dcgd.detect_ground(frame, k, config.dcgd)

    with _stage("segment"):
        cloud = depthio.backproject(frame, k)
        flat_valid = np.flatnonzero(frame.data.ravel())
        on_ground = ground.ravel()[flat_valid]
        in_band = (cloud[:, 2] >= config.zmin) & (cloud[:, 2] <= config.zmax)
        if ground.any():
            ground_y = dcgd.ground_elevation(frame, k, ground)
        elif in_band.any():
            ground_y = float(np.percentile(cloud[in_band, 1], 2.0))
        else:
            ground_y = 0.0
        occupied = cloud[in_band & ~on_ground]
        down = seg.voxel_downsample(occupied, config.voxel_leaf)
        labels = seg.dbscan(down, config.dbscan_eps, config.dbscan_min_pts)
        segments = seg.extract_segments(down, labels)

    with _stage("features"):
        footprints = [geomfeat.footprint(s.points) for s in segments]
        geometries = [
            geomfeat.classify_geometry(
                geomfeat.height_p90(s.points, ground_y),
                fp.area_m2, config.thresholds)
            for s, fp in zip(segments, footprints)
        ]

    model = None
    if config.model_path:
        with _stage("classifier"):
            model = clf.load_model(Path(config.model_path).read_bytes())

    descriptors: list[ObjectDescriptor] = []
    with _stage("classifier"):
        for s, fp, geom in zip(segments, footprints, geometries):
            label = None
            confidence = None
            direction = None
            if model is not None:
                rng = np.random.default_rng([config.seed, s.id])
                pred = clf.predict_gated(model, s.points,
                                         config.confidence_threshold, rng)
                confidence = pred.confidence
                if pred.accepted:
                    label = clf.to_labeling_class(pred.label)
                    if label == "stairs":
                        direction = stairs_direction(s.points, ground_y)
            descriptors.append(ObjectDescriptor(
                segment_id=s.id, footprint=fp, geometry=geom,
                label=label, stairs_dir=direction, confidence=confidence))

    with _stage("synthgrid"):
        sheet = builtin_sheet()
        if config.glyphs_path:
            sheet = parse_glyph_sheet(Path(config.glyphs_path).read_text())
        geometry = AreaGeometry.from_intrinsics(
            k, frame.width, near=config.grid_near, far=config.grid_far,
            small_basis=config.grid_small_basis, rows=config.grid_rows,
            cols=config.grid_cols)
        grid = rasterize_scene([], descriptors, geometry, sheet)
        pins = []
        for desc in descriptors:
            bx, _, bz = desc.footprint.barycenter
            pins.append(map_to_area(*clamp_into_frustum(bx, bz, geometry),
                                    geometry))
        emitted = emit(grid, config.output_format)

    return PipelineResult(grid=grid, emitted=emitted,
                          report=format_report(descriptors, pins),
                          descriptors=descriptors, pins=pins,
                          ground_mask=ground)
