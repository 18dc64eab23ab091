"""Tesseract construction, preprocessing, projections and binary I/O."""

from .build import (
    PreprocessConfig, Tesseract, analytic_bins, build_tesseract, parseval_scale, preprocess,
    preprocess_grid, project_planes, raw_grid,
)
from .grid import ANGLE_DEGREES, ANGLE_SINE, GeometryVolumes, PolarGrid
from .io import read_tesseract, read_volume, write_tesseract, write_volume

__all__ = [
    "PreprocessConfig", "Tesseract", "analytic_bins", "build_tesseract", "parseval_scale",
    "preprocess", "preprocess_grid", "project_planes", "raw_grid", "ANGLE_DEGREES", "ANGLE_SINE",
    "GeometryVolumes", "PolarGrid", "read_tesseract", "read_volume", "write_tesseract",
    "write_volume",
]
