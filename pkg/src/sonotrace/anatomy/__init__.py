"""Segmentation ingest and sparse scene construction."""

from .grid import SparseLabelGrid, build_sparse_grid, label_at
from .scene import AnatomyBuilder, AnatomyVolume, build_anatomy, load_anatomy, save_anatomy
from .sdf import NarrowBandSdf, NoNormalAvailable, build_sdf, surface_normal
from .volume import (SegmentationVolume, TissueProperties, load_segmentation,
                     load_tissue_table, save_segmentation, save_tissue_table)

__all__ = [
    "AnatomyBuilder", "AnatomyVolume", "NarrowBandSdf", "NoNormalAvailable",
    "SegmentationVolume", "SparseLabelGrid", "TissueProperties", "build_anatomy",
    "build_sdf", "build_sparse_grid", "label_at", "load_anatomy", "load_segmentation",
    "load_tissue_table", "save_anatomy", "save_segmentation", "save_tissue_table",
    "surface_normal",
]
