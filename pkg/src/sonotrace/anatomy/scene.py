"""The ray-traceable scene: sparse labels, per-label SDF bands, tissues.

Scenes serialize to a single binary container::

    b"SVDB" | u32 version | u32 header length | JSON header | array blobs

The header lists every array (name, dtype, shape, byte offset relative to
the end of the header) so a scene can be loaded without re-sweeping.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import check_int
from .grid import DEFAULT_TILE_SIZE, SparseLabelGrid, build_sparse_grid, label_at
from .sdf import (DEFAULT_BAND_HALFWIDTH, NarrowBandSdf, NoNormalAvailable, build_sdf,
                  surface_normal)
from .volume import SegmentationVolume, TissueProperties

SVDB_MAGIC = b"SVDB"
SVDB_VERSION = 1


@dataclass(frozen=True)
class PackedScene:
    """Flat arrays consumed by the numba tracing kernels.

    ``label_slot`` maps a label to its row in the per-label tables (-1 if
    the label has no SDF).  SDF tiles of all labels share ``sdf_data``;
    ``sdf_index[s]`` is the tile table of slot ``s``.
    """

    tile_size: int
    origin: np.ndarray
    spacing: np.ndarray
    dims: np.ndarray
    label_index: np.ndarray
    label_data: np.ndarray
    label_slot: np.ndarray
    sdf_index: np.ndarray
    sdf_data: np.ndarray
    z: np.ndarray
    alpha: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True, eq=False)
class AnatomyVolume:
    """Immutable scene shared read-only by every tracing thread."""

    label_grid: SparseLabelGrid
    sdfs: dict
    tissues: dict

    def __post_init__(self):
        if 0 not in self.tissues:
            raise ValueError("tissue table needs an entry for background label 0")
        present = {int(v) for v in np.unique(self.label_grid.tile_data)} - {0}
        for lab in sorted(present):
            if lab not in self.tissues:
                raise ValueError(f"label {lab} has no tissue properties")
            if lab not in self.sdfs:
                raise ValueError(f"label {lab} has no SDF")

    @property
    def spacing(self):
        return self.label_grid.spacing

    @property
    def origin(self):
        return self.label_grid.origin

    @property
    def dims(self):
        return self.label_grid.dims

    @property
    def extent(self):
        return self.origin + np.asarray(self.dims) * self.spacing

    def label_at(self, point):
        return label_at(self.label_grid, point)

    def surface_normal(self, label, point):
        """SDF normal of ``label`` at ``point``; raises if unavailable."""
        if label not in self.sdfs:
            raise NoNormalAvailable(f"label {label} has no SDF")
        return surface_normal(self.sdfs[label], point)

    @cached_property
    def packed(self):
        max_label = max(max(self.tissues), int(self.label_grid.tile_data.max(initial=0)))
        label_slot = np.full(max_label + 1, -1, dtype=np.int32)
        ts = self.label_grid.tile_size
        nt = self.label_grid.tile_index.shape
        labels = sorted(self.sdfs)
        sdf_index = np.full((max(len(labels), 1),) + nt, -1, dtype=np.int32)
        chunks = []
        offset = 0
        for slot, lab in enumerate(labels):
            sdf = self.sdfs[lab]
            label_slot[lab] = slot
            idx = sdf.tile_index.copy()
            idx[idx >= 0] += offset
            sdf_index[slot] = idx
            chunks.append(sdf.tile_data)
            offset += len(sdf.tile_data)
        if chunks:
            sdf_data = np.ascontiguousarray(np.concatenate(chunks), dtype=np.float32)
        else:
            sdf_data = np.zeros((0, ts, ts, ts), dtype=np.float32)

        def table(attr, default):
            out = np.full(max_label + 1, default, dtype=np.float64)
            for lab, t in self.tissues.items():
                out[lab] = getattr(t, attr)
            return out

        return PackedScene(
            tile_size=ts, origin=self.origin.astype(np.float64),
            spacing=self.spacing.astype(np.float64), dims=np.asarray(self.dims, dtype=np.int64),
            label_index=self.label_grid.tile_index,
            label_data=np.ascontiguousarray(self.label_grid.tile_data, dtype=np.uint16),
            label_slot=label_slot, sdf_index=sdf_index, sdf_data=sdf_data,
            z=table("z", 1.0), alpha=table("alpha", 0.0), c=table("c", 1540.0),
            tau=table("tau", 1.0), gamma=table("gamma", 0.0),
        )

    def save(self, path):
        save_anatomy(self, path)

    @classmethod
    def load(cls, path):
        return load_anatomy(path)


def build_anatomy(seg, tissues, tile_size=DEFAULT_TILE_SIZE, band_halfwidth=DEFAULT_BAND_HALFWIDTH,
                  n_jobs=1):
    """Preprocess a segmentation into an :class:`AnatomyVolume`.

    SDF bands of different labels are independent and are built on
    ``n_jobs`` threads.
    """
    seg.check_tissues(tissues)
    grid = build_sparse_grid(seg, tile_size)
    labels = [lab for lab in seg.present_labels() if lab != 0]

    def one(lab):
        return lab, build_sdf(seg, lab, band_halfwidth, tile_size)

    if n_jobs == 1 or len(labels) < 2:
        sdfs = dict(map(one, labels))
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs == -1 else n_jobs) as pool:
            sdfs = dict(pool.map(one, labels))
    return AnatomyVolume(grid, sdfs, dict(tissues))


class AnatomyBuilder(BaseEstimator):
    """Estimator-style wrapper around :func:`build_anatomy`.

    Parameters
    ----------
    tile_size : int
        Voxels per tile edge of the sparse grid.
    band_halfwidth : int
        SDF band half-width in voxels.
    n_jobs : int
        Threads used for per-label SDF construction (-1 for all cores).
    """

    def __init__(self, tile_size=DEFAULT_TILE_SIZE, band_halfwidth=DEFAULT_BAND_HALFWIDTH, n_jobs=1):
        self.tile_size = tile_size
        self.band_halfwidth = band_halfwidth
        self.n_jobs = n_jobs

    def fit(self, segmentation, tissues):
        check_int(self.tile_size, "tile_size", 2)
        check_int(self.band_halfwidth, "band_halfwidth", 1)
        if not isinstance(segmentation, SegmentationVolume):
            raise TypeError("segmentation must be a SegmentationVolume")
        self.anatomy_ = build_anatomy(segmentation, tissues, self.tile_size,
                                      self.band_halfwidth, self.n_jobs)
        self.n_labels_ = len(self.anatomy_.sdfs)
        self.n_tiles_ = self.anatomy_.label_grid.num_tiles
        return self

    def transform(self, segmentation, tissues):
        return build_anatomy(segmentation, tissues, self.tile_size, self.band_halfwidth, self.n_jobs)


def _array_entry(name, arr, offset):
    return {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
            "offset": offset, "nbytes": int(arr.nbytes)}


def save_anatomy(anatomy, path):
    """Write ``anatomy`` to a single SVDB container."""
    grid = anatomy.label_grid
    arrays = [("label_index", grid.tile_index), ("label_data", grid.tile_data)]
    sdf_meta = []
    for lab in sorted(anatomy.sdfs):
        sdf = anatomy.sdfs[lab]
        arrays.append((f"sdf{lab}_index", sdf.tile_index))
        arrays.append((f"sdf{lab}_data", sdf.tile_data))
        sdf_meta.append({"label": lab, "band_halfwidth": sdf.band_halfwidth})
    entries = []
    offset = 0
    for name, arr in arrays:
        entries.append(_array_entry(name, np.ascontiguousarray(arr), offset))
        offset += arr.nbytes
    header = {
        "dims": list(grid.dims), "spacing_mm": [float(v) for v in grid.spacing],
        "origin_mm": [float(v) for v in grid.origin], "tile_size": grid.tile_size,
        "tissues": {str(k): v.to_json() for k, v in sorted(anatomy.tissues.items())},
        "sdfs": sdf_meta, "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SVDB_MAGIC)
        fh.write(struct.pack("<II", SVDB_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())
    return Path(path)


def load_anatomy(path):
    """Read an SVDB container written by :func:`save_anatomy`."""
    raw = Path(path).read_bytes()
    if raw[:4] != SVDB_MAGIC:
        raise ValueError(f"{path} is not an SVDB scene (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != SVDB_VERSION:
        raise ValueError(f"unsupported SVDB version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"SVDB payload truncated in array {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    dims = tuple(header["dims"])
    spacing = np.asarray(header["spacing_mm"], dtype=np.float64)
    origin = np.asarray(header["origin_mm"], dtype=np.float64)
    ts = int(header["tile_size"])
    grid = SparseLabelGrid(ts, dims, spacing, origin, arrays["label_index"], arrays["label_data"])
    sdfs = {}
    for meta in header["sdfs"]:
        lab = int(meta["label"])
        sdfs[lab] = NarrowBandSdf(lab, int(meta["band_halfwidth"]), dims, spacing.copy(), origin.copy(),
                                  ts, arrays[f"sdf{lab}_index"], arrays[f"sdf{lab}_data"])
    tissues = {int(k): TissueProperties.from_json(v) for k, v in header["tissues"].items()}
    return AnatomyVolume(grid, sdfs, tissues)
