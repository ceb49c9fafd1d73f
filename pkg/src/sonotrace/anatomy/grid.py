"""Two-level tiled voxel storage.

A dense table of tile slots maps each ``tile_size**3`` block to a row in a
packed tile array, or to -1 when the block holds only the empty value.
Only occupied blocks are stored, which is what keeps large mostly-background
scenes small.  The numba lookups below are what the tracer calls per step.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

DEFAULT_TILE_SIZE = 8


@nb.njit(cache=True, inline="always")
def tiled_lookup(tile_index, tile_data, ts, i, j, k, empty):
    if i < 0 or j < 0 or k < 0:
        return empty
    ti = i // ts
    tj = j // ts
    tk = k // ts
    if ti >= tile_index.shape[0] or tj >= tile_index.shape[1] or tk >= tile_index.shape[2]:
        return empty
    slot = tile_index[ti, tj, tk]
    if slot < 0:
        return empty
    return tile_data[slot, i - ti * ts, j - tj * ts, k - tk * ts]


@nb.njit(cache=True, inline="always")
def point_to_voxel(x, y, z, origin, spacing):
    return (int(np.floor((x - origin[0]) / spacing[0])),
            int(np.floor((y - origin[1]) / spacing[1])),
            int(np.floor((z - origin[2]) / spacing[2])))


def tile_dense(dense, tile_size, empty):
    """Split ``dense`` into occupied tiles; returns ``(tile_index, tile_data)``."""
    ts = int(tile_size)
    nt = [-(-n // ts) for n in dense.shape]
    padded = np.full([n * ts for n in nt], empty, dtype=dense.dtype)
    padded[: dense.shape[0], : dense.shape[1], : dense.shape[2]] = dense
    blocks = padded.reshape(nt[0], ts, nt[1], ts, nt[2], ts).transpose(0, 2, 4, 1, 3, 5)
    if isinstance(empty, float) and np.isnan(empty):
        occupied = ~np.all(np.isnan(blocks), axis=(3, 4, 5))
    else:
        occupied = np.any(blocks != empty, axis=(3, 4, 5))
    tile_index = np.full(nt, -1, dtype=np.int32)
    coords = np.argwhere(occupied)
    tile_index[occupied] = np.arange(len(coords), dtype=np.int32)
    tile_data = np.ascontiguousarray(blocks[occupied])
    return tile_index, tile_data


def untile(tile_index, tile_data, dims, empty, dtype):
    ts = tile_data.shape[1] if tile_data.ndim == 4 and len(tile_data) else 1
    nt = tile_index.shape
    if len(tile_data) == 0:
        return np.full(dims, empty, dtype=dtype)
    padded = np.full((nt[0], nt[1], nt[2], ts, ts, ts), empty, dtype=dtype)
    occ = tile_index >= 0
    padded[occ] = tile_data[tile_index[occ]]
    padded = padded.transpose(0, 3, 1, 4, 2, 5).reshape(nt[0] * ts, nt[1] * ts, nt[2] * ts)
    return np.ascontiguousarray(padded[: dims[0], : dims[1], : dims[2]])


@dataclass(frozen=True, eq=False)
class SparseLabelGrid:
    """Sparse label volume; voxels outside every stored tile are background."""

    tile_size: int
    dims: tuple
    spacing: np.ndarray
    origin: np.ndarray
    tile_index: np.ndarray
    tile_data: np.ndarray

    @property
    def num_tiles(self):
        return int(len(self.tile_data))

    @property
    def tiles(self):
        """``{(tx, ty, tz): block}`` view of the stored tiles."""
        coords = np.argwhere(self.tile_index >= 0)
        return {tuple(int(v) for v in c): self.tile_data[self.tile_index[tuple(c)]] for c in coords}

    @property
    def bounds(self):
        """Index-space bounding box ``(lo, hi)``, half-open."""
        return (0, 0, 0), tuple(self.dims)

    def lookup(self, i, j, k):
        return int(tiled_lookup(self.tile_index, self.tile_data, self.tile_size,
                                int(i), int(j), int(k), self.tile_data.dtype.type(0)))

    def lookup_many(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
        out = np.empty(len(ijk), dtype=self.tile_data.dtype)
        _lookup_many(self.tile_index, self.tile_data, self.tile_size, ijk, out,
                     self.tile_data.dtype.type(0))
        return out

    def labels_at(self, points):
        """Vectorised :func:`label_at` for an ``(n, 3)`` array of mm points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        ijk = np.floor((pts - self.origin) / self.spacing).astype(np.int64)
        return self.lookup_many(ijk)

    def to_dense(self):
        return untile(self.tile_index, self.tile_data, self.dims, 0, self.tile_data.dtype)


@nb.njit(cache=True)
def _lookup_many(tile_index, tile_data, ts, ijk, out, empty):
    for n in range(ijk.shape[0]):
        out[n] = tiled_lookup(tile_index, tile_data, ts, ijk[n, 0], ijk[n, 1], ijk[n, 2], empty)
    return out


def build_sparse_grid(seg, tile_size=DEFAULT_TILE_SIZE):
    """Tile a :class:`SegmentationVolume`, dropping all-background tiles."""
    if int(tile_size) < 2:
        raise ValueError(f"tile_size must be >= 2, got {tile_size}")
    dense = np.ascontiguousarray(seg.labels, dtype=np.uint16)
    tile_index, tile_data = tile_dense(dense, tile_size, np.uint16(0))
    tile_data = tile_data.reshape(-1, tile_size, tile_size, tile_size)
    return SparseLabelGrid(int(tile_size), seg.dims, seg.spacing.copy(), seg.origin.copy(),
                           tile_index, tile_data)


def label_at(grid, point):
    """Label of the voxel containing ``point`` (mm); 0 outside the grid.

    Points on a voxel face or corner belong to the voxel whose index is
    obtained by flooring.
    """
    p = np.asarray(point, dtype=np.float64)
    ijk = np.floor((p - grid.origin) / grid.spacing).astype(np.int64)
    return grid.lookup(*ijk)
