"""Narrow-band signed distance fields per tissue label.

Distances are in mm (negative inside the label) and are only kept within
``band_halfwidth * max(spacing)`` of the boundary.  Construction seeds the
voxels that share a face with the other side of the boundary using the
distance to the plane through their boundary faces, then solves the
eikonal equation outward with fast sweeping on the anisotropic grid.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

from .grid import DEFAULT_TILE_SIZE, tile_dense, tiled_lookup, untile

DEFAULT_BAND_HALFWIDTH = 3


class NoNormalAvailable(LookupError):
    """Raised when the SDF band does not cover the gradient stencil."""


@nb.njit(cache=True)
def _seed_distances(mask, h, out):
    nx, ny, nz = mask.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                m = mask[i, j, k]
                s = 0.0
                if (i > 0 and mask[i - 1, j, k] != m) or (i < nx - 1 and mask[i + 1, j, k] != m):
                    s += (2.0 / h[0]) ** 2
                if (j > 0 and mask[i, j - 1, k] != m) or (j < ny - 1 and mask[i, j + 1, k] != m):
                    s += (2.0 / h[1]) ** 2
                if (k > 0 and mask[i, j, k - 1] != m) or (k < nz - 1 and mask[i, j, k + 1] != m):
                    s += (2.0 / h[2]) ** 2
                if s > 0.0:
                    out[i, j, k] = 1.0 / np.sqrt(s)
    return out


@nb.njit(cache=True, inline="always")
def _godunov(a0, a1, a2, h0, h1, h2):
    # sort the three upwind values (with their spacings) ascending
    if a0 > a1:
        a0, a1 = a1, a0
        h0, h1 = h1, h0
    if a1 > a2:
        a1, a2 = a2, a1
        h1, h2 = h2, h1
    if a0 > a1:
        a0, a1 = a1, a0
        h0, h1 = h1, h0
    u = a0 + h0
    if u <= a1:
        return u
    w0 = 1.0 / (h0 * h0)
    w1 = 1.0 / (h1 * h1)
    qa = w0 + w1
    qb = a0 * w0 + a1 * w1
    qc = a0 * a0 * w0 + a1 * a1 * w1 - 1.0
    u = (qb + np.sqrt(max(qb * qb - qa * qc, 0.0))) / qa
    if u <= a2:
        return u
    w2 = 1.0 / (h2 * h2)
    qa += w2
    qb += a2 * w2
    qc += a2 * a2 * w2
    return (qb + np.sqrt(max(qb * qb - qa * qc, 0.0))) / qa


@nb.njit(cache=True)
def _fast_sweep(u, fixed, h, limit, max_rounds):
    nx, ny, nz = u.shape
    inf = np.inf
    for _ in range(max_rounds):
        changed = 0.0
        for sweep in range(8):
            sx = 1 if (sweep & 1) == 0 else -1
            sy = 1 if (sweep & 2) == 0 else -1
            sz = 1 if (sweep & 4) == 0 else -1
            for ii in range(nx):
                i = ii if sx > 0 else nx - 1 - ii
                for jj in range(ny):
                    j = jj if sy > 0 else ny - 1 - jj
                    for kk in range(nz):
                        k = kk if sz > 0 else nz - 1 - kk
                        if fixed[i, j, k]:
                            continue
                        a0 = inf
                        if i > 0:
                            a0 = u[i - 1, j, k]
                        if i < nx - 1 and u[i + 1, j, k] < a0:
                            a0 = u[i + 1, j, k]
                        a1 = inf
                        if j > 0:
                            a1 = u[i, j - 1, k]
                        if j < ny - 1 and u[i, j + 1, k] < a1:
                            a1 = u[i, j + 1, k]
                        a2 = inf
                        if k > 0:
                            a2 = u[i, j, k - 1]
                        if k < nz - 1 and u[i, j, k + 1] < a2:
                            a2 = u[i, j, k + 1]
                        if min(a0, min(a1, a2)) > limit:
                            continue
                        cand = _godunov(a0, a1, a2, h[0], h[1], h[2])
                        if cand < u[i, j, k]:
                            if u[i, j, k] < inf:
                                changed = max(changed, u[i, j, k] - cand)
                            else:
                                changed = inf
                            u[i, j, k] = cand
        if changed < 1e-12:
            break
    return u


@dataclass(frozen=True, eq=False)
class NarrowBandSdf:
    """Sparse signed distance samples at voxel centers (NaN = not stored)."""

    label: int
    band_halfwidth: int
    dims: tuple
    spacing: np.ndarray
    origin: np.ndarray
    tile_size: int
    tile_index: np.ndarray
    tile_data: np.ndarray

    @property
    def band_limit(self):
        return self.band_halfwidth * float(np.max(self.spacing))

    def value_at(self, i, j, k):
        """Stored distance at voxel ``(i, j, k)`` or NaN."""
        return float(tiled_lookup(self.tile_index, self.tile_data, self.tile_size,
                                  int(i), int(j), int(k), np.float32(np.nan)))

    def to_dense(self):
        return untile(self.tile_index, self.tile_data, self.dims, np.float32(np.nan), np.float32)

    def stored(self):
        """``(ijk, values)`` for every stored voxel."""
        dense = self.to_dense()
        ijk = np.argwhere(~np.isnan(dense))
        return ijk, dense[tuple(ijk.T)].astype(np.float64)

    @property
    def values(self):
        ijk, vals = self.stored()
        return {tuple(int(v) for v in c): float(d) for c, d in zip(ijk, vals)}

    def interpolate(self, point):
        """Trilinear SDF value at ``point`` (mm); NaN if the stencil is incomplete."""
        p = np.asarray(point, dtype=np.float64)
        return float(sdf_trilinear(self.tile_index, self.tile_data, self.tile_size,
                                   self.origin, self.spacing, p[0], p[1], p[2]))


def build_sdf(seg, label, band_halfwidth=DEFAULT_BAND_HALFWIDTH, tile_size=DEFAULT_TILE_SIZE):
    """Narrow-band SDF of ``label`` in ``seg`` (mm, negative inside)."""
    band_halfwidth = int(band_halfwidth)
    if band_halfwidth < 1:
        raise ValueError("band_halfwidth must be >= 1 voxel")
    mask_full = seg.labels == label
    if not mask_full.any():
        raise ValueError(f"label {label} does not occur in the segmentation")
    dims = np.asarray(seg.dims)
    pad = band_halfwidth + 2
    nz_idx = [np.flatnonzero(mask_full.any(axis=tuple(a for a in range(3) if a != ax))) for ax in range(3)]
    lo = np.array([idx[0] for idx in nz_idx]) - pad
    hi = np.array([idx[-1] + 1 for idx in nz_idx]) + pad
    # sub-box may extend past the volume; outside voxels are non-members
    sub = np.zeros(tuple(hi - lo), dtype=np.bool_)
    clo = np.maximum(lo, 0)
    chi = np.minimum(hi, dims)
    sub[tuple(slice(a - l, b - l) for a, b, l in zip(clo, chi, lo))] = \
        mask_full[tuple(slice(a, b) for a, b in zip(clo, chi))]

    h = np.asarray(seg.spacing, dtype=np.float64)
    limit = band_halfwidth * float(h.max())
    dist = np.full(sub.shape, np.inf)
    _seed_distances(sub, h, dist)
    fixed = np.isfinite(dist)
    _fast_sweep(dist, fixed, h, limit, 4)

    signed = np.where(sub, -dist, dist)
    signed[dist > limit] = np.nan
    view = signed[tuple(slice(a - l, b - l) for a, b, l in zip(clo, chi, lo))]
    dense = np.full(seg.dims, np.nan, dtype=np.float32)
    dense[tuple(slice(a, b) for a, b in zip(clo, chi))] = view
    tile_index, tile_data = tile_dense(dense, tile_size, np.nan)
    tile_data = tile_data.reshape(-1, tile_size, tile_size, tile_size).astype(np.float32)
    return NarrowBandSdf(int(label), band_halfwidth, seg.dims, seg.spacing.copy(),
                         seg.origin.copy(), int(tile_size), tile_index, tile_data)


@nb.njit(cache=True)
def sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x, y, z):
    fx = (x - origin[0]) / spacing[0] - 0.5
    fy = (y - origin[1]) / spacing[1] - 0.5
    fz = (z - origin[2]) / spacing[2] - 0.5
    i0 = int(np.floor(fx))
    j0 = int(np.floor(fy))
    k0 = int(np.floor(fz))
    tx = fx - i0
    ty = fy - j0
    tz = fz - k0
    nan = np.float32(np.nan)
    acc = 0.0
    for di in range(2):
        wx = tx if di else 1.0 - tx
        for dj in range(2):
            wy = ty if dj else 1.0 - ty
            for dk in range(2):
                wz = tz if dk else 1.0 - tz
                v = tiled_lookup(tile_index, tile_data, ts, i0 + di, j0 + dj, k0 + dk, nan)
                if np.isnan(v):
                    return np.nan
                acc += wx * wy * wz * v
    return acc


@nb.njit(cache=True)
def sdf_gradient(tile_index, tile_data, ts, origin, spacing, x, y, z):
    """Central-difference gradient of the trilinear SDF; ``ok`` False if unavailable."""
    hx = spacing[0]
    hy = spacing[1]
    hz = spacing[2]
    xp = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x + hx, y, z)
    xm = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x - hx, y, z)
    yp = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x, y + hy, z)
    ym = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x, y - hy, z)
    zp = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x, y, z + hz)
    zm = sdf_trilinear(tile_index, tile_data, ts, origin, spacing, x, y, z - hz)
    if (np.isnan(xp) or np.isnan(xm) or np.isnan(yp) or np.isnan(ym)
            or np.isnan(zp) or np.isnan(zm)):
        return False, 0.0, 0.0, 0.0
    return True, (xp - xm) / (2 * hx), (yp - ym) / (2 * hy), (zp - zm) / (2 * hz)


@nb.njit(cache=True)
def sdf_normal(tile_index, tile_data, ts, origin, spacing, x, y, z):
    ok, gx, gy, gz = sdf_gradient(tile_index, tile_data, ts, origin, spacing, x, y, z)
    if not ok:
        return False, 0.0, 0.0, 0.0
    norm = np.sqrt(gx * gx + gy * gy + gz * gz)
    if norm < 1e-9:
        return False, 0.0, 0.0, 0.0
    return True, gx / norm, gy / norm, gz / norm


def sdf_gradient_at(sdf, point):
    p = np.asarray(point, dtype=np.float64)
    ok, gx, gy, gz = sdf_gradient(sdf.tile_index, sdf.tile_data, sdf.tile_size,
                                  sdf.origin, sdf.spacing, p[0], p[1], p[2])
    if not ok:
        raise NoNormalAvailable(f"point {p} lies outside the band of label {sdf.label}")
    return np.array([gx, gy, gz])


def surface_normal(sdf, point):
    """Unit outward normal from the SDF gradient at ``point`` (mm).

    Raises :class:`NoNormalAvailable` when the stencil leaves the band or
    the gradient vanishes; callers fall back to a voxel-face normal.
    """
    p = np.asarray(point, dtype=np.float64)
    ok, nx, ny, nz = sdf_normal(sdf.tile_index, sdf.tile_data, sdf.tile_size,
                                sdf.origin, sdf.spacing, p[0], p[1], p[2])
    if not ok:
        raise NoNormalAvailable(f"no SDF normal for label {sdf.label} at {p}")
    return np.array([nx, ny, nz])
