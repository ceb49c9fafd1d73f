"""Monte Carlo path tracing of scanline rays through an :class:`AnatomyVolume`.

Each scanline first traces its primary ray deterministically up to the
first acoustic interface (identical for every path, so it is traced once
with weight 1).  From there ``N`` paths branch with weight ``1/N``; every
subsequent interface is a stochastic reflect/refract event whose random
numbers are keyed by ``(seed, scanline, path, collision, draw)``.  After
``max_collisions`` events a path continues straight, transmitting only.

Between interfaces a path moves through one medium along a straight
segment, so attenuation and the beam-coherence weight are evaluated in
closed form at every radial bin the segment crosses.
"""

import math

import numba as nb
import numpy as np

from ..anatomy.grid import tiled_lookup
from ..anatomy.sdf import sdf_normal
from ..rng import uniform
from ..transducer import ScanGeometry
from .intensity import IntensityMap
from .physics import (DRAW_AZIMUTH, DRAW_BETA, DRAW_POLAR, attenuation_factor, coherence_weight,
                      echo_intensity, fresnel, scatter_kernel)

_EXIT = 0
_EVENT = 1
_DIM = 2
_MAX_CROSSINGS = 20000
_BISECTIONS = 10

# layout of the float parameter vector
_P_C0, _P_MU, _P_SIGMA, _P_A, _P_B, _P_FMHZ, _P_H, _P_IMIN, _P_IMPORTANCE = range(9)


@nb.njit(cache=True, inline="always")
def _label(scene, x, y, z):
    label_index, label_data, ts, origin, spacing = scene[0], scene[1], scene[2], scene[3], scene[4]
    i = int(math.floor((x - origin[0]) / spacing[0]))
    j = int(math.floor((y - origin[1]) / spacing[1]))
    k = int(math.floor((z - origin[2]) / spacing[2]))
    return np.int64(tiled_lookup(label_index, label_data, ts, i, j, k, np.uint16(0)))


@nb.njit(cache=True, inline="always")
def _box_exit(px, py, pz, dx, dy, dz, lo0, lo1, lo2, hi0, hi1, hi2):
    t = np.inf
    if dx > 0.0:
        t = min(t, (hi0 - px) / dx)
    elif dx < 0.0:
        t = min(t, (lo0 - px) / dx)
    if dy > 0.0:
        t = min(t, (hi1 - py) / dy)
    elif dy < 0.0:
        t = min(t, (lo1 - py) / dy)
    if dz > 0.0:
        t = min(t, (hi2 - pz) / dz)
    elif dz < 0.0:
        t = min(t, (lo2 - pz) / dz)
    return t


@nb.njit(cache=True, inline="always")
def _box_entry(px, py, pz, dx, dy, dz, lo0, lo1, lo2, hi0, hi1, hi2):
    """Distance until the ray enters the box (inf if it never does)."""
    tmin = 0.0
    tmax = np.inf
    p = (px, py, pz)
    d = (dx, dy, dz)
    lo = (lo0, lo1, lo2)
    hi = (hi0, hi1, hi2)
    for a in range(3):
        if d[a] == 0.0:
            if p[a] < lo[a] or p[a] >= hi[a]:
                return np.inf
        else:
            t0 = (lo[a] - p[a]) / d[a]
            t1 = (hi[a] - p[a]) / d[a]
            if t0 > t1:
                t0, t1 = t1, t0
            tmin = max(tmin, t0)
            tmax = min(tmax, t1)
    if tmin > tmax:
        return np.inf
    return tmin


@nb.njit(cache=True, inline="always")
def _empty_run(scene, x, y, z, dx, dy, dz):
    """Length of ray from ``(x, y, z)`` guaranteed to stay in background-only space."""
    label_index, ts, origin, spacing = scene[0], scene[2], scene[3], scene[4]
    w0 = ts * spacing[0]
    w1 = ts * spacing[1]
    w2 = ts * spacing[2]
    ti = int(math.floor((x - origin[0]) / w0))
    tj = int(math.floor((y - origin[1]) / w1))
    tk = int(math.floor((z - origin[2]) / w2))
    nt0, nt1, nt2 = label_index.shape
    if 0 <= ti < nt0 and 0 <= tj < nt1 and 0 <= tk < nt2:
        if label_index[ti, tj, tk] >= 0:
            return 0.0
        return _box_exit(x, y, z, dx, dy, dz,
                         origin[0] + ti * w0, origin[1] + tj * w1, origin[2] + tk * w2,
                         origin[0] + (ti + 1) * w0, origin[1] + (tj + 1) * w1, origin[2] + (tk + 1) * w2)
    return _box_entry(x, y, z, dx, dy, dz, origin[0], origin[1], origin[2],
                      origin[0] + nt0 * w0, origin[1] + nt1 * w1, origin[2] + nt2 * w2)


@nb.njit(cache=True)
def _normal(scene, lab, new_lab, px, py, pz, dx, dy, dz, h):
    """Interface normal opposing ``d``: SDF gradient, else a voxel-face normal."""
    origin, spacing, ts = scene[3], scene[4], scene[2]
    label_slot, sdf_index, sdf_data = scene[5], scene[6], scene[7]
    ok = False
    nx = ny = nz = 0.0
    for cand in (new_lab, lab):
        if ok or cand == 0 or cand >= label_slot.shape[0]:
            continue
        slot = label_slot[cand]
        if slot < 0:
            continue
        ok, nx, ny, nz = sdf_normal(sdf_index[slot], sdf_data, ts, origin, spacing, px, py, pz)
    if not ok:
        # axis along which the voxel index changes across the crossing
        best = -1
        bestv = -1.0
        d = (dx, dy, dz)
        p = (px, py, pz)
        for a in range(3):
            i0 = math.floor((p[a] - 0.5 * h * d[a] - origin[a]) / spacing[a])
            i1 = math.floor((p[a] + 0.5 * h * d[a] - origin[a]) / spacing[a])
            if i0 != i1 and abs(d[a]) > bestv:
                best = a
                bestv = abs(d[a])
        if best < 0:
            for a in range(3):
                if abs(d[a]) > bestv:
                    best = a
                    bestv = abs(d[a])
        nx = 1.0 if best == 0 else 0.0
        ny = 1.0 if best == 1 else 0.0
        nz = 1.0 if best == 2 else 0.0
    if nx * dx + ny * dy + nz * dz > 0.0:
        nx, ny, nz = -nx, -ny, -nz
    return nx, ny, nz


@nb.njit(cache=True, inline="always")
def _deposit_point(out, hits, maxdep, l, ox, oy, oz, ux, uy, uz, n_samples, dr, c0, px, py, pz, value):
    rx = px - ox
    ry = py - oy
    rz = pz - oz
    r = rx * ux + ry * uy + rz * uz
    if r < 0.0:
        return
    k = int(math.floor(r / dr + 0.5))
    if k >= n_samples:
        return
    ex = rx - r * ux
    ey = ry - r * uy
    ez = rz - r * uz
    v = value * coherence_weight(c0, math.sqrt(ex * ex + ey * ey + ez * ez))
    out[l, k] += v
    hits[l, k] += 1
    if v > maxdep[l]:
        maxdep[l] = v


@nb.njit(cache=True)
def _deposit_segment(out, hits, maxdep, l, ox, oy, oz, ux, uy, uz, n_samples, dr, c0,
                     px, py, pz, dx, dy, dz, t_end, inten, alpha, f_mhz, weight):
    """Deposit ``weight * w_R * I(t)`` at every bin center crossed on ``[0, t_end)``."""
    rx = px - ox
    ry = py - oy
    rz = pz - oz
    r0 = rx * ux + ry * uy + rz * uz
    du = dx * ux + dy * uy + dz * uz
    if abs(du) < 1e-12 or t_end <= 0.0:
        return
    r1 = r0 + t_end * du
    if du > 0.0:
        k0 = int(math.ceil(r0 / dr))
        k1 = int(math.ceil(r1 / dr)) - 1
        if k0 < 0:
            k0 = 0
        if k1 > n_samples - 1:
            k1 = n_samples - 1
        if k1 < k0:
            return
        step = 1
        count = k1 - k0 + 1
    else:
        k0 = int(math.floor(r0 / dr))
        k1 = int(math.floor(r1 / dr)) + 1
        if k0 > n_samples - 1:
            k0 = n_samples - 1
        if k1 < 0:
            k1 = 0
        if k0 < k1:
            return
        step = -1
        count = k0 - k1 + 1
    # perpendicular offset A + t B from the scanline
    ax = rx - r0 * ux
    ay = ry - r0 * uy
    az = rz - r0 * uz
    bx = dx - du * ux
    by = dy - du * uy
    bz = dz - du * uz
    dt = dr / abs(du)
    t = (k0 * dr - r0) / du
    inten_k = inten * attenuation_factor(t, alpha, f_mhz)
    g = attenuation_factor(dt, alpha, f_mhz)
    k = k0
    for _ in range(count):
        qx = ax + t * bx
        qy = ay + t * by
        qz = az + t * bz
        v = weight * coherence_weight(c0, math.sqrt(qx * qx + qy * qy + qz * qz)) * inten_k
        out[l, k] += v
        hits[l, k] += 1
        if v > maxdep[l]:
            maxdep[l] = v
        inten_k *= g
        t += dt
        k += step


@nb.njit(cache=True)
def _walk(scene, so, su, l, n_samples, dr, pr, seed, max_coll, dom,
          px, py, pz, dx, dy, dz, lab, inten, weight, coll, ray, stop_at_event,
          interior, boundary, hits, maxdep):
    """Follow one path until it leaves the domain, dies, or (optionally) hits its first event.

    Returns ``(status, px, py, pz, dx, dy, dz, nx, ny, nz, lab, new_lab, inten, weight)``.
    """
    zt, alpha_t, tau_t, gamma_t = scene[8], scene[9], scene[10], scene[11]
    c0 = pr[_P_C0]
    f_mhz = pr[_P_FMHZ]
    h = pr[_P_H]
    imin = pr[_P_IMIN]
    ox, oy, oz = so[l, 0], so[l, 1], so[l, 2]
    ux, uy, uz = su[l, 0], su[l, 1], su[l, 2]
    nx = ny = nz = 0.0
    for _ in range(_MAX_CROSSINGS):
        if inten < imin or weight <= 0.0:
            break
        alpha = alpha_t[lab]
        t_dom = _box_exit(px, py, pz, dx, dy, dz, dom[0], dom[1], dom[2], dom[3], dom[4], dom[5])
        if not t_dom > 0.0:
            break
        s = 0
        t_hit = -1.0
        new_lab = lab
        while True:
            t = (s + 1) * h
            if t >= t_dom:
                break
            qx = px + t * dx
            qy = py + t * dy
            qz = pz + t * dz
            lq = _label(scene, qx, qy, qz)
            if lq == lab:
                if lab == 0:
                    run = _empty_run(scene, qx, qy, qz, dx, dy, dz)
                    if t + run >= t_dom:
                        break
                    if run > h:
                        s += int(math.ceil(run / h)) - 1
                s += 1
                continue
            # labels are constant per voxel, so bisection converges onto the voxel face
            t_lo = s * h
            t_hi = t
            new_lab = lq
            for _b in range(_BISECTIONS):
                tm = 0.5 * (t_lo + t_hi)
                lm = _label(scene, px + tm * dx, py + tm * dy, pz + tm * dz)
                if lm == lab:
                    t_lo = tm
                else:
                    t_hi = tm
                    new_lab = lm
            t_hit = 0.5 * (t_lo + t_hi)
            break
        t_end = t_hit if t_hit >= 0.0 else t_dom
        _deposit_segment(interior, hits, maxdep, l, ox, oy, oz, ux, uy, uz, n_samples, dr, c0,
                         px, py, pz, dx, dy, dz, t_end, inten, alpha, f_mhz, weight)
        inten *= attenuation_factor(t_end, alpha, f_mhz)
        px += t_end * dx
        py += t_end * dy
        pz += t_end * dz
        if t_hit < 0.0:
            break
        z1 = zt[lab]
        z2 = zt[new_lab]
        if z1 == z2:
            lab = new_lab
            continue
        nx, ny, nz = _normal(scene, lab, new_lab, px, py, pz, dx, dy, dz, h)
        cos1 = -(nx * dx + ny * dy + nz * dz)
        owner = new_lab if new_lab != 0 else lab
        echo = echo_intensity(inten, z1, z2, cos1, tau_t[owner], gamma_t[owner])
        _deposit_point(boundary, hits, maxdep, l, ox, oy, oz, ux, uy, uz, n_samples, dr, c0,
                       px, py, pz, echo * weight)
        if coll >= max_coll:
            r, tr, cos2, tir = fresnel(z1, z2, cos1)
            if tir or tr <= 0.0:
                break
            inten *= tr
            lab = new_lab
            continue
        if stop_at_event:
            return _EVENT, px, py, pz, dx, dy, dz, nx, ny, nz, lab, new_lab, inten, weight
        dx, dy, dz, lab, inten, weight = _event(seed, l, ray, coll, pr, dx, dy, dz, nx, ny, nz,
                                                z1, z2, lab, new_lab, inten, weight)
        coll += 1
    return _EXIT, px, py, pz, dx, dy, dz, nx, ny, nz, lab, lab, inten, weight


@nb.njit(cache=True, inline="always")
def _event(seed, l, ray, coll, pr, dx, dy, dz, nx, ny, nz, z1, z2, lab, new_lab, inten, weight):
    u0 = uniform(seed, l, ray, coll, DRAW_BETA)
    u1 = uniform(seed, l, ray, coll, DRAW_AZIMUTH)
    u2 = uniform(seed, l, ray, coll, DRAW_POLAR)
    refl, f, ex, ey, ez, pdf, cos1 = scatter_kernel(dx, dy, dz, nx, ny, nz, z1, z2, u0, u1, u2,
                                                    pr[_P_MU], pr[_P_SIGMA], pr[_P_A], pr[_P_B])
    if pr[_P_IMPORTANCE] > 0.0:
        weight = weight * cos1 / pdf if pdf < np.inf else 0.0
    side = ex * nx + ey * ny + ez * nz
    out_lab = lab if side > 0.0 else new_lab
    return ex, ey, ez, out_lab, inten * f, weight


@nb.njit(cache=True, parallel=True)
def _trace_all(scene, so, su, n_samples, dr, pr, seed, max_coll, n_rays, dom,
               interior, boundary, hits, maxdep):
    n_lines = so.shape[0]
    zt = scene[8]
    for l in nb.prange(n_lines):
        px, py, pz = so[l, 0], so[l, 1], so[l, 2]
        dx, dy, dz = su[l, 0], su[l, 1], su[l, 2]
        eps = 1e-6 * pr[_P_H]
        lab = _label(scene, px + eps * dx, py + eps * dy, pz + eps * dz)
        st = _walk(scene, so, su, l, n_samples, dr, pr, seed, max_coll, dom,
                   px, py, pz, dx, dy, dz, lab, 1.0, 1.0, 0, 0, True,
                   interior, boundary, hits, maxdep)
        if st[0] != _EVENT:
            continue
        _, hx, hy, hz, dx, dy, dz, nx, ny, nz, lab, new_lab, inten, _w = st
        w = 1.0 / n_rays
        for i in range(n_rays):
            ex, ey, ez, lab_i, inten_i, w_i = _event(seed, l, i, 0, pr, dx, dy, dz, nx, ny, nz,
                                                     zt[lab], zt[new_lab], lab, new_lab, inten, w)
            _walk(scene, so, su, l, n_samples, dr, pr, seed, max_coll, dom,
                  hx, hy, hz, ex, ey, ez, lab_i, inten_i, w_i, 1, i, False,
                  interior, boundary, hits, maxdep)


def scene_tuple(anatomy):
    p = anatomy.packed
    return (p.label_index, p.label_data, np.int64(p.tile_size), p.origin, p.spacing,
            p.label_slot, p.sdf_index, p.sdf_data, p.z, p.alpha, p.tau, p.gamma)


def _domain(anatomy, origins, directions, depth):
    ends = origins + directions * depth
    lo = np.minimum(anatomy.origin, np.minimum(origins.min(0), ends.min(0)))
    hi = np.maximum(anatomy.extent, np.maximum(origins.max(0), ends.max(0)))
    pad = 1e-6 + 1e-9 * float(np.max(hi - lo))
    return np.concatenate([lo - pad, hi + pad])


def trace_frame(anatomy, scanlines, params, frequency=None, n_threads=None):
    """Path-trace every scanline and return the :class:`IntensityMap`.

    Parameters
    ----------
    anatomy : AnatomyVolume
    scanlines : ScanGeometry or sequence of Scanline
    params : SimParams
    frequency : float, optional
        Center frequency (Hz) for attenuation; taken from the geometry's
        transducer config when ``scanlines`` is a :class:`ScanGeometry`.
    n_threads : int, optional
        Numba threads used across scanlines.
    """
    if isinstance(scanlines, ScanGeometry):
        if frequency is None:
            frequency = scanlines.config.center_frequency
        lines = scanlines.scanlines
    else:
        lines = tuple(scanlines)
    if frequency is None:
        raise ValueError("frequency is required when tracing a bare list of scanlines")
    if not lines:
        raise ValueError("no scanlines to trace")
    n_samples = lines[0].num_samples
    dr = lines[0].sample_spacing
    if any(s.num_samples != n_samples or s.sample_spacing != dr for s in lines):
        raise ValueError("all scanlines must share num_samples and sample_spacing")
    so = np.ascontiguousarray([s.origin for s in lines], dtype=np.float64)
    su = np.ascontiguousarray([s.direction for s in lines], dtype=np.float64)
    h = 0.5 * float(np.min(anatomy.spacing))
    a, b = params.cone_bounds
    pr = np.array([params.beam_coherence_c0, params.cone_mean, params.cone_sigma, a, b,
                   frequency * 1e-6, h, params.min_intensity, float(params.importance_weighting)])
    dom = _domain(anatomy, so, su, n_samples * dr)
    imap = IntensityMap.zeros(len(lines), n_samples)
    prev = nb.get_num_threads()
    if n_threads is not None:
        nb.set_num_threads(max(1, min(int(n_threads), nb.config.NUMBA_NUM_THREADS)))
    try:
        _trace_all(scene_tuple(anatomy), so, su, n_samples, dr, pr, np.int64(params.seed),
                   np.int64(params.max_collisions), np.int64(params.rays_per_scanline), dom,
                   imap.interior, imap.boundary, imap.hits, imap.max_deposit)
    finally:
        nb.set_num_threads(prev)
    return imap
