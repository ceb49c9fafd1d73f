"""Image-quality measurements: wire TRE, lesion contrast and speckle statistics."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter

GATE_MM = 2.0


# --- wire targets -------------------------------------------------------------

def _group_line(points, extend):
    """Origin, unit direction and span of the line through ``points``."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 1:
        direction = np.array([1.0, 0.0])
    else:
        centered = pts - pts.mean(axis=0)
        direction = np.linalg.svd(centered, full_matrices=False)[2][0]
        if direction[np.argmax(np.abs(direction))] < 0:
            direction = -direction
    t = (pts - pts[0]) @ direction
    return pts[0], direction, (t.min() - extend, t.max() + extend), t


def profile_peaks(profile, min_height):
    """Sub-sample positions and heights of local maxima above ``min_height``.

    Flat tops report their midpoint; single-sample maxima are refined by a
    3-point parabola.
    """
    p = np.asarray(profile, dtype=np.float64)
    n = len(p)
    peaks = []
    i = 1
    while i < n - 1:
        if p[i] > p[i - 1] and p[i] >= min_height:
            j = i
            while j + 1 < n and p[j + 1] == p[i]:
                j += 1
            if j + 1 < n and p[j + 1] < p[i]:
                if j == i:
                    a, b, c = p[i - 1], p[i], p[i + 1]
                    denom = a - 2.0 * b + c
                    off = 0.5 * (a - c) / denom if denom != 0 else 0.0
                    peaks.append((i + off, b - 0.25 * (a - c) * off))
                else:
                    peaks.append((0.5 * (i + j), p[i]))
            i = j + 1
        else:
            i += 1
    return peaks


def measure_tre(image, truth, step_fraction=0.25, gate=GATE_MM):
    """Target registration error of every wire in ``truth``.

    For each wire group the display image is sampled along the line through
    the expected positions.  Peaks above half the profile maximum are paired
    with the nearest expected wire inside ``gate`` mm, the strongest peak
    winning.  Wires without a peak are flagged and left out of the means.
    """
    if not truth.wires:
        raise ValueError("ground truth holds no wires")
    # cubic profiles; a bilinear profile always peaks on a pixel center
    coeffs = spline_filter(np.asarray(image.pixels, dtype=np.float64), order=3, mode="nearest")
    step = image.pixel_spacing * step_fraction
    entries = []
    for group, wires in truth.wire_groups().items():
        pos = [w["position"] for w in wires]
        origin, direction, (t0, t1), t_exp = _group_line(pos, gate + 2.0)
        # the grid passes through the first expected wire
        t0 = -math.ceil(-t0 / step) * step
        t = np.arange(t0, t1 + 0.5 * step, step)
        xy = origin + t[:, None] * direction
        rows, cols = image.pixel_of(xy[:, 0], xy[:, 1])
        prof = map_coordinates(coeffs, [rows, cols], order=3, mode="nearest", prefilter=False)
        peaks = profile_peaks(prof, 0.5 * prof.max()) if prof.max() > 0 else []
        peak_t = np.array([t0 + idx * step for idx, _ in peaks])
        peak_h = np.array([h for _, h in peaks])
        for w, te in zip(wires, t_exp):
            near = np.flatnonzero(np.abs(peak_t - te) <= gate) if len(peaks) else np.array([], int)
            if len(near):
                best = near[np.argmax(peak_h[near])]
                found = origin + peak_t[best] * direction
                err = float(abs(peak_t[best] - te))
                entries.append({"id": w["id"], "group": group, "expected": list(w["position"]),
                                "detected": [float(found[0]), float(found[1])], "error": err, "found": True})
            else:
                entries.append({"id": w["id"], "group": group, "expected": list(w["position"]),
                                "detected": None, "error": None, "found": False})
    return entries


def summarize_tre(entries):
    errs = np.array([e["error"] for e in entries if e["found"]])
    groups = {}
    for e in entries:
        groups.setdefault(e["group"], []).append(e)
    out = {"mean": float(errs.mean()) if len(errs) else float("nan"),
           "std": float(errs.std()) if len(errs) else float("nan"),
           "num_targets": len(entries), "num_missed": int(sum(not e["found"] for e in entries)), "groups": {}}
    for g, es in groups.items():
        ge = np.array([e["error"] for e in es if e["found"]])
        out["groups"][g] = {"mean": float(ge.mean()) if len(ge) else float("nan"),
                            "std": float(ge.std()) if len(ge) else float("nan"), "count": len(ge)}
    return out


# --- lesions --------------------------------------------------------------------

def gcnr(inside, outside, bins=256):
    """``1 - sum(min(h_in, h_out))`` over shared bins spanning the pooled range."""
    a = np.asarray(inside, dtype=np.float64).ravel()
    b = np.asarray(outside, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("gCNR needs samples in both regions")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    ha = np.histogram(a, edges)[0] / a.size
    hb = np.histogram(b, edges)[0] / b.size
    return float(1.0 - np.minimum(ha, hb).sum())


def measure_contrast(image, lesion_mask, background_mask, min_pixels=100):
    """gCNR on display pixels; contrast and CNR on the pre-compression envelope.

    ``image`` is a :class:`~sonotrace.postproc.BModeImage` (its ``linear``
    field supplies the envelope) or a plain 2-D array used for all three.
    """
    lm = np.asarray(lesion_mask, dtype=bool)
    bm = np.asarray(background_mask, dtype=bool)
    if lm.sum() == 0 or bm.sum() == 0:
        raise ValueError("lesion and background masks must be non-empty")
    if np.any(lm & bm):
        raise ValueError("lesion and background masks overlap")
    if lm.sum() < min_pixels or bm.sum() < min_pixels:
        raise ValueError(f"masks need at least {min_pixels} pixels each")
    if hasattr(image, "pixels"):
        display = np.asarray(image.pixels, dtype=np.float64)
        linear = np.asarray(image.linear if image.linear is not None else image.pixels, dtype=np.float64)
    else:
        display = linear = np.asarray(image, dtype=np.float64)
    li, lo = linear[lm], linear[bm]
    mu_in, mu_out = li.mean(), lo.mean()
    if mu_out <= 0:
        raise ValueError("background mean is zero; contrast undefined")
    contrast = 20.0 * math.log10(mu_in / mu_out) if mu_in > 0 else float("-inf")
    cnr = abs(mu_in - mu_out) / math.sqrt(li.var() + lo.var()) if (li.var() + lo.var()) > 0 else 0.0
    return {"gcnr": gcnr(display[lm], display[bm]), "cnr": float(cnr), "contrast_db": float(contrast)}


# --- speckle ----------------------------------------------------------------------

def rayleigh_pdf(x, scale):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x / scale ** 2 * np.exp(-0.5 * (x / scale) ** 2), 0.0)


def speckle_stats(env, roi=None, bins=100, min_samples=10_000):
    """SNR and Rayleigh goodness of fit of envelope samples.

    ``rayleigh_sse`` compares the density-normalized histogram with the
    maximum-likelihood Rayleigh pdf at bin centers; ``rayleigh_sse_mass``
    compares per-bin probabilities and is independent of envelope units.
    """
    values = env.values if hasattr(env, "values") else np.asarray(env, dtype=np.float64)
    x = values[np.asarray(roi, dtype=bool)] if roi is not None else np.ravel(values)
    if x.size < min_samples:
        raise ValueError(f"speckle ROI needs at least {min_samples} samples, got {x.size}")
    sd = x.std()
    if sd == 0:
        raise ValueError("speckle ROI is constant")
    scale = math.sqrt(np.mean(x * x) / 2.0)
    dens, edges = np.histogram(x, bins=bins, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    sse = float(np.sum((dens - rayleigh_pdf(centers, scale)) ** 2))
    counts = np.histogram(x, bins=edges)[0] / x.size
    cdf = 1.0 - np.exp(-0.5 * (edges / scale) ** 2)
    sse_mass = float(np.sum((counts - np.diff(cdf)) ** 2))
    return {"snr": float(x.mean() / sd), "rayleigh_sse": sse, "rayleigh_sse_mass": sse_mass,
            "fitted_scale": scale, "num_samples": int(x.size)}


def scanline_points(geometry):
    """In-plane ``(x, z)`` of every (scanline, sample) for a pose at the origin."""
    pts = geometry.origins[:, None, :] + geometry.directions[:, None, :] * geometry.radii[None, :, None]
    rot = geometry.pose.rotation
    rel = pts - geometry.pose.position
    return rel @ rot[:, 0], rel @ rot[:, 2]


def region_roi(geometry, region, margin):
    """Samples inside the in-plane rectangle ``region`` shrunk by ``margin``."""
    (x0, x1), (z0, z1) = region
    x, z = scanline_points(geometry)
    return (x > x0 + margin) & (x < x1 - margin) & (z > z0 + margin) & (z < z1 - margin)


# --- artefact sectors -------------------------------------------------------------

def sector_means(frame, geometry, angle_ranges, depth_range):
    """Mean of ``frame`` over scanline sectors ``[(a0, a1), ...]`` (radians) at ``depth_range`` mm."""
    values = frame.values if hasattr(frame, "values") else np.asarray(frame, dtype=np.float64)
    angles = geometry.positions
    radii = geometry.radii
    rsel = (radii >= depth_range[0]) & (radii <= depth_range[1])
    out = []
    for a0, a1 in angle_ranges:
        lsel = (angles >= a0) & (angles <= a1)
        if not lsel.any() or not rsel.any():
            raise ValueError(f"sector {a0:.3f}..{a1:.3f} rad at {depth_range} mm holds no samples")
        out.append(float(values[np.ix_(lsel, rsel)].mean()))
    return out


def shadow_sectors(center, radius, margin=0.2):
    """Distal and two adjacent angular sectors of a sphere seen from the apex.

    The distal sector spans the inner ``1 - margin`` of the sphere's angular
    half-width; the adjacent ones have the same width, starting one
    half-width beyond the sphere's edges.
    """
    x, z = center
    mid = math.atan2(x, z)
    half = math.asin(min(1.0, radius / math.hypot(x, z)))
    w = half * (1.0 - margin)
    return (mid - w, mid + w), (mid - 2 * half - w, mid - 2 * half + w), (mid + 2 * half - w, mid + 2 * half + w)


@dataclass
class MetricsReport:
    tre: list = field(default_factory=list)
    tre_summary: dict = field(default_factory=dict)
    lesions: list = field(default_factory=list)
    speckle: dict = field(default_factory=dict)

    def to_json(self):
        return json.loads(json.dumps(asdict(self), default=float, allow_nan=True))
