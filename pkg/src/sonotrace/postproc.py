"""Display pipeline: time-gain compensation, log compression and scan conversion."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive
from .rfsynth import EnvelopeFrame


@dataclass(frozen=True)
class PostprocParams:
    """Display settings.

    ``output_pixels`` is ``(rows, cols)``; ``None`` sizes the grid to the
    fan's bounding box at ``pixel_spacing``.
    """

    tgc_db_per_cm: float = 1.5
    dynamic_range_db: float = 75.0
    reject_db: float = 40.0
    pixel_spacing: float = 0.23
    output_pixels: tuple = None

    def __post_init__(self):
        check_positive(self.dynamic_range_db, "dynamic_range_db")
        check_positive(self.reject_db, "reject_db", strict=False)
        check_positive(self.pixel_spacing, "pixel_spacing")
        if self.output_pixels is not None:
            rows, cols = (int(v) for v in self.output_pixels)
            if rows < 1 or cols < 1:
                raise ValueError("output_pixels must be positive")
            object.__setattr__(self, "output_pixels", (rows, cols))

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return PostprocParams(**values)

    def to_json(self):
        return {"tgc_db_per_cm": self.tgc_db_per_cm, "dynamic_range_db": self.dynamic_range_db,
                "reject_db": self.reject_db, "pixel_spacing_mm": self.pixel_spacing,
                "output_pixels": list(self.output_pixels) if self.output_pixels else None}

    @classmethod
    def from_json(cls, obj):
        known = {"tgc_db_per_cm", "dynamic_range_db", "reject_db", "pixel_spacing_mm", "output_pixels"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown postprocessing fields: {sorted(unknown)}")
        kwargs = {k: float(obj[k]) for k in ("tgc_db_per_cm", "dynamic_range_db", "reject_db") if k in obj}
        if "pixel_spacing_mm" in obj:
            kwargs["pixel_spacing"] = float(obj["pixel_spacing_mm"])
        if obj.get("output_pixels"):
            kwargs["output_pixels"] = tuple(obj["output_pixels"])
        return cls(**kwargs)


def _values(env):
    return env.values if isinstance(env, EnvelopeFrame) else np.asarray(env, dtype=np.float64)


def tgc_gain(depth_mm, tgc_db_per_cm):
    """Amplitude gain ``10^(tgc * d_cm / 20)``."""
    return 10.0 ** (tgc_db_per_cm * np.asarray(depth_mm, dtype=np.float64) / 10.0 / 20.0)


def apply_tgc(env, tgc_db_per_cm, scanlines=None):
    """Multiply each sample by the gain at its depth.

    Depths come from ``scanlines`` (a geometry or a sample spacing in mm)
    or, failing that, from the envelope frame's own sample spacing.
    """
    values = _values(env)
    if scanlines is None:
        spacing = env.sample_spacing
    elif isinstance(scanlines, (int, float)):
        spacing = float(scanlines)
    else:
        spacing = scanlines.sample_spacing
    gain = tgc_gain(np.arange(values.shape[-1]) * spacing, tgc_db_per_cm)
    meta = env.meta if isinstance(env, EnvelopeFrame) else {}
    return EnvelopeFrame(values * gain, spacing, dict(meta))


def log_compress(env, params):
    """Map the envelope to ``[0, 1]`` over the dynamic range.

    ``L = 20 log10(env / max)``; output is ``(L + DR) / DR`` clipped to
    ``[0, 1]``, and samples with ``L < -(DR - reject)`` are set to 0.
    An all-zero frame maps to zeros.
    """
    values = _values(env)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0.0:
        return np.zeros(values.shape)
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(values / peak)
    dr = params.dynamic_range_db
    out = np.clip((level + dr) / dr, 0.0, 1.0)
    out[level < -(dr - params.reject_db)] = 0.0
    return out


@dataclass(eq=False)
class BModeImage:
    """8-bit display image plus the fan mask and the pixel grid.

    ``x0, z0`` locate the center of pixel ``(0, 0)`` in the probe plane
    (lateral, axial mm); ``linear`` holds the interpolated pre-compression
    envelope, used for contrast measurements.
    """

    pixels: np.ndarray
    mask: np.ndarray
    pixel_spacing: float
    x0: float
    z0: float
    linear: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.pixels.shape

    def pixel_of(self, x, z):
        """Fractional ``(row, col)`` of in-plane point ``(x, z)``."""
        return (z - self.z0) / self.pixel_spacing, (x - self.x0) / self.pixel_spacing

    def coords(self):
        rows, cols = self.pixels.shape
        x = self.x0 + np.arange(cols) * self.pixel_spacing
        z = self.z0 + np.arange(rows) * self.pixel_spacing
        return np.meshgrid(x, z)


def _fan_bounds(geometry):
    depth = geometry.num_samples * geometry.sample_spacing
    if geometry.kind == "phased":
        a0, a1 = geometry.positions[0], geometry.positions[-1]
        angles = np.linspace(a0, a1, 257)
        xs = np.concatenate([[0.0], depth * np.sin(angles)])
        zs = np.concatenate([[0.0], depth * np.cos(angles)])
        if a0 <= 0.0 <= a1:
            zs = np.append(zs, depth)
        return xs.min(), xs.max(), zs.min(), zs.max()
    return geometry.positions[0], geometry.positions[-1], 0.0, depth


def _plane_to_fan(geometry, x, z):
    """Fractional (scanline, sample) indices and the in-fan mask for plane points."""
    dr = geometry.sample_spacing
    n_lines, n_samples = geometry.num_scanlines, geometry.num_samples
    pos = geometry.positions
    step = (pos[-1] - pos[0]) / (n_lines - 1) if n_lines > 1 else 1.0
    if geometry.kind == "phased":
        lat = np.arctan2(x, z)
        rad = np.hypot(x, z)
    else:
        lat, rad = x, z
    li = (lat - pos[0]) / step if n_lines > 1 else np.zeros_like(lat)
    si = rad / dr
    tol = 1e-9
    inside = (li >= -tol) & (li <= n_lines - 1 + tol) & (si >= -tol) & (si <= n_samples - 1 + tol)
    if n_lines == 1:
        inside &= np.abs(lat - pos[0]) <= tol
    return li, si, inside


def scan_convert(frame, scanlines, params, linear=None):
    """Resample a (scanline x sample) frame onto a Cartesian grid.

    Pixel centers sit on multiples of ``pixel_spacing`` relative to the
    probe origin, so a point on that lattice maps onto an exact pixel.
    Values are bilinear in (scanline, sample) index; pixels outside the
    fan are masked to 0.
    """
    frame = _values(frame)
    geometry = scanlines
    if frame.shape != (geometry.num_scanlines, geometry.num_samples):
        raise ValueError(f"frame shape {frame.shape} does not match geometry")
    ps = params.pixel_spacing
    xmin, xmax, zmin, zmax = _fan_bounds(geometry)
    c0 = int(math.floor(xmin / ps + 1e-9))
    r0 = int(math.floor(zmin / ps + 1e-9))
    cols = int(math.ceil(xmax / ps - 1e-9)) - c0 + 1
    rows = int(math.ceil(zmax / ps - 1e-9)) - r0 + 1
    if params.output_pixels is not None:
        want_rows, want_cols = params.output_pixels
        if want_rows < rows or want_cols < cols:
            raise ValueError(f"output grid {params.output_pixels} cannot hold the fan ({rows}, {cols})")
        c0 -= (want_cols - cols) // 2
        rows, cols = want_rows, want_cols
    x0, z0 = c0 * ps, r0 * ps
    x = x0 + np.arange(cols) * ps
    z = z0 + np.arange(rows) * ps
    xx, zz = np.meshgrid(x, z)
    li, si, inside = _plane_to_fan(geometry, xx, zz)
    coords = np.stack([np.clip(li, 0, geometry.num_scanlines - 1), np.clip(si, 0, geometry.num_samples - 1)])

    def resample(values):
        out = map_coordinates(values, coords.reshape(2, -1), order=1, mode="nearest").reshape(rows, cols)
        out[~inside] = 0.0
        return out

    display = resample(frame)
    pixels = np.where(inside, np.clip(np.round(display * 255.0), 0, 255), 0).astype(np.uint8)
    lin = resample(_values(linear)) if linear is not None else None
    meta = {"geometry": geometry.kind, "pixel_spacing_mm": ps, "origin_mm": [x0, z0]}
    return BModeImage(pixels, inside, ps, x0, z0, lin, meta)


def to_bmode(env, geometry, params):
    """TGC, compression and scan conversion in one call."""
    gained = apply_tgc(env, params.tgc_db_per_cm, geometry)
    return scan_convert(log_compress(gained, params), geometry, params, linear=gained)


def save_pgm(image, path, sidecar=None):
    """Binary P5 graymap plus a JSON sidecar next to it."""
    path = Path(path)
    rows, cols = image.pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes())
    side = {"rows": rows, "cols": cols, "pixel_spacing_mm": image.pixel_spacing,
            "origin_mm": [image.x0, image.z0], **image.meta, **(sidecar or {})}
    side_path = path.with_suffix(".json")
    side_path.write_text(json.dumps(side, indent=2, sort_keys=True), encoding="utf-8")
    return path, side_path


def load_pgm(path):
    """Read a P5 graymap written by :func:`save_pgm`, with its sidecar if present."""
    path = Path(path)
    data = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5" or tokens[3] != "255":
        raise ValueError(f"{path}: not an 8-bit P5 graymap")
    cols, rows = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + rows * cols], dtype=np.uint8).reshape(rows, cols).copy()
    side_path = path.with_suffix(".json")
    side = json.loads(side_path.read_text(encoding="utf-8")) if side_path.exists() else {}
    ps = float(side.get("pixel_spacing_mm", 1.0))
    x0, z0 = side.get("origin_mm", [0.0, 0.0])
    mask = np.ones(pixels.shape, dtype=bool)
    return BModeImage(pixels, mask, ps, float(x0), float(z0), None, side)


class TimeGainCompensation(BaseEstimator, TransformerMixin):
    def __init__(self, tgc_db_per_cm=1.5, sample_spacing=None):
        self.tgc_db_per_cm = tgc_db_per_cm
        self.sample_spacing = sample_spacing

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return apply_tgc(X, self.tgc_db_per_cm, self.sample_spacing)


class LogCompressor(BaseEstimator, TransformerMixin):
    def __init__(self, dynamic_range_db=75.0, reject_db=40.0):
        self.dynamic_range_db = dynamic_range_db
        self.reject_db = reject_db

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return log_compress(X, PostprocParams(dynamic_range_db=self.dynamic_range_db, reject_db=self.reject_db))


class ScanConverter(BaseEstimator, TransformerMixin):
    def __init__(self, geometry=None, pixel_spacing=0.23, output_pixels=None):
        self.geometry = geometry
        self.pixel_spacing = pixel_spacing
        self.output_pixels = output_pixels

    def fit(self, X=None, y=None):
        if self.geometry is None:
            raise ValueError("ScanConverter needs a scan geometry")
        self.params_ = PostprocParams(pixel_spacing=self.pixel_spacing, output_pixels=self.output_pixels)
        return self

    def transform(self, X):
        return scan_convert(X, self.geometry, self.params_)
