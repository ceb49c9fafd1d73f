"""Virtual probe: element layout, scanline fan and pose.

The probe frame has lateral = local x, elevation = local y and the beam
axis (depth) = local z.  A pose places that frame in world space through a
unit quaternion ``(w, x, y, z)`` and the position of the probe face center.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import check_int, check_positive, check_vector3

C_REF = 1540.0


@dataclass(frozen=True)
class TransducerConfig:
    """Probe parameters.  Frequencies in Hz, lengths in mm, angles in radians."""

    center_frequency: float = 3.6e6
    sampling_frequency: float = 50e6
    element_width: float = 0.25
    element_height: float = 13.0
    kerf: float = 0.05
    num_elements: int = 128
    geometry: str = "phased"
    fan_angle: float = math.radians(75.0)
    c_ref: float = C_REF

    def __post_init__(self):
        check_positive(self.center_frequency, "center_frequency")
        check_positive(self.sampling_frequency, "sampling_frequency")
        if self.sampling_frequency < 4 * self.center_frequency:
            raise ValueError("sampling_frequency must be at least 4x the center frequency")
        check_positive(self.element_width, "element_width")
        check_positive(self.element_height, "element_height")
        check_positive(self.kerf, "kerf", strict=False)
        check_int(self.num_elements, "num_elements", 1)
        if self.geometry not in ("phased", "linear"):
            raise ValueError(f"geometry must be 'phased' or 'linear', got {self.geometry!r}")
        if not 0.0 < self.fan_angle < math.pi:
            raise ValueError(f"fan_angle must lie in (0, pi), got {self.fan_angle}")
        check_positive(self.c_ref, "c_ref")

    @property
    def pitch(self):
        return self.element_width + self.kerf

    @property
    def wavelength(self):
        """Wavelength at the center frequency (mm)."""
        return self.c_ref * 1e3 / self.center_frequency

    @property
    def sample_spacing(self):
        """Radial distance between RF samples (mm): ``c / (2 fs)``."""
        return self.c_ref * 1e3 / (2.0 * self.sampling_frequency)

    def replace(self, **changes):
        values = self.__dict__.copy()
        values.update(changes)
        return TransducerConfig(**values)

    def to_json(self):
        return {
            "center_frequency_hz": self.center_frequency,
            "sampling_frequency_hz": self.sampling_frequency,
            "element_width_mm": self.element_width,
            "element_height_mm": self.element_height,
            "kerf_mm": self.kerf,
            "num_elements": self.num_elements,
            "scan_geometry": self.geometry,
            "fan_angle_deg": math.degrees(self.fan_angle),
            "c_ref_m_s": self.c_ref,
        }

    @classmethod
    def from_json(cls, obj):
        keys = {"center_frequency_hz": "center_frequency", "sampling_frequency_hz": "sampling_frequency",
                "element_width_mm": "element_width", "element_height_mm": "element_height",
                "kerf_mm": "kerf", "num_elements": "num_elements", "scan_geometry": "geometry",
                "fan_angle_deg": "fan_angle", "c_ref_m_s": "c_ref"}
        unknown = set(obj) - set(keys)
        if unknown:
            raise ValueError(f"unknown transducer fields: {sorted(unknown)}")
        kwargs = {keys[k]: v for k, v in obj.items()}
        if "fan_angle" in kwargs:
            kwargs["fan_angle"] = math.radians(float(kwargs["fan_angle"]))
        if "num_elements" in kwargs:
            kwargs["num_elements"] = int(kwargs["num_elements"])
        for k in ("center_frequency", "sampling_frequency", "element_width", "element_height", "kerf", "c_ref"):
            if k in kwargs:
                kwargs[k] = float(kwargs[k])
        return cls(**kwargs)


def load_transducer(path):
    with open(path, encoding="utf-8") as fh:
        return TransducerConfig.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class ProbePose:
    """Probe face position (mm) and orientation quaternion ``(w, x, y, z)``."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", check_vector3(self.position, "position"))
        q = np.asarray(self.orientation, dtype=np.float64)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError(f"orientation must be a quaternion (w, x, y, z), got {self.orientation!r}")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"orientation quaternion must be normalized (|q| = {np.linalg.norm(q):.9f})")
        object.__setattr__(self, "orientation", q)

    @property
    def rotation(self):
        """3x3 matrix whose columns are the lateral, elevation and axial axes."""
        w, x, y, z = self.orientation
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    @property
    def lateral(self):
        return self.rotation[:, 0]

    @property
    def elevation(self):
        return self.rotation[:, 1]

    @property
    def axial(self):
        return self.rotation[:, 2]

    @classmethod
    def from_matrix(cls, position, matrix):
        x, y, z, w = Rotation.from_matrix(np.asarray(matrix, dtype=np.float64)).as_quat()
        q = np.array([w, x, y, z])
        return cls(position, q / np.linalg.norm(q))

    @classmethod
    def look_at(cls, position, axial, lateral):
        """Pose with beam axis ``axial`` and in-plane lateral direction ``lateral``."""
        a = np.asarray(axial, dtype=np.float64)
        a = a / np.linalg.norm(a)
        lat = np.asarray(lateral, dtype=np.float64)
        lat = lat - (lat @ a) * a
        lat = lat / np.linalg.norm(lat)
        elev = np.cross(a, lat)
        return cls.from_matrix(position, np.column_stack([lat, elev, a]))

    def transformed(self, rotation, translation):
        """Pose after the rigid motion ``x -> rotation @ x + translation``."""
        r = np.asarray(rotation, dtype=np.float64)
        return ProbePose.from_matrix(r @ self.position + np.asarray(translation), r @ self.rotation)

    def to_json(self):
        return {"position_mm": [float(v) for v in self.position],
                "orientation_wxyz": [float(v) for v in self.orientation]}

    @classmethod
    def from_json(cls, obj):
        q = np.asarray(obj.get("orientation_wxyz", [1, 0, 0, 0]), dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) <= 1e-3:
            q = q / np.linalg.norm(q)
        return cls(obj["position_mm"], q)


@dataclass(frozen=True, eq=False)
class Scanline:
    index: int
    origin: np.ndarray
    direction: np.ndarray
    num_samples: int
    sample_spacing: float
    lateral: np.ndarray
    elevation: np.ndarray

    @property
    def depth(self):
        return self.num_samples * self.sample_spacing

    def point(self, r):
        return self.origin + np.multiply.outer(np.asarray(r, dtype=np.float64), self.direction)


@dataclass(frozen=True, eq=False)
class ScanGeometry:
    """A scanline fan plus the scan-plane coordinates of each line.

    ``positions`` holds the steering angle (phased, radians) or the lateral
    offset of each line (linear, mm).
    """

    kind: str
    scanlines: tuple
    positions: np.ndarray
    depth: float
    pose: ProbePose
    config: TransducerConfig

    @property
    def num_scanlines(self):
        return len(self.scanlines)

    @property
    def num_samples(self):
        return self.scanlines[0].num_samples

    @property
    def sample_spacing(self):
        return self.scanlines[0].sample_spacing

    @property
    def origins(self):
        return np.array([s.origin for s in self.scanlines])

    @property
    def directions(self):
        return np.array([s.direction for s in self.scanlines])

    @property
    def laterals(self):
        return np.array([s.lateral for s in self.scanlines])

    @property
    def elevations(self):
        return np.array([s.elevation for s in self.scanlines])

    @property
    def radii(self):
        return np.arange(self.num_samples) * self.sample_spacing


def _steering(cfg):
    n = cfg.num_elements
    step = cfg.fan_angle / (n - 1) if n > 1 else 0.0
    return (np.arange(n) - (n - 1) / 2.0) * step


def make_scanlines(cfg, pose, depth, c_ref=None):
    """Scanlines for ``cfg`` placed at ``pose``, each ``depth`` mm long.

    Phased probes fan ``num_elements`` lines from a common apex at the face
    center; linear probes emit parallel lines one pitch apart.  Sample
    ``m`` of a line sits at radius ``m * sample_spacing``.
    """
    return list(make_geometry(cfg, pose, depth, c_ref).scanlines)


def make_geometry(cfg, pose, depth, c_ref=None):
    if not (isinstance(depth, (int, float, np.floating)) and depth > 0 and np.isfinite(depth)):
        raise ValueError(f"depth must be positive, got {depth!r}")
    c = cfg.c_ref if c_ref is None else float(c_ref)
    spacing = c * 1e3 / (2.0 * cfg.sampling_frequency)
    num_samples = int(math.ceil(depth / spacing - 1e-9))
    rot = pose.rotation
    lat, elev, ax = rot[:, 0], rot[:, 1], rot[:, 2]
    lines = []
    if cfg.geometry == "phased":
        positions = _steering(cfg)
        for k, a in enumerate(positions):
            ca, sa = math.cos(a), math.sin(a)
            lines.append(Scanline(k, pose.position.copy(), ca * ax + sa * lat, num_samples, spacing,
                                  ca * lat - sa * ax, elev.copy()))
    else:
        positions = (np.arange(cfg.num_elements) - (cfg.num_elements - 1) / 2.0) * cfg.pitch
        for k, x in enumerate(positions):
            lines.append(Scanline(k, pose.position + x * lat, ax.copy(), num_samples, spacing,
                                  lat.copy(), elev.copy()))
    return ScanGeometry(cfg.geometry, tuple(lines), np.asarray(positions, dtype=np.float64),
                        float(depth), pose, cfg)
