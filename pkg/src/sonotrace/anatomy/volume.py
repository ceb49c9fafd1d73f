"""Dense segmentation volumes, tissue tables and their on-disk formats.

A segmentation is stored as a JSON header next to a raw little-endian
payload in x-fastest order::

    {"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz],
     "origin_mm": [ox, oy, oz], "dtype": "u8", "data": "name.raw"}

Voxel ``(i, j, k)`` covers ``origin + [i, i+1) * spacing`` along each axis.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .._validation import check_in_range, check_positive, check_vector3

_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2")}


@dataclass(frozen=True)
class TissueProperties:
    """Acoustic and scatterer parameters of one tissue label.

    ``z`` is the acoustic impedance (kg m^-2 s^-1), ``alpha`` the attenuation
    in dB cm^-1 MHz^-1 and ``c`` the sound speed in m/s.  ``mu0``/``sigma0``
    set the scatterer amplitude distribution, ``mu1`` the probability that
    a scatterer candidate is kept, ``tau``/``gamma`` shape boundary echoes.
    """

    z: float
    alpha: float
    c: float = 1540.0
    mu0: float = 0.0
    sigma0: float = 0.0
    mu1: float = 0.0
    tau: float = 1.0
    gamma: float = 0.0
    name: str = ""

    def __post_init__(self):
        check_positive(self.z, "z")
        check_positive(self.alpha, "alpha", strict=False)
        check_positive(self.c, "c")
        for attr in ("mu0", "sigma0", "mu1"):
            check_in_range(getattr(self, attr), attr, 0.0, 1.0)
        check_in_range(self.tau, "tau", 0.0, 3.0)
        check_in_range(self.gamma, "gamma", -2.0, 2.0)

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return TissueProperties(**values)

    def to_json(self):
        return {
            "name": self.name, "z": self.z, "alpha_db_cm_mhz": self.alpha,
            "c_m_s": self.c, "mu0": self.mu0, "sigma0": self.sigma0,
            "mu1": self.mu1, "tau": self.tau, "gamma": self.gamma,
        }

    @classmethod
    def from_json(cls, obj):
        known = {"name", "z", "alpha_db_cm_mhz", "c_m_s", "mu0", "sigma0", "mu1", "tau", "gamma"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown tissue fields: {sorted(unknown)}")
        return cls(
            z=float(obj["z"]), alpha=float(obj["alpha_db_cm_mhz"]),
            c=float(obj.get("c_m_s", 1540.0)), mu0=float(obj.get("mu0", 0.0)),
            sigma0=float(obj.get("sigma0", 0.0)), mu1=float(obj.get("mu1", 0.0)),
            tau=float(obj.get("tau", 1.0)), gamma=float(obj.get("gamma", 0.0)),
            name=str(obj.get("name", "")),
        )


def load_tissue_table(path):
    """Read a JSON map ``label -> tissue`` into ``{int: TissueProperties}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    table = {}
    for key, obj in raw.items():
        try:
            label = int(key)
        except ValueError as exc:
            raise ValueError(f"tissue table key {key!r} is not an integer label") from exc
        try:
            table[label] = TissueProperties.from_json(obj)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"tissue table entry for label {label}: {exc}") from exc
    return table


def save_tissue_table(tissues, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({str(k): v.to_json() for k, v in sorted(tissues.items())}, fh, indent=2)


@dataclass(frozen=True, eq=False)
class SegmentationVolume:
    """Dense label volume indexed ``labels[i, j, k]`` with x = i."""

    labels: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3-D array, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer) or (labels.size and labels.min() < 0):
            raise ValueError("labels must hold unsigned integer tissue labels")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", check_vector3(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", check_vector3(self.origin, "origin"))

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)

    @property
    def extent(self):
        return self.origin + np.asarray(self.dims) * self.spacing

    def present_labels(self):
        return [int(v) for v in np.unique(self.labels)]

    def voxel_centers(self, axis):
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    def check_tissues(self, tissues):
        """Raise if a present label (or the background) has no tissue entry."""
        missing = [lab for lab in set(self.present_labels()) | {0} if lab not in tissues]
        if missing:
            raise ValueError(f"no tissue properties for label(s) {sorted(missing)}")


def load_segmentation(header_path):
    """Load a segmentation from its JSON header and raw payload."""
    header_path = Path(header_path)
    if not header_path.is_file():
        raise FileNotFoundError(f"segmentation header not found: {header_path}")
    with open(header_path, encoding="utf-8") as fh:
        header = json.load(fh)
    try:
        dims = [int(n) for n in header["dims"]]
        spacing = header["spacing_mm"]
        origin = header.get("origin_mm", [0.0, 0.0, 0.0])
        dtype_name = header["dtype"]
        data_name = header["data"]
    except KeyError as exc:
        raise ValueError(f"segmentation header missing field {exc}") from exc
    if dtype_name not in _DTYPES:
        raise ValueError(f"unknown dtype {dtype_name!r}; expected one of {sorted(_DTYPES)}")
    if len(dims) != 3 or min(dims) <= 0:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    data_path = header_path.parent / data_name
    if not data_path.is_file():
        raise FileNotFoundError(f"segmentation payload not found: {data_path}")
    payload = np.fromfile(data_path, dtype=_DTYPES[dtype_name])
    expected = math.prod(dims)
    if payload.size != expected:
        raise ValueError(
            f"payload {data_path.name} holds {payload.size} voxels, header dims {dims} need {expected}")
    labels = payload.reshape(dims, order="F")
    return SegmentationVolume(labels=labels, spacing=spacing, origin=origin)


def save_segmentation(seg, header_path):
    """Write ``seg`` as ``<name>.json`` + ``<name>.raw``."""
    header_path = Path(header_path)
    dtype_name = "u8" if seg.labels.max(initial=0) <= 255 else "u16"
    data_path = header_path.with_suffix(".raw")
    seg.labels.astype(_DTYPES[dtype_name]).ravel(order="F").tofile(data_path)
    header = {
        "dims": list(seg.dims),
        "spacing_mm": [float(v) for v in seg.spacing],
        "origin_mm": [float(v) for v in seg.origin],
        "dtype": dtype_name,
        "data": data_path.name,
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
    return header_path
