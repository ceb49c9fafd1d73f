"""Virtual calibration phantoms and their analytic ground truth.

Coordinates follow the probe frame of a pose at the origin: ``x`` lateral,
``y`` elevation and ``z`` depth, all in mm.  Wires and lesions are
cylinders along ``y``; artefact spheres are balls centered on the imaging
plane.  Each shape gets its own label so its distance field stays compact;
the ground truth keeps exact analytic positions rather than voxel centroids.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .anatomy import SegmentationVolume, TissueProperties

ANECHOIC = float("-inf")
SPHERE_KINDS = ("anechoic", "high_attenuation", "reflective")

DEFAULT_BACKGROUND = TissueProperties(z=1.54e6, alpha=0.5, c=1540.0, mu0=0.03, sigma0=0.0, mu1=1.0,
                                      name="background")
# the higher-attenuation phantom grade, which makes the artefacts distinct
ARTEFACT_BACKGROUND = DEFAULT_BACKGROUND.replace(alpha=0.7)


@dataclass(frozen=True)
class Wire:
    position: tuple
    radius: float = 0.25
    group: str = ""


@dataclass(frozen=True)
class Lesion:
    center: tuple
    radius: float
    contrast_db: float
    name: str = ""


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    kind: str
    name: str = ""


@dataclass(frozen=True)
class PhantomSpec:
    """Shapes, background tissue and the imaging settings of one view.

    ``extent`` is ``((x0, x1), (y0, y1), (z0, z1))``; ``None`` wraps the
    shapes with a margin.  ``scatter_region`` restricts scatterers to an
    in-plane rectangle ``((x0, x1), (z0, z1))``; ``None`` covers the fan.
    """

    name: str = "phantom"
    background: TissueProperties = DEFAULT_BACKGROUND
    wires: tuple = ()
    lesions: tuple = ()
    spheres: tuple = ()
    extent: tuple = None
    spacing: tuple = (0.1, 1.0, 0.1)
    depth: float = 110.0
    scatter_region: tuple = None
    beam: dict = field(default_factory=lambda: dict(PHANTOM_BEAM))

    def __post_init__(self):
        for w in self.wires:
            if w.radius <= 0:
                raise ValueError("wire radii must be > 0")
        for s in tuple(self.lesions) + tuple(self.spheres):
            if s.radius <= 0:
                raise ValueError("lesion and sphere radii must be > 0")
        for s in self.spheres:
            if s.kind not in SPHERE_KINDS:
                raise ValueError(f"sphere kind must be one of {SPHERE_KINDS}, got {s.kind!r}")
        if self.extent is not None:
            box = self.bounding_box(0.0)
            ext = np.asarray(self.extent, dtype=np.float64)
            if box is not None and (np.any(box[:, 0] < ext[:, 0] - 1e-9) or np.any(box[:, 1] > ext[:, 1] + 1e-9)):
                raise ValueError("all shapes must lie inside the phantom extent")

    def bounding_box(self, margin=2.0):
        """``(3, 2)`` box around all shapes, or ``None`` for an empty spec."""
        boxes = []
        for w in self.wires:
            x, z = w.position
            boxes.append([[x - w.radius, x + w.radius], [0, 0], [z - w.radius, z + w.radius]])
        for s in self.lesions:
            x, z = s.center
            boxes.append([[x - s.radius, x + s.radius], [0, 0], [z - s.radius, z + s.radius]])
        for s in self.spheres:
            c = _center3(s.center)
            boxes.append([[c[i] - s.radius, c[i] + s.radius] for i in range(3)])
        if not boxes:
            return None
        b = np.asarray(boxes, dtype=np.float64)
        return np.column_stack([b[:, :, 0].min(axis=0) - margin, b[:, :, 1].max(axis=0) + margin])

    def to_json(self):
        return {
            "name": self.name,
            "background": self.background.to_json(),
            "wires": [{"position_mm": list(w.position), "radius_mm": w.radius, "group": w.group}
                      for w in self.wires],
            "lesions": [{"center_mm": list(s.center), "radius_mm": s.radius,
                         "contrast_db": "anechoic" if s.contrast_db == ANECHOIC else s.contrast_db,
                         "name": s.name} for s in self.lesions],
            "spheres": [{"center_mm": list(s.center), "radius_mm": s.radius, "kind": s.kind, "name": s.name}
                        for s in self.spheres],
            "extent_mm": [list(e) for e in self.extent] if self.extent is not None else None,
            "spacing_mm": list(self.spacing),
            "depth_mm": self.depth,
            "scatter_region_mm": [list(r) for r in self.scatter_region] if self.scatter_region else None,
            "beam": self.beam,
        }

    @classmethod
    def from_json(cls, obj):
        known = {"name", "background", "wires", "lesions", "spheres", "extent_mm", "spacing_mm", "depth_mm",
                 "scatter_region_mm", "beam"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown phantom fields: {sorted(unknown)}")

        def contrast(v):
            return ANECHOIC if v in ("anechoic", None) else float(v)

        try:
            wires = tuple(Wire(tuple(w["position_mm"]), float(w.get("radius_mm", 0.25)), str(w.get("group", "")))
                          for w in obj.get("wires", []))
            lesions = tuple(Lesion(tuple(s["center_mm"]), float(s["radius_mm"]), contrast(s["contrast_db"]),
                                   str(s.get("name", ""))) for s in obj.get("lesions", []))
            spheres = tuple(Sphere(tuple(s["center_mm"]), float(s["radius_mm"]), str(s["kind"]),
                                   str(s.get("name", ""))) for s in obj.get("spheres", []))
        except KeyError as exc:
            raise ValueError(f"phantom shape is missing field {exc}") from exc
        kwargs = {"name": str(obj.get("name", "phantom")), "wires": wires, "lesions": lesions, "spheres": spheres}
        if "background" in obj:
            kwargs["background"] = TissueProperties.from_json(obj["background"])
        if obj.get("extent_mm") is not None:
            kwargs["extent"] = tuple(tuple(float(v) for v in e) for e in obj["extent_mm"])
        if "spacing_mm" in obj:
            sp = obj["spacing_mm"]
            kwargs["spacing"] = tuple(float(v) for v in (sp if isinstance(sp, list) else [sp] * 3))
        if "depth_mm" in obj:
            kwargs["depth"] = float(obj["depth_mm"])
        if obj.get("scatter_region_mm"):
            kwargs["scatter_region"] = tuple(tuple(float(v) for v in r) for r in obj["scatter_region_mm"])
        if "beam" in obj:
            kwargs["beam"] = dict(obj["beam"])
        return cls(**kwargs)


def load_phantom_spec(path):
    """Parse a phantom JSON file; syntax errors report line and column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return PhantomSpec.from_json(obj)


def _center3(center):
    c = tuple(float(v) for v in center)
    return (c[0], 0.0, c[1]) if len(c) == 2 else c


def lesion_tissue(base, contrast_db):
    """Tissue of a lesion ``contrast_db`` above ``base`` in echo amplitude.

    ``-inf`` (:data:`ANECHOIC`) removes all scatterers.
    """
    if contrast_db == ANECHOIC or (isinstance(contrast_db, str) and contrast_db == "anechoic"):
        return base.replace(mu0=0.0, mu1=0.0, name="anechoic lesion")
    if contrast_db == 0:
        return base
    mu0 = float(np.clip(base.mu0 * 10.0 ** (contrast_db / 20.0), 0.0, 1.0))
    return base.replace(mu0=mu0, name=f"lesion {contrast_db:+g} dB")


def wire_tissue(base):
    """Nylon target: strong scatterers, impedance matched to the background."""
    return base.replace(mu0=1.0, sigma0=0.0, mu1=1.0, name="wire")


def sphere_tissue(base, kind):
    if kind == "anechoic":
        return base.replace(mu0=0.0, mu1=0.0, alpha=0.0, name="anechoic sphere")
    if kind == "high_attenuation":
        return base.replace(z=7.8e6, alpha=20.0, name="attenuating sphere")
    if kind == "reflective":
        return base.replace(z=7.8e6, name="reflective sphere")
    raise ValueError(f"unknown sphere kind {kind!r}")


class GroundTruth(NamedTuple):
    """Analytic target positions in the imaging plane (``x``, ``z`` mm)."""

    wires: tuple
    lesions: tuple
    spheres: tuple
    speckle_region: tuple = None

    def wire_groups(self):
        groups = {}
        for w in self.wires:
            groups.setdefault(w["group"], []).append(w)
        return groups

    def lesion_mask(self, image, index):
        les = self.lesions[index]
        xx, zz = image.coords()
        return image.mask & ((xx - les["center"][0]) ** 2 + (zz - les["center"][1]) ** 2 <= les["radius"] ** 2)

    def background_mask(self, image, index, gap=2.0):
        """Annulus around lesion ``index`` with the lesion's area, minus other shapes."""
        les = self.lesions[index]
        r = les["radius"]
        r_in = r + gap
        r_out = math.sqrt(r_in ** 2 + r ** 2)
        xx, zz = image.coords()
        d2 = (xx - les["center"][0]) ** 2 + (zz - les["center"][1]) ** 2
        mask = image.mask & (d2 >= r_in ** 2) & (d2 <= r_out ** 2)
        for j, other in enumerate(self.lesions):
            if j != index:
                od2 = (xx - other["center"][0]) ** 2 + (zz - other["center"][1]) ** 2
                mask &= od2 > (other["radius"] + gap) ** 2
        return mask

    def to_json(self):
        def clean(d):
            return {k: ("anechoic" if v == ANECHOIC else v) for k, v in d.items()}

        return {"wires": list(self.wires), "lesions": [clean(d) for d in self.lesions],
                "spheres": list(self.spheres),
                "speckle_region_mm": [list(r) for r in self.speckle_region] if self.speckle_region else None}

    @classmethod
    def from_json(cls, obj):
        lesions = tuple({k: (ANECHOIC if v == "anechoic" else v) for k, v in d.items()}
                        for d in obj.get("lesions", []))
        region = obj.get("speckle_region_mm")
        return cls(tuple(obj.get("wires", [])), lesions, tuple(obj.get("spheres", [])),
                   tuple(tuple(r) for r in region) if region else None)


def load_ground_truth(path):
    return GroundTruth.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class PhantomBuild(NamedTuple):
    segmentation: SegmentationVolume
    tissues: dict
    truth: GroundTruth


def build_phantom(spec, spacing=None):
    """Voxelize ``spec`` into a label volume, tissue table and ground truth.

    Overlapping shapes are resolved in favour of the later one, with a
    warning.  A shape thinner than a voxel still claims the voxel column
    nearest to its axis.
    """
    spacing = np.asarray(spec.spacing if spacing is None else spacing, dtype=np.float64)
    spacing = np.broadcast_to(spacing, (3,)).astype(np.float64)
    if np.any(spacing <= 0):
        raise ValueError("spacing must be > 0")
    box = np.asarray(spec.extent, dtype=np.float64) if spec.extent is not None else spec.bounding_box()
    if box is None:
        box = np.array([[-1.0, 1.0], [-1.0, 1.0], [0.0, 2.0]])
    # elevation-invariant shapes still need the scatterer slab covered
    if not spec.spheres and spec.extent is None:
        half = _slab_halfwidth(spec.beam)
        box[1] = [-half - spacing[1], half + spacing[1]]
    dims = np.maximum(1, np.ceil((box[:, 1] - box[:, 0]) / spacing - 1e-9).astype(int))
    origin = box[:, 0]
    n_shapes = len(spec.wires) + len(spec.lesions) + len(spec.spheres)
    dtype = np.uint8 if n_shapes < 256 else np.uint16
    labels = np.zeros(tuple(dims), dtype=dtype)
    centers = [origin[a] + (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)]
    tissues = {0: spec.background}
    wires, lesions, spheres = [], [], []
    label = 0

    def paint(lab, sl, inside):
        region = labels[sl]
        clash = inside & (region != 0)
        if clash.any():
            warnings.warn(f"shape label {lab} overlaps an earlier shape; the later shape wins", stacklevel=3)
        region[inside] = lab

    def index_range(axis, lo, hi):
        i0 = max(0, int(math.floor((lo - origin[axis]) / spacing[axis])))
        i1 = min(dims[axis], int(math.ceil((hi - origin[axis]) / spacing[axis])))
        return slice(i0, max(i0, i1))

    def disk(x, z, r):
        sx = index_range(0, x - r, x + r)
        sz = index_range(2, z - r, z + r)
        d2 = (centers[0][sx, None] - x) ** 2 + (centers[2][None, sz] - z) ** 2
        inside = d2 <= r * r
        if not inside.any():
            # thin target: keep the nearest column
            i = int(np.clip(math.floor((x - origin[0]) / spacing[0]), 0, dims[0] - 1))
            k = int(np.clip(math.floor((z - origin[2]) / spacing[2]), 0, dims[2] - 1))
            sx, sz = slice(i, i + 1), slice(k, k + 1)
            inside = np.ones((1, 1), dtype=bool)
        return (sx, slice(None), sz), np.broadcast_to(inside[:, None, :], (inside.shape[0], dims[1], inside.shape[1]))

    for w in spec.wires:
        label += 1
        tissues[label] = wire_tissue(spec.background)
        sl, inside = disk(*w.position, w.radius)
        paint(label, sl, inside)
        wires.append({"id": label, "group": w.group, "position": [float(v) for v in w.position],
                      "radius": w.radius})
    for s in spec.lesions:
        label += 1
        tissues[label] = lesion_tissue(spec.background, s.contrast_db)
        sl, inside = disk(*s.center, s.radius)
        paint(label, sl, inside)
        lesions.append({"id": label, "name": s.name, "center": [float(v) for v in s.center],
                        "radius": s.radius, "contrast_db": s.contrast_db})
    for s in spec.spheres:
        label += 1
        tissues[label] = sphere_tissue(spec.background, s.kind)
        c = _center3(s.center)
        sl = tuple(index_range(a, c[a] - s.radius, c[a] + s.radius) for a in range(3))
        d2 = sum(((centers[a][sl[a]] - c[a]) ** 2).reshape([-1 if b == a else 1 for b in range(3)])
                 for a in range(3))
        paint(label, sl, d2 <= s.radius ** 2)
        spheres.append({"id": label, "name": s.name, "kind": s.kind, "center": [c[0], c[2]],
                        "elevation": c[1], "radius": s.radius})
    seg = SegmentationVolume(labels, spacing, origin)
    truth = GroundTruth(tuple(wires), tuple(lesions), tuple(spheres), spec.scatter_region)
    return PhantomBuild(seg, tissues, truth)


def _slab_halfwidth(beam):
    kind = beam.get("kind", "analytic")
    if kind == "analytic":
        return 3.0 * float(beam.get("sigma_e_mm", 1.0))
    return float(beam.get("elevation_extent_mm", 6.0))


# Gaussian focused beam standing in for the phantom experiment's offline
# pulse-echo field (focus at 5 cm); widths are chosen, not measured.
PHANTOM_BEAM = {"kind": "gaussian_focus", "focus_mm": 50.0, "sigma0_l_mm": 0.8, "sigma0_e_mm": 1.0,
                "wavelength_mm": 1540.0 / 3.6e6 * 1e3, "max_depth_mm": 160.0, "num_depths": 161,
                "lateral_extent_mm": 8.0, "num_lateral": 161, "elevation_extent_mm": 6.0, "num_elevation": 61}
SPECKLE_BEAM = {"kind": "analytic", "sigma_l_mm": 2.0, "sigma_e_mm": 2.0}


def _wire_view(name, vertical_x, vertical_z0, near_z, near_x, far_z, far_x):
    wires = [Wire((vertical_x, vertical_z0 + 10.0 * i), 0.25, "vertical") for i in range(10)]
    wires += [Wire((x, near_z), 0.25, "horizontal_near") for x in near_x]
    wires += [Wire((x, far_z), 0.25, "horizontal_far") for x in far_x]
    return PhantomSpec(name=name, wires=tuple(wires), depth=110.0)


def builtin_specs():
    """The phantom views used by the acceptance suite, keyed by name."""
    speckle_bg = TissueProperties(z=1.54e6, alpha=0.0, mu0=1.0, sigma0=0.0, mu1=1.0, name="speckle")
    specs = [
        PhantomSpec(name="speckle", background=speckle_bg, depth=55.0, spacing=(1.0, 1.0, 1.0),
                    scatter_region=((-20.0, 20.0), (10.0, 50.0)), beam=dict(SPECKLE_BEAM)),
        _wire_view("wires_1", 0.0, 10.0, 35.0, (-20.0, -10.0, 5.0, 15.0, 22.0),
                   90.0, (-40.0, -25.0, -10.0, 12.0, 30.0)),
        _wire_view("wires_2", -15.0, 15.0, 40.0, (-25.0, -5.0, 5.0, 15.0, 25.0),
                   95.0, (-45.0, -30.0, 0.0, 15.0, 35.0)),
        _wire_view("wires_3", 12.0, 12.0, 27.0, (-18.0, -10.0, -2.0, 6.0, 18.0),
                   85.0, (-35.0, -20.0, -5.0, 25.0, 40.0)),
        PhantomSpec(name="lesions_hyperechoic", depth=80.0, spacing=(0.1, 1.0, 0.1),
                    lesions=(Lesion((-12.0, 40.0), 5.0, 6.0, "hyperechoic +6 dB"),
                             Lesion((12.0, 40.0), 5.0, 15.0, "hyperechoic +15 dB"))),
        PhantomSpec(name="lesions_anechoic", depth=90.0, spacing=(0.1, 1.0, 0.1),
                    lesions=(Lesion((-12.0, 35.0), 5.0, ANECHOIC, "anechoic 1"),
                             Lesion((0.0, 55.0), 5.0, ANECHOIC, "anechoic 2"),
                             Lesion((12.0, 75.0), 5.0, ANECHOIC, "anechoic 3"))),
        PhantomSpec(name="artefact_enhancement", background=ARTEFACT_BACKGROUND,
                    depth=110.0, spacing=(0.5, 0.5, 0.5), spheres=(Sphere((0.0, 0.0, 45.0), 10.0, "anechoic"),)),
        PhantomSpec(name="artefact_shadow", background=ARTEFACT_BACKGROUND,
                    depth=110.0, spacing=(0.5, 0.5, 0.5),
                    spheres=(Sphere((0.0, 0.0, 45.0), 10.0, "high_attenuation"),)),
    ]
    return {s.name: s for s in specs}


def builtin_spec(name):
    specs = builtin_specs()
    if name not in specs:
        raise KeyError(f"unknown built-in phantom {name!r}; choose from {sorted(specs)}")
    return specs[name]
