"""Path-tracing parameters, per-path state and keyed random streams."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .._validation import check_in_range, check_int, check_positive
from ..rng import uniform


@dataclass(frozen=True)
class SimParams:
    """Monte Carlo settings.

    Parameters
    ----------
    rays_per_scanline : int
        Paths ``N`` launched per scanline.
    max_collisions : int
        Stochastic scatter events per path.  Later interfaces only transmit.
    beam_coherence_c0 : float
        ``C0`` in the coherence weight ``C0 / (C0 + d)``.
    cone_sigma, cone_mean : float
        Truncated-normal parameters of the polar cone angle (radians).
    cone_bounds : tuple of float
        Truncation interval ``(a, b)`` of the polar angle.
    seed : int
        Root of every counter-based draw.
    importance_weighting : bool
        Multiply path weights by ``cos(theta) / p(omega)`` at each event
        instead of treating the cone lobe as the scattering distribution.
    min_intensity : float
        Paths whose intensity drops below this are terminated.
    """

    rays_per_scanline: int = 1000
    max_collisions: int = 7
    beam_coherence_c0: float = 0.1
    cone_sigma: float = math.pi / 4
    cone_bounds: tuple = (0.0, math.pi / 2)
    cone_mean: float = 0.0
    seed: int = 0
    importance_weighting: bool = False
    min_intensity: float = 1e-10

    def __post_init__(self):
        check_int(self.rays_per_scanline, "rays_per_scanline", 1)
        check_int(self.max_collisions, "max_collisions", 0)
        check_in_range(self.beam_coherence_c0, "beam_coherence_c0", 0.0, 1.0)
        check_positive(self.cone_sigma, "cone_sigma")
        a, b = (float(v) for v in self.cone_bounds)
        if not (0.0 <= a < b <= math.pi):
            raise ValueError(f"cone_bounds must satisfy 0 <= a < b <= pi, got {self.cone_bounds}")
        object.__setattr__(self, "cone_bounds", (a, b))
        check_in_range(self.cone_mean, "cone_mean", -math.pi, math.pi)
        check_int(self.seed, "seed", 0)
        check_positive(self.min_intensity, "min_intensity", strict=False)

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return SimParams(**values)

    def to_json(self):
        return {
            "num_rays_per_element": self.rays_per_scanline,
            "max_num_collisions": self.max_collisions,
            "beam_coherence": self.beam_coherence_c0,
            "seed": self.seed,
            "cone": {"mean": self.cone_mean, "sigma": self.cone_sigma,
                     "a": self.cone_bounds[0], "b": self.cone_bounds[1]},
            "importance_weighting": self.importance_weighting,
            "min_intensity": self.min_intensity,
        }

    @classmethod
    def from_json(cls, obj):
        known = {"num_rays_per_element", "max_num_collisions", "beam_coherence", "seed", "cone",
                 "importance_weighting", "min_intensity"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown simulation fields: {sorted(unknown)}")
        kwargs = {}
        if "num_rays_per_element" in obj:
            kwargs["rays_per_scanline"] = int(obj["num_rays_per_element"])
        if "max_num_collisions" in obj:
            kwargs["max_collisions"] = int(obj["max_num_collisions"])
        if "beam_coherence" in obj:
            kwargs["beam_coherence_c0"] = float(obj["beam_coherence"])
        if "seed" in obj:
            kwargs["seed"] = int(obj["seed"])
        cone = obj.get("cone", {})
        if "mean" in cone:
            kwargs["cone_mean"] = float(cone["mean"])
        if "sigma" in cone:
            kwargs["cone_sigma"] = float(cone["sigma"])
        if "a" in cone or "b" in cone:
            kwargs["cone_bounds"] = (float(cone.get("a", 0.0)), float(cone.get("b", math.pi / 2)))
        if "importance_weighting" in obj:
            kwargs["importance_weighting"] = bool(obj["importance_weighting"])
        if "min_intensity" in obj:
            kwargs["min_intensity"] = float(obj["min_intensity"])
        return cls(**kwargs)


def load_sim_params(path):
    with open(path, encoding="utf-8") as fh:
        return SimParams.from_json(json.load(fh))


@dataclass(frozen=True)
class RngStream:
    """Draws keyed by ``(seed, scanline, ray, collision, draw)``."""

    seed: int
    scanline: int = 0
    ray: int = 0

    def uniform(self, collision, draw):
        return float(uniform(np.int64(self.seed), np.int64(self.scanline), np.int64(self.ray),
                             np.int64(collision), np.int64(draw)))


@dataclass(frozen=True, eq=False)
class RayState:
    position: np.ndarray
    direction: np.ndarray
    intensity: float = 1.0
    current_label: int = 0
    collisions: int = 0
    path_weight: float = 1.0
    reflected: bool = field(default=False)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if self.intensity < 0:
            raise ValueError("ray intensity must be >= 0")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
