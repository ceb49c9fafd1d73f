"""Per-scanline echo intensity ``I_Tr`` and the single-event API."""

from dataclasses import dataclass, field

import numpy as np

from .params import RayState
from .physics import DRAW_AZIMUTH, DRAW_BETA, DRAW_POLAR, coherence_weight, scatter_kernel


@dataclass(eq=False)
class IntensityMap:
    """Accumulated ``I_Tr`` per (scanline, radial sample).

    ``interior`` collects the propagating intensity, ``boundary`` the
    interface echoes; ``values`` is their sum.  ``hits`` counts deposits
    and ``max_deposit`` records the largest single deposit per scanline.
    """

    interior: np.ndarray
    boundary: np.ndarray
    hits: np.ndarray
    max_deposit: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.max_deposit is None:
            self.max_deposit = np.zeros(self.interior.shape[0])

    @classmethod
    def zeros(cls, num_scanlines, num_samples):
        return cls(np.zeros((num_scanlines, num_samples)), np.zeros((num_scanlines, num_samples)),
                   np.zeros((num_scanlines, num_samples), dtype=np.int64))

    @property
    def shape(self):
        return self.interior.shape

    @property
    def values(self):
        return self.interior + self.boundary

    def __add__(self, other):
        return IntensityMap(self.interior + other.interior, self.boundary + other.boundary,
                            self.hits + other.hits, np.maximum(self.max_deposit, other.max_deposit))


def deposit(imap, scanline, point, value, params, channel="interior"):
    """Add ``value * w_R`` at the radial bin nearest to ``point``'s projection.

    Returns the bin index, or ``None`` when the projection falls outside the
    scanline.
    """
    if value < 0:
        raise ValueError("deposit value must be >= 0")
    rel = np.asarray(point, dtype=np.float64) - scanline.origin
    r = float(rel @ scanline.direction)
    k = int(np.floor(r / scanline.sample_spacing + 0.5))
    if r < 0 or k >= scanline.num_samples:
        return None
    d = float(np.linalg.norm(rel - r * scanline.direction))
    w = coherence_weight(params.beam_coherence_c0, d)
    target = imap.boundary if channel == "boundary" else imap.interior
    target[scanline.index, k] += value * w
    imap.hits[scanline.index, k] += 1
    imap.max_deposit[scanline.index] = max(imap.max_deposit[scanline.index], value * w)
    return k


@dataclass(frozen=True)
class Boundary:
    z1: float
    z2: float
    normal: np.ndarray
    label_beyond: int = 0


def scatter_event(ray, boundary, params, stream):
    """Stochastically reflect or refract ``ray`` at ``boundary``.

    The normal is flipped to oppose the incident direction if needed.  The
    ray intensity is multiplied by ``f`` (``R`` or ``T``).  With
    ``params.importance_weighting`` the path weight is multiplied by
    ``cos(theta1) / p(omega)``; otherwise the cone lobe is the scattering
    distribution itself and the weight is unchanged.
    """
    d = ray.direction
    n = np.asarray(boundary.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    if n @ d > 0:
        n = -n
    c = ray.collisions
    a, b = params.cone_bounds
    reflected, f, ex, ey, ez, pdf, cos1 = scatter_kernel(
        d[0], d[1], d[2], n[0], n[1], n[2], float(boundary.z1), float(boundary.z2),
        stream.uniform(c, DRAW_BETA), stream.uniform(c, DRAW_AZIMUTH), stream.uniform(c, DRAW_POLAR),
        params.cone_mean, params.cone_sigma, a, b)
    out = np.array([ex, ey, ez])
    weight = ray.path_weight
    if params.importance_weighting:
        weight *= cos1 / pdf if np.isfinite(pdf) else 0.0
    # the outgoing side of the surface decides the medium
    label = ray.current_label if out @ n > 0 else boundary.label_beyond
    return RayState(ray.position.copy(), out, ray.intensity * f, label, c + 1, weight, bool(reflected))
