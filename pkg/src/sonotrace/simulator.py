"""End-to-end frame simulation: trace, scatter, synthesize, display."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .pathtracer import SimParams, trace_frame
from .postproc import PostprocParams, to_bmode
from .rfsynth import envelope, make_kernel, synthesize
from .rng import derive_seed
from .scatterfield import AnalyticBeamProfile, generate_scatterers
from .transducer import ProbePose, TransducerConfig, make_geometry


@dataclass(eq=False)
class SimulationResult:
    image: object
    envelope: object
    rf: object
    intensity: object
    geometry: object
    num_scatterers: int
    seed: int


def fan_region(geometry, margin=0.0):
    """In-plane ``((x0, x1), (z0, z1))`` box around the scan fan."""
    depth = geometry.num_samples * geometry.sample_spacing
    if geometry.kind == "phased":
        a = np.linspace(geometry.positions[0], geometry.positions[-1], 257)
        xs = np.concatenate([[0.0], depth * np.sin(a)])
        zs = np.concatenate([[0.0], depth * np.cos(a)])
        x0, x1, z0, z1 = xs.min(), xs.max(), 0.0, max(zs.max(), depth if a[0] <= 0 <= a[-1] else 0.0)
    else:
        x0, x1, z0, z1 = geometry.positions[0], geometry.positions[-1], 0.0, depth
    return (x0 - margin, x1 + margin), (max(0.0, z0 - margin), z1 + margin)


def fan_filter(geometry, margin):
    """Predicate on in-plane ``(x, z)`` keeping points within ``margin`` of the fan."""
    depth = geometry.num_samples * geometry.sample_spacing
    if geometry.kind == "phased":
        a0, a1 = geometry.positions[0], geometry.positions[-1]

        def within(x, z):
            rho = np.hypot(x, z)
            theta = np.arctan2(x, z)
            off = np.maximum(a0 - theta, theta - a1)
            lateral = np.where(off <= 0, 0.0, np.where(off < np.pi / 2, rho * np.sin(np.clip(off, 0, None)), rho))
            return (lateral <= margin) & (rho <= depth + margin)
    else:
        x0, x1 = geometry.positions[0], geometry.positions[-1]

        def within(x, z):
            return (x >= x0 - margin) & (x <= x1 + margin) & (z >= -margin) & (z <= depth + margin)
    return within


class UltrasoundSimulator(BaseEstimator):
    """Simulate B-mode frames of a fitted anatomy.

    Parameters
    ----------
    transducer : TransducerConfig
    sim_params : SimParams
        The ``seed`` field is replaced per frame by the frame seed.
    postproc : PostprocParams
    beam_profile : AnalyticBeamProfile or TabulatedBeamProfile
    depth : float
        Imaging depth (mm).
    scatter_density : float
        Scatterer candidates per mm^2 of imaging plane.
    scatter_region : tuple, optional
        In-plane ``((x0, x1), (z0, z1))``; defaults to the fan plus the
        lateral cutoff.
    sigma_r : float, optional
        Axial pulse width (mm).
    n_jobs : int, optional
        Threads for path tracing.
    """

    def __init__(self, transducer=None, sim_params=None, postproc=None, beam_profile=None, depth=100.0,
                 scatter_density=600.0, scatter_region=None, sigma_r=None, n_jobs=None):
        self.transducer = transducer
        self.sim_params = sim_params
        self.postproc = postproc
        self.beam_profile = beam_profile
        self.depth = depth
        self.scatter_density = scatter_density
        self.scatter_region = scatter_region
        self.sigma_r = sigma_r
        self.n_jobs = n_jobs

    def fit(self, anatomy, y=None):
        self.anatomy_ = anatomy
        self.transducer_ = self.transducer or TransducerConfig()
        self.sim_params_ = self.sim_params or SimParams()
        self.postproc_ = self.postproc or PostprocParams()
        self.beam_profile_ = self.beam_profile or AnalyticBeamProfile()
        self.kernel_ = make_kernel(self.transducer_, self.sigma_r)
        return self

    def simulate(self, pose=None, seed=None):
        """One frame at ``pose``; ``seed`` defaults to the params seed."""
        pose = pose or ProbePose()
        seed = self.sim_params_.seed if seed is None else int(seed)
        geometry = make_geometry(self.transducer_, pose, float(self.depth))
        params = self.sim_params_.replace(seed=derive_seed(seed, "trace"))
        imap = trace_frame(self.anatomy_, geometry, params, n_threads=self.n_jobs)
        profile = self.beam_profile_
        region = self.scatter_region or fan_region(geometry, profile.lateral_cutoff)
        within = fan_filter(geometry, profile.lateral_cutoff)
        rot = pose.rotation
        plane = (pose.position, rot[:, 0], rot[:, 2], rot[:, 1])
        field = generate_scatterers(self.anatomy_, region, self.scatter_density, derive_seed(seed, "scatter"),
                                    plane=plane, elevation_halfwidth=profile.elevation_halfwidth, within=within)
        rf = synthesize(imap, field, profile, self.kernel_, geometry)
        env = envelope(rf)
        image = to_bmode(env, geometry, self.postproc_)
        image.meta.update({"seed": seed})
        return SimulationResult(image, env, rf, imap, geometry, len(field), seed)

    def transform(self, poses):
        """B-mode images for a sequence of poses (seeded by pose index)."""
        base = self.sim_params_.seed
        return [self.simulate(p, derive_seed(base, i)).image for i, p in enumerate(poses)]


def phantom_simulator(spec, sim_params=None, postproc=None, transducer=None, n_jobs=None):
    """Simulator configured with a phantom view's depth, beam and scatter region."""
    from .scatterfield import profile_from_json

    beam = profile_from_json(spec.beam)
    return UltrasoundSimulator(transducer or TransducerConfig(), sim_params or SimParams(),
                               postproc or PostprocParams(), beam, spec.depth,
                               scatter_region=spec.scatter_region, n_jobs=n_jobs)

