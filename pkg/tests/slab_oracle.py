"""Two-interface slab scene and its semi-analytic echo expectation.

A normally incident beam crosses medium 0 to depth ``d1``, enters a layer of
thickness ``w`` and echoes at the layer's far face.  With one stochastic event
(at the first face) the expected far-face echo per scanline is

    T1 * E_phi[ R2 * (att0(d1) T1 att1(w / cos phi))^tau * cos(phi)^gamma * C0 / (C0 + w tan phi) ]

where ``phi`` follows the truncated-normal cone lobe about the refraction axis.
"""

import dataclasses
import math

import numpy as np
from scipy import integrate, stats

from sonotrace.anatomy import SegmentationVolume, TissueProperties, build_anatomy
from sonotrace.pathtracer import SimParams, trace_frame
from sonotrace.transducer import ProbePose, TransducerConfig, make_scanlines

FREQ = 3.6e6
D1 = 15.0
W = 5.0
DEPTH = 30.0
Z = (1.5e6, 1.8e6, 1.6e6)
ALPHA = (0.1, 0.3, 0.1)
TAU2 = 1.2
GAMMA2 = 0.5
C0 = 0.1
CONE = dict(cone_mean=0.0, cone_sigma=math.pi / 8, cone_bounds=(0.0, math.pi / 4))


def slab_anatomy():
    labels = np.zeros((40, 40, 32), dtype=np.uint8)
    labels[:, :, int(D1):int(D1 + W)] = 1
    labels[:, :, int(D1 + W):] = 2
    seg = SegmentationVolume(labels, spacing=(1.0, 1.0, 1.0), origin=(-20.0, -20.0, 0.0))
    tissues = {0: TissueProperties(z=Z[0], alpha=ALPHA[0]),
               1: TissueProperties(z=Z[1], alpha=ALPHA[1]),
               2: TissueProperties(z=Z[2], alpha=ALPHA[2], tau=TAU2, gamma=GAMMA2)}
    return build_anatomy(seg, tissues)


def slab_lines(count):
    base = make_scanlines(TransducerConfig(num_elements=1), ProbePose(), DEPTH)[0]
    return [dataclasses.replace(base, index=i) for i in range(count)]


def far_echo_estimates(anatomy, lines, rays, seed=0):
    """Per-scanline sum of boundary deposits beyond the first face."""
    params = SimParams(rays_per_scanline=rays, max_collisions=1, beam_coherence_c0=C0, seed=seed, **CONE)
    imap = trace_frame(anatomy, lines, params, frequency=FREQ)
    first = int(round((D1 + 1.0) / lines[0].sample_spacing))
    return imap.boundary[:, first:].sum(axis=1)


def _att(alpha, mm):
    return 10.0 ** (-alpha * mm * 0.1 * FREQ * 1e-6 / 10.0)


def expected_far_echo():
    t1 = 1.0 - ((Z[1] - Z[0]) / (Z[1] + Z[0])) ** 2
    r2 = ((Z[2] - Z[1]) / (Z[2] + Z[1])) ** 2
    mu, sigma = CONE["cone_mean"], CONE["cone_sigma"]
    a, b = CONE["cone_bounds"]
    psi = stats.truncnorm((a - mu) / sigma, (b - mu) / sigma, loc=mu, scale=sigma)

    def integrand(phi):
        inten = _att(ALPHA[0], D1) * t1 * _att(ALPHA[1], W / math.cos(phi))
        w_r = C0 / (C0 + W * math.tan(phi)) if phi > 0 else 1.0
        return psi.pdf(phi) * r2 * inten ** TAU2 * math.cos(phi) ** GAMMA2 * w_r

    value, _ = integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-10, limit=200)
    return t1 * value
