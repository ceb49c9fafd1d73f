"""Scalar acoustic physics shared by the tracing kernel and the Python API.

The jitted functions are called from the tracing kernel; the plain Python
wrappers validate arguments and return Python values for callers and tests.
"""

import math
from typing import NamedTuple

import numba as nb
import numpy as np

from ..rng import uniform

DRAW_BETA = 0
DRAW_AZIMUTH = 1
DRAW_POLAR = 2

_SQRT2 = math.sqrt(2.0)
_GRAZING_FLOOR = 1e-4


@nb.njit(cache=True, inline="always")
def attenuation_factor(distance_mm, alpha, f_mhz):
    """``10 ** (-alpha * distance_cm * f_MHz / 10)`` (dB-domain intensity law)."""
    return 10.0 ** (-alpha * (distance_mm * 0.1) * f_mhz * 0.1)


def attenuate(intensity, distance, alpha, frequency):
    """Intensity after ``distance`` mm in a medium of ``alpha`` dB/(cm MHz) at ``frequency`` Hz."""
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    return float(intensity) * attenuation_factor(float(distance), float(alpha), float(frequency) * 1e-6)


@nb.njit(cache=True, inline="always")
def fresnel(z1, z2, cos1):
    """``(R, T, cos_theta2, total_internal)`` at an interface from medium ``z1`` into ``z2``.

    The refraction cosine uses the impedance ratio ``z1/z2``.
    """
    if z1 == z2:
        return 0.0, 1.0, cos1, False
    eta = z1 / z2
    rad = 1.0 - eta * eta * (1.0 - cos1 * cos1)
    if rad < 0.0:
        return 1.0, 0.0, 0.0, True
    cos2 = math.sqrt(rad)
    num = z2 * cos2 - z1 * cos1
    den = z2 * cos2 + z1 * cos1
    r = (num / den) ** 2 if den > 0.0 else 1.0
    if r > 1.0:
        r = 1.0
    return r, 1.0 - r, cos2, False


class Interface(NamedTuple):
    R: float
    T: float
    cos_theta2: float
    total_internal: bool


def reflection_transmission(z1, z2, cos_theta1):
    if z1 <= 0 or z2 <= 0:
        raise ValueError("impedances must be positive")
    if not 0.0 <= cos_theta1 <= 1.0:
        raise ValueError(f"cos_theta1 must lie in [0, 1], got {cos_theta1}")
    r, t, c2, tir = fresnel(float(z1), float(z2), float(cos_theta1))
    return Interface(r, t, c2, bool(tir))


@nb.njit(cache=True, inline="always")
def echo_intensity(intensity, z1, z2, cos_theta, tau, gamma):
    """Boundary echo ``((z2-z1)/(z2+z1))^2 I^tau cos^gamma``."""
    r0 = ((z2 - z1) / (z2 + z1)) ** 2
    c = cos_theta
    if gamma < 0.0 and c < _GRAZING_FLOOR:
        c = _GRAZING_FLOOR
    if c < 0.0:
        c = 0.0
    return r0 * intensity ** tau * c ** gamma


def boundary_echo(intensity_at_p, z1, z2, cos_theta, tissue):
    if intensity_at_p < 0:
        raise ValueError("intensity must be >= 0")
    return float(echo_intensity(float(intensity_at_p), float(z1), float(z2), float(cos_theta),
                                float(tissue.tau), float(tissue.gamma)))


@nb.njit(cache=True, inline="always")
def coherence_weight(c0, d_perp):
    """Beam-coherence weight ``C0 / (C0 + d)``; 1 on the beam even when ``C0 = 0``."""
    if d_perp <= 1e-9:
        return 1.0
    return c0 / (c0 + d_perp)


# --- truncated normal ------------------------------------------------------

@nb.njit(cache=True, inline="always")
def norm_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@nb.njit(cache=True, inline="always")
def norm_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@nb.njit(cache=True)
def norm_ppf(p):
    """Inverse standard normal CDF (rational approximation plus one Halley step)."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    a1, a2, a3 = -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02
    a4, a5, a6 = 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00
    b1, b2, b3 = -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02
    b4, b5 = 6.680131188771972e01, -1.328068155288572e01
    c1, c2, c3 = -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00
    c4, c5, c6 = -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00
    d1, d2, d3, d4 = 7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / \
            ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / \
            (((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / \
            ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    # Halley refinement brings the error to ~1e-15
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True, inline="always")
def truncnorm_ppf(u, mu, sigma, a, b):
    lo = norm_cdf((a - mu) / sigma)
    hi = norm_cdf((b - mu) / sigma)
    if u <= 0.0:
        return a
    if u >= 1.0:
        return b
    x = mu + sigma * norm_ppf(lo + u * (hi - lo))
    if x < a:
        x = a
    if x > b:
        x = b
    return x


@nb.njit(cache=True, inline="always")
def truncnorm_pdf(x, mu, sigma, a, b):
    if x < a or x > b:
        return 0.0
    z = norm_cdf((b - mu) / sigma) - norm_cdf((a - mu) / sigma)
    return norm_pdf((x - mu) / sigma) / (sigma * z)


# --- cone sampling ----------------------------------------------------------

@nb.njit(cache=True, inline="always")
def orthonormal_basis(ax, ay, az):
    # branchless basis (Duff et al.) around a unit axis
    sign = 1.0 if az >= 0.0 else -1.0
    a = -1.0 / (sign + az)
    b = ax * ay * a
    return (1.0 + sign * ax * ax * a, sign * b, -sign * ax,
            b, sign + ay * ay * a, -ay)


@nb.njit(cache=True, inline="always")
def cone_direction(ax, ay, az, u_azimuth, u_polar, mu, sigma, a, b):
    """Direction at polar angle ``phi ~ truncnorm`` and azimuth ``theta ~ U(0, 2 pi)``.

    Returns ``(dx, dy, dz, phi, pdf)`` with ``pdf = psi(phi) / (2 pi sin phi)``
    per unit solid angle (``inf`` exactly on the axis).
    """
    theta = 2.0 * math.pi * u_azimuth
    phi = truncnorm_ppf(u_polar, mu, sigma, a, b)
    t1x, t1y, t1z, t2x, t2y, t2z = orthonormal_basis(ax, ay, az)
    sp = math.sin(phi)
    cp = math.cos(phi)
    ct = math.cos(theta)
    st = math.sin(theta)
    dx = cp * ax + sp * (ct * t1x + st * t2x)
    dy = cp * ay + sp * (ct * t1y + st * t2y)
    dz = cp * az + sp * (ct * t1z + st * t2z)
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    psi = truncnorm_pdf(phi, mu, sigma, a, b)
    pdf = psi / (2.0 * math.pi * sp) if sp > 0.0 else np.inf
    return dx / n, dy / n, dz / n, phi, pdf


def _unit_axis(axis):
    ax = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(ax) if ax.shape == (3,) else 0.0
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"degenerate cone axis {axis!r}")
    return ax / n


def sample_cone_direction(axis, params, stream, collision=0):
    """Draw one direction about ``axis``; returns ``(direction, pdf)``."""
    ax = _unit_axis(axis)
    u_az = stream.uniform(collision, DRAW_AZIMUTH)
    u_po = stream.uniform(collision, DRAW_POLAR)
    dx, dy, dz, _, pdf = cone_direction(ax[0], ax[1], ax[2], u_az, u_po, params.cone_mean,
                                        params.cone_sigma, params.cone_bounds[0], params.cone_bounds[1])
    return np.array([dx, dy, dz]), float(pdf)


def cone_direction_from_uniforms(axis, params, u_azimuth, u_polar):
    """Deterministic variant of :func:`sample_cone_direction` (inverse-transform inputs)."""
    ax = _unit_axis(axis)
    dx, dy, dz, phi, pdf = cone_direction(ax[0], ax[1], ax[2], float(u_azimuth), float(u_polar),
                                          params.cone_mean, params.cone_sigma,
                                          params.cone_bounds[0], params.cone_bounds[1])
    return np.array([dx, dy, dz]), float(phi), float(pdf)


@nb.njit(cache=True)
def _sample_many(seed, n, ax, ay, az, mu, sigma, a, b, dirs, phis, pdfs):
    for i in range(n):
        u_az = uniform(seed, 0, i, 0, DRAW_AZIMUTH)
        u_po = uniform(seed, 0, i, 0, DRAW_POLAR)
        dx, dy, dz, phi, pdf = cone_direction(ax, ay, az, u_az, u_po, mu, sigma, a, b)
        dirs[i, 0] = dx
        dirs[i, 1] = dy
        dirs[i, 2] = dz
        phis[i] = phi
        pdfs[i] = pdf


def sample_cone_directions(axis, params, n, seed=0):
    """``n`` cone samples keyed by ``(seed, 0, i)``: ``(directions, phi, pdf)``."""
    ax = _unit_axis(axis)
    dirs = np.empty((n, 3))
    phis = np.empty(n)
    pdfs = np.empty(n)
    _sample_many(np.int64(seed), n, ax[0], ax[1], ax[2], params.cone_mean, params.cone_sigma,
                 params.cone_bounds[0], params.cone_bounds[1], dirs, phis, pdfs)
    return dirs, phis, pdfs


# --- boundary interaction ---------------------------------------------------

@nb.njit(cache=True, inline="always")
def reflect_axis(dx, dy, dz, nx, ny, nz, cos1):
    return dx + 2.0 * cos1 * nx, dy + 2.0 * cos1 * ny, dz + 2.0 * cos1 * nz


@nb.njit(cache=True, inline="always")
def refract_axis(dx, dy, dz, nx, ny, nz, cos1, cos2, eta):
    k = eta * cos1 - cos2
    tx = eta * dx + k * nx
    ty = eta * dy + k * ny
    tz = eta * dz + k * nz
    n = math.sqrt(tx * tx + ty * ty + tz * tz)
    return tx / n, ty / n, tz / n


@nb.njit(cache=True)
def scatter_kernel(dx, dy, dz, nx, ny, nz, z1, z2, u_beta, u_az, u_po, mu, sigma, a, b):
    """One stochastic reflect/refract decision at an interface.

    ``n`` must oppose ``d``.  Returns ``(reflected, f, ex, ey, ez, pdf, cos1)``
    where ``e`` is the cone-sampled outgoing direction about the mirror or
    refraction axis and ``f`` is ``R`` or ``T``.
    """
    cos1 = -(dx * nx + dy * ny + dz * nz)
    if cos1 < 0.0:
        cos1 = 0.0
    if cos1 > 1.0:
        cos1 = 1.0
    r, t, cos2, tir = fresnel(z1, z2, cos1)
    reflected = u_beta < r
    if reflected:
        axx, axy, axz = reflect_axis(dx, dy, dz, nx, ny, nz, cos1)
        f = r
    else:
        axx, axy, axz = refract_axis(dx, dy, dz, nx, ny, nz, cos1, cos2, z1 / z2)
        f = t
    nrm = math.sqrt(axx * axx + axy * axy + axz * axz)
    ex, ey, ez, _, pdf = cone_direction(axx / nrm, axy / nrm, axz / nrm, u_az, u_po, mu, sigma, a, b)
    return reflected, f, ex, ey, ez, pdf, cos1
