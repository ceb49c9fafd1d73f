"""RF synthesis by convolving the gated scatterer train with an axial pulse.

The train ``s[k] = I_Tr[k] * sum_{q -> k} w_q a_q`` of each scanline is
convolved with a complex kernel whose real part is the cosine-modulated
Gaussian pulse and whose imaginary part is its sine counterpart.  The real
result is the RF line; the modulus is the envelope.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, hilbert

from ._validation import check_positive
from .scatterfield import scatterer_train


@dataclass(frozen=True, eq=False)
class PsfKernel:
    """Axial pulse sampled on the radial grid; the center tap is ``r = 0``."""

    in_phase: np.ndarray
    quadrature: np.ndarray
    sigma_r: float
    center_frequency: float
    sampling_frequency: float
    sample_spacing: float

    def __post_init__(self):
        if len(self.in_phase) % 2 != 1 or len(self.in_phase) != len(self.quadrature):
            raise ValueError("kernel must have an odd number of taps")

    @property
    def num_taps(self):
        return len(self.in_phase)

    @property
    def half_width(self):
        return len(self.in_phase) // 2

    @property
    def complex_taps(self):
        return self.in_phase + 1j * self.quadrature


def default_sigma_r(cfg):
    """Pulse width giving a 2-wavelength FWHM at the center frequency (mm)."""
    return 2.0 * cfg.wavelength / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def make_kernel(cfg, sigma_r=None):
    """Sample ``exp(-r^2 / 2 sigma_r^2)`` modulated by ``cos`` and ``sin`` of ``2 pi f 2r / c``.

    ``2r / c`` is the round-trip time to radius ``r``, so the carrier has the
    transducer's center frequency in the sampled RF.  Taps cover
    ``+/- 3 sigma_r``.
    """
    sigma_r = default_sigma_r(cfg) if sigma_r is None else float(sigma_r)
    check_positive(sigma_r, "sigma_r")
    dr = cfg.sample_spacing
    half = int(math.ceil(3.0 * sigma_r / dr - 1e-9))
    r = np.arange(-half, half + 1) * dr
    env = np.exp(-0.5 * (r / sigma_r) ** 2)
    phase = 2.0 * np.pi * cfg.center_frequency * (2.0 * r * 1e-3 / cfg.c_ref)
    return PsfKernel(env * np.cos(phase), env * np.sin(phase), sigma_r, cfg.center_frequency,
                     cfg.sampling_frequency, dr)


@dataclass(frozen=True, eq=False)
class RfFrame:
    """RF lines (scanline x sample) with the quadrature channel kept for detection."""

    rf: np.ndarray
    quadrature: np.ndarray = None
    sample_spacing: float = 1.0
    sampling_frequency: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rf = np.asarray(self.rf, dtype=np.float64)
        if rf.ndim != 2:
            raise ValueError("rf must be (num_scanlines, num_samples)")
        if not np.all(np.isfinite(rf)):
            raise ValueError("rf contains non-finite values")
        object.__setattr__(self, "rf", rf)

    @property
    def shape(self):
        return self.rf.shape


@dataclass(frozen=True, eq=False)
class EnvelopeFrame:
    values: np.ndarray
    sample_spacing: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or np.any(v < 0):
            raise ValueError("envelope must be a non-negative 2-D array")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def depths(self):
        return np.arange(self.values.shape[1]) * self.sample_spacing


def convolve_train(train, kernel):
    """Complex 'same' convolution of each row of ``train`` with ``kernel``."""
    train = np.asarray(train, dtype=np.float64)
    if train.shape[-1] == 0:
        return np.zeros(train.shape, dtype=np.complex128)
    taps = kernel.complex_taps[None, :] if train.ndim == 2 else kernel.complex_taps
    out = fftconvolve(train, taps, mode="full", axes=-1)
    h = kernel.half_width
    return out[..., h:h + train.shape[-1]]


def brute_force_convolve(train, kernel):
    """Reference summation of shifted kernels; O(samples x taps)."""
    train = np.asarray(train, dtype=np.float64)
    n = train.shape[-1]
    h = kernel.half_width
    taps = kernel.complex_taps
    out = np.zeros(train.shape, dtype=np.complex128)
    for k in np.flatnonzero(train.reshape(-1, n).any(axis=0)):
        lo, hi = max(0, k - h), min(n, k + h + 1)
        out[..., lo:hi] += train[..., k, None] * taps[lo - k + h:hi - k + h]
    return out


def synthesize(imap, scatterers, profile, kernel, scanlines):
    """RF frame from the intensity map, scatterer field and beam profile.

    ``scanlines`` is the :class:`~sonotrace.transducer.ScanGeometry` traced
    to produce ``imap``.
    """
    values = imap.values if hasattr(imap, "values") else np.asarray(imap, dtype=np.float64)
    if values.shape != (scanlines.num_scanlines, scanlines.num_samples):
        raise ValueError(f"intensity map shape {values.shape} does not match geometry "
                         f"{(scanlines.num_scanlines, scanlines.num_samples)}")
    if not math.isclose(kernel.sample_spacing, scanlines.sample_spacing, rel_tol=1e-12):
        raise ValueError("kernel and scanlines use different sample spacings")
    h = kernel.half_width
    gate = np.concatenate([values, np.repeat(values[:, -1:], h, axis=1)], axis=1)
    train = scatterer_train(scatterers, scanlines, profile, pad=h) * gate
    analytic = convolve_train(train, kernel)[:, :values.shape[1]]
    meta = {"num_scanlines": values.shape[0], "num_samples": values.shape[1],
            "geometry": scanlines.kind, "params_hash": frame_hash(train)}
    return RfFrame(analytic.real.copy(), analytic.imag.copy(), scanlines.sample_spacing,
                   kernel.sampling_frequency, meta)


def frame_hash(array):
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()[:16]


def envelope(rf):
    """Analytic-signal magnitude; uses the quadrature channel when present."""
    if isinstance(rf, RfFrame):
        q = rf.quadrature
        i = rf.rf
        spacing = rf.sample_spacing
        meta = dict(rf.meta)
    else:
        i, q, spacing, meta = np.atleast_2d(np.asarray(rf, dtype=np.float64)), None, 1.0, {}
    if q is None:
        q = np.imag(hilbert(i, axis=-1)) if i.shape[-1] else np.zeros_like(i)
    return EnvelopeFrame(np.hypot(i, q), spacing, meta)


def save_rf(frame, header_path):
    """Raw RF dump: JSON header plus little-endian float32 payload."""
    header_path = Path(header_path)
    data_path = header_path.with_suffix(".raw")
    frame.rf.astype("<f4").tofile(data_path)
    header = {"num_scanlines": frame.shape[0], "num_samples": frame.shape[1],
              "fs": frame.sampling_frequency, "dtype": "f4", "data": data_path.name}
    header_path.write_text(json.dumps(header, indent=2), encoding="utf-8")
    return header_path


def load_rf(header_path):
    header_path = Path(header_path)
    header = json.loads(header_path.read_text(encoding="utf-8"))
    data = np.fromfile(header_path.parent / header["data"], dtype="<f4")
    shape = (int(header["num_scanlines"]), int(header["num_samples"]))
    if data.size != shape[0] * shape[1]:
        raise ValueError(f"RF payload holds {data.size} samples, header needs {shape[0] * shape[1]}")
    fs = float(header["fs"])
    return RfFrame(data.reshape(shape).astype(np.float64), None, 1540e3 / (2.0 * fs), fs)
