import math

import numpy as np
import pytest
from scipy import stats

from sonotrace.metrics import (gcnr, measure_contrast, measure_tre, profile_peaks, rayleigh_pdf, region_roi,
                               scanline_points, sector_means, shadow_sectors, speckle_stats, summarize_tre)
from sonotrace.phantom import GroundTruth
from sonotrace.postproc import BModeImage
from sonotrace.transducer import ProbePose, TransducerConfig, make_geometry

PS = 0.23


def blank(rows=400, cols=400):
    return BModeImage(np.zeros((rows, cols)), np.ones((rows, cols), dtype=bool), PS, -cols / 2 * PS, 0.0)


def add_bump(img, x, z, sigma_px=1.5, height=200.0):
    xx, zz = img.coords()
    img.pixels += height * np.exp(-0.5 * ((xx - x) ** 2 + (zz - z) ** 2) / (sigma_px * PS) ** 2)


def wires(points, group="horizontal_near"):
    return GroundTruth(tuple({"id": i + 1, "group": group, "position": list(p), "radius": 0.25}
                             for i, p in enumerate(points)), (), ())


def lattice(i, j):
    return -200 * PS + i * PS, j * PS


def test_tre_delta_bumps_zero():
    img = blank()
    pts = [lattice(i, 150) for i in (100, 160, 220, 280)]
    for x, z in pts:
        r, c = img.pixel_of(x, z)
        img.pixels[int(round(r)), int(round(c))] = 255.0
    entries = measure_tre(img, wires(pts))
    assert all(e["found"] for e in entries)
    assert max(e["error"] for e in entries) < 1e-9


def test_tre_known_shift():
    img = blank()
    pts = [lattice(i, 150) for i in (100, 170, 240, 310)]
    for x, z in pts:
        add_bump(img, x + 0.3, z)
    entries = measure_tre(img, wires(pts))
    for e in entries:
        assert abs(e["error"] - 0.3) <= PS / 2


def test_tre_subpixel_bias():
    rng = np.random.default_rng(0)
    errors = []
    for trial in range(20):
        img = blank()
        pts = [lattice(i, 100 + 40 * (trial % 5)) for i in (80, 150, 220, 290)]
        shifts = rng.uniform(-0.5, 0.5, len(pts)) * PS
        for (x, z), s in zip(pts, shifts):
            add_bump(img, x + s, z)
        for e, s in zip(measure_tre(img, wires(pts)), shifts):
            errors.append(e["error"] - abs(s))
    assert abs(np.mean(errors)) < 0.1 * PS
    assert np.max(np.abs(errors)) < 0.25 * PS


def test_tre_vertical_group_and_missing():
    img = blank()
    pts = [(0.0, z * PS) for z in (50, 100, 150, 200)]
    for x, z in pts[:3]:
        add_bump(img, x, z)
    entries = measure_tre(img, wires(pts, "vertical"))
    assert [e["found"] for e in entries] == [True, True, True, False]
    summary = summarize_tre(entries)
    assert summary["num_missed"] == 1 and summary["num_targets"] == 4
    assert summary["groups"]["vertical"]["count"] == 3
    assert summary["mean"] < 1e-6


def test_tre_requires_wires():
    with pytest.raises(ValueError):
        measure_tre(blank(), GroundTruth((), (), ()))


def test_profile_peaks_plateau_and_parabola():
    assert profile_peaks([0, 1, 3, 3, 3, 1, 0], 2) == [(3.0, 3)]
    pos, h = profile_peaks([0.0, 1.0, 2.0, 1.0, 0.0], 0.5)[0]
    assert pos == 2.0 and h == 2.0
    pos, _ = profile_peaks([0.0, 2.0, 3.0, 2.5, 0.0], 0.5)[0]
    assert 2.0 < pos < 2.5


def test_gcnr_extremes():
    x = np.random.default_rng(1).normal(size=10000)
    assert gcnr(x, x) == pytest.approx(0.0, abs=1e-12)
    assert gcnr(np.zeros(100), np.ones(100)) == 1.0
    with pytest.raises(ValueError):
        gcnr([], [1.0])


def test_gcnr_monotone_invariance():
    rng = np.random.default_rng(2)
    a = rng.rayleigh(1.0, 50000)
    b = rng.rayleigh(1.6, 50000)
    g = gcnr(a, b)
    for f in (np.log, np.sqrt, lambda v: 20 * np.log10(v)):
        assert gcnr(f(a), f(b)) == pytest.approx(g, abs=0.02)


def test_gcnr_rayleigh_analytic():
    # overlap of two Rayleigh pdfs with scale ratio k crossing at x*
    rng = np.random.default_rng(3)
    s1, s2 = 1.0, 10 ** (6 / 20)
    x = math.sqrt(2 * math.log(s2 ** 2 / s1 ** 2) / (1 / s1 ** 2 - 1 / s2 ** 2))
    overlap = stats.rayleigh.sf(x, scale=s1) + stats.rayleigh.cdf(x, scale=s2)
    got = gcnr(rng.rayleigh(s1, 400000), rng.rayleigh(s2, 400000))
    assert got == pytest.approx(1 - overlap, abs=0.01)


def test_contrast_known_values():
    rng = np.random.default_rng(4)
    img = blank(100, 100)
    lm = np.zeros((100, 100), dtype=bool)
    lm[:40] = True
    bm = ~lm
    img.linear = np.where(lm, 2.0, 1.0) * rng.uniform(0.9, 1.1, (100, 100))
    img.pixels = img.linear * 100
    out = measure_contrast(img, lm, bm)
    assert out["contrast_db"] == pytest.approx(20 * math.log10(2.0), abs=0.05)
    assert out["gcnr"] == 1.0
    lin = img.linear
    expected_cnr = abs(lin[lm].mean() - lin[bm].mean()) / math.sqrt(lin[lm].var() + lin[bm].var())
    assert out["cnr"] == pytest.approx(expected_cnr)


def test_contrast_mask_errors():
    img = blank(50, 50)
    img.pixels[:] = 1.0
    a = np.zeros((50, 50), dtype=bool)
    a[:20] = True
    with pytest.raises(ValueError, match="overlap"):
        measure_contrast(img, a, a)
    with pytest.raises(ValueError, match="non-empty"):
        measure_contrast(img, a, np.zeros_like(a))
    with pytest.raises(ValueError, match="background mean"):
        measure_contrast(np.where(a, 1.0, 0.0), a, ~a)


def test_rayleigh_snr_oracle():
    x = np.random.default_rng(5).rayleigh(2.5, 1_000_000)
    out = speckle_stats(x)
    theory = math.sqrt(math.pi / (4 - math.pi))
    assert theory == pytest.approx(1.913, abs=1e-3)
    assert out["snr"] == pytest.approx(theory, abs=0.01)
    assert out["fitted_scale"] == pytest.approx(2.5, rel=0.01)
    assert out["rayleigh_sse_mass"] < 1e-5
    assert out["rayleigh_sse"] < 1e-3


def test_speckle_rejects_non_rayleigh():
    x = np.random.default_rng(6).uniform(0, 1, 200000)
    out = speckle_stats(x)
    assert out["rayleigh_sse"] > 1e-2


def test_speckle_errors():
    with pytest.raises(ValueError, match="constant"):
        speckle_stats(np.ones(20000))
    with pytest.raises(ValueError, match="at least"):
        speckle_stats(np.ones(10))


def test_rayleigh_pdf_integrates():
    x = np.linspace(0, 30, 300001)
    assert np.sum(rayleigh_pdf(x, 2.0)) * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-6)
    assert rayleigh_pdf(-1.0, 1.0) == 0.0


def test_region_roi_and_points():
    geo = make_geometry(TransducerConfig(num_elements=33), ProbePose(), 60.0)
    x, z = scanline_points(geo)
    np.testing.assert_allclose(np.hypot(x, z), np.broadcast_to(geo.radii, x.shape), atol=1e-9)
    roi = region_roi(geo, ((-10, 10), (20, 40)), 2.0)
    assert roi.any()
    assert np.all((x[roi] > -8) & (x[roi] < 8) & (z[roi] > 22) & (z[roi] < 38))


def test_sectors():
    geo = make_geometry(TransducerConfig(num_elements=129), ProbePose(), 100.0)
    distal, left, right = shadow_sectors((0.0, 45.0), 10.0)
    half = math.asin(10 / 45)
    assert distal == pytest.approx((-0.8 * half, 0.8 * half))
    assert left[1] < -half and right[0] > half
    frame = np.ones((geo.num_scanlines, geo.num_samples))
    frame[np.abs(geo.positions) < half] = 0.2
    means = sector_means(frame, geo, [distal, left, right], (55.0, 65.0))
    assert means == pytest.approx([0.2, 1.0, 1.0])
    with pytest.raises(ValueError):
        sector_means(frame, geo, [(2.0, 2.5)], (55.0, 65.0))
