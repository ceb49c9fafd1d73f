import math

import numpy as np
import pytest
from scipy import stats

from sonotrace.anatomy import SegmentationVolume, TissueProperties, build_anatomy
from sonotrace.scatterfield import (AnalyticBeamProfile, Scatterer, beam_weight, gaussian_beam_table,
                                    generate_scatterers, load_beam_table, project_to_scanline,
                                    save_beam_table, scatterer_train)
from sonotrace.transducer import ProbePose, TransducerConfig, make_geometry, make_scanlines

PLANE = (np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), np.array([0, 1.0, 0]))


def uniform_anatomy(**tissue):
    seg = SegmentationVolume(np.zeros((60, 10, 60), dtype=np.uint8), origin=(-30.0, -5.0, 0.0))
    return build_anatomy(seg, {0: TissueProperties(z=1.5e6, alpha=0.5, **tissue)})


def test_mu1_zero_no_scatterers():
    field = generate_scatterers(uniform_anatomy(mu1=0.0), ((-20, 20), (5, 45)), 600, 1, plane=PLANE)
    assert len(field) == 0


def test_speckle_setup_count():
    an = uniform_anatomy(mu0=1.0, sigma0=0.0, mu1=1.0)
    field = generate_scatterers(an, ((-20, 20), (5, 45)), 600, 1, plane=PLANE)
    assert len(field) == 960_000
    assert np.all(field.amplitudes == 1.0)


def test_keep_fraction_binomial():
    an = uniform_anatomy(mu0=1.0, sigma0=0.0, mu1=0.5)
    field = generate_scatterers(an, ((-25, 25), (5, 55)), 400, 7, plane=PLANE)
    n = 1_000_000
    assert abs(len(field) - n / 2) <= 3 * math.sqrt(n * 0.25)


def test_amplitude_statistics():
    mu0, sigma0 = 0.3, 0.5
    an = uniform_anatomy(mu0=mu0, sigma0=sigma0, mu1=1.0)
    amp = generate_scatterers(an, ((-25, 25), (5, 55)), 400, 3, plane=PLANE).amplitudes
    # mean of max(0, X) for X ~ N(mu0, sigma0)
    z = mu0 / sigma0
    expected = mu0 * stats.norm.cdf(z) + sigma0 * stats.norm.pdf(z)
    assert amp.mean() == pytest.approx(expected, rel=0.01)
    assert amp.min() >= 0.0


def test_reproducible_and_seeded():
    an = uniform_anatomy(mu0=1.0, sigma0=0.2, mu1=0.7)
    a = generate_scatterers(an, ((-10, 10), (5, 25)), 100, 4, plane=PLANE, elevation_halfwidth=3.0)
    b = generate_scatterers(an, ((-10, 10), (5, 25)), 100, 4, plane=PLANE, elevation_halfwidth=3.0)
    c = generate_scatterers(an, ((-10, 10), (5, 25)), 100, 5, plane=PLANE, elevation_halfwidth=3.0)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.amplitudes.tobytes() == b.amplitudes.tobytes()
    assert not np.array_equal(a.positions[:10], c.positions[:10])
    assert np.all(np.abs(a.positions[:, 1]) <= 3.0)


def test_density_validation():
    with pytest.raises(ValueError):
        generate_scatterers(uniform_anatomy(), ((0, 1), (0, 1)), 0.0, 1, plane=PLANE)


def test_analytic_weight_values():
    p = AnalyticBeamProfile(1.0, 1.0)
    assert beam_weight(p, 0.0, 0.0) == 1.0
    assert beam_weight(p, 1.0, 0.0) == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert 0.6065 == pytest.approx(math.exp(-0.5), abs=1e-4)


def test_analytic_weight_symmetry():
    p = AnalyticBeamProfile(0.7, 1.3)
    rng = np.random.default_rng(0)
    dl, de = rng.normal(size=(2, 1000))
    w = beam_weight(p, dl, de)
    assert np.array_equal(w, beam_weight(p, -dl, de))
    assert np.array_equal(w, beam_weight(p, dl, -de))


def test_tabulated_matches_analytic():
    lat = np.linspace(-4, 4, 321)
    ele = np.linspace(-4, 4, 321)
    table = gaussian_beam_table(50.0, 1.0, 1.0, 1e-9, [50.0], lat, ele)
    p = AnalyticBeamProfile(1.0, 1.0)
    rng = np.random.default_rng(1)
    dl, de = rng.uniform(-3, 3, size=(2, 500))
    got = np.array([table.weight(a, b, 50.0) for a, b in zip(dl, de)])
    np.testing.assert_allclose(got, beam_weight(p, dl, de), atol=1e-3)


def test_tabulated_clamps_and_round_trip(tmp_path):
    table = gaussian_beam_table(40.0, 0.8, 1.0, 0.43, np.linspace(0, 80, 9), np.linspace(-3, 3, 13),
                                np.linspace(-3, 3, 7))
    assert table.weight(0.0, 0.0, 200.0) == pytest.approx(table.weight(0.0, 0.0, 80.0))
    assert table.weight(10.0, 0.0, 40.0) == pytest.approx(table.weight(3.0, 0.0, 40.0))
    loaded = load_beam_table(save_beam_table(table, tmp_path / "beam.json"))
    np.testing.assert_allclose(loaded.gains, table.gains, rtol=1e-6)


def test_projection_on_line():
    line = make_scanlines(TransducerConfig(num_elements=1), ProbePose(), 20.0)[0]
    pr = project_to_scanline(Scatterer(line.point(37 * line.sample_spacing), 1.0), line)
    assert pr.radial_bin == 37 and pr.delta_l == 0.0 and pr.delta_e == 0.0
    assert project_to_scanline(Scatterer(np.array([0.0, 0.0, -1.0]), 1.0), line) is None
    assert project_to_scanline(np.array([5.0, 0.0, 10.0]), line, lateral_cutoff=3.0) is None


def test_projection_geometric_oracle():
    geo = make_geometry(TransducerConfig(num_elements=7, fan_angle=1.0), ProbePose(), 40.0)
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(-15, 15, 2000), rng.uniform(-2, 2, 2000), rng.uniform(1, 39, 2000)])
    for line in geo.scanlines:
        for p in pts[:300]:
            pr = project_to_scanline(p, line)
            r = (p - line.origin) @ line.direction
            if pr is not None:
                assert abs(pr.radial_bin * line.sample_spacing - r) <= line.sample_spacing / 2 + 1e-12


def test_train_matches_projection_sum():
    geo = make_geometry(TransducerConfig(num_elements=5, fan_angle=0.4), ProbePose(), 30.0)
    an = uniform_anatomy(mu0=1.0, sigma0=0.4, mu1=1.0)
    field = generate_scatterers(an, ((-8, 8), (2, 28)), 5, 9, plane=PLANE, elevation_halfwidth=3.0)
    prof = AnalyticBeamProfile(1.0, 1.0)
    train = scatterer_train(field, geo, prof)
    ref = np.zeros_like(train)
    for line in geo.scanlines:
        for s in field:
            pr = project_to_scanline(s, line, prof.lateral_cutoff)
            if pr is not None:
                ref[line.index, pr.radial_bin] += s.amplitude * beam_weight(prof, pr.delta_l, pr.delta_e)
    np.testing.assert_allclose(train, ref, atol=1e-12)
