import math

import numpy as np
import pytest
from scipy import stats

from sonotrace.anatomy import SegmentationVolume, TissueProperties, build_anatomy
from sonotrace.pathtracer import (Boundary, IntensityMap, RayState, RngStream, SimParams, attenuate,
                                  boundary_echo, deposit, reflection_transmission, sample_cone_directions,
                                  scatter_event, trace_frame)
from sonotrace.pathtracer.physics import cone_direction_from_uniforms
from sonotrace.transducer import ProbePose, TransducerConfig, make_geometry, make_scanlines

import slab_oracle


# --- attenuation and interfaces -------------------------------------------------

def test_attenuate_identities():
    assert attenuate(0.7, 0.0, 0.5, 3.6e6) == 0.7
    assert attenuate(0.7, 30.0, 0.0, 3.6e6) == 0.7


def test_attenuate_hand_value():
    assert attenuate(1.0, 20.0, 0.5, 3.6e6) == pytest.approx(10 ** (-0.36), rel=1e-12)
    assert 10 ** (-0.36) == pytest.approx(0.4365, abs=1e-4)


def test_attenuate_negative_distance():
    with pytest.raises(ValueError):
        attenuate(1.0, -1.0, 0.5, 3.6e6)


@pytest.mark.parametrize("cos1", [0.0, 0.3, 1.0])
def test_matched_impedance(cos1):
    iface = reflection_transmission(1.5e6, 1.5e6, cos1)
    assert iface.R == 0.0 and iface.T == 1.0


def test_normal_incidence_hand_value():
    iface = reflection_transmission(1.38e6, 1.62e6, 1.0)
    assert iface.R == pytest.approx(0.0064, abs=1e-12)
    assert iface.R + iface.T == pytest.approx(1.0, abs=1e-15)
    assert not iface.total_internal


def test_total_internal_reflection():
    # impedance ratio 2 at 60 degrees makes the refraction radicand negative
    iface = reflection_transmission(2.0, 1.0, 0.5)
    assert iface.total_internal and iface.R == 1.0 and iface.T == 0.0


def test_reflection_bounds_randomized():
    rng = np.random.default_rng(1)
    for z1, z2, c in zip(rng.uniform(0.1, 10, 500), rng.uniform(0.1, 10, 500), rng.uniform(0, 1, 500)):
        iface = reflection_transmission(z1, z2, c)
        assert 0.0 <= iface.R <= 1.0
        assert iface.R + iface.T == pytest.approx(1.0)


def test_boundary_echo_examples():
    t = TissueProperties(z=1.62e6, alpha=0.5, tau=1.0, gamma=0.0)
    assert boundary_echo(1.0, 1.5e6, 1.5e6, 0.7, t) == 0.0
    assert boundary_echo(1.0, 1.38e6, 1.62e6, 0.5, t) == pytest.approx(0.0064, abs=1e-12)


def test_boundary_echo_grazing_amplification():
    t = TissueProperties(z=1.62e6, alpha=0.5, gamma=-1.8)
    vals = [boundary_echo(1.0, 1.38e6, 1.62e6, c, t) for c in (1.0, 0.5, 0.1, 0.01, 0.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert np.isfinite(vals[-1])


# --- cone sampling ----------------------------------------------------------------

def test_cone_bounds_extremes():
    p = SimParams(cone_mean=0.0, cone_sigma=math.pi / 4, cone_bounds=(0.0, math.pi / 2))
    axis = np.array([0.0, 0.6, 0.8])
    d0, phi0, _ = cone_direction_from_uniforms(axis, p, 0.3, 0.0)
    d1, phi1, _ = cone_direction_from_uniforms(axis, p, 0.3, 1.0)
    np.testing.assert_allclose(d0, axis, atol=1e-12)
    assert abs(d1 @ axis) < 1e-12
    assert phi0 == 0.0 and phi1 == pytest.approx(math.pi / 2)


def test_cone_degenerate_axis():
    with pytest.raises(ValueError):
        sample_cone_directions([0.0, 0.0, 0.0], SimParams(), 10)


@pytest.fixture(scope="module")
def cone_samples():
    p = SimParams(cone_mean=0.0, cone_sigma=math.pi / 4, cone_bounds=(0.0, math.pi / 2))
    axis = np.array([0.0, 0.0, 1.0])
    dirs, phis, pdfs = sample_cone_directions(axis, p, 1_000_000, seed=3)
    return p, axis, dirs, phis, pdfs


def test_cone_polar_distribution(cone_samples):
    p, _, _, phis, _ = cone_samples
    a, b = p.cone_bounds
    ref = stats.truncnorm(a / p.cone_sigma, b / p.cone_sigma, loc=0.0, scale=p.cone_sigma)
    assert phis.mean() == pytest.approx(ref.mean(), abs=1e-3)
    edges = np.linspace(a, b, 41)
    observed = np.histogram(phis, edges)[0]
    expected = np.diff(ref.cdf(edges)) * phis.size
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_cone_directions_unit(cone_samples):
    _, axis, dirs, phis, _ = cone_samples
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(dirs @ axis, np.cos(phis), atol=1e-9)


def test_cone_azimuth_uniform(cone_samples):
    _, _, dirs, _, _ = cone_samples
    theta = np.arctan2(dirs[:, 1], dirs[:, 0])
    counts = np.histogram(theta, np.linspace(-math.pi, math.pi, 37))[0]
    assert stats.chisquare(counts).pvalue > 0.01


@pytest.mark.parametrize("half_angle", [0.2, 0.6, 1.2])
def test_cone_importance_weights_integrate_subcone(cone_samples, half_angle):
    _, axis, dirs, _, pdfs = cone_samples
    g = (dirs @ axis) > math.cos(half_angle)
    est = np.where(g, 1.0 / pdfs, 0.0)
    truth = 2 * math.pi * (1 - math.cos(half_angle))
    se = est.std() / math.sqrt(est.size)
    assert abs(est.mean() - truth) <= 3 * se


# --- scatter events -----------------------------------------------------------------

def _ray():
    return RayState(np.zeros(3), np.array([0.0, 0.0, 1.0]), intensity=1.0, current_label=0)


def test_scatter_transparent_boundary_refracts():
    b = Boundary(1.5e6, 1.5e6, np.array([0.0, 0.0, -1.0]), label_beyond=2)
    p = SimParams()
    for i in range(200):
        out = scatter_event(_ray(), b, p, RngStream(0, 0, i))
        assert not out.reflected and out.intensity == 1.0 and out.current_label == 2
        assert out.collisions == 1


def test_scatter_total_internal_always_reflects():
    # 60 degree incidence from the denser side
    b = Boundary(2.0, 1.0, np.array([0.0, 0.0, -1.0]), label_beyond=2)
    ray = RayState(np.zeros(3), np.array([math.sqrt(3) / 2, 0.0, 0.5]))
    p = SimParams()
    for i in range(200):
        out = scatter_event(ray, b, p, RngStream(0, 0, i))
        assert out.reflected and out.intensity == 1.0


def test_scatter_normal_orientation_flipped():
    p = SimParams(cone_sigma=1e-6, cone_bounds=(0.0, 1e-6))
    b = Boundary(1.0, 3.0, np.array([0.0, 0.0, 1.0]))
    outs = [scatter_event(_ray(), b, p, RngStream(0, 0, i)) for i in range(50)]
    refl = [o for o in outs if o.reflected]
    assert refl and all(o.direction[2] < -0.999 for o in refl)


def test_reflect_fraction_matches_r():
    b = Boundary(1.0, 3.0, np.array([0.0, 0.0, -1.0]))
    r = reflection_transmission(1.0, 3.0, 1.0).R
    p = SimParams()
    frac = np.mean([scatter_event(_ray(), b, p, RngStream(5, 0, i)).reflected for i in range(20_000)])
    assert abs(frac - r) < 4 * math.sqrt(r * (1 - r) / 20_000)


# --- deposits ---------------------------------------------------------------------

def _line():
    return make_scanlines(TransducerConfig(num_elements=1), ProbePose(), 10.0)[0]


def test_deposit_on_beam_full_weight():
    line = _line()
    imap = IntensityMap.zeros(1, line.num_samples)
    k = deposit(imap, line, [0.0, 0.0, 10 * line.sample_spacing], 2.0, SimParams(beam_coherence_c0=0.1))
    assert k == 10 and imap.interior[0, 10] == 2.0


def test_deposit_coherence_half():
    line = _line()
    imap = IntensityMap.zeros(1, line.num_samples)
    deposit(imap, line, [0.1, 0.0, 5.0], 1.0, SimParams(beam_coherence_c0=0.1))
    assert imap.interior.sum() == pytest.approx(0.5, abs=1e-12)


def test_deposit_out_of_range():
    line = _line()
    imap = IntensityMap.zeros(1, line.num_samples)
    assert deposit(imap, line, [0.0, 0.0, 11.0], 1.0, SimParams()) is None
    assert deposit(imap, line, [0.0, 0.0, -1.0], 1.0, SimParams()) is None
    assert imap.values.sum() == 0.0


# --- whole frames -------------------------------------------------------------------

@pytest.fixture(scope="module")
def homogeneous():
    seg = SegmentationVolume(np.zeros((20, 20, 60), dtype=np.uint8), origin=(-10.0, -10.0, 0.0))
    return build_anatomy(seg, {0: TissueProperties(z=1.5e6, alpha=0.5)})


def test_homogeneous_attenuation_curve(homogeneous):
    geo = make_geometry(TransducerConfig(num_elements=5, fan_angle=0.3), ProbePose(), 50.0)
    imap = trace_frame(homogeneous, geo, SimParams(rays_per_scanline=1))
    r = geo.radii
    expected = 10 ** (-0.5 * (r / 10) * 3.6 / 10)
    step = 10 ** (-0.5 * (geo.sample_spacing / 10) * 3.6 / 10)
    for row in imap.values:
        np.testing.assert_allclose(row, expected, rtol=1 - step)
    assert imap.boundary.sum() == 0.0


def test_empty_intersection_gives_zero(homogeneous):
    pose = ProbePose.look_at([0.0, 0.0, -200.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0])
    geo = make_geometry(TransducerConfig(num_elements=4), pose, 50.0)
    imap = trace_frame(homogeneous, geo, SimParams(rays_per_scanline=10))
    assert np.all(imap.values >= 0)


@pytest.fixture(scope="module")
def slab():
    return slab_oracle.slab_anatomy()


def test_no_collisions_stays_on_scanline(slab):
    lines = slab_oracle.slab_lines(3)
    a = trace_frame(slab, lines, SimParams(rays_per_scanline=1, max_collisions=0), frequency=3.6e6)
    b = trace_frame(slab, lines, SimParams(rays_per_scanline=50, max_collisions=0, seed=9), frequency=3.6e6)
    np.testing.assert_array_equal(a.values, b.values)
    r2 = ((1.6e6 - 1.8e6) / 3.4e6) ** 2
    assert np.count_nonzero(a.boundary[0]) == 2
    assert a.boundary[0].max() > 0 and a.boundary[0][a.boundary[0] > 0][1] < r2


def test_frame_deterministic(slab):
    lines = slab_oracle.slab_lines(4)
    p = SimParams(rays_per_scanline=200, seed=11)
    a = trace_frame(slab, lines, p, frequency=3.6e6)
    b = trace_frame(slab, lines, p, frequency=3.6e6)
    assert a.values.tobytes() == b.values.tobytes()
    c = trace_frame(slab, lines, p.replace(seed=12), frequency=3.6e6)
    assert not np.array_equal(a.values, c.values)


def test_energy_bounded(slab):
    imap = trace_frame(slab, slab_oracle.slab_lines(4), SimParams(rays_per_scanline=300), frequency=3.6e6)
    assert np.all(np.isfinite(imap.values)) and np.all(imap.values >= 0)
    assert imap.max_deposit.max() <= 1.0


def test_slab_echo_matches_oracle(slab):
    est = slab_oracle.far_echo_estimates(slab, slab_oracle.slab_lines(50), 500)
    se = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean() - slab_oracle.expected_far_echo()) <= 3 * se


def test_sim_params_validation_and_json():
    with pytest.raises(ValueError):
        SimParams(rays_per_scanline=0)
    with pytest.raises(ValueError):
        SimParams(beam_coherence_c0=1.5)
    with pytest.raises(ValueError):
        SimParams(cone_bounds=(0.5, 0.1))
    p = SimParams(rays_per_scanline=7, beam_coherence_c0=0.05, seed=3)
    assert SimParams.from_json(p.to_json()) == p
    with pytest.raises(ValueError, match="unknown"):
        SimParams.from_json({"rays": 1})
