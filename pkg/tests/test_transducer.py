import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from sonotrace.transducer import ProbePose, TransducerConfig, make_geometry, make_scanlines


def test_phased_three_lines_span_fan():
    cfg = TransducerConfig(num_elements=3, fan_angle=math.radians(90))
    lines = make_scanlines(cfg, ProbePose(), 10.0)
    expected = [(-1 / math.sqrt(2), 1 / math.sqrt(2)), (0.0, 1.0), (1 / math.sqrt(2), 1 / math.sqrt(2))]
    for line, (x, z) in zip(lines, expected):
        np.testing.assert_allclose(line.direction, [x, 0.0, z], atol=1e-12)
        np.testing.assert_allclose(line.origin, 0.0)


def test_linear_origins_one_pitch_apart():
    cfg = TransducerConfig(num_elements=2, geometry="linear", element_width=0.5, kerf=0.1)
    a, b = make_scanlines(cfg, ProbePose(), 10.0)
    assert np.linalg.norm(b.origin - a.origin) == pytest.approx(0.6, abs=1e-12)
    np.testing.assert_allclose(a.direction, b.direction)


def test_sample_spacing_and_count():
    cfg = TransducerConfig(sampling_frequency=50e6, c_ref=1540.0)
    lines = make_scanlines(cfg, ProbePose(), 100.0)
    assert lines[0].sample_spacing == pytest.approx(0.0154, abs=1e-12)
    assert lines[0].num_samples == 6494


def test_middle_line_is_probe_axis():
    pose = ProbePose.look_at([1.0, 2.0, 3.0], [0.3, -0.2, 1.0], [1.0, 0.0, 0.0])
    lines = make_scanlines(TransducerConfig(num_elements=129), pose, 50.0)
    np.testing.assert_allclose(lines[64].direction, pose.axial, atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        TransducerConfig(sampling_frequency=10e6, center_frequency=3.6e6)
    with pytest.raises(ValueError):
        TransducerConfig(num_elements=0)
    with pytest.raises(ValueError):
        TransducerConfig(fan_angle=math.pi)
    with pytest.raises(ValueError):
        make_scanlines(TransducerConfig(), ProbePose(), 0.0)


def test_pose_quaternion_normalized():
    with pytest.raises(ValueError):
        ProbePose(orientation=[1.0, 0.1, 0.0, 0.0])


def test_config_json_round_trip():
    cfg = TransducerConfig(num_elements=64, geometry="linear")
    assert TransducerConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TransducerConfig.from_json({"bogus": 1})


rotations = st.integers(0, 2 ** 31).map(lambda s: Rotation.random(random_state=s).as_matrix())
vectors = st.tuples(*[st.floats(-100, 100)] * 3).map(np.array)


@settings(max_examples=30, deadline=None)
@given(rot=rotations, trans=vectors, kind=st.sampled_from(["phased", "linear"]))
def test_rigid_motion_equivariance(rot, trans, kind):
    cfg = TransducerConfig(num_elements=9, geometry=kind)
    pose = ProbePose.look_at([5.0, -3.0, 2.0], [0.1, 0.2, 1.0], [1.0, 0.0, 0.0])
    base = make_geometry(cfg, pose, 20.0)
    moved = make_geometry(cfg, pose.transformed(rot, trans), 20.0)
    np.testing.assert_allclose(moved.origins, base.origins @ rot.T + trans, atol=1e-9)
    np.testing.assert_allclose(moved.directions, base.directions @ rot.T, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(moved.directions, axis=1), 1.0, atol=1e-12)
