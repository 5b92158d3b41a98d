# SPDX-License-Identifier: Apache-2.0
import math

import pytest

import tfn


def test_identical_boxes_overlap_fully():
    b = tfn.Box3D(h=1.5, w=1.6, l=3.9, cx=1.0, cy=1.7, cz=12.0, heading=0.3)
    assert tfn.iou3d(b, b) == pytest.approx(1.0, abs=1e-12)
    assert tfn.iou3d(b, b, bev=True) == pytest.approx(1.0, abs=1e-12)


def test_half_shifted_cubes():
    a = tfn.Box3D(h=2, w=2, l=2)
    b = tfn.Box3D(h=2, w=2, l=2, cx=1.0)
    # Overlap is half of each cube: 4 / (8 + 8 - 4).
    assert tfn.iou3d(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_corners_span_the_box():
    b = tfn.Box3D(h=2.0, w=1.0, l=4.0)
    corners = b.corners()
    assert len(corners) == 8
    xs = sorted(c[0] for c in corners)
    assert xs[0] == pytest.approx(-2.0) and xs[-1] == pytest.approx(2.0)


def test_cosine_distance_values():
    assert tfn.cosine_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert tfn.cosine_distance([1, 0], [0, 3]) == 1.0
    assert tfn.cosine_distance([1, -1], [-1, 1]) == 2.0


def test_average_precision_worked_example():
    ap = tfn.average_precision(["tp", "fp", "tp"], [0.9, 0.8, 0.7], 2)
    assert ap == pytest.approx(28 / 33, abs=1e-12)
    with pytest.raises(ValueError):
        tfn.average_precision(["maybe"], [0.1], 1)


def test_parse_labels():
    text = "0 1 Car 0 0 -1.5 100 120 200 180 1.5 1.6 3.9 1.0 1.7 12.0 0.1\n"
    frames = tfn.parse_labels(text)
    assert len(frames) == 1
    obj = frames[0][0]
    assert obj["type"] == "Car"
    assert obj["box3d"].cz == pytest.approx(12.0)
    with pytest.raises(tfn.Error):
        tfn.parse_labels("0 1 Car 0 0\n")


def test_synth_drive_is_deterministic():
    a = tfn.synth_drive_summary(num_objects=3, num_frames=5, seed=4)
    b = tfn.synth_drive_summary(num_objects=3, num_frames=5, seed=4)
    assert a == b
    assert a["frames"] == 5
    assert a["points"] > 0


def test_wrap_angle():
    assert tfn.wrap_angle(3 * math.pi) == pytest.approx(math.pi)


def test_cli_usage_and_gradcheck():
    code, out, err = tfn.run_cli(["train", "--tau", "0"])
    assert code == 1
    assert "[1 - 64]" in err
    code, out, _ = tfn.run_cli(["gradcheck", "--configs", "1"])
    assert code == 0
    assert "max relative error" in out
