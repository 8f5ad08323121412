import math
import struct

import numpy as np
import pytest
from pydantic import ValidationError

from semmap.exceptions import DriveLogError, InputMismatchError, SimulationError
from semmap.geometry import CameraModel, RoiSpec
from semmap.grid import SemanticLabel
from semmap.simulator import (
    PIXEL_DTYPE,
    DriveConfig,
    DrivePath,
    NoiseSpec,
    WorldFeature,
    WorldModel,
    WorldParams,
    WorldTemplate,
    decode_drive_log,
    encode_drive_log,
    frame_count,
    frame_rng,
    generate_world,
    intersection_path,
    iter_drive,
    read_drive_log,
    straight_path,
    write_drive_log,
)
from semmap.simulator.render import flip_labels, sample_roi

SHORT_PATH = DrivePath.from_waypoints([(10.0, 0.0), (20.0, 0.0)], lane_offset=-1.75)


def test_straight_road_labels(straight_world):
    labels = straight_world.labels_at(
        np.array([[10.0, -3.5], [10.0, 3.5], [1.0, 0.0], [4.0, 0.0], [50.0, -1.0]])
    )
    lane, ground = int(SemanticLabel.LANE_LINE), int(SemanticLabel.GROUND)
    assert labels.tolist() == [lane, lane, lane, ground, ground]


def test_straight_road_features(straight_world):
    assert straight_world.total_length(SemanticLabel.LANE_LINE) == pytest.approx(300.0)
    arrows = [f for f in straight_world.features if f.label is SemanticLabel.GROUND_SIGN]
    assert len(arrows) == 6
    assert straight_world.bounds()[0] == pytest.approx(0.0)


def test_world_is_deterministic():
    assert generate_world("straight_road", seed=3) == generate_world("straight_road", seed=3)
    assert generate_world("straight_road", seed=3) != generate_world("straight_road", seed=4)


@pytest.mark.parametrize("template", list(WorldTemplate))
def test_every_template_has_markings(template):
    world = generate_world(template, seed=1)
    labels = {feature.label for feature in world.features}
    assert SemanticLabel.LANE_LINE in labels
    if template is not WorldTemplate.STRAIGHT_ROAD:
        assert {SemanticLabel.STOP_LINE, SemanticLabel.CROSSWALK} <= labels


def test_world_too_small_for_junctions():
    with pytest.raises(SimulationError):
        generate_world(WorldTemplate.INTERSECTION, WorldParams(length=10.0))


def test_world_save_load(straight_world, tmp_path):
    path = tmp_path / "world.json"
    straight_world.save(path)
    assert WorldModel.load(path).features == straight_world.features


def test_ground_feature_rejected():
    with pytest.raises(ValidationError):
        WorldFeature(
            type="polygon", label=SemanticLabel.GROUND, vertices=[(0, 0), (1, 0), (1, 1)]
        )

    with pytest.raises(ValidationError):
        WorldFeature(type="polyline", label="lane-line", vertices=[(0, 0), (1, 0)])


def test_straight_path_follows_right_lane():
    path = straight_path()
    assert path.length == pytest.approx(100.0)
    assert path.pose_at(10.0).xy_yaw == pytest.approx((10.0, -1.75, 0.0))
    assert path.pose_at(500.0).p[0] == pytest.approx(100.0)


def test_intersection_turn_ends_heading_north():
    path = intersection_path(turn="left")
    assert path.pose_at(path.length).yaw == pytest.approx(math.pi / 2)

    with pytest.raises(SimulationError):
        intersection_path(turn="u-turn")


def test_path_needs_distinct_waypoints():
    with pytest.raises(SimulationError):
        DrivePath.from_waypoints([(0.0, 0.0), (0.0, 0.0)])


def test_frame_count():
    assert frame_count(straight_path(), DriveConfig()) == 200
    assert frame_count(SHORT_PATH, DriveConfig(speed=10.0, frame_rate=5.0)) == 5


def test_noiseless_drive(noiseless_frames):
    assert len(noiseless_frames) == 200
    for frame in noiseless_frames[:20]:
        assert frame.gnss is not None
        assert frame.gnss.p == pytest.approx(frame.truth.p)
        assert frame.t == pytest.approx(frame.index / 10.0)

    assert noiseless_frames[0].odom.dp == pytest.approx(np.zeros(3))
    assert noiseless_frames[1].odom.dp == pytest.approx([0.5, 0.0, 0.0])


def test_noiseless_frames_see_lane_lines(noiseless_frames):
    pixels = noiseless_frames[10].pixels
    assert pixels.dtype == PIXEL_DTYPE
    assert len(pixels)
    assert int(SemanticLabel.LANE_LINE) in set(pixels["label"].tolist())
    assert (pixels["u"] >= 0).all() and (pixels["u"] < 640).all()


def test_drive_is_reproducible(straight_world, camera):
    noise = NoiseSpec(seed=5)
    first = list(iter_drive(straight_world, SHORT_PATH, camera, noise=noise))
    second = list(iter_drive(straight_world, SHORT_PATH, camera, noise=noise))
    for a, b in zip(first, second):
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.odom.dp, b.odom.dp)


def test_skipping_render_keeps_other_sensors(straight_world, camera):
    noise = NoiseSpec(seed=5)
    rendered = list(iter_drive(straight_world, SHORT_PATH, camera, noise=noise))
    bare = list(iter_drive(straight_world, SHORT_PATH, camera, noise=noise, render=False))

    assert all(len(frame.pixels) == 0 for frame in bare)
    for a, b in zip(rendered, bare):
        assert np.array_equal(a.odom.dp, b.odom.dp)
        assert np.array_equal(a.odom.dq, b.odom.dq)
        assert np.array_equal(a.gnss.p, b.gnss.p)


def test_frame_rng_streams():
    assert frame_rng(1, 5).random() == frame_rng(1, 5).random()
    assert frame_rng(1, 5).random() != frame_rng(1, 6).random()


def test_gnss_blocked_interval_is_inclusive():
    noise = NoiseSpec(gnss_blocked=[(10.0, 20.0)])
    assert not noise.gnss_available(10.0)
    assert not noise.gnss_available(20.0)
    assert noise.gnss_available(20.1)

    with pytest.raises(ValidationError):
        NoiseSpec(gnss_blocked=[(20.0, 10.0)])


def test_blocked_drive_has_no_fixes(straight_world, camera):
    noise = NoiseSpec.noiseless(gnss_blocked=[(0.0, 1000.0)])
    frames = iter_drive(straight_world, SHORT_PATH, camera, noise=noise, render=False)
    assert all(frame.gnss is None for frame in frames)


def test_flip_labels():
    rng = np.random.default_rng(0)
    labels = np.array([0, 1, 2, 3, 4] * 20, dtype=np.uint8)
    assert np.array_equal(flip_labels(labels, 0.0, rng), labels)

    flipped = flip_labels(labels, 1.0, rng)
    assert (flipped != labels).all()
    assert flipped.max() < 5


def test_sample_roi_stays_inside():
    roi = RoiSpec(forward_min=2.0, forward_max=6.0, half_width=1.5)
    points = sample_roi(roi, np.random.default_rng(2))
    assert len(points) > 100
    assert roi.contains(points).all()


def test_drive_log_round_trip(noiseless_frames, camera, tmp_path):
    frames = noiseless_frames[:5]
    path = tmp_path / "drive.slog"
    size = write_drive_log(path, frames, camera, 10.0)
    log = read_drive_log(path)

    assert size == path.stat().st_size
    assert len(log) == 5
    assert (log.image_w, log.image_h, log.frame_rate) == (640, 480, 10.0)
    assert log.gnss_coverage == 1.0
    for original, restored in zip(frames, log.frames):
        assert np.array_equal(original.pixels, restored.pixels)
        assert restored.truth.p == pytest.approx(original.truth.p)
        assert restored.gnss.p == pytest.approx(original.gnss.p)


def test_drive_log_rejects_bad_header(noiseless_frames, camera):
    data = bytearray(encode_drive_log(noiseless_frames[:1], camera, 10.0))

    bad_magic = b"XLOG" + bytes(data[4:])
    with pytest.raises(DriveLogError) as info:
        decode_drive_log(bad_magic)
    assert info.value.offset == 0

    struct.pack_into("<d", data, 10, 0.0)
    with pytest.raises(DriveLogError) as info:
        decode_drive_log(bytes(data))
    assert info.value.offset == 10


def test_drive_log_rejects_truncation(noiseless_frames, camera):
    data = encode_drive_log(noiseless_frames[:2], camera, 10.0)
    with pytest.raises(DriveLogError):
        decode_drive_log(data[:-3])


def test_drive_log_camera_mismatch(noiseless_frames, camera):
    log = decode_drive_log(encode_drive_log(noiseless_frames[:1], camera, 10.0))
    log.check_camera(camera)

    other = CameraModel.from_mounting(cx=400.0, cy=300.0, image_w=800, image_h=600)
    with pytest.raises(InputMismatchError):
        log.check_camera(other)
