import numpy as np
import pytest

from semmap.config import PipelineConfig
from semmap.exceptions import LocalizationError, UnobservableGaugeError
from semmap.grid import SemanticLabel
from semmap.pipeline import (
    build_map_from_frames,
    estimate_trajectory,
    localize_frames,
    route_for,
    run_demo,
    scan_from_pixels,
)
from semmap.simulator import (
    DrivePath,
    NoiseSpec,
    WorldTemplate,
    iter_drive,
    straight_path,
)
from semmap.simulator.render import empty_pixels

LANE_OFFSETS = np.array([-3.5, 0.0, 3.5])
NOISY_NO_FLIPS = NoiseSpec(seed=21, seg_flip_prob=0.0)


@pytest.fixture(scope="module")
def noiseless_mapping(noiseless_frames, camera, roi):
    return build_map_from_frames([frame.observation for frame in noiseless_frames], camera, roi)


def test_scan_of_no_pixels(camera):
    scan = scan_from_pixels(empty_pixels(), camera, timestamp=1.5)
    assert len(scan) == 0
    assert scan.timestamp == 1.5


def test_scan_points_carry_world_labels(noiseless_frames, straight_world, camera, roi):
    frame = noiseless_frames[10]
    scan = scan_from_pixels(frame.pixels, camera, roi)
    assert len(scan) >= 0.99 * len(frame.pixels)

    world_labels = straight_world.labels_at(frame.truth.transform_points(scan.points)[:, :2])
    assert (world_labels == scan.labels).mean() > 0.99


def test_noiseless_mapping_recovers_the_trajectory(noiseless_mapping, noiseless_frames):
    assert noiseless_mapping.optimization.converged
    assert len(noiseless_mapping.poses) == len(noiseless_frames)
    errors = [
        np.linalg.norm(pose.p[:2] - frame.truth.p[:2])
        for pose, frame in zip(noiseless_mapping.poses, noiseless_frames)
    ]
    assert max(errors) < 1e-3

    rows = noiseless_mapping.trajectory_rows()
    assert len(rows) == 2 * len(noiseless_frames)
    assert {row["source"] for row in rows} == {"raw", "optimized"}


def test_noiseless_map_puts_lane_lines_on_the_road(noiseless_mapping):
    indices, labels = noiseless_mapping.grid.labels_array()
    lane = labels == int(SemanticLabel.LANE_LINE)
    y = (indices[lane, 1] + 0.5) * 0.1
    distance = np.abs(y[:, None] - LANE_OFFSETS[None, :]).min(axis=1)

    assert lane.sum() > 500
    assert (distance < 0.2).all()
    assert int(SemanticLabel.GROUND_SIGN) in set(labels.tolist())
    assert noiseless_mapping.points > 0


def test_mapping_without_gnss(straight_world, camera):
    path = DrivePath.from_waypoints([(0.0, -1.75), (10.0, -1.75)])
    noise = NoiseSpec.noiseless(gnss_blocked=[(0.0, 1e4)])
    frames = iter_drive(straight_world, path, camera, noise=noise, render=False)
    with pytest.raises(UnobservableGaugeError):
        estimate_trajectory(frame.observation for frame in frames)


def test_localization_needs_gnss_for_the_start(noiseless_mapping, straight_world, camera):
    path = DrivePath.from_waypoints([(0.0, -1.75), (10.0, -1.75)])
    noise = NoiseSpec.noiseless(gnss_blocked=[(0.0, 1e4)])
    frames = iter_drive(straight_world, path, camera, noise=noise, render=False)
    with pytest.raises(LocalizationError):
        list(localize_frames((f.observation for f in frames), noiseless_mapping.grid, camera))

    assert list(localize_frames([], noiseless_mapping.grid, camera)) == []


def test_localization_on_the_mapped_road(noiseless_mapping, straight_world, camera, roi):
    path = DrivePath.from_waypoints([(20.0, -1.75), (60.0, -1.75)])
    frames = list(iter_drive(straight_world, path, camera, noise=NOISY_NO_FLIPS, roi=roi))
    rows = list(
        localize_frames(
            (frame.observation for frame in frames), noiseless_mapping.grid, camera, roi
        )
    )

    assert len(rows) == len(frames)
    matched = [row for row in rows if row.icp_inliers > 0]
    assert len(matched) > 0.8 * len(rows)

    lateral = np.array([row.y - frame.truth.p[1] for row, frame in zip(rows, frames)])
    assert np.percentile(np.abs(lateral[10:]), 90) < 0.1


def test_route_for_templates():
    config = PipelineConfig.load()
    assert route_for(WorldTemplate.STRAIGHT_ROAD, config).length == straight_path().length
    turn = config.model_copy(update={"route": config.route.model_copy(update={"turn": "left"})})
    assert route_for(WorldTemplate.INTERSECTION, turn).pose_at(1e9).yaw == pytest.approx(
        np.pi / 2
    )
    assert route_for(WorldTemplate.URBAN_BLOCK, config).length > 1000.0


@pytest.mark.slow
def test_demo_on_a_straight_road(tmp_path):
    config = PipelineConfig.load(
        seed=4,
        world={"template": "straight_road"},
        noise={"seg_flip_prob": 0.01},
        demo={"sessions": 2},
    )
    report = run_demo(config, tmp_path)

    assert report.map_version == 2
    assert report.sessions == 2
    assert 0.0 < report.compression_ratio < 1.0
    assert report.summary.frames == 200
    assert report.summary.p90_y < 0.5
    assert all(path.is_file() for path in report.outputs.values())


def test_noiseless_localization_tracks_every_frame(
    noiseless_mapping, noiseless_frames, camera, roi
):
    observations = (frame.observation for frame in noiseless_frames)
    rows = list(localize_frames(observations, noiseless_mapping.grid, camera, roi))

    assert len(rows) == len(noiseless_frames)
    errors = [
        np.hypot(row.x - frame.truth.p[0], row.y - frame.truth.p[1])
        for row, frame in zip(rows, noiseless_frames)
    ]
    assert max(errors) < 0.1


@pytest.mark.slow
def test_urban_block_map_compresses_tenfold(tmp_path):
    config = PipelineConfig.load(seed=5, world={"template": "urban_block"}, demo={"sessions": 1})
    report = run_demo(config, tmp_path)

    assert report.map_version == 1
    assert report.upload_bytes > 0
    assert report.compression_ratio <= 0.1
