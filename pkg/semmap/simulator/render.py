"""
Segmentation oracle: labeled pixels as a perfect (optionally noisy) semantic segmentation
network would report them.
"""

import math
from typing import Optional

import numpy as np

from semmap.geometry import CameraModel, Pose, RoiSpec, project_points, vehicle_to_camera
from semmap.grid import NUM_LABELS
from semmap.simulator.noise import NoiseSpec
from semmap.simulator.world import WorldModel

SAMPLE_DENSITY = 50.0
"""Ground samples per square meter."""
PIXEL_DTYPE = np.dtype([("u", "<f4"), ("v", "<f4"), ("label", "u1")])


def empty_pixels() -> np.ndarray:
    return np.zeros(0, dtype=PIXEL_DTYPE)


def sample_roi(
    roi: RoiSpec, rng: np.random.Generator, density: float = SAMPLE_DENSITY
) -> np.ndarray:
    """Jittered lattice of vehicle-frame ground points covering ``roi``."""
    spacing = 1.0 / math.sqrt(density)
    xs = np.arange(roi.forward_min + spacing / 2.0, roi.forward_max, spacing)
    ys = np.arange(-roi.half_width + spacing / 2.0, roi.half_width, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack((gx.ravel(), gy.ravel()))
    points += rng.uniform(-spacing / 2.0, spacing / 2.0, size=points.shape)
    return points[roi.contains(points)]


def flip_labels(labels: np.ndarray, probability: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each label by a uniformly drawn *different* label with ``probability``."""
    flip = rng.random(len(labels)) < probability
    shift = rng.integers(1, NUM_LABELS, size=len(labels))
    flipped = (labels.astype(np.int64) + shift) % NUM_LABELS
    return np.where(flip, flipped, labels).astype(np.uint8)


def render_segmentation(
    world: WorldModel,
    truth: Pose,
    cam: CameraModel,
    noise: Optional[NoiseSpec] = None,
    roi: Optional[RoiSpec] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Sample the ground in front of the vehicle, label every sample from ``world`` and
    project the samples that the camera sees into pixels.

    Returns:
        A structured array of ``(u, v, label)`` with dtype :data:`PIXEL_DTYPE`.
    """
    noise = noise or NoiseSpec()
    roi = roi or RoiSpec()
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(noise.seed))

    points_v = sample_roi(roi, rng)
    labels = world.labels_at(truth.transform_points(points_v)[:, :2])
    points_c = vehicle_to_camera(cam, np.column_stack((points_v, np.zeros(len(points_v)))))
    uv, visible = project_points(cam, points_c)
    uv = uv.astype(np.float32)
    # float32 rounding may push a border pixel out of the image
    visible &= cam.contains(uv)
    labels = flip_labels(labels, noise.seg_flip_prob, rng)

    pixels = np.zeros(int(visible.sum()), dtype=PIXEL_DTYPE)
    pixels["u"] = uv[visible, 0]
    pixels["v"] = uv[visible, 1]
    pixels["label"] = labels[visible]
    return pixels
