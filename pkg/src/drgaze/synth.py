"""Deterministic synthetic eye-image generator for desk-scale experiments.

Each image is a stylized eye: a bright elliptical sclera on skin, with a dark
iris disc whose center offset encodes the gaze linearly (yaw shifts it
horizontally, pitch vertically). Appearance parameters (eye width, iris
radius, brightness, noise level) are fixed per subject, so the task carries a
real calibration component while the label stays exactly recoverable from the
iris-center geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import DataError
from .geometry import pitch_yaw_to_vector
from .seeding import derive_seed

PITCH_RANGE = (-0.4, 0.4)
YAW_RANGE = (-0.6, 0.6)
MIN_RESOLUTION = (12, 20)
DEFAULT_RESOLUTION = (36, 60)

SKIN_INTENSITY = 0.62
SCLERA_INTENSITY = 0.93
IRIS_INTENSITY = 0.10
# Iris-center shift per radian of gaze, as a fraction of image width/height.
IRIS_SHIFT_X = 0.34
IRIS_SHIFT_Y = 0.28


@dataclass(frozen=True)
class SubjectAppearance:
    """Per-subject rendering parameters (fractions of image size)."""

    sclera_rx: float
    sclera_ry: float
    iris_radius: float
    brightness: float
    noise_sigma: float


def sample_appearance(rng: np.random.Generator) -> SubjectAppearance:
    return SubjectAppearance(
        sclera_rx=rng.uniform(0.37, 0.43),
        sclera_ry=rng.uniform(0.38, 0.44),
        iris_radius=rng.uniform(0.16, 0.20),
        brightness=rng.uniform(0.85, 1.0),
        noise_sigma=rng.uniform(0.01, 0.025),
    )


def iris_center(pitch: float, yaw: float, resolution) -> tuple[float, float]:
    """(row, col) of the iris disc center for a gaze label; linear in (pitch, yaw)."""
    h, w = resolution
    col = w / 2.0 + yaw * IRIS_SHIFT_X * w
    row = h / 2.0 - pitch * IRIS_SHIFT_Y * h  # looking up moves the iris up
    return row, col


def _fields(appearance, pitch, yaw, resolution):
    h, w = resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    cy, cx = h / 2.0, w / 2.0
    rx = appearance.sclera_rx * w
    ry = appearance.sclera_ry * h
    r_ell = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    sclera_alpha = np.clip(0.5 + (1.0 - r_ell) * min(rx, ry), 0.0, 1.0)
    icy, icx = iris_center(pitch, yaw, resolution)
    d_iris = np.sqrt((xx - icx) ** 2 + (yy - icy) ** 2)
    iris_alpha = np.clip(0.5 + (appearance.iris_radius * h - d_iris), 0.0, 1.0)
    return sclera_alpha, iris_alpha


def render_eye(appearance, pitch, yaw, resolution=DEFAULT_RESOLUTION, noise=None) -> np.ndarray:
    """Render one eye image; values quantized to the 8-bit grid in [0, 1]."""
    sclera_alpha, iris_alpha = _fields(appearance, pitch, yaw, resolution)
    img = SKIN_INTENSITY + (SCLERA_INTENSITY - SKIN_INTENSITY) * sclera_alpha
    img = img * (1.0 - iris_alpha) + IRIS_INTENSITY * iris_alpha
    img *= appearance.brightness
    if noise is not None:
        img = img + noise
    img = np.clip(img, 0.0, 1.0)
    # Quantize exactly like the PNG save/load path so round trips are lossless.
    return (np.round(img * 255.0).astype(np.uint8).astype(np.float32)) / 255.0


def iris_mask(appearance, pitch, yaw, resolution=DEFAULT_RESOLUTION) -> np.ndarray:
    """Boolean mask of the iris disc as rendered for this label."""
    _, iris_alpha = _fields(appearance, pitch, yaw, resolution)
    return iris_alpha > 0.5


def iris_centroid(image: np.ndarray, threshold: float = 0.3) -> tuple[float, float]:
    """Darkness-weighted centroid (row, col) of the iris pixels."""
    weights = np.clip(threshold - np.asarray(image, dtype=np.float64), 0.0, None)
    total = weights.sum()
    if total <= 0.0:
        raise DataError("image contains no iris-dark pixels to locate")
    yy, xx = np.mgrid[0 : image.shape[0], 0 : image.shape[1]].astype(np.float64) + 0.5
    return float((weights * yy).sum() / total), float((weights * xx).sum() / total)


def synth_generate(
    n_subjects: int,
    n_per_subject: int,
    resolution=DEFAULT_RESOLUTION,
    seed: int = 0,
) -> list[Sample]:
    """Generate a deterministic synthetic dataset.

    Labels are drawn uniformly over the pitch/yaw box and rounded to 9
    decimals so the on-disk text labels reproduce the in-memory vectors
    bit for bit.
    """
    if n_subjects < 2:
        raise DataError("need at least 2 subjects (same-subject pairing requires company)")
    if n_per_subject < 4:
        raise DataError("need at least 4 images per subject (pairing plus held-out splits)")
    h, w = resolution
    if h < MIN_RESOLUTION[0] or w < MIN_RESOLUTION[1]:
        raise DataError(
            f"resolution {tuple(resolution)} too small to render the iris; "
            f"minimum is {MIN_RESOLUTION}"
        )
    samples = []
    for si in range(n_subjects):
        subject = f"s{si:02d}"
        appearance = sample_appearance(np.random.default_rng(derive_seed(seed, "subject", si)))
        for ii in range(n_per_subject):
            rng = np.random.default_rng(derive_seed(seed, "image", si, ii))
            pitch = round(float(rng.uniform(*PITCH_RANGE)), 9)
            yaw = round(float(rng.uniform(*YAW_RANGE)), 9)
            noise = rng.normal(0.0, appearance.noise_sigma, size=(h, w))
            image = render_eye(appearance, pitch, yaw, resolution, noise=noise)
            samples.append(
                Sample(
                    image=image,
                    gaze=pitch_yaw_to_vector(pitch, yaw),
                    subject=subject,
                    side="left" if ii % 2 == 0 else "right",
                    name=f"{subject}/img_{ii:04d}.png",
                )
            )
    return samples
