"""Dataset types, ingestion, test/guidance pairing, and noise injection.

On-disk layout: ``<root>/<subject_id>/*.png`` (8-bit grayscale) plus
``<root>/labels.csv`` with header ``image,side,pitch,yaw`` (radians, '.'
decimal, LF endings). Synthetic datasets are written in the same layout so
downstream tools never care about the source.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .geometry import CONVENTIONS
from .seeding import derive_seed

log = logging.getLogger(__name__)

LABELS_FILENAME = "labels.csv"
LABELS_HEADER = ["image", "side", "pitch", "yaw"]
SIDES = ("left", "right")
FLAGS = ("normal", "noisy")
NOISE_MODES = ("blank", "occlude_half", "blink")

# Pixels darker than this are treated as iris evidence by the blink injector.
IRIS_DARKNESS_THRESHOLD = 0.4
LID_INTENSITY = 0.55


@dataclass
class Sample:
    """One labeled eye image."""

    image: np.ndarray  # (H, W) float32 in [0, 1]
    gaze: np.ndarray  # (3,) unit vector
    subject: str
    side: str = "left"
    flag: str = "normal"
    name: str = ""  # relative image path inside the dataset root


@dataclass
class Pair:
    """A test image with its same-subject guidance companion."""

    test: Sample
    guidance: Sample

    def __post_init__(self):
        if self.test.subject != self.guidance.subject:
            raise DataError(
                f"pair crosses subjects: {self.test.subject!r} vs {self.guidance.subject!r}"
            )
        if self.test is self.guidance:
            raise DataError("a sample cannot be its own guidance image")


def validate_image(image, resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to float32, check 2-D shape, [0, 1] range, and finiteness."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"eye images must be 2-D (H, W), got shape {arr.shape}")
    if resolution is not None and arr.shape != tuple(resolution):
        raise DataError(f"expected resolution {tuple(resolution)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("eye image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError("eye image values must lie in [0, 1]")
    return arr


def validate_sample(sample: Sample) -> Sample:
    validate_image(sample.image)
    gaze = np.asarray(sample.gaze, dtype=np.float64)
    if gaze.shape != (3,) or abs(np.linalg.norm(gaze) - 1.0) > 1e-6:
        raise DataError(f"sample {sample.name!r} has a non-unit gaze label")
    if not sample.subject:
        raise DataError("sample subject id must be non-empty")
    if sample.side not in SIDES:
        raise DataError(f"sample side must be one of {SIDES}, got {sample.side!r}")
    if sample.flag not in FLAGS:
        raise DataError(f"sample flag must be one of {FLAGS}, got {sample.flag!r}")
    return sample


def group_by_subject(samples) -> dict[str, list[Sample]]:
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.subject, []).append(s)
    return groups


def load_dataset(root, convention: str = "camera", side: str = "all") -> list[Sample]:
    """Load a dataset directory into memory.

    ``convention`` picks the pitch/yaw-to-vector mapping (dataset label
    conventions differ in yaw sign); ``side`` filters to left/right eyes.
    """
    root = Path(root)
    if convention not in CONVENTIONS:
        raise DataError(f"unknown convention {convention!r}; choose from {sorted(CONVENTIONS)}")
    if side not in SIDES + ("all",):
        raise DataError(f"side filter must be left, right, or all, got {side!r}")
    labels_path = root / LABELS_FILENAME
    if not labels_path.is_file():
        raise DataError(f"missing label file: {labels_path}")
    to_vector = CONVENTIONS[convention][0]

    samples: list[Sample] = []
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            header = None
        if header != LABELS_HEADER:
            raise DataError(
                f"{labels_path}:1: expected header {','.join(LABELS_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            where = f"{labels_path}:{lineno}"
            if len(row) != 4:
                raise DataError(f"{where}: expected 4 columns, got {len(row)}")
            rel_name, row_side, pitch_text, yaw_text = row
            if row_side not in SIDES:
                raise DataError(f"{where}: side must be left or right, got {row_side!r}")
            try:
                pitch = float(pitch_text)
                yaw = float(yaw_text)
            except ValueError:
                raise DataError(f"{where}: unparseable pitch/yaw {pitch_text!r},{yaw_text!r}")
            if not (np.isfinite(pitch) and np.isfinite(yaw)):
                raise DataError(f"{where}: non-finite pitch/yaw")
            if abs(pitch) > np.pi / 2 or abs(yaw) > np.pi:
                raise DataError(f"{where}: pitch/yaw outside valid ranges")
            parts = Path(rel_name).parts
            if len(parts) < 2:
                raise DataError(f"{where}: image path must be <subject>/<file>, got {rel_name!r}")
            image_path = root / rel_name
            if not image_path.is_file():
                raise DataError(f"{where}: image not found: {image_path}")
            if side != "all" and row_side != side:
                continue
            with Image.open(image_path) as im:
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
            samples.append(
                Sample(
                    image=arr,
                    gaze=to_vector(pitch, yaw),
                    subject=parts[0],
                    side=row_side,
                    name=rel_name,
                )
            )

    if not samples:
        log.warning("dataset at %s is empty (after side=%s filter)", root, side)
        return samples
    histogram = Counter(s.subject for s in samples)
    log.info(
        "loaded %d samples from %s across %d subjects: %s",
        len(samples),
        root,
        len(histogram),
        dict(sorted(histogram.items())),
    )
    return samples


def save_dataset(samples, root, convention: str = "camera") -> None:
    """Write samples in the standard layout (PNG images plus labels.csv)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    from_vector = CONVENTIONS[convention][1]
    rows = []
    for i, sample in enumerate(samples):
        validate_sample(sample)
        name = sample.name or f"{sample.subject}/img_{i:04d}.png"
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        img8 = np.round(np.asarray(sample.image, dtype=np.float64) * 255.0).astype(np.uint8)
        tmp = path.with_suffix(".png.tmp")
        Image.fromarray(img8, mode="L").save(tmp, format="PNG")
        tmp.replace(path)
        pitch, yaw = from_vector(sample.gaze)
        rows.append(f"{name},{sample.side},{pitch:.9f},{yaw:.9f}")
    text = ",".join(LABELS_HEADER) + "\n" + "\n".join(rows) + ("\n" if rows else "")
    tmp = root / (LABELS_FILENAME + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(root / LABELS_FILENAME)


class PairSampler:
    """Same-subject test/guidance pairing, reproducible from a seed.

    Every sample of every eligible subject appears once as the test image.
    Train mode reshuffles the order and redraws the guidance uniformly from
    the subject's other samples each epoch; eval mode fixes one guidance
    choice per test image from the seed.
    """

    def __init__(self, samples, mode: str, seed: int):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        self.mode = mode
        self.seed = seed
        groups = group_by_subject(samples)
        self.samples = []
        for subject, members in groups.items():
            if len(members) < 2:
                log.warning("subject %s has a single sample; skipped from pairing", subject)
                continue
            self.samples.extend(members)
        if not self.samples:
            raise DataError("pair sampling needs at least one subject with >= 2 samples")
        self._groups = group_by_subject(self.samples)

    def _draw(self, rng: np.random.Generator, shuffle: bool) -> list[Pair]:
        order = np.arange(len(self.samples))
        if shuffle:
            rng.shuffle(order)
        pairs = []
        for idx in order:
            test = self.samples[int(idx)]
            others = [s for s in self._groups[test.subject] if s is not test]
            guidance = others[int(rng.integers(len(others)))]
            pairs.append(Pair(test=test, guidance=guidance))
        return pairs

    def epoch_pairs(self, epoch: int) -> list[Pair]:
        if self.mode != "train":
            raise ValueError("epoch_pairs is only available in train mode")
        return self._draw(np.random.default_rng(derive_seed(self.seed, "epoch", epoch)), True)

    def eval_pairs(self) -> list[Pair]:
        if self.mode != "eval":
            raise ValueError("eval_pairs is only available in eval mode")
        return self._draw(np.random.default_rng(derive_seed(self.seed, "eval")), False)


def inject_noise(sample: Sample, mode: str, seed: int) -> Sample:
    """Return a copy of the sample with a degraded image and flag='noisy'.

    blank zeroes the frame, occlude_half zeroes a seeded half (truncated
    capture), blink paints a lid-intensity band over the dark iris region.
    The gaze label, subject, and side are never altered.
    """
    if mode not in NOISE_MODES:
        raise ValueError(f"noise mode must be one of {NOISE_MODES}, got {mode!r}")
    rng = np.random.default_rng(derive_seed(seed, "noise", mode))
    image = np.array(sample.image, dtype=np.float32, copy=True)
    if mode == "blank":
        image[:] = 0.0
    elif mode == "occlude_half":
        w = image.shape[1]
        if rng.integers(2) == 0:
            image[:, : w // 2] = 0.0
        else:
            image[:, w // 2 :] = 0.0
    else:  # blink
        dark_rows = np.flatnonzero((image < IRIS_DARKNESS_THRESHOLD).any(axis=1))
        h = image.shape[0]
        if dark_rows.size:
            lo = max(0, int(dark_rows[0]) - 1)
            hi = min(h, int(dark_rows[-1]) + 2)
        else:
            lo, hi = h // 3, 2 * h // 3
        image[lo:hi, :] = LID_INTENSITY
    return replace(sample, image=image, flag="noisy")


def with_noisy_fraction(samples, fraction: float, seed: int) -> list[Sample]:
    """Copy of the sample list with a seeded fraction degraded (mixed modes).

    Mirrors real capture sessions, whose frames naturally include blinks and
    truncated eyes; a model that never sees degraded guidance during training
    cannot be probed for guidance-noise robustness. Labels are untouched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    out = []
    for i, sample in enumerate(samples):
        rng = np.random.default_rng(derive_seed(seed, "dataset-noise", i))
        if rng.random() < fraction:
            mode = str(rng.choice(NOISE_MODES))
            sample = inject_noise(sample, mode, derive_seed(seed, "dataset-noise-mode", i))
        out.append(sample)
    return out


def split_samples(samples, eval_fraction: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Per-subject stratified train/eval split (seeded).

    Both halves keep >= 2 samples per subject so each side still supports
    same-subject guidance pairing; subjects therefore need >= 4 samples.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must lie in (0, 1)")
    train: list[Sample] = []
    held_out: list[Sample] = []
    for subject, members in group_by_subject(samples).items():
        if len(members) < 4:
            raise DataError(f"subject {subject!r} needs >= 4 samples to split, has {len(members)}")
        rng = np.random.default_rng(derive_seed(seed, "split", subject))
        n_eval = min(max(2, int(round(eval_fraction * len(members)))), len(members) - 2)
        picks = set(rng.choice(len(members), size=n_eval, replace=False).tolist())
        for i, s in enumerate(members):
            (held_out if i in picks else train).append(s)
    return train, held_out


def dataset_fingerprint(root) -> str:
    """Content hash over the dataset directory (sorted relative paths + bytes).

    The run manifest is excluded: it records a creation timestamp and is
    metadata about a run, not part of the dataset content.
    """
    import hashlib

    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name == "manifest.json":
            continue
        digest.update(str(path.relative_to(root)).encode("utf-8"))
        digest.update(b"\x00")
        digest.update(path.read_bytes())
    return digest.hexdigest()
