"""Dataset loading, preprocessing and subject-independent splitting.

On-disk layout::

    <root>/<subject_id>/<class_name>/frame_%04d.png

Frames are 8-bit RGB. Videos are resampled to 32 frames, resized to 64x64
and scaled to [-1, 1]. The input image of a record is frame 0 of its
normalized video.
"""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

# Index order is alphabetical and fixed; checkpoints depend on it.
EXPRESSIONS: tuple[str, ...] = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")
NUM_CLASSES = len(EXPRESSIONS)

NUM_FRAMES = 32
IMAGE_SIZE = 64
CHANNELS = 3

FRAME_PATTERN = re.compile(r"frame_(\d{4,})\.png$")


class DatasetError(Exception):
    """Raised when a dataset as a whole cannot be used."""


class RecordError(DatasetError):
    """Raised for a single malformed video directory."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


@dataclass(frozen=True)
class ExpressionLabel:
    class_name: str

    def __post_init__(self):
        if self.class_name not in EXPRESSIONS:
            raise ValueError(
                f"unknown expression {self.class_name!r}; valid: {', '.join(EXPRESSIONS)}"
            )

    @property
    def index(self) -> int:
        return EXPRESSIONS.index(self.class_name)

    @property
    def onehot(self) -> np.ndarray:
        v = np.zeros(NUM_CLASSES, dtype=np.float32)
        v[self.index] = 1.0
        return v

    @classmethod
    def from_index(cls, index: int) -> "ExpressionLabel":
        return cls(EXPRESSIONS[index])

    @classmethod
    def from_onehot(cls, onehot) -> "ExpressionLabel":
        v = np.asarray(onehot)
        if v.shape != (NUM_CLASSES,) or np.count_nonzero(v == 1) != 1 or np.count_nonzero(v) != 1:
            raise ValueError(f"not a one-hot expression vector: {v!r}")
        return cls.from_index(int(np.argmax(v)))


def check_image(image: np.ndarray) -> np.ndarray:
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, CHANNELS):
        raise ValueError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}x{CHANNELS}, got {image.shape}")
    if not (np.all(image >= -1.0) and np.all(image <= 1.0)):
        raise ValueError("image values must lie in [-1, 1]")
    return image


def check_video(video: np.ndarray) -> np.ndarray:
    if video.shape != (NUM_FRAMES, IMAGE_SIZE, IMAGE_SIZE, CHANNELS):
        raise ValueError(
            f"video must be {NUM_FRAMES}x{IMAGE_SIZE}x{IMAGE_SIZE}x{CHANNELS}, got {video.shape}"
        )
    if not (np.all(video >= -1.0) and np.all(video <= 1.0)):
        raise ValueError("video values must lie in [-1, 1]")
    return video


@dataclass
class DatasetRecord:
    subject_id: str
    input_image: np.ndarray
    label: ExpressionLabel
    video: np.ndarray

    def __post_init__(self):
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")
        check_image(self.input_image)
        check_video(self.video)
        if np.max(np.abs(self.input_image - self.video[0])) > 1e-6:
            raise ValueError("input_image must equal the first video frame")


@dataclass
class DatasetSplit:
    train: list[DatasetRecord]
    test: list[DatasetRecord]

    @property
    def train_subjects(self) -> set[str]:
        return {r.subject_id for r in self.train}

    @property
    def test_subjects(self) -> set[str]:
        return {r.subject_id for r in self.test}


def scale_pixels(raw) -> np.ndarray:
    """Map 8-bit intensities in [0, 255] to [-1, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError("pixel values must lie in [0, 255]")
    return raw / 127.5 - 1.0


def unscale_pixels(scaled) -> np.ndarray:
    return (np.asarray(scaled, dtype=np.float64) + 1.0) * 127.5


def to_uint8(scaled) -> np.ndarray:
    return np.clip(np.rint(unscale_pixels(scaled)), 0, 255).astype(np.uint8)


def normalize_temporal(frames: Sequence[np.ndarray], target_len: int = NUM_FRAMES) -> np.ndarray:
    """Resample a frame sequence to ``target_len`` frames by linear interpolation.

    Output frame ``t`` sits at source position ``t * (n - 1) / (target_len - 1)``,
    so the first and last frames are reproduced exactly.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to resample")
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    shape = np.shape(frames[0])
    for i, f in enumerate(frames):
        if np.shape(f) != shape:
            raise ValueError(f"frame {i} has shape {np.shape(f)}, expected {shape}")
    src = np.stack([np.asarray(f) for f in frames])
    n = len(src)
    out = np.empty((target_len,) + shape, dtype=np.result_type(src.dtype, np.float32))
    for t in range(target_len):
        # integer arithmetic keeps exact source hits exact
        num = t * (n - 1)
        lo, rem = divmod(num, target_len - 1)
        if rem == 0:
            out[t] = src[lo]
        else:
            w = rem / (target_len - 1)
            out[t] = (1.0 - w) * src[lo] + w * src[lo + 1]
    return out


def _frame_paths(video_dir: Path) -> list[Path]:
    found = []
    for p in video_dir.iterdir():
        m = FRAME_PATTERN.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return [p for _, p in sorted(found)]


def _read_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (IMAGE_SIZE, IMAGE_SIZE):
                im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
            return np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise RecordError(path, f"cannot decode frame ({exc})") from exc


def load_video_dir(video_dir: Path) -> np.ndarray:
    """Read, resize, scale and temporally normalize one video directory."""
    paths = _frame_paths(video_dir)
    if len(paths) < 2:
        raise RecordError(video_dir, f"found {len(paths)} frames, need at least 2")
    frames = [scale_pixels(_read_frame(p)) for p in paths]
    video = normalize_temporal(frames, NUM_FRAMES)
    return np.clip(video, -1.0, 1.0).astype(np.float32)


def _load_record(subject_id: str, video_dir: Path) -> DatasetRecord:
    if video_dir.name not in EXPRESSIONS:
        raise RecordError(video_dir, f"unknown expression label {video_dir.name!r}")
    video = load_video_dir(video_dir)
    return DatasetRecord(subject_id, video[0].copy(), ExpressionLabel(video_dir.name), video)


def load_dataset(root_path, strict: bool = True, workers: int = 1) -> list[DatasetRecord]:
    """Load every ``<subject>/<expression>`` video under ``root_path``.

    With ``strict=False`` malformed videos are logged and skipped instead of
    raising :class:`RecordError`. Record order is lexicographic by path
    regardless of ``workers``.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    jobs = []
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for video_dir in sorted(p for p in subject_dir.iterdir() if p.is_dir()):
            jobs.append((subject_dir.name, video_dir))

    def load(job):
        try:
            return _load_record(*job)
        except RecordError as exc:
            if strict:
                raise
            logger.warning("skipping record: %s", exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(load, jobs))
    else:
        results = [load(j) for j in jobs]
    records = [r for r in results if r is not None]
    if not records:
        raise DatasetError(f"no usable videos found under {root}")
    return records


def save_dataset(records: Sequence[DatasetRecord], root_path) -> None:
    """Write records in the on-disk layout (8-bit PNG frames)."""
    root = Path(root_path)
    for rec in records:
        d = root / rec.subject_id / rec.label.class_name
        d.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(to_uint8(rec.video)):
            Image.fromarray(frame).save(d / f"frame_{i:04d}.png")


def split_subject_independent(
    records: Sequence[DatasetRecord], train_fraction: float = 0.8, seed: int = 0
) -> DatasetSplit:
    """Partition records so that no subject appears in both train and test.

    Subjects are shuffled with ``seed`` and the first
    ``ceil(train_fraction * n_subjects)`` go to train.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 2:
        raise DatasetError("a subject-independent split needs at least 2 subjects")
    order = np.random.default_rng(seed).permutation(len(subjects))
    # guard against 0.8 * 5 = 4.000000001 style rounding
    n_train = math.ceil(train_fraction * len(subjects) - 1e-9)
    if n_train >= len(subjects):
        raise DatasetError(
            f"train_fraction={train_fraction} puts all {len(subjects)} subjects in train; "
            "test set would be empty"
        )
    train_ids = {subjects[i] for i in order[:n_train]}
    ratio = n_train / len(subjects)
    if not 0.75 <= ratio <= 0.85:
        logger.warning("subject split ratio %.3f is outside [0.75, 0.85]", ratio)
    return DatasetSplit(
        train=[r for r in records if r.subject_id in train_ids],
        test=[r for r in records if r.subject_id not in train_ids],
    )
