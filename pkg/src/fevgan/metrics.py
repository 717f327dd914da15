"""Video quality and identity metrics: PSNR, SSIM, ACD, ACD-I."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .data import DatasetRecord, ExpressionLabel
from .identity import IdentityBackend, embed_frames

DATA_RANGE = 2.0
PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(generated, truth, data_range: float = DATA_RANGE) -> float:
    """PSNR in dB over all elements; identical inputs give ``PSNR_CAP_DB``."""
    a, b = _pair(generated, truth)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(20.0 * math.log10(data_range / math.sqrt(mse)), PSNR_CAP_DB)


def psnr_saturated(generated, truth) -> bool:
    a, b = _pair(generated, truth)
    return bool(np.array_equal(a, b))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_map(x, y, data_range: float = DATA_RANGE) -> np.ndarray:
    """Local SSIM over the valid windows of ``... x H x W x C`` inputs.

    Filtering runs along the H and W axes (the third- and second-to-last).
    """
    x, y = _pair(x, y)
    if x.ndim < 3:
        raise ValueError("expected at least H x W x C input")
    h, w = x.shape[-3], x.shape[-2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    half = SSIM_WINDOW // 2
    axes = (x.ndim - 3, x.ndim - 2)

    def blur(v):
        for ax in axes:
            v = ndimage.correlate1d(v, g, axis=ax, mode="constant")
        crop = [slice(None)] * v.ndim
        crop[axes[0]] = slice(half, h - half)
        crop[axes[1]] = slice(half, w - half)
        return v[tuple(crop)]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cov = blur(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(generated, truth, data_range: float = DATA_RANGE) -> float:
    """Mean SSIM over windows, channels and frames."""
    return float(np.mean(ssim_map(generated, truth, data_range)))


def _check_frames(video) -> np.ndarray:
    v = np.asarray(video, dtype=np.float32)
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ValueError(f"expected F x H x W x 3 video, got {v.shape}")
    return v


def acd(video, backend: IdentityBackend, batch_size: int = 32) -> float:
    """Mean L2 distance between embeddings of consecutive frames."""
    v = _check_frames(video)
    if len(v) < 2:
        raise ValueError("ACD needs at least 2 frames")
    e = embed_frames(backend, v, batch_size)
    d = np.linalg.norm(e[1:] - e[:-1], axis=1)
    return math.fsum(d) / len(d)


def acd_i(video, input_image, backend: IdentityBackend, batch_size: int = 32) -> float:
    """Mean L2 distance between each frame's embedding and the input image's."""
    v = _check_frames(video)
    img = np.asarray(input_image, dtype=np.float32)[None]
    d = []
    for i in range(0, len(v), batch_size):
        # the input rides along in every chunk so an identical frame embeds identically
        e = embed_frames(backend, np.concatenate([img, v[i : i + batch_size]]), batch_size + 1)
        d.extend(np.linalg.norm(e[1:] - e[0], axis=1))
    return math.fsum(d) / len(d)


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    acd: float
    acd_i: float
    n_videos: int
    backend_name: str
    psnr_saturated: int = 0
    tag: str = ""
    rows: list[dict] = field(default_factory=list)

    CSV_HEADER = "tag,PSNR,SSIM,ACD,ACD-I"

    def csv_row(self) -> str:
        return f"{self.tag},{self.psnr_db!r},{self.ssim!r},{self.acd!r},{self.acd_i!r}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def write(self, out_dir, stem: str = "metrics") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / f"{stem}.json"
        cpath = out / f"{stem}.csv"
        jpath.write_text(self.to_json())
        cpath.write_text(self.CSV_HEADER + "\n" + self.csv_row() + "\n")
        return jpath, cpath


VideoFn = Callable[[np.ndarray, ExpressionLabel], np.ndarray]


def evaluate_videos(generate_fn: VideoFn, records: Sequence[DatasetRecord], backend: IdentityBackend,
                    tag: str = "") -> MetricReport:
    """Score ``generate_fn(input_image, label)`` against each record's video."""
    if not records:
        raise ValueError("evaluation set is empty")
    rows = []
    for i, rec in enumerate(records):
        try:
            video = generate_fn(rec.input_image, rec.label)
            row = {
                "index": i,
                "subject_id": rec.subject_id,
                "label": rec.label.class_name,
                "psnr_db": psnr(video, rec.video),
                "psnr_saturated": psnr_saturated(video, rec.video),
                "ssim": ssim(video, rec.video),
                "acd": acd(video, backend),
                "acd_i": acd_i(video, rec.input_image, backend),
            }
        except ValueError as exc:
            raise ValueError(f"record {i} ({rec.subject_id}/{rec.label.class_name}): {exc}") from exc
        rows.append(row)

    def mean(key):
        return math.fsum(r[key] for r in rows) / len(rows)

    return MetricReport(
        psnr_db=mean("psnr_db"), ssim=mean("ssim"), acd=mean("acd"), acd_i=mean("acd_i"),
        n_videos=len(rows), backend_name=backend.name,
        psnr_saturated=sum(r["psnr_saturated"] for r in rows), tag=tag, rows=rows,
    )


def evaluate_model(checkpoint, records: Sequence[DatasetRecord], backend: IdentityBackend | None = None,
                   tag: str = "") -> MetricReport:
    """Load a checkpoint (path or ``TrainState``) and evaluate it on ``records``."""
    from .generator import generate
    from .trainer import TrainState, load_checkpoint

    if not records:
        raise ValueError("evaluation set is empty")
    if isinstance(checkpoint, TrainState):
        if backend is None:
            raise ValueError("a backend is required when evaluating an in-memory state")
        generator = checkpoint.generator
    else:
        state, _, backend = load_checkpoint(checkpoint, backend)
        generator = state.generator
    return evaluate_videos(lambda img, lab: generate(generator, backend, img, lab), records, backend, tag)
