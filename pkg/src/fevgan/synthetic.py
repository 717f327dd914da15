"""Procedural face-like videos for desk-scale training and tests.

Every subject gets a face drawn from its own seeded parameters (face shape,
skin tone, eye and mouth geometry, a low-frequency texture). Each of the six
expressions animates a distinct deformation of the eyes, brows and mouth,
ramping from the neutral face at frame 0 to the apex at frame 31.
"""
from __future__ import annotations

import numpy as np

from .data import EXPRESSIONS, IMAGE_SIZE, NUM_FRAMES, DatasetRecord, ExpressionLabel

# eye_open, brow_raise, brow_tilt, mouth_curve, mouth_open, mouth_width, wrinkle
_EXPRESSION_MOTION = {
    "anger": (-0.35, -0.10, -0.12, -0.02, 0.00, 0.80, 0.3),
    "disgust": (-0.25, -0.04, -0.05, -0.10, 0.03, 0.95, 1.0),
    "fear": (0.45, 0.10, 0.10, -0.04, 0.07, 1.30, 0.0),
    "happiness": (-0.20, 0.00, 0.00, 0.22, 0.04, 1.35, 0.0),
    "sadness": (-0.15, 0.02, 0.14, -0.18, 0.00, 0.90, 0.0),
    "surprise": (0.60, 0.16, 0.00, 0.00, 0.22, 0.70, 0.0),
}

_GRID = (np.arange(IMAGE_SIZE) + 0.5) / IMAGE_SIZE * 2.0 - 1.0
_Y, _X = np.meshgrid(_GRID, _GRID, indexing="ij")
_EDGE = 2.0 / IMAGE_SIZE


def _soft(sdf):
    """Antialiased coverage from a signed distance (negative inside)."""
    return np.clip(0.5 - sdf / _EDGE, 0.0, 1.0)


def _ellipse(cy, cx, ry, rx):
    r = np.sqrt(((_Y - cy) / ry) ** 2 + ((_X - cx) / rx) ** 2)
    return _soft((r - 1.0) * min(ry, rx))


def _segment(y0, x0, y1, x1, half_width):
    py, px = _Y - y0, _X - x0
    dy, dx = y1 - y0, x1 - x0
    h = np.clip((py * dy + px * dx) / (dy * dy + dx * dx), 0.0, 1.0)
    d = np.hypot(py - h * dy, px - h * dx)
    return _soft(d - half_width)


def _subject_params(rng: np.random.Generator) -> dict:
    skin = rng.uniform(-0.2, 0.8, size=3)
    skin[0] = max(skin[0], skin[2] + 0.1)
    return {
        "face_ry": rng.uniform(0.72, 0.86),
        "face_rx": rng.uniform(0.55, 0.70),
        "skin": skin,
        "hair": rng.uniform(-0.95, 0.2, size=3),
        "hair_line": rng.uniform(-0.62, -0.45),
        "eye_y": rng.uniform(-0.22, -0.10),
        "eye_dx": rng.uniform(0.20, 0.30),
        "eye_ry": rng.uniform(0.05, 0.08),
        "eye_rx": rng.uniform(0.09, 0.13),
        "iris": rng.uniform(-0.9, 0.0, size=3),
        "brow_gap": rng.uniform(0.10, 0.15),
        "mouth_y": rng.uniform(0.35, 0.48),
        "mouth_w": rng.uniform(0.18, 0.26),
        "lip": rng.uniform(-0.3, 0.5, size=3),
        "texture": [
            (rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.5), rng.uniform(0.12, 0.3), rng.uniform(-0.25, 0.25))
            for _ in range(4)
        ],
    }


def render_face(p: dict, expression: str, intensity: float) -> np.ndarray:
    """Render one 64x64x3 frame with values in [-1, 1]."""
    eye_open, brow_raise, brow_tilt, curve, mouth_open, width, wrinkle = (
        np.array(_EXPRESSION_MOTION[expression]) * intensity
    )
    width = 1.0 + (_EXPRESSION_MOTION[expression][5] - 1.0) * intensity

    img = np.full((IMAGE_SIZE, IMAGE_SIZE, 3), -1.0)

    def paint(mask, color):
        img[:] = img * (1.0 - mask[..., None]) + np.asarray(color) * mask[..., None]

    face = _ellipse(0.0, 0.0, p["face_ry"], p["face_rx"])
    skin = np.broadcast_to(p["skin"], img.shape).copy()
    for cy, cx, r, amp in p["texture"]:
        skin += amp * np.exp(-((_Y - cy) ** 2 + (_X - cx) ** 2) / (2 * r * r))[..., None]
    img[:] = img * (1.0 - face[..., None]) + skin * face[..., None]
    paint(face * (_Y < p["hair_line"]), p["hair"])

    dark = np.clip(p["skin"] - 0.9, -1.0, 1.0)
    for side in (-1.0, 1.0):
        ex = side * p["eye_dx"]
        ry = p["eye_ry"] * max(0.15, 1.0 + eye_open)
        paint(_ellipse(p["eye_y"], ex, ry, p["eye_rx"]), (0.95, 0.95, 0.95))
        paint(_ellipse(p["eye_y"], ex, min(ry, p["eye_ry"] * 0.8), p["eye_rx"] * 0.45), p["iris"])
        by = p["eye_y"] - p["brow_gap"] - brow_raise
        inner = ex - side * p["eye_rx"]
        outer = ex + side * p["eye_rx"] * 1.2
        paint(_segment(by - brow_tilt, inner, by + 0.3 * brow_tilt, outer, 0.025), p["hair"])

    if wrinkle > 0:
        band = _ellipse(-0.02, 0.0, 0.04, 0.12) * wrinkle
        paint(band * 0.6, dark)

    mw = p["mouth_w"] * width
    my = p["mouth_y"] - 0.05 * max(wrinkle, 0.0)
    lips = (np.abs(_X) < mw) * _soft(
        np.abs(_Y - (my - curve * ((_X / mw) ** 2 - 0.3))) - 0.025 - mouth_open * (1 - (_X / mw) ** 2).clip(0)
    )
    paint(lips, p["lip"])
    if mouth_open > 0.005:
        cavity = _ellipse(my + 0.01, 0.0, mouth_open * 0.8, mw * 0.7)
        paint(cavity, (-0.85, -0.9, -0.9))
    return np.clip(img, -1.0, 1.0)


def make_synthetic_dataset(n_subjects: int, seed: int = 0) -> list[DatasetRecord]:
    """Six records (one per expression) for each of ``n_subjects`` subjects."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    records = []
    for s in range(n_subjects):
        params = _subject_params(np.random.default_rng([seed, s]))
        subject_id = f"synth{s:03d}"
        for name in EXPRESSIONS:
            ramp = np.linspace(0.0, 1.0, NUM_FRAMES)
            ramp = ramp * ramp * (3.0 - 2.0 * ramp)
            video = np.stack([render_face(params, name, a) for a in ramp]).astype(np.float32)
            records.append(DatasetRecord(subject_id, video[0].copy(), ExpressionLabel(name), video))
    return records
