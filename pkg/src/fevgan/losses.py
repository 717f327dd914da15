"""Adversarial, reconstruction and identity losses.

All functions take batched torch tensors and return scalar tensors so they can
be used for backpropagation; L1 terms are means over elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from .identity import IdentityBackend

EPS = 1e-7
DEFAULT_ID_FRAMES = (0, 10, 21, 31)


@dataclass
class LossWeights:
    lambda1: float = 100.0
    lambda2: float = 10.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


@dataclass
class LossReport:
    adv_d: float
    adv_g: float
    rec: float
    id: float
    total_g: float

    CSV_HEADER = "step,adv_d,adv_g,rec,id,total_g"

    def csv_row(self, step: int) -> str:
        return ",".join([str(step)] + [repr(getattr(self, f.name)) for f in fields(self)])

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value, step: int | None = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"loss term {term!r} is not finite ({value}){where}")
        self.term = term
        self.step = step


def discriminator_loss(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    real = score_real.clamp(EPS, 1.0 - EPS)
    fake = score_fake.clamp(EPS, 1.0 - EPS)
    return -(torch.log(real) + torch.log1p(-fake)).mean()


def generator_adversarial_loss(score_fake: torch.Tensor) -> torch.Tensor:
    return -torch.log(score_fake.clamp(EPS, 1.0 - EPS)).mean()


def adversarial_losses(score_real, score_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """``(adv_d, adv_g)``: BCE for the critic, ``-log D(fake)`` for the generator.

    Scores are clamped to ``[EPS, 1 - EPS]`` so neither loss can be infinite.
    Plain floats are promoted to float64 tensors.
    """
    if not torch.is_tensor(score_real):
        score_real = torch.tensor(score_real, dtype=torch.float64)
    if not torch.is_tensor(score_fake):
        score_fake = torch.tensor(score_fake, dtype=torch.float64)
    return discriminator_loss(score_real, score_fake), generator_adversarial_loss(score_fake)


def reconstruction_loss(generated: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every element."""
    if generated.shape != truth.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(truth.shape)}")
    return (generated - truth).abs().mean()


def check_frame_indices(frame_indices, num_frames: int = 32) -> list[int]:
    idx = [int(i) for i in frame_indices]
    if not idx:
        raise ValueError("frame_indices must not be empty")
    bad = [i for i in idx if not 0 <= i < num_frames]
    if bad:
        raise ValueError(f"frame indices {bad} outside [0, {num_frames - 1}]")
    return idx


def identity_loss(backend: IdentityBackend, input_images: torch.Tensor, generated: torch.Tensor,
                  frame_indices=DEFAULT_ID_FRAMES) -> torch.Tensor:
    """Sum over selected frames of the mean L1 gap between identity features.

    ``input_images`` is ``N x 3 x H x W``; ``generated`` is ``N x 3 x F x H x W``.
    The result is averaged over the batch.
    """
    idx = check_frame_indices(frame_indices, generated.shape[2])
    n = generated.shape[0]
    frames = generated[:, :, idx].transpose(1, 2).reshape(n * len(idx), generated.shape[1], *generated.shape[3:])
    # one backend call so an input and an identical frame map to identical features
    both = backend.features(torch.cat([input_images.to(frames.dtype).detach(), frames]))
    ref = both[:n]
    feats = both[n:].view(n, len(idx), *ref.shape[1:])
    per_frame = (feats - ref[:, None]).abs().flatten(2).mean(dim=2)
    return per_frame.sum(dim=1).mean()


def total_generator_loss(adv_g, rec, id_, weights: LossWeights):
    return adv_g + weights.lambda1 * rec + weights.lambda2 * id_
