"""Encoder ablations: full model, without spatial encoder, without identity encoder."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .data import DatasetSplit
from .generator import GeneratorConfig
from .identity import IdentityBackend
from .metrics import MetricReport, evaluate_model
from .trainer import TrainConfig, train

VARIANTS = ("full", "no_es", "no_eid")

# Reduced widths that keep a 200-step CPU run in the tens of seconds.
TINY_SPATIAL = (8, 16, 32)
TINY_DECODER = (32, 16, 16, 8)
TINY_DISCRIMINATOR = (4, 8, 16, 32)


def tiny_config(**overrides) -> TrainConfig:
    gen = overrides.pop("generator_config", None) or GeneratorConfig(
        spatial_widths=TINY_SPATIAL, decoder_widths=TINY_DECODER)
    base = dict(batch_size=4, discriminator_widths=TINY_DISCRIMINATOR, generator_config=gen)
    base.update(overrides)
    return TrainConfig(**base)


def variant_config(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    gen = dataclasses.replace(
        config.generator_config,
        use_spatial_encoder=variant != "no_es",
        use_identity_encoder=variant != "no_eid",
    )
    return dataclasses.replace(config, generator_config=gen)


@dataclass
class AblationResult:
    variant: str
    final_rec: float
    report: MetricReport | None
    checkpoint: str | None


def run_variant(split: DatasetSplit, config: TrainConfig, backend: IdentityBackend, variant: str,
                checkpoint_dir=None, max_steps: int | None = None, tail: int = 10,
                evaluate: bool = True) -> AblationResult:
    """Train one variant and score it on ``split.test``.

    ``final_rec`` is the mean reconstruction loss over the last ``tail``
    training steps.
    """
    cfg = variant_config(config, variant)
    recs = []
    state, ckpt = train(split, cfg, backend, checkpoint_dir, max_steps=max_steps,
                        on_step=lambda step, rep: recs.append(rep.rec))
    tail_recs = recs[-tail:]
    final_rec = math.fsum(tail_recs) / len(tail_recs)
    report = None
    if evaluate:
        report = evaluate_model(state, split.test, backend, tag=variant)
    return AblationResult(variant, final_rec, report, str(ckpt) if ckpt else None)


STANDARD_STEPS = 200


def standard_batch(seed: int) -> list:
    """Four synthetic records, one per subject, each with a different expression."""
    from .synthetic import make_synthetic_dataset

    records = make_synthetic_dataset(4, seed)
    return [records[6 * s + s] for s in range(4)]


def standardized_run(variant: str, seed: int, backend: IdentityBackend, steps: int = STANDARD_STEPS,
                     tail: int = 10) -> float:
    """Fit one variant to :func:`standard_batch` and return its mean rec loss over the last ``tail`` steps.

    Data, initialization and step count are identical across variants, so the
    only difference between runs is which encoder feeds the decoder.
    """
    from .trainer import initialize, train_step

    cfg = variant_config(tiny_config(seed=seed), variant)
    batch = standard_batch(seed)
    state = initialize(cfg, backend)
    recs = [train_step(state, batch, backend, cfg).rec for _ in range(steps)]
    return math.fsum(recs[-tail:]) / tail
