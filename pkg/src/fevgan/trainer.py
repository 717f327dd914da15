"""Alternating discriminator / generator training with Adam and checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import archive
from .data import DatasetRecord, DatasetSplit
from .discriminator import Discriminator
from .generator import Generator, GeneratorConfig, images_to_tensor, init_gaussian, videos_to_tensor
from .identity import IdentityBackend, build_backend
from .losses import (
    DEFAULT_ID_FRAMES,
    LossReport,
    LossWeights,
    NonFiniteLossError,
    discriminator_loss,
    generator_adversarial_loss,
    identity_loss,
    reconstruction_loss,
)

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.csv"


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 16
    lr: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    init_std: float = 0.01
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    generator_config: GeneratorConfig = field(default_factory=GeneratorConfig)
    checkpoint_every: int = 1000
    discriminator_widths: tuple[int, ...] = (64, 128, 256, 512)
    id_frames: tuple[int, ...] = DEFAULT_ID_FRAMES
    train_fraction: float = 0.8

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.generator_config, dict):
            self.generator_config = GeneratorConfig(**self.generator_config)
        self.discriminator_widths = tuple(int(w) for w in self.discriminator_widths)
        self.id_frames = tuple(int(i) for i in self.id_frames)
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        for name in ("epochs", "batch_size", "checkpoint_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.init_std > 0:
            raise ValueError("init_std must be > 0")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, LossWeights):
                v = {"lambda1": v.lambda1, "lambda2": v.lambda2}
            elif isinstance(v, GeneratorConfig):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0
    epoch: int = 0
    batch_index: int = 0


def _adam(params, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.lr, betas=(config.adam_beta1, config.adam_beta2))


def initialize(config: TrainConfig, backend: IdentityBackend | None = None) -> TrainState:
    """Fresh models with N(0, init_std^2) weights drawn from the config seed.

    The identity backend holds only buffers, so neither optimizer ever sees it.
    """
    gen = torch.Generator().manual_seed(config.seed)
    torch.manual_seed(config.seed)
    generator = Generator(config.generator_config)
    discriminator = Discriminator(config.discriminator_widths)
    init_gaussian(generator, config.init_std, gen)
    init_gaussian(discriminator, config.init_std, gen)
    return TrainState(generator, discriminator, _adam(generator.parameters(), config),
                      _adam(discriminator.parameters(), config))


def batch_tensors(batch: Sequence[DatasetRecord]):
    images = images_to_tensor(np.stack([r.input_image for r in batch]))
    labels = torch.from_numpy(np.stack([r.label.onehot for r in batch]))
    videos = videos_to_tensor(np.stack([r.video for r in batch]))
    return images, labels, videos


def _check_finite(term: str, value: torch.Tensor, step: int):
    v = value.item()
    if not math.isfinite(v):
        raise NonFiniteLossError(term, v, step)


def generator_objective(D, backend: IdentityBackend, images, labels, videos, fake, config: TrainConfig):
    """``(adv_g, rec, id, total_g)`` for a generated batch; ``total_g`` is float64."""
    adv_g = generator_adversarial_loss(D(fake, labels))
    rec = reconstruction_loss(fake, videos)
    id_ = identity_loss(backend, images, fake, config.id_frames)
    w = config.weights
    total = adv_g.double() + w.lambda1 * rec.double() + w.lambda2 * id_.double()
    return adv_g, rec, id_, total


def train_step(state: TrainState, batch: Sequence[DatasetRecord], backend: IdentityBackend,
               config: TrainConfig) -> LossReport:
    """One discriminator update followed by one generator update.

    Mutates ``state`` in place (parameters, optimizer moments, step counter)
    and returns the losses of this step.
    """
    if not batch:
        raise ValueError("batch must not be empty")
    G, D = state.generator, state.discriminator
    G.train()
    D.train()
    images, labels, videos = batch_tensors(batch)
    step = state.step + 1

    fake = G(backend, images, labels)

    D.requires_grad_(True)
    adv_d = discriminator_loss(D(videos, labels), D(fake.detach(), labels))
    _check_finite("adv_d", adv_d, step)
    state.opt_d.zero_grad(set_to_none=True)
    adv_d.backward()
    state.opt_d.step()

    # the generator sees the freshly updated critic
    D.requires_grad_(False)
    adv_g, rec, id_, total = generator_objective(D, backend, images, labels, videos, fake, config)
    for name, value in (("adv_g", adv_g), ("rec", rec), ("id", id_), ("total_g", total)):
        _check_finite(name, value, step)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    D.requires_grad_(True)

    state.step = step
    return LossReport(adv_d.item(), adv_g.item(), rec.item(), id_.item(), total.item())


def epoch_order(n_records: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_records)


def steps_per_epoch(n_records: int, batch_size: int) -> int:
    return math.ceil(n_records / batch_size)


# ---------------------------------------------------------------- checkpoints

def checkpoint_path(checkpoint_dir, step: int) -> Path:
    return Path(checkpoint_dir) / f"ckpt_step{step:08d}"


def _optimizer_blocks(prefix: str, opt: torch.optim.Adam, blocks: dict) -> dict:
    sd = opt.state_dict()
    for idx, st in sd["state"].items():
        for key, value in st.items():
            blocks[f"{prefix}/{idx}/{key}"] = value.detach().cpu().numpy()
    return {"param_groups": sd["param_groups"], "state_keys": sorted(sd["state"])}


def save_checkpoint(state: TrainState, config: TrainConfig, backend: IdentityBackend, path) -> Path:
    blocks = {}
    for prefix, module in (("G", state.generator), ("D", state.discriminator)):
        for name, t in module.state_dict().items():
            blocks[f"{prefix}/{name}"] = t.detach().cpu().numpy()
    opt_meta = {
        "opt_g": _optimizer_blocks("opt_g", state.opt_g, blocks),
        "opt_d": _optimizer_blocks("opt_d", state.opt_d, blocks),
    }
    manifest = {
        "kind": "fevgan-checkpoint",
        "config": config.to_dict(),
        "backend": backend.reference(),
        "step": state.step,
        "epoch": state.epoch,
        "batch_index": state.batch_index,
        # data order is a pure function of (seed, epoch); no other RNG is consumed
        "rng": {"seed": config.seed, "epoch": state.epoch},
        "optimizers": opt_meta,
        "modules": {
            "generator": {k: list(v.shape) for k, v in state.generator.state_dict().items()},
            "discriminator": {k: list(v.shape) for k, v in state.discriminator.state_dict().items()},
        },
    }
    return archive.write_archive(path, blocks, manifest)


def _restore_optimizer(opt: torch.optim.Adam, prefix: str, meta: dict, blocks: dict):
    state = {}
    for idx in meta["state_keys"]:
        entries = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            name = f"{prefix}/{idx}/{key}"
            if name in blocks:
                entries[key] = torch.from_numpy(blocks[name].copy())
        state[idx] = entries
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def load_checkpoint(path, backend: IdentityBackend | None = None, weights_path=None):
    """Rebuild ``(state, config, backend)`` from a checkpoint archive.

    If ``backend`` is given its checksum must match the recorded one.
    """
    blocks, manifest = archive.read_archive(path)
    if manifest.get("kind") != "fevgan-checkpoint":
        raise archive.ArchiveError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(manifest["config"])
    if backend is None:
        backend = build_backend(manifest["backend"], weights_path)
    elif backend.checksum() != manifest["backend"].get("checksum"):
        raise archive.ArchiveError(f"{path} was trained with a different identity backend")
    state = initialize(config, backend)
    for prefix, module in (("G", state.generator), ("D", state.discriminator)):
        sd = {}
        for name, t in module.state_dict().items():
            arr = blocks.get(f"{prefix}/{name}")
            if arr is None or tuple(arr.shape) != tuple(t.shape):
                raise archive.ArchiveError(f"{path}: block {prefix}/{name} missing or misshapen")
            sd[name] = torch.from_numpy(arr.copy()).to(t.dtype)
        module.load_state_dict(sd)
    _restore_optimizer(state.opt_g, "opt_g", manifest["optimizers"]["opt_g"], blocks)
    _restore_optimizer(state.opt_d, "opt_d", manifest["optimizers"]["opt_d"], blocks)
    state.step = manifest["step"]
    state.epoch = manifest["epoch"]
    state.batch_index = manifest["batch_index"]
    return state, config, backend


def latest_checkpoint(checkpoint_dir) -> Path | None:
    found = sorted(Path(checkpoint_dir).glob("ckpt_step" + "[0-9]" * 8))
    return found[-1] if found else None


# ------------------------------------------------------------------- loop

class CheckpointWriteError(RuntimeError):
    pass


def train(split: DatasetSplit | Sequence[DatasetRecord], config: TrainConfig, backend: IdentityBackend,
          checkpoint_dir=None, state: TrainState | None = None, max_steps: int | None = None,
          on_step: Callable[[int, LossReport], None] | None = None) -> tuple[TrainState, Path | None]:
    """Run (or resume) training over ``split.train``.

    Each epoch visits the training records in an order fixed by
    ``(config.seed, epoch)``. With ``checkpoint_dir`` set, a checkpoint is
    written every ``checkpoint_every`` steps and when the loop stops, and every
    step's losses are appended to ``train_log.csv``. ``max_steps`` stops early
    after that many total steps, which is how an interruption is simulated.
    Returns the final state and the last checkpoint written (or ``None``).
    """
    records = list(split.train if isinstance(split, DatasetSplit) else split)
    if not records:
        raise ValueError("training set is empty")
    if state is None:
        state = initialize(config, backend)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    log_fh = None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        log_path = ckpt_dir / LOG_NAME
        new_log = not log_path.exists() or state.step == 0
        log_fh = open(log_path, "w" if new_log else "a")
        if new_log:
            log_fh.write(LossReport.CSV_HEADER + "\n")

    last_ckpt = None

    def write_ckpt():
        nonlocal last_ckpt
        path = checkpoint_path(ckpt_dir, state.step)
        try:
            last_ckpt = save_checkpoint(state, config, backend, path)
        except (OSError, archive.ArchiveError) as exc:
            raise CheckpointWriteError(f"checkpoint write failed at step {state.step}: {exc}") from exc

    n_batches = steps_per_epoch(len(records), config.batch_size)
    try:
        while state.epoch < config.epochs:
            order = epoch_order(len(records), config.seed, state.epoch)
            while state.batch_index < n_batches:
                if max_steps is not None and state.step >= max_steps:
                    if ckpt_dir is not None:
                        write_ckpt()
                    return state, last_ckpt
                lo = state.batch_index * config.batch_size
                batch = [records[i] for i in order[lo : lo + config.batch_size]]
                report = train_step(state, batch, backend, config)
                state.batch_index += 1
                if log_fh is not None:
                    log_fh.write(report.csv_row(state.step) + "\n")
                if on_step is not None:
                    on_step(state.step, report)
                if ckpt_dir is not None and state.step % config.checkpoint_every == 0:
                    log_fh.flush()
                    write_ckpt()
            state.epoch += 1
            state.batch_index = 0
            logger.info("epoch %d done (step %d)", state.epoch, state.step)
        if ckpt_dir is not None and (last_ckpt is None or last_ckpt != checkpoint_path(ckpt_dir, state.step)):
            write_ckpt()
    finally:
        if log_fh is not None:
            log_fh.close()
    return state, last_ckpt


def read_log(path) -> list[tuple[int, LossReport]]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != LossReport.CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) == 6:
                rows.append((int(parts[0]), LossReport(*map(float, parts[1:]))))
    return rows
