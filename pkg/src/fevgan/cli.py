"""Command-line entry point: ``fevgan <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data/IO error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import ablation
from .archive import ArchiveError
from .data import (
    EXPRESSIONS,
    IMAGE_SIZE,
    DatasetError,
    ExpressionLabel,
    load_dataset,
    save_dataset,
    scale_pixels,
    split_subject_independent,
    to_uint8,
)
from .generator import generate
from .identity import WEIGHTS_ENV, BackendError, build_backend
from .losses import NonFiniteLossError
from .metrics import evaluate_model
from .synthetic import make_synthetic_dataset
from .trainer import CheckpointWriteError, TrainConfig, load_checkpoint, train

logger = logging.getLogger("fevgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_KEYS = ("dataset", "checkpoint_dir", "out_dir", "backend_weights", "max_steps")
EXPORT_FORMATS = ("png-strip", "gif")


class ConfigError(Exception):
    pass


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    dataset: Path | None = None
    checkpoint_dir: Path | None = None
    out_dir: Path | None = None
    backend_weights: str | None = None
    max_steps: int | None = None
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        out = {k: (str(v) if isinstance(v, Path) else v) for k, v in
               (("dataset", self.dataset), ("checkpoint_dir", self.checkpoint_dir), ("out_dir", self.out_dir),
                ("backend_weights", self.backend_weights), ("max_steps", self.max_steps))}
        out.update(self.train.to_dict())
        return out


def load_run_config(path, seed: int | None = None) -> RunConfig:
    """Parse a YAML config whose keys mirror :class:`TrainConfig` plus run paths."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}:{where} invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of field names to values")
    run = {k: data.pop(k) for k in RUN_KEYS if k in data}
    if seed is not None:
        data["seed"] = seed
    try:
        train_cfg = TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def as_path(key):
        v = run.get(key)
        return None if v is None else (base / v if not Path(v).is_absolute() else Path(v))

    for key in ("dataset", "backend_weights"):
        p = as_path(key)
        if p is not None and not p.exists():
            raise ConfigError(f"{path}: field {key!r} points to missing path {p}")
    return RunConfig(
        train=train_cfg, dataset=as_path("dataset"), checkpoint_dir=as_path("checkpoint_dir"),
        out_dir=as_path("out_dir"), backend_weights=None if run.get("backend_weights") is None
        else str(as_path("backend_weights")),
        max_steps=run.get("max_steps"), raw=data,
    )


def _backend(weights):
    return build_backend(None, weights or os.environ.get(WEIGHTS_ENV))


def _load_split(rc: RunConfig):
    if rc.dataset is None:
        raise ConfigError("config field 'dataset' is required")
    records = load_dataset(rc.dataset)
    return split_subject_independent(records, rc.train.train_fraction, rc.train.seed)


def _write_resolved(rc: RunConfig, directory: Path, extra: dict | None = None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"resolved_config": rc.resolved()}
    manifest.update(extra or {})
    path = directory / "run_manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=True))
    return path


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (IMAGE_SIZE, IMAGE_SIZE):
                im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
            arr = np.asarray(im)
    except OSError as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return scale_pixels(arr).astype(np.float32)


def export_video(video: np.ndarray, out_dir, fmt: str = "png-strip", step: int = 2) -> list[Path]:
    """Write every frame as PNG plus a strip of every ``step``-th frame (and a GIF if asked)."""
    if fmt not in EXPORT_FORMATS:
        raise UsageError(f"unknown format {fmt!r}; valid: {', '.join(EXPORT_FORMATS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = to_uint8(video)
    written = []
    for i, frame in enumerate(frames):
        p = out / f"frame_{i:04d}.png"
        Image.fromarray(frame).save(p)
        written.append(p)
    strip = out / "strip.png"
    Image.fromarray(np.concatenate(list(frames[::step]), axis=1)).save(strip)
    written.append(strip)
    if fmt == "gif":
        gif = out / "video.gif"
        imgs = [Image.fromarray(f) for f in frames]
        imgs[0].save(gif, save_all=True, append_images=imgs[1:], duration=80, loop=0)
        written.append(gif)
    return written


# ------------------------------------------------------------------ commands

def cmd_synth_data(args) -> int:
    if not args.out:
        raise UsageError("--out is required")
    records = make_synthetic_dataset(args.subjects, args.seed if args.seed is not None else 0)
    save_dataset(records, args.out)
    print(f"wrote {len(records)} videos for {args.subjects} subjects to {args.out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    if not args.out:
        raise UsageError("--out is required")
    records = load_dataset(args.source, strict=False)
    save_dataset(records, args.out)
    seed = args.seed if args.seed is not None else 0
    split = split_subject_independent(records, args.train_fraction, seed)
    Path(args.out, "split.json").write_text(json.dumps({
        "seed": seed, "train_fraction": args.train_fraction,
        "train_subjects": sorted(split.train_subjects), "test_subjects": sorted(split.test_subjects),
    }, indent=2))
    print(f"prepared {len(records)} videos in {args.out}")
    return EXIT_OK


def _require_config(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required")
    return load_run_config(args.config, args.seed)


def cmd_train(args) -> int:
    rc = _require_config(args)
    if rc.checkpoint_dir is None:
        raise ConfigError("config field 'checkpoint_dir' is required")
    backend = _backend(rc.backend_weights)
    split = _load_split(rc)
    state, ckpt = train(split, rc.train, backend, rc.checkpoint_dir, max_steps=rc.max_steps)
    _write_resolved(rc, rc.checkpoint_dir, {"final_checkpoint": str(ckpt), "steps": state.step,
                                            "backend": backend.reference()})
    print(f"trained {state.step} steps; final checkpoint {ckpt}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if not (args.checkpoint and args.image and args.label and args.out):
        raise UsageError("generate needs --checkpoint, --image, --label and --out")
    try:
        label = ExpressionLabel(args.label)
    except ValueError:
        raise UsageError(f"unknown label {args.label!r}; valid labels: {', '.join(EXPRESSIONS)}")
    image = read_image(args.image)
    weights = os.environ.get(WEIGHTS_ENV)
    state, _, backend = load_checkpoint(args.checkpoint, weights_path=weights)
    video = generate(state.generator, backend, image, label)
    export_video(video, args.out, args.format)
    print(f"wrote {label.class_name} video to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    rc = _require_config(args)
    split = _load_split(rc)
    report = evaluate_model(args.checkpoint, split.test, None, tag=Path(args.checkpoint).name)
    out = Path(args.out) if args.out else (rc.out_dir or Path("."))
    jpath, _ = report.write(out)
    print(f"PSNR {report.psnr_db:.3f} dB  SSIM {report.ssim:.4f}  ACD {report.acd:.4f}  "
          f"ACD-I {report.acd_i:.4f}  ({report.n_videos} videos) -> {jpath}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _require_config(args)
    variant = args.variant or "full"
    if variant not in ablation.VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; valid: {', '.join(ablation.VARIANTS)}")
    backend = _backend(rc.backend_weights)
    split = _load_split(rc)
    root = rc.checkpoint_dir or rc.out_dir
    if root is None:
        raise ConfigError("config needs 'checkpoint_dir' or 'out_dir'")
    vdir = Path(root) / variant
    result = ablation.run_variant(split, rc.train, backend, variant, vdir, max_steps=rc.max_steps)
    result.report.write(Path(args.out) if args.out else vdir, f"metrics_{variant}")
    rc_variant = RunConfig(ablation.variant_config(rc.train, variant), rc.dataset, rc.checkpoint_dir,
                           rc.out_dir, rc.backend_weights, rc.max_steps)
    _write_resolved(rc_variant, vdir, {"variant": variant, "final_rec": result.final_rec,
                                       "final_checkpoint": result.checkpoint})
    r = result.report
    print(f"[{variant}] rec {result.final_rec:.4f}  PSNR {r.psnr_db:.3f}  SSIM {r.ssim:.4f}  "
          f"ACD {r.acd:.4f}  ACD-I {r.acd_i:.4f}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fevgan", description="Expression video GAN: data, training, generation, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=False):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if config:
            sp.add_argument("--config")

    sp = sub.add_parser("prepare", help="normalize a raw dataset into the 32x64x64 layout")
    sp.add_argument("source")
    sp.add_argument("--train-fraction", type=float, default=0.8)
    common(sp)
    sp = sub.add_parser("synth-data", help="write a synthetic dataset")
    sp.add_argument("--subjects", type=int, default=5)
    common(sp)
    sp = sub.add_parser("train", help="train from a config file")
    common(sp, config=True)
    sp = sub.add_parser("generate", help="generate one video from a checkpoint")
    sp.add_argument("--checkpoint")
    sp.add_argument("--image")
    sp.add_argument("--label")
    sp.add_argument("--format", default="png-strip", choices=EXPORT_FORMATS)
    common(sp)
    sp = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    sp.add_argument("--checkpoint")
    common(sp, config=True)
    sp = sub.add_parser("ablate", help="train and evaluate one encoder ablation")
    sp.add_argument("--variant", default="full")
    common(sp, config=True)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, BackendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ArchiveError, CheckpointWriteError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
