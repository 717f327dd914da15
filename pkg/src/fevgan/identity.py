"""Frozen identity encoders.

Two backends share one interface:

* :class:`SurrogateBackend` - a seeded random convolutional encoder, frozen at
  construction. Needs no downloads; used for tests and desk-scale runs.
* :class:`VGGFaceBackend` - VGG-16 convolutional trunk loaded from a
  user-supplied parameter archive. The 64x64 input is resized to 224x224, the
  conv5_3 stage (14x14x512) is taken and a fixed seeded 1x1 projection lifts it
  to 1024 channels.

Backend tensors are registered as buffers, never parameters, so no optimizer
can see them and autograd never accumulates gradients into them.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .archive import ArchiveError, read_archive, tensor_checksum, write_archive
from .data import check_image

FEATURE_CHANNELS = 1024
FEATURE_SIZE = 14
WEIGHTS_ENV = "FEVGAN_BACKEND_WEIGHTS"


class BackendError(Exception):
    pass


class IdentityBackend(nn.Module):
    """Base class: subclasses implement ``features`` and ``_embed_input``."""

    name = "abstract"
    embed_dim = 0

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """``N x 3 x 64 x 64`` in [-1, 1] -> ``N x 1024 x 14 x 14``."""
        raise NotImplementedError

    def _embed_input(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Unit-L2-norm identity embeddings, ``N x embed_dim``."""
        return F.normalize(self._embed_input(images), dim=1, eps=1e-12)

    def forward(self, images):
        return self.features(images)

    def frozen_blocks(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}

    def checksum(self) -> str:
        return tensor_checksum(self.frozen_blocks())

    def reference(self) -> dict:
        """JSON-serializable description sufficient to rebuild this backend."""
        raise NotImplementedError

    def _freeze(self):
        self.eval()
        for t in self.buffers():
            t.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # no batch statistics; always behaves as inference
        return super().train(False)


def _gaussian(gen: torch.Generator, shape, std: float) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=torch.float32) * std


class SurrogateBackend(IdentityBackend):
    """Seeded random 4-stage conv encoder emitting 14x14x1024 from 64x64."""

    name = "surrogate"

    def __init__(self, seed: int = 0, std: float = 0.05, embed_dim: int = 256):
        super().__init__()
        self.seed = seed
        self.std = std
        self.embed_dim = embed_dim
        gen = torch.Generator().manual_seed(seed)
        # 64 -> 32 -> 16 -> 14 -> 14
        self.register_buffer("w1", _gaussian(gen, (32, 3, 4, 4), std))
        self.register_buffer("w2", _gaussian(gen, (64, 32, 4, 4), std))
        self.register_buffer("w3", _gaussian(gen, (128, 64, 3, 3), std))
        self.register_buffer("w4", _gaussian(gen, (FEATURE_CHANNELS, 128, 1, 1), std))
        self.register_buffer("proj", _gaussian(gen, (embed_dim, FEATURE_CHANNELS * 4), std))
        self._freeze()

    def features(self, images):
        x = F.leaky_relu(F.conv2d(images, self.w1, stride=2, padding=1), 0.2)
        x = F.leaky_relu(F.conv2d(x, self.w2, stride=2, padding=1), 0.2)
        x = F.leaky_relu(F.conv2d(x, self.w3), 0.2)
        return F.conv2d(x, self.w4)

    def _embed_input(self, images):
        pooled = F.adaptive_avg_pool2d(self.features(images), 2).flatten(1)
        return pooled @ self.proj.t()

    def reference(self):
        return {"name": self.name, "seed": self.seed, "std": self.std,
                "embed_dim": self.embed_dim, "checksum": self.checksum()}


VGG16_LAYOUT = (
    ("conv1_1", 3, 64), ("conv1_2", 64, 64), "pool",
    ("conv2_1", 64, 128), ("conv2_2", 128, 128), "pool",
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256), "pool",
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512), "pool",
    ("conv5_1", 512, 512), ("conv5_2", 512, 512), ("conv5_3", 512, 512),
)
# per-channel RGB mean of the VGG-Face training set, on the 0..255 scale
VGG_FACE_MEAN = (129.1863, 104.7624, 93.5940)


class VGGFaceBackend(IdentityBackend):
    name = "vgg_face"
    native_size = 224

    def __init__(self, weights_path, projection_seed: int = 0):
        super().__init__()
        self.weights_path = Path(weights_path)
        try:
            blocks, manifest = read_archive(self.weights_path)
        except ArchiveError as exc:
            raise BackendError(f"cannot load identity backend weights: {exc}") from exc
        if manifest.get("backend") != self.name:
            raise BackendError(f"{weights_path}: archive is for backend {manifest.get('backend')!r}")
        self.projection_seed = projection_seed
        self._layers = []
        for item in VGG16_LAYOUT:
            if item == "pool":
                self._layers.append(item)
                continue
            lname, cin, cout = item
            w, b = blocks.get(f"{lname}.weight"), blocks.get(f"{lname}.bias")
            if w is None or b is None or w.shape != (cout, cin, 3, 3) or b.shape != (cout,):
                raise BackendError(f"{weights_path}: missing or malformed block {lname}")
            self.register_buffer(f"{lname}_w", torch.from_numpy(w.astype(np.float32)))
            self.register_buffer(f"{lname}_b", torch.from_numpy(b.astype(np.float32)))
            self._layers.append(lname)
        gen = torch.Generator().manual_seed(projection_seed)
        self.register_buffer("proj", _gaussian(gen, (FEATURE_CHANNELS, 512, 1, 1), (1.0 / 512) ** 0.5))
        self.register_buffer("mean", torch.tensor(VGG_FACE_MEAN).view(1, 3, 1, 1))
        self.embed_dim = 512
        self._freeze()

    def _trunk(self, images):
        x = (images + 1.0) * 127.5 - self.mean.to(images.dtype)
        x = F.interpolate(x, size=(self.native_size, self.native_size), mode="bilinear", align_corners=False)
        for layer in self._layers:
            if layer == "pool":
                x = F.max_pool2d(x, 2)
            else:
                x = F.relu(F.conv2d(x, getattr(self, f"{layer}_w"), getattr(self, f"{layer}_b"), padding=1))
        return x

    def features(self, images):
        return F.conv2d(self._trunk(images), self.proj)

    def _embed_input(self, images):
        return self._trunk(images).mean(dim=(2, 3))

    def reference(self):
        return {"name": self.name, "weights_path": str(self.weights_path),
                "projection_seed": self.projection_seed, "checksum": self.checksum()}


def write_vgg_face_weights(path, state: dict[str, np.ndarray]) -> Path:
    """Store VGG-16 conv weights (``convX_Y.weight``/``.bias``, OIHW) as a backend archive."""
    return write_archive(path, state, {
        "backend": VGGFaceBackend.name,
        "native_input_size": VGGFaceBackend.native_size,
        "feature_shape": [FEATURE_SIZE, FEATURE_SIZE, FEATURE_CHANNELS],
        "embed_dim": 512,
    })


def build_backend(reference: dict | None = None, weights_path=None) -> IdentityBackend:
    """Rebuild a backend from :meth:`IdentityBackend.reference` output.

    Without a reference, uses ``weights_path`` or the ``FEVGAN_BACKEND_WEIGHTS``
    environment variable for the VGG-Face backend, else the default surrogate.
    """
    if reference is None:
        weights_path = weights_path or os.environ.get(WEIGHTS_ENV)
        if weights_path:
            return VGGFaceBackend(weights_path)
        return SurrogateBackend()
    name = reference.get("name")
    if name == SurrogateBackend.name:
        backend = SurrogateBackend(reference.get("seed", 0), reference.get("std", 0.05),
                                   reference.get("embed_dim", 256))
    elif name == VGGFaceBackend.name:
        backend = VGGFaceBackend(weights_path or reference["weights_path"], reference.get("projection_seed", 0))
    else:
        raise BackendError(f"unknown identity backend {name!r}")
    expected = reference.get("checksum")
    if expected and backend.checksum() != expected:
        raise BackendError(f"identity backend {name} does not match the recorded checksum")
    return backend


def _image_tensor(image) -> torch.Tensor:
    arr = check_image(np.asarray(image, dtype=np.float32))
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


@torch.no_grad()
def extract_features(backend: IdentityBackend, image) -> np.ndarray:
    """Identity feature grid ``14 x 14 x 1024`` for one ``64 x 64 x 3`` image."""
    return backend.features(_image_tensor(image))[0].permute(1, 2, 0).numpy()


@torch.no_grad()
def embed_face(backend: IdentityBackend, image) -> np.ndarray:
    return backend.embed(_image_tensor(image))[0].numpy()


@torch.no_grad()
def embed_frames(backend: IdentityBackend, frames, batch_size: int = 32) -> np.ndarray:
    """Embed ``N x 64 x 64 x 3`` frames in chunks; returns float64 ``N x d``."""
    x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    out = [backend.embed(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return torch.cat(out).double().numpy()
