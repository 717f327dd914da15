"""Dual-encoder video generator.

``image (64x64x3) + label`` -> frozen identity features (14x14x1024)
                             + trainable spatial features (14x14x512)
                             + broadcast label (14x14x6)
                             -> 3D transposed-conv decoder -> 32x64x64x3 video.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import NUM_CLASSES, ExpressionLabel, check_image
from .identity import FEATURE_CHANNELS, FEATURE_SIZE, IdentityBackend

SPATIAL_CHANNELS = 512
DECODER_IN_CHANNELS = FEATURE_CHANNELS + SPATIAL_CHANNELS + NUM_CLASSES
# BatchNorm running stats follow r <- 0.9 r + 0.1 batch (torch's momentum=0.1)
BN_MOMENTUM = 0.1


@dataclass
class GeneratorConfig:
    use_identity_encoder: bool = True
    use_spatial_encoder: bool = True
    seed: int = 0
    spatial_widths: tuple[int, ...] = (64, 128, 256)
    decoder_widths: tuple[int, ...] = (512, 256, 128, 64)

    def __post_init__(self):
        self.spatial_widths = tuple(int(w) for w in self.spatial_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if not (self.use_identity_encoder or self.use_spatial_encoder):
            raise ValueError("at least one of the identity and spatial encoders must be enabled")
        if len(self.spatial_widths) != 3 or len(self.decoder_widths) != 4:
            raise ValueError("spatial_widths needs 3 entries and decoder_widths needs 4")
        if min(self.spatial_widths + self.decoder_widths) < 1:
            raise ValueError("channel widths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial_widths"] = list(self.spatial_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d


class SpatialEncoder(nn.Module):
    """64x64x3 -> 14x14x512 (stride-2, stride-2, valid 3x3, 1x1)."""

    def __init__(self, widths=(64, 128, 256)):
        super().__init__()
        w1, w2, w3 = widths
        self.net = nn.Sequential(
            nn.Conv2d(3, w1, 4, 2, 1, bias=False),
            nn.BatchNorm2d(w1, momentum=BN_MOMENTUM),
            nn.ReLU(True),
            nn.Conv2d(w1, w2, 4, 2, 1, bias=False),
            nn.BatchNorm2d(w2, momentum=BN_MOMENTUM),
            nn.ReLU(True),
            nn.Conv2d(w2, w3, 3, 1, 0, bias=False),
            nn.BatchNorm2d(w3, momentum=BN_MOMENTUM),
            nn.ReLU(True),
            nn.Conv2d(w3, SPATIAL_CHANNELS, 1, 1, 0),
        )

    def forward(self, images):
        return self.net(images)


class VideoDecoder(nn.Module):
    """14x14x1542 grid -> (2,4,4) seed -> four stride-2 3D transposed convs -> 32x64x64x3."""

    def __init__(self, widths=(512, 256, 128, 64)):
        super().__init__()
        c0 = widths[0]
        self.seed_channels = c0
        # 14x14 -> 4x4 with 2 time steps folded into the channel axis
        self.project = nn.Conv2d(DECODER_IN_CHANNELS, 2 * c0, 5, 3, 0, bias=False)
        self.project_bn = nn.BatchNorm3d(c0, momentum=BN_MOMENTUM)
        stages = []
        chans = list(widths) + [3]
        for cin, cout in zip(chans[:-2], chans[1:-1]):
            stages += [
                nn.ConvTranspose3d(cin, cout, 4, 2, 1, bias=False),
                nn.BatchNorm3d(cout, momentum=BN_MOMENTUM),
                nn.ReLU(True),
            ]
        stages += [nn.ConvTranspose3d(chans[-2], 3, 4, 2, 1), nn.Tanh()]
        self.up = nn.Sequential(*stages)
        self.up.to(memory_format=torch.channels_last_3d)

    def forward(self, z):
        n = z.shape[0]
        x = self.project(z).view(n, self.seed_channels, 2, 4, 4)
        x = F.relu(self.project_bn(x)).contiguous(memory_format=torch.channels_last_3d)
        return self.up(x).contiguous()


def label_planes(labels: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Broadcast ``N x 6`` one-hot labels to ``N x 6 x H x W``."""
    return labels[:, :, None, None].expand(-1, -1, height, width)


def assemble_decoder_input(f_id: torch.Tensor, f_s: torch.Tensor, labels: torch.Tensor,
                           config: GeneratorConfig) -> torch.Tensor:
    """Concatenate ``[identity | spatial | label]`` along channels.

    A disabled encoder contributes a zero block of its usual shape so the
    decoder input is 1542 channels in every configuration.
    """
    if not (config.use_identity_encoder or config.use_spatial_encoder):
        raise ValueError("at least one encoder must be enabled")
    if f_id.shape[1:] != (FEATURE_CHANNELS, FEATURE_SIZE, FEATURE_SIZE):
        raise ValueError(f"identity features have shape {tuple(f_id.shape)}")
    if f_s.shape[1:] != (SPATIAL_CHANNELS, FEATURE_SIZE, FEATURE_SIZE):
        raise ValueError(f"spatial features have shape {tuple(f_s.shape)}")
    if not config.use_identity_encoder:
        f_id = torch.zeros_like(f_id)
    if not config.use_spatial_encoder:
        f_s = torch.zeros_like(f_s)
    return torch.cat([f_id, f_s, label_planes(labels.to(f_s.dtype), FEATURE_SIZE, FEATURE_SIZE)], dim=1)


class Generator(nn.Module):
    """Trainable part of the generator; the identity backend is passed per call."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        self.spatial = SpatialEncoder(self.config.spatial_widths)
        self.decoder = VideoDecoder(self.config.decoder_widths)

    def encode(self, backend: IdentityBackend, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        n = images.shape[0]
        shape = (n, FEATURE_CHANNELS, FEATURE_SIZE, FEATURE_SIZE)
        if self.config.use_identity_encoder:
            # input images are data, so identity features are constants here
            with torch.no_grad():
                f_id = backend.features(images)
        else:
            f_id = images.new_zeros(shape)
        if self.config.use_spatial_encoder:
            f_s = self.spatial(images)
        else:
            f_s = images.new_zeros((n, SPATIAL_CHANNELS, FEATURE_SIZE, FEATURE_SIZE))
        return assemble_decoder_input(f_id, f_s, labels, self.config)

    def forward(self, backend: IdentityBackend, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """``N x 3 x 64 x 64`` images, ``N x 6`` labels -> ``N x 3 x 32 x 64 x 64`` videos."""
        return self.decoder(self.encode(backend, images, labels))


def init_gaussian(module: nn.Module, std: float, gen: torch.Generator) -> None:
    """Draw conv weights from N(0, std^2); biases 0; batch-norm scale 1, shift 0."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.modules.batchnorm._BatchNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def images_to_tensor(images) -> torch.Tensor:
    """``N x H x W x C`` (or one ``H x W x C``) array -> ``N x C x H x W`` tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2)


def videos_to_tensor(videos) -> torch.Tensor:
    """``N x F x H x W x C`` (or one video) -> ``N x C x F x H x W``."""
    arr = np.asarray(videos, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 4, 1, 2, 3)


def tensor_to_videos(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(0, 2, 3, 4, 1).cpu().numpy()


@torch.no_grad()
def generate(generator: Generator, backend: IdentityBackend, image, label: ExpressionLabel) -> np.ndarray:
    """Inference-mode generation of one ``32 x 64 x 64 x 3`` video."""
    check_image(np.asarray(image))
    was_training = generator.training
    generator.eval()
    try:
        labels = torch.from_numpy(label.onehot)[None]
        video = generator(backend, images_to_tensor(image), labels)
    finally:
        generator.train(was_training)
    return tensor_to_videos(video)[0]
