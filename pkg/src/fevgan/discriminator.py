"""Label-conditioned spatio-temporal critic."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import NUM_CLASSES, ExpressionLabel, check_video
from .generator import BN_MOMENTUM, videos_to_tensor

VIDEO_SHAPE = (3, 32, 64, 64)


class Discriminator(nn.Module):
    """Five 3D conv stages: four stride-2 downsamplings then a (2,4,4) valid conv.

    The one-hot label is broadcast over time and space and concatenated to the
    RGB channels. No batch norm on the input stage.
    """

    def __init__(self, widths=(64, 128, 256, 512)):
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError("discriminator needs 4 positive widths")
        w1, w2, w3, w4 = self.widths
        self.net = nn.Sequential(
            nn.Conv3d(3 + NUM_CLASSES, w1, 4, 2, 1, bias=False),
            nn.LeakyReLU(0.2, True),
            nn.Conv3d(w1, w2, 4, 2, 1, bias=False),
            nn.BatchNorm3d(w2, momentum=BN_MOMENTUM),
            nn.LeakyReLU(0.2, True),
            nn.Conv3d(w2, w3, 4, 2, 1, bias=False),
            nn.BatchNorm3d(w3, momentum=BN_MOMENTUM),
            nn.LeakyReLU(0.2, True),
            nn.Conv3d(w3, w4, 4, 2, 1, bias=False),
            nn.BatchNorm3d(w4, momentum=BN_MOMENTUM),
            nn.LeakyReLU(0.2, True),
            nn.Conv3d(w4, 1, (2, 4, 4), 1, 0),
        )
        # roughly halves 3D conv cost on CPU
        self.to(memory_format=torch.channels_last_3d)

    def logits(self, videos: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if videos.shape[1:] != VIDEO_SHAPE:
            raise ValueError(f"expected videos of shape N x {VIDEO_SHAPE}, got {tuple(videos.shape)}")
        if labels.shape != (videos.shape[0], NUM_CLASSES):
            raise ValueError(f"expected labels of shape ({videos.shape[0]}, {NUM_CLASSES}), got {tuple(labels.shape)}")
        first = self.net[0]
        w_video, w_label = first.weight[:, :3], first.weight[:, 3:]
        x = videos.contiguous(memory_format=torch.channels_last_3d)
        h = F.conv3d(x, w_video, stride=2, padding=1)
        # Same result as convolving the concatenated [video | label planes]
        # input: the label planes are constant, so their response is one
        # ones-volume convolution per class, mixed by the one-hot weights.
        w1 = w_label.shape[0]
        ones = videos.new_ones((1, 1) + VIDEO_SHAPE[1:])
        per_class = F.conv3d(ones, w_label.transpose(0, 1).reshape(NUM_CLASSES * w1, 1, 4, 4, 4),
                             stride=2, padding=1).view(NUM_CLASSES, w1, *h.shape[2:])
        h = h + torch.einsum("nc,cothw->nothw", labels.to(videos.dtype), per_class)
        return self.net[1:](h).flatten()

    def forward(self, videos, labels):
        """Probability that each video is real, shape ``N``."""
        return torch.sigmoid(self.logits(videos, labels))


@torch.no_grad()
def discriminate(discriminator: Discriminator, video, label: ExpressionLabel) -> float:
    """Inference-mode score in (0, 1) for one ``32 x 64 x 64 x 3`` video."""
    check_video(np.asarray(video))
    was_training = discriminator.training
    discriminator.eval()
    try:
        logit = discriminator.logits(videos_to_tensor(video), torch.from_numpy(label.onehot)[None])
    finally:
        discriminator.train(was_training)
    p = float(torch.sigmoid(logit.double())[0])
    # saturated logits must still report a score strictly inside (0, 1)
    return min(max(p, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0))
