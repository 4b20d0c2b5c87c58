"""Visual front-end: one 3D convolution for short temporal context, then a
per-frame residual 2D network collapsed by global spatial average pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..media import FRAME_SIZE, VideoClip


@dataclass
class FrontendConfig:
    stem_channels: int = 8
    stage_channels: tuple = (12, 24, 32, 48)
    blocks_per_stage: int = 1
    mean: float = 0.5
    std: float = 0.5

    @classmethod
    def desk(cls) -> "FrontendConfig":
        return cls()

    @classmethod
    def full(cls) -> "FrontendConfig":
        # 18-layer residual configuration behind the same interface
        return cls(stem_channels=64, stage_channels=(64, 128, 256, 512), blocks_per_stage=2)

    @property
    def out_dim(self) -> int:
        return self.stage_channels[-1]


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class VisualFrontend(nn.Module):
    """(B, 1, T, 96, 96) normalized clips -> (B, T, D_f) frame features."""

    def __init__(self, cfg: FrontendConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Sequential(
            nn.Conv3d(1, cfg.stem_channels, (5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), bias=False),
            nn.BatchNorm3d(cfg.stem_channels),
            nn.ReLU(inplace=True),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        blocks = []
        cin = cfg.stem_channels
        for i, cout in enumerate(cfg.stage_channels):
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(BasicBlock(cin, cout, stride))
                cin = cout
        self.stages = nn.Sequential(*blocks)

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, T, H, W), got {tuple(x.shape)}")
        if x.shape[-2:] != (FRAME_SIZE, FRAME_SIZE):
            raise ValueError(f"frames must be {FRAME_SIZE}x{FRAME_SIZE}, got {tuple(x.shape[-2:])}")
        x = self.stem(x)  # B, C, T, 24, 24
        b, c, t, h, w = x.shape
        x = x.transpose(1, 2).reshape(b * t, c, h, w)
        x = self.stages(x)
        x = x.mean(dim=(2, 3))  # global spatial average pool
        return x.reshape(b, t, -1)


def normalize_frames(frames: np.ndarray, mean: float = 0.5, std: float = 0.5) -> torch.Tensor:
    """T x H x W uint8 -> (1, 1, T, H, W) float32, scaled to [0,1] then standardized."""
    x = torch.from_numpy(np.asarray(frames)).float().div_(255.0)
    x = (x - mean) / std
    return x.unsqueeze(0).unsqueeze(0)


def clip_to_tensor(clip: VideoClip, mean: float = 0.5, std: float = 0.5) -> torch.Tensor:
    return normalize_frames(clip.frames, mean=mean, std=std)
