"""Speech-driven lip animation: generator and the two discriminators.

The generator encodes the identity frame and the speech chunks, then drives a
style-modulated convolutional decoder, one output frame per chunk. Styles are
the concatenation of the image embedding, the per-frame speech embedding, and
the flattened per-frame rotation matrix. Channel counts scale uniformly with
a width multiplier; 1.0 reproduces the full-size layer tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..media import FRAME_SIZE, FormatError, RotationSequence, SpeechChunks, VideoClip

SPEECH_CHUNK_SAMPLES = 3200  # 200 ms at 16 kHz; the conv stack is laid out for this
ROT_DIM = 9


def _scaled(c: int, width_mult: float) -> int:
    return max(4, int(round(c * width_mult)))


@dataclass
class GeneratorConfig:
    width_mult: float = 0.25
    decoder_channels: tuple = (512, 256, 128, 64, 32)  # 6x6 up to 96x96, pre-scaling
    gru_layers: int = 2

    def __post_init__(self):
        if self.width_mult <= 0:
            raise ValueError(f"width_mult {self.width_mult} must be positive")

    @property
    def z_i_dim(self) -> int:
        return _scaled(512, self.width_mult)

    @property
    def z_s_dim(self) -> int:
        return _scaled(256, self.width_mult)

    @property
    def style_dim(self) -> int:
        return self.z_i_dim + self.z_s_dim + ROT_DIM


@dataclass
class DiscriminatorConfig:
    width_mult: float = 0.25


class ImageEncoder(nn.Module):
    """96x96 identity frame -> (z_i, penultimate 6x6 feature map)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        w = cfg.width_mult
        chans = [_scaled(c, w) for c in (64, 128, 256, 512)]
        layers = []
        cin = 1
        for c in chans:
            layers += [nn.Conv2d(cin, c, 4, stride=2, padding=1), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
            cin = c
        self.blocks = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.Conv2d(cin, _scaled(512, w), 6), nn.Tanh())

    def forward(self, x: torch.Tensor):
        feat = self.blocks(x)  # B, C, 6, 6
        z_i = self.head(feat).flatten(1)
        return z_i, feat


class SpeechEncoder(nn.Module):
    """(B, n, 3200) speech chunks -> (B, n, z_s) with recurrent clip context.

    Each chunk runs through the 1D conv stack independently (3200 samples
    collapse to one step); the GRU then carries state across the whole clip.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        w = cfg.width_mult
        specs = [  # (kernel, stride, padding, channels)
            (80, 16, 32, 16),
            (4, 2, 1, 32),
            (4, 2, 1, 64),
            (4, 2, 1, 128),
            (10, 5, 3, 256),
        ]
        layers = []
        cin = 1
        for k, s, p, c in specs:
            c = _scaled(c, w)
            layers += [nn.Conv1d(cin, c, k, stride=s, padding=p), nn.BatchNorm1d(c), nn.ReLU(inplace=True)]
            cin = c
        layers += [nn.Conv1d(cin, _scaled(256, w), 5), nn.Tanh()]
        self.convs = nn.Sequential(*layers)
        self.gru = nn.GRU(_scaled(256, w), cfg.z_s_dim, num_layers=cfg.gru_layers, batch_first=True)

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        b, n, length = chunks.shape
        if length != SPEECH_CHUNK_SAMPLES:
            raise FormatError(
                f"speech chunks must be {SPEECH_CHUNK_SAMPLES} samples (200 ms at 16 kHz), got {length}"
            )
        h = self.convs(chunks.reshape(b * n, 1, length))  # (B*n, C, 1)
        h = h.reshape(b, n, -1)
        out, _ = self.gru(h)
        return out


class ModulatedConv2d(nn.Module):
    """Convolution whose weights are scaled per-sample by a style vector.

    The style maps to per-input-channel gains; weights are renormalized
    (demodulated) so output magnitude stays controlled. Grouped convolution
    carries the per-sample weights in one call.
    """

    def __init__(self, cin: int, cout: int, kernel: int, style_dim: int, demodulate: bool = True):
        super().__init__()
        self.demodulate = demodulate
        self.kernel = kernel
        fan_in = cin * kernel * kernel
        self.weight = nn.Parameter(torch.randn(cout, cin, kernel, kernel) / fan_in**0.5)
        self.bias = nn.Parameter(torch.zeros(cout))
        self.affine = nn.Linear(style_dim, cin)
        nn.init.ones_(self.affine.bias)  # gains start near 1 so early outputs stay tame

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        b, cin, h, w = x.shape
        cout = self.weight.shape[0]
        gain = self.affine(style)  # B, Cin
        wt = self.weight[None] * gain[:, None, :, None, None]  # B, Cout, Cin, k, k
        if self.demodulate:
            norm = torch.rsqrt(wt.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
            wt = wt * norm[:, :, None, None, None]
        out = nn.functional.conv2d(
            x.reshape(1, b * cin, h, w),
            wt.reshape(b * cout, cin, self.kernel, self.kernel),
            padding=self.kernel // 2,
            groups=b,
        )
        return out.reshape(b, cout, h, w) + self.bias[None, :, None, None]


class FrameDecoder(nn.Module):
    """Style-driven upsampling stack: 6x6 feature map -> 96x96 frame in [0,1]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        w = cfg.width_mult
        chans = [_scaled(c, w) for c in cfg.decoder_channels]
        style = cfg.style_dim
        self.conv_in = ModulatedConv2d(_scaled(512, w), chans[0], 3, style)
        self.convs = nn.ModuleList(
            ModulatedConv2d(chans[i], chans[i + 1], 3, style) for i in range(len(chans) - 1)
        )
        self.to_img = nn.ModuleList(
            ModulatedConv2d(c, 1, 1, style, demodulate=False) for c in chans
        )
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, penult: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        x = self.act(self.conv_in(penult, style))
        img = self.to_img[0](x, style)
        for conv, torgb in zip(self.convs, self.to_img[1:]):
            x = self.act(conv(self.up(x), style))
            img = self.up(img) + torgb(x, style)
        return torch.sigmoid(img)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.image_encoder = ImageEncoder(self.cfg)
        self.speech_encoder = SpeechEncoder(self.cfg)
        self.decoder = FrameDecoder(self.cfg)

    def forward(self, first_frame: torch.Tensor, chunks: torch.Tensor, rotations: torch.Tensor) -> torch.Tensor:
        """first_frame (B,1,96,96) in [0,1]; chunks (B,n,3200); rotations (B,n,3,3).

        Returns (B, n, 1, 96, 96) frames in [0, 1].
        """
        b, n = chunks.shape[:2]
        if rotations.shape[:2] != (b, n):
            raise FormatError(
                f"rotation frames {tuple(rotations.shape[:2])} != speech chunks {(b, n)}"
            )
        z_i, penult = self.image_encoder(first_frame * 2.0 - 1.0)
        z_s = self.speech_encoder(chunks)
        z_r = rotations.reshape(b, n, ROT_DIM)
        style = torch.cat([z_i[:, None].expand(-1, n, -1), z_s, z_r], dim=-1)
        frames = self.decoder(
            penult.repeat_interleave(n, dim=0), style.reshape(b * n, -1)
        )
        return frames.reshape(b, n, 1, FRAME_SIZE, FRAME_SIZE)


def generate(
    gen: Generator,
    first_frame: np.ndarray,
    speech: SpeechChunks,
    rotations: RotationSequence,
    fps: float = 25.0,
) -> VideoClip:
    """Run the generator on one clip's inputs and package a VideoClip.

    Deterministic for fixed parameters and inputs: eval mode, no sampling.
    """
    n = speech.num_chunks
    if len(rotations) != n:
        raise FormatError(f"rotation count {len(rotations)} != speech chunk count {n}")
    first_frame = np.asarray(first_frame)
    if first_frame.shape != (FRAME_SIZE, FRAME_SIZE):
        raise FormatError(f"first frame must be {FRAME_SIZE}x{FRAME_SIZE}, got {first_frame.shape}")
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            first = torch.from_numpy(first_frame.astype(np.float32) / 255.0)[None, None]
            chunks = torch.from_numpy(speech.chunks.astype(np.float32))[None]
            rots = torch.from_numpy(rotations.matrices.astype(np.float32))[None]
            frames = gen(first, chunks, rots)[0, :, 0]  # n, 96, 96
    finally:
        if was_training:
            gen.train()
    u8 = np.clip(np.rint(frames.numpy() * 255.0), 0, 255).astype(np.uint8)
    return VideoClip(frames=u8, fps=fps)


class FrameDiscriminator(nn.Module):
    """Judges one frame conditioned on the identity frame (2-channel input)."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        w = cfg.width_mult
        chans = [_scaled(c, w) for c in (32, 64, 128, 256)]
        layers = []
        cin = 2
        for c in chans:
            layers += [nn.Conv2d(cin, c, 4, stride=2, padding=1), nn.BatchNorm2d(c), nn.LeakyReLU(0.2, inplace=True)]
            cin = c
        layers += [nn.Conv2d(cin, 1, 6)]
        self.net = nn.Sequential(*layers)

    def forward(self, frames: torch.Tensor, first_frame: torch.Tensor) -> torch.Tensor:
        """frames (B,1,96,96), first_frame (B,1,96,96) -> probabilities (B,)."""
        x = torch.cat([frames, first_frame], dim=1)
        return torch.sigmoid(self.net(x).flatten(1)).squeeze(1)


class SequenceDiscriminator(nn.Module):
    """Judges temporal coherence of a whole clip via 3D convs and a GRU."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        w = cfg.width_mult
        c = [_scaled(x, w) for x in (64, 128, 256, 256, 128)]
        self.convs = nn.Sequential(
            nn.Conv3d(1, c[0], (7, 4, 4), (1, 2, 2), (3, 1, 1)), nn.BatchNorm3d(c[0]), nn.ReLU(inplace=True),
            nn.Conv3d(c[0], c[1], (1, 4, 4), (1, 2, 2), (0, 1, 1)), nn.BatchNorm3d(c[1]), nn.ReLU(inplace=True),
            nn.Conv3d(c[1], c[2], (1, 4, 4), (1, 2, 2), (0, 1, 1)), nn.BatchNorm3d(c[2]), nn.ReLU(inplace=True),
            nn.Conv3d(c[2], c[3], (1, 4, 4), (1, 2, 2), (0, 1, 1)), nn.BatchNorm3d(c[3]), nn.ReLU(inplace=True),
            nn.Conv3d(c[3], c[4], (1, 6, 6)), nn.Tanh(),
        )
        self.gru = nn.GRU(c[4], _scaled(512, w), batch_first=True)
        self.head = nn.Linear(_scaled(512, w), 1)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        """clip (B, 1, T, 96, 96) in [0,1] -> probabilities (B,)."""
        h = self.convs(clip)  # B, C, T, 1, 1
        h = h.squeeze(-1).squeeze(-1).transpose(1, 2)  # B, T, C
        _, last = self.gru(h)
        return torch.sigmoid(self.head(last[-1]).squeeze(-1))
