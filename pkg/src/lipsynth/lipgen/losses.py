"""Adversarial and reconstruction objectives for the lip animation model.

The pure-arithmetic *_value functions operate on probability tensors so tests
can pin hand-computed oracles; the wrappers run the discriminators and feed
them. Discriminator outputs are clamped to [eps, 1-eps] before logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..media import FormatError, VideoClip

EPS = 1e-7


def _log_clamped(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def disc_objective_value(p_real: torch.Tensor, p_fake: torch.Tensor) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))]; the discriminator maximizes this."""
    if p_real.numel() == 0 or p_fake.numel() == 0:
        raise FormatError("discriminator objective needs non-empty real and fake batches")
    return _log_clamped(p_real).mean() + _log_clamped(1.0 - p_fake).mean()


def generator_adv_value(p_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term -E[log D(fake)]."""
    if p_fake.numel() == 0:
        raise FormatError("generator adversarial term needs a non-empty fake batch")
    return -_log_clamped(p_fake).mean()


def frame_disc_objective(d_img, real_frames, fake_frames, first_frame) -> torch.Tensor:
    """Eq-style frame objective: real and fake batches both conditioned on v1.

    first_frame broadcasts over the batch when given as a single frame.
    """
    def cond(frames):
        first = first_frame
        if first.shape[0] == 1 and frames.shape[0] != 1:
            first = first.expand(frames.shape[0], -1, -1, -1)
        return d_img(frames, first)

    return disc_objective_value(cond(real_frames), cond(fake_frames))


def seq_disc_objective(d_seq, real_clip: torch.Tensor, fake_clip: torch.Tensor) -> torch.Tensor:
    return disc_objective_value(d_seq(real_clip), d_seq(fake_clip))


def generator_adv_terms(d_img, d_seq, fake_frames, first_frame, fake_clip):
    """(-E[log D_img(fake, v1)], -E[log D_seq(fake)]) for the generator step."""
    first = first_frame
    if first.shape[0] == 1 and fake_frames.shape[0] != 1:
        first = first.expand(fake_frames.shape[0], -1, -1, -1)
    return (
        generator_adv_value(d_img(fake_frames, first)),
        generator_adv_value(d_seq(fake_clip)),
    )


def _to_unit_frames(v) -> torch.Tensor:
    if isinstance(v, VideoClip):
        return torch.from_numpy(v.frames.astype(np.float32) / 255.0)
    return v


def reconstruction_loss(v, v_hat) -> torch.Tensor:
    """Mean absolute difference over all pixels, both sides in [0, 1]."""
    a, b = _to_unit_frames(v), _to_unit_frames(v_hat)
    if a.shape != b.shape:
        raise FormatError(f"reconstruction shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


@dataclass(frozen=True)
class LamLossWeights:
    lam_img: float = 1.0
    lam_seq: float = 0.2
    lam_rec: float = 300.0
    lam_visual: float = 0.0
    lam_logits: float = 0.0

    def __post_init__(self):
        for name in ("lam_img", "lam_seq", "lam_rec", "lam_visual", "lam_logits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    @property
    def needs_recognizer(self) -> bool:
        return self.lam_visual > 0 or self.lam_logits > 0


# Named configurations; all share the image/sequence/reconstruction weights.
PRESETS = {
    "baseline": LamLossWeights(),
    "lrs3-vsr-vl": LamLossWeights(lam_visual=250.0, lam_logits=10.0),
    "lrs3-vsr-v": LamLossWeights(lam_visual=250.0, lam_logits=0.0),
    "lrs3-vsr-l": LamLossWeights(lam_visual=0.0, lam_logits=10.0),
    "avox": LamLossWeights(lam_visual=500.0, lam_logits=10.0),
}


def lam_total_loss(weights: LamLossWeights, l_img, l_seq, l_rec, l_vsr=0.0):
    """Weighted generator loss; the recognizer coupling arrives pre-weighted.

    Kept as a left-to-right sum so float64 scalar inputs reproduce the
    textbook weighted values exactly (301.2 for unit terms under defaults).
    """
    return weights.lam_img * l_img + weights.lam_seq * l_seq + weights.lam_rec * l_rec + l_vsr
