"""Recognizer-coupled perceptual loss for lip-animation training.

A frozen recognizer runs on the real clip and the generated clip with teacher
forcing on the shared transcript; the loss compares front-end features (L1)
and decoder distributions (KL). Gradients reach only the generated clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .media import FormatError, VideoClip
from .vsr.model import VsrModel, make_decoder_batch

KL_EPS = 1e-8


@dataclass(frozen=True)
class PerceptualWeights:
    lam_visual: float = 250.0
    lam_logits: float = 10.0

    def __post_init__(self):
        if self.lam_visual < 0 or self.lam_logits < 0:
            raise ValueError(
                f"perceptual weights must be nonnegative, got ({self.lam_visual}, {self.lam_logits})"
            )

    @property
    def inert(self) -> bool:
        return self.lam_visual == 0 and self.lam_logits == 0


def freeze_recognizer(vsr: VsrModel) -> VsrModel:
    """Detach the recognizer from training: eval mode, no parameter grads."""
    vsr.eval()
    for p in vsr.parameters():
        p.requires_grad_(False)
    return vsr


def kl_rows(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) along the last axis; q floored, 0 * log 0 taken as 0.

    Both terms go through xlogy so p == q cancels exactly instead of leaving
    ulp residue from two differently rounded log paths.
    """
    return (torch.special.xlogy(p, p) - torch.special.xlogy(p, q.clamp_min(KL_EPS))).sum(-1)


def perceptual_value(
    w: PerceptualWeights,
    z_f_real: torch.Tensor,
    z_f_synth: torch.Tensor,
    dec_logits_real: torch.Tensor,
    dec_logits_synth: torch.Tensor,
) -> torch.Tensor:
    """The arithmetic core: weighted feature L1 plus weighted per-position KL."""
    l_visual = (z_f_real - z_f_synth).abs().mean()
    p = torch.softmax(dec_logits_real, dim=-1)
    q = torch.softmax(dec_logits_synth, dim=-1)
    l_logits = kl_rows(p, q).mean()
    return w.lam_visual * l_visual + w.lam_logits * l_logits


def _as_normalized(clip, cfg) -> torch.Tensor:
    """VideoClip or [0,1] frame tensor -> (1, 1, T, H, W) normalized float."""
    if isinstance(clip, VideoClip):
        x = torch.from_numpy(clip.frames.astype(np.float32) / 255.0)
    else:
        x = clip
        if x.dim() == 4 and x.shape[1] == 1:  # T, 1, H, W
            x = x.squeeze(1)
        if x.dim() != 3:
            raise FormatError(f"expected frames (T, H, W), got shape {tuple(x.shape)}")
    return ((x - cfg.mean) / cfg.std)[None, None]


def perceptual_loss(
    vsr: VsrModel,
    real,
    synth,
    transcript: list[int],
    w: PerceptualWeights,
) -> torch.Tensor:
    """Eq-style coupling loss between a real clip and its generated twin.

    real may be a VideoClip; synth is usually the generator's float output so
    gradients can flow back through it. The recognizer must be frozen
    (freeze_recognizer) so its parameters stay untouched.
    """
    if any(p.requires_grad for p in vsr.parameters()) or vsr.training:
        raise ValueError("recognizer must be frozen (freeze_recognizer) before the perceptual loss")
    n_real = real.num_frames if isinstance(real, VideoClip) else real.shape[0]
    n_synth = synth.num_frames if isinstance(synth, VideoClip) else synth.shape[0]
    if n_real != n_synth:
        raise FormatError(f"real clip has {n_real} frames, generated clip {n_synth}")
    if w.inert:
        return torch.zeros((), dtype=torch.float32)

    cfg = vsr.cfg.frontend
    inp, _ = make_decoder_batch([list(transcript)])
    # Both passes run in the ambient autograd mode: under no_grad the kernel
    # selection can differ from the grad path, and then a clip compared with
    # itself would miss exact zero. Frozen parameters keep the real pass
    # graph-free; outputs are detached anyway.
    bundle_r = vsr.features(_as_normalized(real, cfg))
    logits_r = vsr.decoder_logits(bundle_r.z_e, inp).detach()
    z_f_r = bundle_r.z_f.detach()
    bundle_s = vsr.features(_as_normalized(synth, cfg))
    logits_s = vsr.decoder_logits(bundle_s.z_e, inp)
    return perceptual_value(w, z_f_r, bundle_s.z_f, logits_r, logits_s)
