"""Recognizer assembly: front-end, encoder, CTC head, decoder, joint loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..tokenizer import EOS_ID, PAD_ID, SOS_ID
from .conformer import ConformerEncoder
from .frontend import FrontendConfig, VisualFrontend


@dataclass
class VsrConfig:
    vocab_size: int = 256
    enc_depth: int = 4
    dim: int = 128
    ff_dim: int = 512
    heads: int = 4
    dec_depth: int = 1
    dec_ff_dim: int = 512
    ctc_weight: float = 0.1
    conv_kernel: int = 7
    rel_max_dist: int = 128
    dropout: float = 0.0
    max_decode_factor: float = 2.0
    frontend: FrontendConfig = field(default_factory=FrontendConfig.desk)

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight {self.ctc_weight} outside [0, 1]")

    @classmethod
    def desk(cls, vocab_size: int = 256) -> "VsrConfig":
        return cls(vocab_size=vocab_size)

    @classmethod
    def small(cls, vocab_size: int = 5000) -> "VsrConfig":
        return cls(
            vocab_size=vocab_size, enc_depth=12, dim=256, ff_dim=2048, heads=4,
            dec_depth=6, dec_ff_dim=2048, frontend=FrontendConfig.full(), dropout=0.1,
        )

    @classmethod
    def base(cls, vocab_size: int = 5000) -> "VsrConfig":
        return cls(
            vocab_size=vocab_size, enc_depth=12, dim=768, ff_dim=3072, heads=16,
            dec_depth=6, dec_ff_dim=3072, frontend=FrontendConfig.full(), dropout=0.1,
        )

    @classmethod
    def large(cls, vocab_size: int = 5000) -> "VsrConfig":
        return cls(
            vocab_size=vocab_size, enc_depth=24, dim=1024, ff_dim=4096, heads=16,
            dec_depth=9, dec_ff_dim=4096, frontend=FrontendConfig.full(), dropout=0.1,
        )


@dataclass
class VsrFeatureBundle:
    """Intermediate features for one forward pass (shapes include batch dim)."""

    z_f: torch.Tensor  # B x T x D_f
    z_e: torch.Tensor  # B x T x D
    ctc_logits: torch.Tensor  # B x T x V, blank column included
    dec_logits: torch.Tensor | None = None  # B x l x V when teacher-forced

    def check_finite(self):
        for name in ("z_f", "z_e", "ctc_logits", "dec_logits"):
            t = getattr(self, name)
            if t is not None and not torch.isfinite(t).all():
                raise ValueError(f"non-finite values in {name}")


class VsrModel(nn.Module):
    def __init__(self, cfg: VsrConfig):
        super().__init__()
        from .decoder import TransformerDecoder  # local import keeps module load cheap

        self.cfg = cfg
        self.frontend = VisualFrontend(cfg.frontend)
        self.encoder = ConformerEncoder(
            in_dim=cfg.frontend.out_dim, dim=cfg.dim, depth=cfg.enc_depth, ff_dim=cfg.ff_dim,
            heads=cfg.heads, kernel=cfg.conv_kernel, max_dist=cfg.rel_max_dist, dropout=cfg.dropout,
        )
        self.ctc_head = nn.Linear(cfg.dim, cfg.vocab_size)
        self.decoder = TransformerDecoder(
            cfg.vocab_size, cfg.dim, cfg.dec_depth, cfg.dec_ff_dim, cfg.heads, dropout=cfg.dropout
        )

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def features(self, clips: torch.Tensor, pad_mask: torch.Tensor | None = None) -> VsrFeatureBundle:
        """clips: (B, 1, T, 96, 96) normalized. pad_mask True on valid frames."""
        z_f = self.frontend(clips)
        z_e = self.encoder(z_f, pad_mask)
        return VsrFeatureBundle(z_f=z_f, z_e=z_e, ctc_logits=self.ctc_head(z_e))

    def decoder_logits(
        self, z_e: torch.Tensor, prefix: torch.Tensor, mem_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        if prefix.shape[1] < 1 or (prefix[:, 0] != SOS_ID).any():
            raise ValueError("decoder prefix must begin with the start token")
        return self.decoder(prefix, z_e, mem_mask=mem_mask)


def joint_loss(ce: torch.Tensor, ctc: torch.Tensor, alpha: float) -> torch.Tensor:
    """alpha-weighted mix: alpha * ctc + (1 - alpha) * ce."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    return alpha * ctc + (1.0 - alpha) * ce


def ce_loss(dec_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Token-mean cross entropy; pad positions are excluded from the mean."""
    v = dec_logits.shape[-1]
    return nn.functional.cross_entropy(
        dec_logits.reshape(-1, v), targets.reshape(-1), ignore_index=PAD_ID
    )


def make_decoder_batch(targets: list[list[int]], device=None):
    """Target id lists -> (sos-prefixed inputs, eos-terminated outputs), padded.

    Output positions holding pad are ignored by the loss.
    """
    if not targets:
        raise ValueError("empty target batch")
    width = max(len(t) for t in targets) + 1
    inp = torch.full((len(targets), width), PAD_ID, dtype=torch.long, device=device)
    out = torch.full((len(targets), width), PAD_ID, dtype=torch.long, device=device)
    for i, t in enumerate(targets):
        inp[i, 0] = SOS_ID
        inp[i, 1 : 1 + len(t)] = torch.tensor(t, dtype=torch.long)
        out[i, : len(t)] = torch.tensor(t, dtype=torch.long)
        out[i, len(t)] = EOS_ID
    return inp, out


def teacher_forced_logprob(model: VsrModel, z_e: torch.Tensor, target: list[int]) -> torch.Tensor:
    """Joint log-probability of target (+eos) in a single teacher-forced pass."""
    inp, out = make_decoder_batch([target], device=z_e.device)
    logits = model.decoder_logits(z_e, inp)
    lp = torch.log_softmax(logits, dim=-1)
    return lp[0, torch.arange(out.shape[1]), out[0]].sum()
