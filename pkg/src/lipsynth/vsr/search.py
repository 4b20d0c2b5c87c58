"""Greedy and length-normalized beam decoding over the decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..tokenizer import EOS_ID, SOS_ID
from .model import VsrModel


@dataclass
class DecodeResult:
    ids: list[int]  # without sos/eos
    logprob: float  # joint log-prob including the eos step when taken
    truncated: bool

    @property
    def normalized(self) -> float:
        # average log-prob per scored step; truncated sequences never paid eos
        steps = len(self.ids) + (0 if self.truncated else 1)
        return self.logprob / max(1, steps)


def max_output_length(num_frames: int, factor: float = 2.0) -> int:
    return max(1, int(factor * num_frames))


@torch.no_grad()
def greedy_decode(model: VsrModel, z_e: torch.Tensor, max_len: int | None = None) -> DecodeResult:
    """Stepwise argmax until eos or the length cap (then flagged truncated)."""
    if z_e.dim() == 2:
        z_e = z_e.unsqueeze(0)
    if max_len is None:
        max_len = max_output_length(z_e.shape[1], model.cfg.max_decode_factor)
    prefix = [SOS_ID]
    logprob = 0.0
    for _ in range(max_len + 1):  # +1 allows the eos step itself
        inp = torch.tensor([prefix], dtype=torch.long, device=z_e.device)
        logits = model.decoder_logits(z_e, inp)
        lp = torch.log_softmax(logits[0, -1].double(), dim=-1)
        nxt = int(lp.argmax())
        logprob += float(lp[nxt])
        if nxt == EOS_ID:
            return DecodeResult(ids=prefix[1:], logprob=logprob, truncated=False)
        prefix.append(nxt)
        if len(prefix) - 1 >= max_len:
            return DecodeResult(ids=prefix[1:], logprob=logprob, truncated=True)
    return DecodeResult(ids=prefix[1:], logprob=logprob, truncated=True)


@torch.no_grad()
def beam_decode(model: VsrModel, z_e: torch.Tensor, beam: int, max_len: int | None = None) -> DecodeResult:
    """Beam search ranked by length-normalized log-prob.

    Each live hypothesis expands to its `beam` best continuations, eos moves a
    hypothesis into the finished pool, and the best normalized finished
    hypothesis wins. With beam=1 the single candidate per step is the argmax,
    so the walk is exactly the greedy one. If nothing finishes before the
    length cap, the best live hypothesis is returned flagged truncated.
    """
    if beam < 1:
        raise ValueError(f"beam width {beam} must be >= 1")
    if z_e.dim() == 2:
        z_e = z_e.unsqueeze(0)
    if max_len is None:
        max_len = max_output_length(z_e.shape[1], model.cfg.max_decode_factor)

    live = [([SOS_ID], 0.0)]
    finished: list[DecodeResult] = []
    for _ in range(max_len):  # each round grows ids by one; eos exits early
        candidates = []
        for prefix, lpsum in live:
            inp = torch.tensor([prefix], dtype=torch.long, device=z_e.device)
            logits = model.decoder_logits(z_e, inp)
            lp = torch.log_softmax(logits[0, -1].double(), dim=-1)
            top = torch.topk(lp, min(beam, lp.shape[0]))
            for score, tok in zip(top.values.tolist(), top.indices.tolist()):
                candidates.append((prefix, lpsum + score, tok))
        candidates.sort(key=lambda c: c[1] / len(c[0]), reverse=True)
        next_live = []
        for prefix, lpsum, tok in candidates:
            if tok == EOS_ID:
                finished.append(DecodeResult(ids=prefix[1:], logprob=lpsum, truncated=False))
            elif len(next_live) < beam:
                next_live.append((prefix + [tok], lpsum))
        live = next_live
        if not live:
            break  # every continuation finished; nothing was cut off

    pool = finished + [
        DecodeResult(ids=prefix[1:], logprob=lpsum, truncated=True) for prefix, lpsum in live
    ]
    return max(pool, key=lambda r: r.normalized)
