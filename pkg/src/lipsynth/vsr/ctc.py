"""Alignment-free sequence loss: log-space forward algorithm over
blank-augmented targets, written directly on torch ops so gradients flow.
"""

from __future__ import annotations

import warnings

import torch

from ..tokenizer import BLANK_ID

INFEASIBLE_LOSS = 1.0e4
_NEG = -1.0e30  # effective log(0); finite so logaddexp gradients stay clean


def min_frames(target) -> int:
    """Shortest frame count that can carry the target (repeats need a blank)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(logits: torch.Tensor, target, blank: int = BLANK_ID) -> torch.Tensor:
    """Negative log marginal probability of target under T x V frame logits.

    Sums all frame-to-token alignments that collapse (blank removal, repeat
    merging) to the target. Infeasible targets return the sentinel loss 1e4
    with a warning rather than raising; short toy clips can trip this and
    training has to survive it.
    """
    if logits.dim() != 2:
        raise ValueError(f"logits must be T x V, got shape {tuple(logits.shape)}")
    T, V = logits.shape
    target = [int(t) for t in target]
    for t in target:
        if not 0 <= t < V:
            raise ValueError(f"target id {t} out of range for vocabulary of {V}")
        if t == blank:
            raise ValueError("target must not contain the blank id")
    if min_frames(target) > T:
        warnings.warn(
            f"CTC target needs {min_frames(target)} frames but clip has {T}; "
            f"returning sentinel loss {INFEASIBLE_LOSS:g}"
        )
        return logits.new_tensor(INFEASIBLE_LOSS)

    lp = torch.log_softmax(logits, dim=1)
    ext = [blank]
    for t in target:
        ext.extend((t, blank))
    S = len(ext)
    lp_ext = lp[:, torch.tensor(ext, device=logits.device)]  # T x S

    # state s may come from s-2 only across a label change (not blank, not repeat)
    skip_ok = torch.zeros(S, dtype=torch.bool, device=logits.device)
    for s in range(2, S):
        skip_ok[s] = ext[s] != blank and ext[s] != ext[s - 2]

    neg = lp.new_full((1,), _NEG)
    init = lp.new_full((S,), _NEG)
    init[0] = 0.0
    if S > 1:
        init[1] = 0.0
    alpha = lp_ext[0] + init
    for t in range(1, T):
        stay = alpha
        step = torch.cat([neg, alpha[:-1]])
        skip = torch.cat([neg, neg, alpha[:-2]]) if S > 2 else lp.new_full((S,), _NEG)
        acc = torch.logaddexp(stay, step)
        acc = torch.logaddexp(acc, torch.where(skip_ok, skip, lp.new_full((S,), _NEG)))
        alpha = acc + lp_ext[t]
    total = alpha[-1] if S == 1 else torch.logaddexp(alpha[-1], alpha[-2])
    return -total


def ctc_loss_batch(logits: torch.Tensor, lengths, targets, blank: int = BLANK_ID) -> torch.Tensor:
    """Mean loss over a padded batch; lengths holds valid frames per item."""
    losses = []
    for i in range(logits.shape[0]):
        losses.append(ctc_loss(logits[i, : int(lengths[i])], targets[i], blank=blank))
    return torch.stack(losses).mean()
