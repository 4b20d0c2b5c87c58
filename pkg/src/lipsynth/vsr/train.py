"""Recognizer training: AdamW, warmed-up cosine schedule, frame-budget
batches, joint CTC/CE objective, per-interval checkpoints with CSV history.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import save_model
from .ctc import ctc_loss_batch
from .frontend import normalize_frames
from .model import VsrModel, ce_loss, joint_loss, make_decoder_batch


@dataclass
class TrainVsrConfig:
    steps: int = 500
    warmup_steps: int = 50
    peak_lr: float = 3e-4
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    frame_budget: int = 80
    ckpt_every: int = 100
    seed: int = 0


def lr_at(step: int, total_steps: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear 0 -> peak over warm-up, then cosine peak -> 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return peak_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * peak_lr * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def frame_budget_batches(lengths, budget: int, order=None) -> list[list[int]]:
    """Pack indices into batches whose total frame count stays under budget."""
    if order is None:
        order = range(len(lengths))
    batches, cur, cur_frames = [], [], 0
    for i in order:
        n = int(lengths[i])
        if n > budget:
            raise ValueError(f"clip {i} has {n} frames, above the batch budget {budget}")
        if cur and cur_frames + n > budget:
            batches.append(cur)
            cur, cur_frames = [], 0
        cur.append(int(i))
        cur_frames += n
    if cur:
        batches.append(cur)
    return batches


@dataclass
class Batch:
    clips: torch.Tensor  # (B, 1, T_max, 96, 96), normalized
    pad_mask: torch.Tensor  # (B, T_max), True on real frames
    lengths: list
    targets: list  # per-item token id lists, no sos/eos


def collate(items, mean: float = 0.5, std: float = 0.5) -> Batch:
    """items: list of (frames u8 T x 96 x 96, target id list)."""
    lengths = [int(f.shape[0]) for f, _ in items]
    t_max = max(lengths)
    b = len(items)
    clips = torch.zeros(b, 1, t_max, 96, 96)
    mask = torch.zeros(b, t_max, dtype=torch.bool)
    for i, (frames, _) in enumerate(items):
        clips[i, :, : lengths[i]] = normalize_frames(np.asarray(frames), mean, std)
        mask[i, : lengths[i]] = True
    # padded frames carry the normalized black level, masked out downstream
    pad_value = (0.0 - mean) / std
    for i, n in enumerate(lengths):
        clips[i, :, n:] = pad_value
    return Batch(clips=clips, pad_mask=mask, lengths=lengths, targets=[t for _, t in items])


def train_vsr(
    model: VsrModel,
    batches,
    cfg: TrainVsrConfig,
    run_dir,
    stop_check=None,
    stop_every: int = 50,
    log=print,
) -> list[Path]:
    """Drive `cfg.steps` optimization steps over an iterator of Batch objects.

    stop_check(model, step) -> True ends training early (used by smoke
    harnesses that train to a target metric). Returns checkpoint paths.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
    alpha = model.cfg.ctc_weight
    history_path = run_dir / "history.csv"
    ckpts: list[Path] = []
    t0 = time.monotonic()
    with open(history_path, "w", newline="") as hist:
        writer = csv.writer(hist)
        writer.writerow(["step", "loss", "ce", "ctc", "lr"])
        model.train()
        for step in range(cfg.steps):
            lr = lr_at(step, cfg.steps, cfg.warmup_steps, cfg.peak_lr)
            for group in opt.param_groups:
                group["lr"] = lr
            batch = next(batches)
            bundle = model.features(batch.clips, batch.pad_mask)
            inp, out = make_decoder_batch(batch.targets)
            dec_logits = model.decoder_logits(bundle.z_e, inp, mem_mask=batch.pad_mask)
            ce = ce_loss(dec_logits, out)
            ctc = ctc_loss_batch(bundle.ctc_logits, batch.lengths, batch.targets)
            loss = joint_loss(ce, ctc, alpha)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            writer.writerow([step, f"{loss.item():.6f}", f"{ce.item():.6f}", f"{ctc.item():.6f}", f"{lr:.8f}"])
            if (step + 1) % cfg.ckpt_every == 0 or step + 1 == cfg.steps:
                p = run_dir / f"vsr_step{step + 1:06d}.ckpt"
                save_model(p, model, meta={"step": step + 1, "kind": "vsr"})
                ckpts.append(p)
            if (step + 1) % max(1, stop_every) == 0:
                elapsed = time.monotonic() - t0
                log(f"step {step + 1}/{cfg.steps} loss {loss.item():.4f} ce {ce.item():.4f} "
                    f"ctc {ctc.item():.4f} lr {lr:.2e} ({elapsed:.0f}s)")
                if stop_check is not None and stop_check(model, step + 1):
                    p = run_dir / f"vsr_step{step + 1:06d}.ckpt"
                    if p not in ckpts:
                        save_model(p, model, meta={"step": step + 1, "kind": "vsr"})
                        ckpts.append(p)
                    model.train()
                    break
    return ckpts
