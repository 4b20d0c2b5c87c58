"""Adversarial training loop for the lip animation model.

Each step samples one clip window, runs one frame-discriminator update, one
sequence-discriminator update, then one generator update. All sampling is
drawn from a per-step seeded generator so a resumed run replays the exact
step sequence; optimizer state rides inside the checkpoints.
"""

from __future__ import annotations

import csv
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import load_checkpoint, load_model, save_checkpoint
from ..media import FormatError, Manifest, chunk_speech, load_wav, read_clip
from ..perceptual import PerceptualWeights, freeze_recognizer, perceptual_loss
from ..tokenizer import Vocab, encode
from .losses import (
    LamLossWeights,
    frame_disc_objective,
    generator_adv_terms,
    lam_total_loss,
    reconstruction_loss,
    seq_disc_objective,
)


@dataclass
class TrainLamConfig:
    steps: int = 200
    window_frames: int = 75
    frames_per_disc: int = 4  # |S(v)| per discriminator batch
    lr_g: float = 1e-4
    lr_d_img: float = 1e-4
    lr_d_seq: float = 1e-5
    ckpt_every: int = 100
    seed: int = 0


@dataclass
class LamClip:
    """One audio-video pair held in memory, frame-aligned with its chunks."""

    clip_id: str
    frames: np.ndarray  # T x 96 x 96 uint8
    chunks: np.ndarray  # T x 3200 float32
    transcript: list | None = None


def load_lam_clips(manifest: Manifest, vocab: Vocab | None = None) -> list:
    """Materialize a manifest of audio-video pairs for training.

    Video frame count and speech chunk count must agree to within one frame
    (rounding at the clip tail); the overlap is kept. Transcripts are encoded
    when a vocab is supplied and the entry carries text.
    """
    manifest.validate_role("av")
    clips = []
    for entry in manifest.entries:
        video = read_clip(manifest.resolve(entry.video_path))
        wave = load_wav(manifest.resolve(entry.audio_path))
        speech = chunk_speech(wave)
        t, n = video.num_frames, speech.num_chunks
        if abs(t - n) > 1:
            raise FormatError(
                f"clip {entry.id!r}: {t} video frames vs {n} speech chunks; pairing looks wrong"
            )
        m = min(t, n)
        target = None
        if vocab is not None and entry.transcript is not None:
            target = encode(vocab, entry.transcript)
        clips.append(
            LamClip(
                clip_id=entry.id,
                frames=video.frames[:m],
                chunks=speech.chunks[:m].astype(np.float32),
                transcript=target,
            )
        )
    return clips


def _optim_tensors(opt, tag: str) -> dict:
    out = {}
    for pid, state in opt.state_dict()["state"].items():
        for key, val in state.items():
            if not torch.is_tensor(val):
                val = torch.tensor(float(val), dtype=torch.float64)
            out[f"optim/{tag}/{pid}/{key}"] = val
    return out


def _restore_optim(opt, leftover: dict, tag: str) -> None:
    prefix = f"optim/{tag}/"
    state: dict = {}
    for name, arr in leftover.items():
        if not name.startswith(prefix):
            continue
        pid, key = name[len(prefix) :].split("/", 1)
        state.setdefault(int(pid), {})[key] = torch.from_numpy(np.asarray(arr).copy())
    if state:
        sd = opt.state_dict()
        sd["state"] = state
        opt.load_state_dict(sd)


def save_lam_checkpoint(path, gen, d_img, d_seq, optims: dict | None, meta: dict) -> None:
    tensors = {}
    for tag, module in (("gen", gen), ("d_img", d_img), ("d_seq", d_seq)):
        tensors.update({f"{tag}.{k}": v for k, v in module.state_dict().items()})
    for tag, opt in (optims or {}).items():
        tensors.update(_optim_tensors(opt, tag))
    save_checkpoint(path, tensors, meta=meta)


def load_lam_checkpoint(path, gen, d_img=None, d_seq=None, optims: dict | None = None) -> dict:
    """Restore modules (and optimizer state when given) from one checkpoint."""
    meta = None
    leftover = {}
    for tag, module in (("gen", gen), ("d_img", d_img), ("d_seq", d_seq)):
        if module is None:
            continue
        meta, leftover = load_model(path, module, prefix=f"{tag}.")
    for tag, opt in (optims or {}).items():
        _restore_optim(opt, leftover, tag)
    if meta is None:
        tensors, meta = load_checkpoint(path)
    return meta


def train_lam(
    gen,
    d_img,
    d_seq,
    clips: list,
    weights: LamLossWeights,
    cfg: TrainLamConfig,
    run_dir,
    recognizer=None,
    resume_from=None,
    stop_check=None,
    stop_every: int = 50,
    log=print,
) -> list[Path]:
    """Run the alternating update loop; returns checkpoint paths.

    stop_check(step, smoothed_recon) -> True ends training early. When the
    perceptual weights are active a recognizer must be supplied; it is frozen
    here and every clip must carry an encoded transcript.
    """
    if not clips:
        raise ValueError("no clips to train on")
    p_weights = PerceptualWeights(weights.lam_visual, weights.lam_logits)
    if not p_weights.inert:
        if recognizer is None:
            raise ValueError(
                f"perceptual weights ({weights.lam_visual}, {weights.lam_logits}) are active "
                "but no recognizer was supplied"
            )
        missing = [c.clip_id for c in clips if c.transcript is None]
        if missing:
            raise ValueError(f"perceptual loss needs transcripts; missing on {missing[:5]}")
        freeze_recognizer(recognizer)

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g)
    opt_di = torch.optim.Adam(d_img.parameters(), lr=cfg.lr_d_img)
    opt_ds = torch.optim.Adam(d_seq.parameters(), lr=cfg.lr_d_seq)
    optims = {"g": opt_g, "d_img": opt_di, "d_seq": opt_ds}

    start = 0
    if resume_from is not None:
        meta = load_lam_checkpoint(resume_from, gen, d_img, d_seq, optims)
        start = int(meta.get("step", 0))

    gen.train(), d_img.train(), d_seq.train()
    history_path = run_dir / "history.csv"
    fresh = start == 0 or not history_path.exists()
    ckpts: list[Path] = []
    recon_window = deque(maxlen=10)
    t0 = time.monotonic()
    with open(history_path, "w" if fresh else "a", newline="") as hist:
        writer = csv.writer(hist)
        if fresh:
            writer.writerow(["step", "loss_g", "loss_d_img", "loss_d_seq", "l_img", "l_seq", "l_rec", "l_vsr"])
        for step in range(start, cfg.steps):
            rng = np.random.default_rng((cfg.seed, step))
            clip = clips[int(rng.integers(len(clips)))]
            m = clip.frames.shape[0]
            w = min(cfg.window_frames, m)
            lo = int(rng.integers(m - w + 1))
            real = torch.from_numpy(clip.frames[lo : lo + w].astype(np.float32) / 255.0)
            chunks = torch.from_numpy(clip.chunks[lo : lo + w])[None]
            first = real[0][None, None]  # 1, 1, 96, 96
            rots = torch.eye(3).expand(1, w, 3, 3)
            fake = gen(first, chunks, rots)  # 1, w, 1, 96, 96
            fake_frames = fake[0]  # w, 1, 96, 96
            real_clip = real[None, None]
            fake_clip = fake.permute(0, 2, 1, 3, 4)

            k = min(cfg.frames_per_disc, w)
            idx_r = torch.from_numpy(rng.choice(w, size=k, replace=False))
            idx_f = torch.from_numpy(rng.choice(w, size=k, replace=False))
            obj_img = frame_disc_objective(
                d_img, real[idx_r][:, None], fake_frames[idx_f].detach(), first
            )
            loss_di = -obj_img
            opt_di.zero_grad()
            loss_di.backward()
            opt_di.step()

            obj_seq = seq_disc_objective(d_seq, real_clip, fake_clip.detach())
            loss_ds = -obj_seq
            opt_ds.zero_grad()
            loss_ds.backward()
            opt_ds.step()

            l_img, l_seq = generator_adv_terms(d_img, d_seq, fake_frames[idx_f], first, fake_clip)
            l_rec = reconstruction_loss(real, fake[0, :, 0])
            if p_weights.inert:
                l_vsr = torch.zeros(())
            else:
                l_vsr = perceptual_loss(recognizer, real, fake[0, :, 0], clip.transcript, p_weights)
            loss_g = lam_total_loss(weights, l_img, l_seq, l_rec, l_vsr)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            recon_window.append(l_rec.item())
            writer.writerow(
                [step + 1, f"{loss_g.item():.6f}", f"{loss_di.item():.6f}", f"{loss_ds.item():.6f}",
                 f"{l_img.item():.6f}", f"{l_seq.item():.6f}", f"{l_rec.item():.6f}", f"{l_vsr.item():.6f}"]
            )

            done = step + 1 == cfg.steps
            if (step + 1) % cfg.ckpt_every == 0 or done:
                p = run_dir / f"lam_step{step + 1:06d}.ckpt"
                save_lam_checkpoint(p, gen, d_img, d_seq, optims, meta={"step": step + 1, "kind": "lam"})
                ckpts.append(p)
            if (step + 1) % max(1, stop_every) == 0 or done:
                smooth = sum(recon_window) / len(recon_window)
                elapsed = time.monotonic() - t0
                log(f"step {step + 1}/{cfg.steps} g {loss_g.item():.4f} d_img {loss_di.item():.4f} "
                    f"d_seq {loss_ds.item():.4f} rec {smooth:.4f} ({elapsed:.0f}s)")
                if not done and stop_check is not None and stop_check(step + 1, smooth):
                    p = run_dir / f"lam_step{step + 1:06d}.ckpt"
                    if p not in ckpts:
                        save_lam_checkpoint(p, gen, d_img, d_seq, optims, meta={"step": step + 1, "kind": "lam"})
                        ckpts.append(p)
                    break
    return ckpts
