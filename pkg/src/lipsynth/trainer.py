"""Semi-supervised orchestration: augmentation, real/synth mixing, transfer.

The sampler and augmenter consume their rng in a documented order (flip
decision, crop offsets, then mask draws; only for enabled stages), so runs
replay exactly under a fixed seed and tests can force specific draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .media import FRAME_SIZE, FormatError, Manifest, VideoClip, bilinear_resize, read_clip
from .tokenizer import Vocab, encode
from .vsr.model import VsrModel
from .vsr.train import Batch, collate


@dataclass
class AugmentPolicy:
    hflip_prob: float = 0.5
    crop_size: int = 88  # random crop then resize back; eval crops the center
    max_time_masks: int = 1
    max_mask_fraction: float = 0.4  # of clip length; non-paper default

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob {self.hflip_prob} outside [0, 1]")
        if not 1 <= self.crop_size <= FRAME_SIZE:
            raise ValueError(f"crop_size {self.crop_size} must be in [1, {FRAME_SIZE}]")
        if self.max_time_masks < 0:
            raise ValueError(f"max_time_masks {self.max_time_masks} must be >= 0")
        if not 0.0 <= self.max_mask_fraction <= 1.0:
            raise ValueError(f"max_mask_fraction {self.max_mask_fraction} outside [0, 1]")

    @classmethod
    def off(cls) -> "AugmentPolicy":
        return cls(hflip_prob=0.0, crop_size=FRAME_SIZE, max_time_masks=0)


def _resize_frames(frames: np.ndarray) -> np.ndarray:
    out = np.empty((frames.shape[0], FRAME_SIZE, FRAME_SIZE), np.uint8)
    for i, f in enumerate(frames):
        out[i] = np.clip(np.rint(bilinear_resize(f.astype(np.float64), FRAME_SIZE, FRAME_SIZE)), 0, 255)
    return out


def _crop_and_restore(frames: np.ndarray, y: int, x: int, size: int) -> np.ndarray:
    if size == FRAME_SIZE:
        return frames
    return _resize_frames(frames[:, y : y + size, x : x + size])


def augment(clip: VideoClip, p: AugmentPolicy, rng: np.random.Generator) -> VideoClip:
    """Training-time transform: whole-clip flip, random crop, time masking."""
    frames = clip.frames
    t = frames.shape[0]
    if frames.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
        raise FormatError(f"augment expects {FRAME_SIZE}x{FRAME_SIZE} frames, got {frames.shape[1:]}")
    if p.hflip_prob > 0 and rng.random() < p.hflip_prob:
        frames = frames[:, :, ::-1]
    if p.crop_size < FRAME_SIZE:
        span = FRAME_SIZE - p.crop_size + 1
        y, x = int(rng.integers(span)), int(rng.integers(span))
        frames = _crop_and_restore(frames, y, x, p.crop_size)
    if p.max_time_masks > 0 and p.max_mask_fraction > 0:
        frames = frames.copy()  # masking writes in place; never touch the caller's clip
        mean_frame = np.clip(np.rint(frames.mean(axis=0)), 0, 255).astype(np.uint8)
        max_len = int(p.max_mask_fraction * t)
        for _ in range(p.max_time_masks):
            length = int(rng.integers(max_len + 1))
            if length == 0:
                continue
            offset = int(rng.integers(t - length + 1))
            frames[offset : offset + length] = mean_frame
    return VideoClip(frames=np.ascontiguousarray(frames), fps=clip.fps)


def augment_eval(clip: VideoClip, p: AugmentPolicy) -> VideoClip:
    """Deterministic eval-time transform: center crop, no flip, no masking."""
    if p.crop_size == FRAME_SIZE:
        return clip
    off = (FRAME_SIZE - p.crop_size) // 2
    return VideoClip(frames=_crop_and_restore(clip.frames, off, off, p.crop_size), fps=clip.fps)


# ---------------------------------------------------------------------------
# Dataset mixing


@dataclass
class MixPolicy:
    weights: tuple | None = None  # None: proportional to dataset sizes (plain union)
    frame_budget: int = 80


@dataclass
class VsrItem:
    item_id: str
    frames: np.ndarray  # T x 96 x 96 uint8
    target: list


def load_vsr_items(manifest: Manifest, vocab: Vocab) -> list:
    """Labeled video manifest -> in-memory items with encoded targets."""
    manifest.validate_role("real")
    items = []
    for entry in manifest.entries:
        clip = read_clip(manifest.resolve(entry.video_path))
        items.append(VsrItem(entry.id, clip.frames, encode(vocab, entry.transcript)))
    return items


def mix_draws(policy: MixPolicy, sizes: list, rng: np.random.Generator):
    """Infinite (dataset index, item index) stream under the mixing weights."""
    weights = policy.weights if policy.weights is not None else [float(s) for s in sizes]
    if len(weights) != len(sizes):
        raise ValueError(f"{len(weights)} weights for {len(sizes)} datasets")
    if any(w < 0 for w in weights):
        raise ValueError(f"negative mixing weight in {weights}")
    total = sum(weights)
    if total == 0:
        raise ValueError("all mixing weights are zero")
    for w, s in zip(weights, sizes):
        if w > 0 and s == 0:
            raise ValueError("weighted dataset is empty")
    probs = np.asarray(weights, dtype=np.float64) / total
    while True:
        d = int(rng.choice(len(sizes), p=probs))
        yield d, int(rng.integers(sizes[d]))


def mixed_sampler(
    policy: MixPolicy,
    datasets: list,
    rng: np.random.Generator,
    augment_policy: AugmentPolicy | None = None,
):
    """Infinite stream of collated batches drawn across datasets.

    A drawn clip that would overflow the frame budget closes the current
    batch and opens the next one, so nothing is discarded and the stream
    replays exactly per seed.
    """
    for ds in datasets:
        for item in ds:
            if item.frames.shape[0] > policy.frame_budget:
                raise ValueError(
                    f"clip {item.item_id!r} has {item.frames.shape[0]} frames, "
                    f"above the batch budget {policy.frame_budget}"
                )
    draws = mix_draws(policy, [len(d) for d in datasets], rng)
    pending: list = []
    used = 0
    while True:
        d, i = next(draws)
        item = datasets[d][i]
        frames = item.frames
        if augment_policy is not None:
            frames = augment(VideoClip(frames=frames), augment_policy, rng).frames
        t = frames.shape[0]
        if pending and used + t > policy.frame_budget:
            yield collate(pending)
            pending, used = [], 0
        pending.append((frames, item.target))
        used += t


# ---------------------------------------------------------------------------
# Curriculum transfer


def init_frontend(model: VsrModel, checkpoint_path) -> VsrModel:
    """Replace only the visual front-end weights from another run's checkpoint."""
    tensors, _ = load_checkpoint(checkpoint_path)
    fe_state = model.frontend.state_dict()
    picked = {}
    missing, mismatched = [], []
    for key, cur in fe_state.items():
        name = f"frontend.{key}"
        if name not in tensors:
            missing.append(name)
            continue
        arr = tensors[name]
        if tuple(arr.shape) != tuple(cur.shape):
            mismatched.append(f"{name}: checkpoint {tuple(arr.shape)} != model {tuple(cur.shape)}")
            continue
        picked[key] = torch.from_numpy(arr.copy())
    if missing:
        raise FormatError(f"checkpoint {checkpoint_path} lacks front-end tensors: {missing[:5]}")
    if mismatched:
        raise FormatError("front-end shape mismatch: " + "; ".join(mismatched[:3]))
    model.frontend.load_state_dict(picked)
    return model
