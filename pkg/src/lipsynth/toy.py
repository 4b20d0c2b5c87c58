"""Procedural toy corpus for smoke tests and the end-to-end pipeline.

Every word in a 20-word lexicon gets a 5-bit visual code: five frames whose
mouth opening is driven by the code bits, then one closed separator frame.
Audio carries the same information redundantly (one tone per word, amplitude
tracking the opening), so the corpus supports both recognizer overfitting and
speech-driven animation. All draws are seeded; rebuilding with the same
config is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .media import Manifest, ManifestEntry, VideoClip, Waveform, write_clip, write_wav

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet "
    "kilo lima mike november oscar papa quebec romeo sierra tango"
).split()

RAW_SIZE = 120          # raw frames carry a border; the mouth bbox is 96x96
BBOX = (12, 12, 96, 96)
FRAMES_PER_WORD = 6     # 5 code frames + 1 closed separator
CODE_BITS = 5
SAMPLES_PER_FRAME = 640  # 40 ms at 16 kHz


@dataclass
class ToyConfig:
    out_dir: Path
    seed: int = 0
    fps: float = 25.0
    words: int = 20
    utterances: int = 20
    test_utterances: int = 6
    av_clips: int = 5
    speech_clips: int = 10
    faces: int = 4
    words_min: int = 2
    words_max: int = 4

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if not 1 <= self.words <= len(WORDS):
            raise ValueError(f"toy lexicon supports 1..{len(WORDS)} words, got {self.words}")
        if self.words_min < 1 or self.words_max < self.words_min:
            raise ValueError("need 1 <= words_min <= words_max")


@dataclass
class Identity:
    bg: int
    dx: int
    dy: int


def identity_for(seed: int, speaker: int) -> Identity:
    rng = np.random.default_rng((seed, 1000 + speaker))
    return Identity(
        bg=int(rng.integers(50, 95)),
        dx=int(rng.integers(-4, 5)),
        dy=int(rng.integers(-4, 5)),
    )


def word_openings(word_index: int) -> list:
    """Per-frame mouth openings in [0, 1] for one word plus its separator."""
    bits = [(word_index >> b) & 1 for b in range(CODE_BITS)]
    return [0.15 + 0.65 * bit for bit in bits] + [0.0]


def _ellipse_mask(cy, cx, ry, rx):
    yy, xx = np.mgrid[0:96, 0:96]
    return ((yy - cy) / max(ry, 1e-6)) ** 2 + ((xx - cx) / max(rx, 1e-6)) ** 2 <= 1.0


def render_mouth(opening: float, ident: Identity) -> np.ndarray:
    """One 96x96 frame: bright lip ring around a dark opening."""
    frame = np.full((96, 96), ident.bg, dtype=np.uint8)
    cy, cx = 56 + ident.dy, 48 + ident.dx
    ry_outer = 10 + round(22 * opening)
    frame[_ellipse_mask(cy, cx, ry_outer, 30)] = 190
    frame[_ellipse_mask(cy, cx, max(1, ry_outer - 7), 22)] = 25
    return frame


def _pad_raw(frame: np.ndarray, ident: Identity) -> np.ndarray:
    raw = np.full((RAW_SIZE, RAW_SIZE), ident.bg, dtype=np.uint8)
    x, y, w, h = BBOX
    raw[y : y + h, x : x + w] = frame
    return raw


def utterance_openings(word_indices) -> list:
    out = []
    for w in word_indices:
        out.extend(word_openings(w))
    return out


def utterance_audio(word_indices, seed: int) -> Waveform:
    """Phase-continuous tones, one frequency per word, amplitude tracking the
    mouth opening; separators drop to a quiet hum."""
    rng = np.random.default_rng((seed, 3000))
    blocks = []
    phase = 0.0
    for w in word_indices:
        freq = 220.0 + 35.0 * w
        for k, opening in enumerate(word_openings(w)):
            f = freq if k < CODE_BITS else 110.0
            amp = 0.12 + 0.7 * opening if k < CODE_BITS else 0.01
            t = np.arange(SAMPLES_PER_FRAME) / 16000.0
            blocks.append(amp * np.sin(2 * np.pi * f * t + phase))
            phase += 2 * np.pi * f * SAMPLES_PER_FRAME / 16000.0
    samples = np.concatenate(blocks) + 0.003 * rng.standard_normal(
        len(blocks) * SAMPLES_PER_FRAME
    )
    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate=16000)


def utterance_frames(word_indices, ident: Identity, raw: bool = True) -> np.ndarray:
    frames = [render_mouth(o, ident) for o in utterance_openings(word_indices)]
    if raw:
        frames = [_pad_raw(f, ident) for f in frames]
    return np.stack(frames)


def draw_utterances(cfg: ToyConfig, count: int, stream: int) -> list:
    """`count` word-index lists; the first pass deals every lexicon word out
    so small corpora still cover the whole vocabulary."""
    rng = np.random.default_rng((cfg.seed, stream))
    lengths = [int(rng.integers(cfg.words_min, cfg.words_max + 1)) for _ in range(count)]
    pool = list(rng.permutation(cfg.words))
    utts = []
    for n in lengths:
        words = []
        while len(words) < n and pool:
            words.append(int(pool.pop()))
        while len(words) < n:
            words.append(int(rng.integers(cfg.words)))
        utts.append(words)
    return utts


def _transcript(word_indices) -> str:
    return " ".join(WORDS[w] for w in word_indices)


def _write_av_split(cfg, name, utts, stream, split="train"):
    root = cfg.out_dir / name
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng((cfg.seed, stream))
    entries = []
    for k, words in enumerate(utts):
        ident = identity_for(cfg.seed, int(rng.integers(cfg.faces)))
        uid = f"{name}_{k:03d}"
        np.save(root / f"{uid}.npy", utterance_frames(words, ident, raw=True))
        write_wav(utterance_audio(words, cfg.seed + k + stream), root / f"{uid}.wav")
        entries.append(ManifestEntry(
            id=uid, split=split, video_path=f"{uid}.npy", audio_path=f"{uid}.wav",
            transcript=_transcript(words), bbox=BBOX,
            frames=len(words) * FRAMES_PER_WORD,
        ))
    manifest = Manifest(entries, base_dir=root)
    manifest.save(root / "manifest.jsonl")
    return root / "manifest.jsonl"


def build_toy_corpus(cfg: ToyConfig, log=print) -> dict:
    """Write all five datasets; returns manifest paths keyed by dataset name."""
    paths = {}
    paths["d_av"] = _write_av_split(
        cfg, "d_av", draw_utterances(cfg, cfg.av_clips, 10), stream=11
    )
    paths["d_real_train"] = _write_av_split(
        cfg, "d_real_train", draw_utterances(cfg, cfg.utterances, 20), stream=21
    )
    paths["d_real_test"] = _write_av_split(
        cfg, "d_real_test", draw_utterances(cfg, cfg.test_utterances, 30), stream=31,
        split="test",
    )

    speech_root = cfg.out_dir / "d_s"
    speech_root.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, words in enumerate(draw_utterances(cfg, cfg.speech_clips, 40)):
        uid = f"s{k:03d}"
        write_wav(utterance_audio(words, cfg.seed + 40 + k), speech_root / f"{uid}.wav")
        entries.append(ManifestEntry(
            id=uid, split="train", audio_path=f"{uid}.wav", transcript=_transcript(words),
        ))
    Manifest(entries, base_dir=speech_root).save(speech_root / "manifest.jsonl")
    paths["d_s"] = speech_root / "manifest.jsonl"

    face_root = cfg.out_dir / "d_f"
    face_root.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(cfg.faces):
        ident = identity_for(cfg.seed, k)
        raw = _pad_raw(render_mouth(0.0, ident), ident)
        uid = f"f{k:02d}"
        Image.fromarray(raw, mode="L").save(face_root / f"{uid}.png")
        entries.append(ManifestEntry(id=uid, split="train", image_path=f"{uid}.png", bbox=BBOX))
    Manifest(entries, base_dir=face_root).save(face_root / "manifest.jsonl")
    paths["d_f"] = face_root / "manifest.jsonl"

    log(f"toy corpus under {cfg.out_dir}: " + ", ".join(
        f"{name} ({p.parent.name})" for name, p in paths.items()
    ))
    return paths


def preprocess_av_manifest(raw_manifest: Manifest, out_dir, fps: float = 25.0, log=print) -> Path:
    """Raw frames (.npy stacks + bbox) -> standard 96x96 clips + copied audio.

    The processed dataset is self-contained: audio files are copied next to
    the clips so the output manifest resolves on its own.
    """
    from .media import crop_mouth, load_wav

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in raw_manifest.entries:
        raw = np.load(raw_manifest.resolve(entry.video_path))
        bbox = entry.bbox if entry.bbox is not None else (0, 0, raw.shape[2], raw.shape[1])
        frames = np.stack([crop_mouth(f, bbox) for f in raw])
        clip = VideoClip(frames=frames, fps=fps)
        write_clip(clip, out_dir / f"{entry.id}.npz")
        new = ManifestEntry(
            id=entry.id, split=entry.split, video_path=f"{entry.id}.npz",
            transcript=entry.transcript, frames=clip.num_frames,
        )
        if entry.audio_path is not None:
            wave = load_wav(raw_manifest.resolve(entry.audio_path))
            write_wav(wave, out_dir / f"{entry.id}.wav")
            new.audio_path = f"{entry.id}.wav"
        entries.append(new)
    manifest = Manifest(entries, base_dir=out_dir)
    path = out_dir / "manifest.jsonl"
    manifest.save(path)
    log(f"preprocessed {len(entries)} clips -> {out_dir}")
    return path
