"""Flat run configuration: one declared key table, file + CLI overrides.

Every tunable default in the pipeline is addressable by a dotted key. The
effective mapping hashes to a short hex digest that names run directories and
is stamped into outputs, so artifacts stay attributable to the exact
configuration that produced them. Seeds are ordinary keys with fixed
defaults; nothing falls back to wall-clock state.
"""

from __future__ import annotations

import difflib
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

ENV_RUN_ROOT = "LIPSYNTH_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    kind: type
    help: str


def _k(name, default, help):
    return Key(name, default, type(default), help)


KEYS = [
    _k("seed", 0, "base rng seed shared by every stage"),
    _k("fps", 25.0, "video frame rate; must keep the 40 ms chunk stride"),
    _k("run.tag", "", "free-form label folded into the config hash, to keep runs with identical hyperparameters in separate directories"),
    _k("vocab.size", 64, "subword inventory size for train-vocab"),

    _k("lam.width_mult", 0.25, "channel scale for the animation stack (1.0 = full width)"),
    _k("lam.weights", "baseline", "loss-weight preset: baseline|lrs3-vsr-vl|lrs3-vsr-v|lrs3-vsr-l|avox"),
    _k("lam.steps", 200, "animation training steps"),
    _k("lam.window_frames", 75, "frames per training window"),
    _k("lam.frames_per_disc", 4, "frames sampled per frame-discriminator step"),
    _k("lam.lr_g", 1e-4, "generator learning rate"),
    _k("lam.lr_d_img", 1e-4, "frame-discriminator learning rate"),
    _k("lam.lr_d_seq", 1e-5, "sequence-discriminator learning rate"),
    _k("lam.ckpt_every", 100, "animation checkpoint interval"),

    _k("synth.n_per", 1, "face replicas generated per speech clip"),
    _k("synth.max_duration_s", 6.0, "skip speech clips longer than this many seconds"),
    _k("synth.max_failure_fraction", 0.1, "abort when more than this fraction of replicas fail"),

    _k("vsr.preset", "desk", "recognizer size: desk|small|base|large"),
    _k("vsr.ctc_weight", 0.1, "alpha blending CTC into the joint loss"),
    _k("vsr.dropout", 0.0, "recognizer dropout"),

    _k("train.steps", 500, "recognizer training steps"),
    _k("train.warmup_steps", 50, "linear warm-up steps"),
    _k("train.peak_lr", 3e-4, "peak learning rate"),
    _k("train.weight_decay", 0.01, "AdamW weight decay"),
    _k("train.grad_clip", 5.0, "gradient norm clip (0 disables)"),
    _k("train.frame_budget", 80, "max summed frames per batch"),
    _k("train.ckpt_every", 100, "recognizer checkpoint interval"),

    _k("aug.enabled", True, "train-time augmentation on/off"),
    _k("aug.hflip_prob", 0.5, "horizontal flip probability"),
    _k("aug.crop_size", 88, "random crop size (resized back to 96)"),
    _k("aug.max_time_masks", 1, "adaptive time masks per clip"),
    _k("aug.max_mask_fraction", 0.4, "max masked fraction of clip length"),

    _k("mix.weights", "", "comma-separated dataset mixing weights; empty = by size"),
    _k("decode.beam", 1, "beam width (1 = greedy)"),
    _k("decode.avg_last", 1, "average the last k checkpoints when decoding from a run dir"),

    _k("toy.words", 20, "lexicon size of the procedural corpus"),
    _k("toy.utterances", 20, "training utterances"),
    _k("toy.test_utterances", 6, "held-out utterances"),
    _k("toy.av_clips", 5, "audio-video pairs for animation training"),
    _k("toy.speech_clips", 10, "speech-only clips for synthesis"),
    _k("toy.faces", 4, "face images"),
    _k("toy.words_min", 2, "min words per utterance"),
    _k("toy.words_max", 4, "max words per utterance"),
]

KEY_TABLE = {k.name: k for k in KEYS}


def coerce(key: Key, raw):
    """Parse a raw string (or pass through a typed value) for one key."""
    if isinstance(raw, key.kind) and not (key.kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if key.kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if key.kind is int:
            return int(text, 10)
        if key.kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"config key {key.name} expects {key.kind.__name__}, got {raw!r}"
        ) from None


def _unknown(name: str) -> ConfigError:
    near = difflib.get_close_matches(name, KEY_TABLE, n=1)
    hint = f" (did you mean {near[0]}?)" if near else ""
    return ConfigError(f"unknown config key: {name}{hint}")


class RunConfig:
    """Immutable effective configuration over the declared key table."""

    def __init__(self, values: dict | None = None):
        merged = {k.name: k.default for k in KEYS}
        for name, raw in (values or {}).items():
            if name not in KEY_TABLE:
                raise _unknown(name)
            merged[name] = coerce(KEY_TABLE[name], raw)
        self._values = merged

    def __getitem__(self, name: str):
        if name not in KEY_TABLE:
            raise _unknown(name)
        return self._values[name]

    def items(self):
        return sorted(self._values.items())

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = dict(self._values)
        for name, raw in overrides.items():
            if name not in KEY_TABLE:
                raise _unknown(name)
            merged[name] = coerce(KEY_TABLE[name], raw)
        return RunConfig(merged)

    @property
    def hash(self) -> str:
        blob = "\n".join(f"{k}={v!r}" for k, v in self.items())
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def save(self, path) -> None:
        lines = [f"# config_hash: {self.hash}"]
        lines += [f"{k} = {v}" for k, v in self.items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        values = parse_config_file(path) if path is not None else {}
        cfg = cls(values)
        return cfg.with_overrides(overrides) if overrides else cfg


def parse_config_file(path) -> dict:
    """key = value lines; # comments and blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        name, _, raw = text.partition("=")
        values[name.strip()] = raw.strip()
    return values


def run_root(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(ENV_RUN_ROOT, DEFAULT_RUN_ROOT))


def make_run_dir(stage: str, cfg: RunConfig, root=None) -> Path:
    """Run directory keyed by stage and config hash; config saved inside."""
    out = run_root(root) / f"{stage}-{cfg.hash}"
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    return out
