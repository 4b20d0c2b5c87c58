"""Shared audio/video data model, file formats, and preprocessing.

Everything downstream (generation and recognition) meets in one input space:
96x96 single-channel clips at a fixed frame rate, paired with overlapping
200 ms speech windows, one window per video frame.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_SIZE = 96
DEFAULT_FPS = 25.0
DEFAULT_SAMPLE_RATE = 16000
WINDOW_MS = 200
STRIDE_MS = 40

CLIP_MAGIC = b"SVSR"
CLIP_HEADER = "<4sIHHBf"  # magic, frames u32, height u16, width u16, channels u8, fps f32
CLIP_HEADER_SIZE = struct.calcsize(CLIP_HEADER)

ROTATION_TOL = 1e-5


class FormatError(ValueError):
    """A file or value violates one of the on-disk or in-memory contracts."""


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise FormatError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise FormatError(f"sample_rate={self.sample_rate} must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError("waveform contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise FormatError("waveform amplitude exceeds 1.0")

    @property
    def num_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass
class VideoClip:
    """T x 96 x 96 uint8 frames, single channel."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.dtype != np.uint8:
            raise FormatError(f"frames must be uint8, got {self.frames.dtype}")
        if self.frames.ndim != 3:
            raise FormatError(f"frames must be T x H x W, got shape {self.frames.shape}")
        t, h, w = self.frames.shape
        if t < 1:
            raise FormatError("clip must contain at least one frame")
        if h != FRAME_SIZE or w != FRAME_SIZE:
            raise FormatError(f"frames must be {FRAME_SIZE}x{FRAME_SIZE}, got {h}x{w}")
        if self.fps <= 0:
            raise FormatError(f"fps={self.fps} must be positive")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class SpeechChunks:
    """Overlapping speech windows, one per video frame: n x L samples."""

    chunks: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    window_ms: int = WINDOW_MS
    stride_ms: int = STRIDE_MS

    def __post_init__(self):
        self.chunks = np.asarray(self.chunks, dtype=np.float64)
        if self.chunks.ndim != 2 or self.chunks.shape[0] < 1:
            raise FormatError(f"chunks must be n x L with n >= 1, got shape {self.chunks.shape}")
        expected = self.window_ms * self.sample_rate // 1000
        if self.chunks.shape[1] != expected:
            raise FormatError(
                f"chunk length {self.chunks.shape[1]} != window {expected} samples"
            )

    @property
    def num_chunks(self) -> int:
        return int(self.chunks.shape[0])

    @property
    def chunk_samples(self) -> int:
        return int(self.chunks.shape[1])


class RotationSequence:
    """Per-frame 3x3 rotation matrices, relative to the first frame."""

    def __init__(self, matrices: np.ndarray):
        mats = np.asarray(matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[1:] != (3, 3):
            raise FormatError(f"rotations must be T x 3 x 3, got shape {mats.shape}")
        for i, m in enumerate(mats):
            if abs(np.linalg.det(m) - 1.0) > ROTATION_TOL:
                raise FormatError(f"rotation {i} has |det - 1| > {ROTATION_TOL}")
            if np.max(np.abs(m.T @ m - np.eye(3))) > ROTATION_TOL:
                raise FormatError(f"rotation {i} is not orthonormal within {ROTATION_TOL}")
        if np.max(np.abs(mats[0] - np.eye(3))) > ROTATION_TOL:
            raise FormatError("first rotation must be the identity")
        self.matrices = mats

    def __len__(self) -> int:
        return int(self.matrices.shape[0])

    @classmethod
    def identity(cls, n: int) -> "RotationSequence":
        return cls(np.broadcast_to(np.eye(3), (n, 3, 3)).copy())

    def flattened(self) -> np.ndarray:
        """T x 9 view used as the per-frame conditioning embedding."""
        return self.matrices.reshape(len(self), 9)


# ---------------------------------------------------------------------------
# WAV i/o


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file and rescale to [-1, 1]."""
    with wave.open(str(path), "rb") as f:
        channels = f.getnchannels()
        if channels != 1:
            raise FormatError(f"channels={channels} unsupported, expected mono")
        sampwidth = f.getsampwidth()
        if sampwidth != 2:
            raise FormatError(f"sample width={8 * sampwidth} bit unsupported, expected 16-bit PCM")
        if f.getcomptype() != "NONE":
            raise FormatError(f"compression={f.getcomptype()} unsupported, expected PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(w: Waveform, path) -> None:
    """Write a Waveform as mono 16-bit PCM."""
    ints = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# Speech chunking


def chunk_speech(w: Waveform, fps: float = DEFAULT_FPS) -> SpeechChunks:
    """Cut a waveform into one 200 ms window per video frame.

    Window k is centered on its frame's grid point at (k + 0.5) strides and
    zero-padded where it leaves the waveform. The stride must equal the frame
    period so chunk count and frame count line up one-to-one.
    """
    if w.num_samples == 0:
        raise FormatError("cannot chunk an empty waveform")
    if abs(fps * STRIDE_MS - 1000.0) > 1e-6:
        raise FormatError(f"fps={fps} incompatible with {STRIDE_MS} ms stride")
    length = w.sample_rate * WINDOW_MS // 1000
    n = max(1, int(np.floor(w.duration_s * fps + 0.5)))
    stride = w.sample_rate / fps
    chunks = np.zeros((n, length), dtype=np.float64)
    half = length // 2
    for k in range(n):
        center = int(round((k + 0.5) * stride))
        start = center - half
        lo = max(0, start)
        hi = min(w.num_samples, start + length)
        if hi > lo:
            chunks[k, lo - start : hi - start] = w.samples[lo:hi]
    return SpeechChunks(chunks=chunks, sample_rate=w.sample_rate)


# ---------------------------------------------------------------------------
# Mouth cropping

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def luma(frame: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an H x W x 3 image; grayscale passes through."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    raise FormatError(f"expected H x W or H x W x 3 image, got shape {arr.shape}")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D float image with half-pixel-centered bilinear sampling."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def crop_mouth(frame: np.ndarray, bbox) -> np.ndarray:
    """Crop a mouth bounding box and map it into the 96x96 grayscale space.

    bbox is (x, y, w, h) in pixel coordinates. Color input is converted to
    luma before the bilinear resize. A 96x96 grayscale bbox passes through
    pixel-identically.
    """
    frame = np.asarray(frame)
    x, y, w, h = (int(v) for v in bbox)
    fh, fw = frame.shape[:2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise FormatError(f"bbox {(x, y, w, h)} outside frame bounds {fw}x{fh}")
    region = frame[y : y + h, x : x + w]
    if region.ndim == 2 and region.shape == (FRAME_SIZE, FRAME_SIZE) and region.dtype == np.uint8:
        return region.copy()
    gray = luma(region)
    resized = bilinear_resize(gray, FRAME_SIZE, FRAME_SIZE)
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Clip container


def write_clip(clip: VideoClip, path) -> None:
    """Write a clip in the raw container: fixed header followed by frame bytes."""
    t, h, w = clip.frames.shape
    header = struct.pack(CLIP_HEADER, CLIP_MAGIC, t, h, w, 1, clip.fps)
    with open(path, "wb") as f:
        f.write(header)
        f.write(clip.frames.tobytes())


def read_clip(path) -> VideoClip:
    """Read a clip container; inverse of write_clip, bit-exact."""
    with open(path, "rb") as f:
        header = f.read(CLIP_HEADER_SIZE)
        if len(header) < CLIP_HEADER_SIZE:
            raise FormatError(f"truncated header in {path}")
        magic, t, h, w, channels, fps = struct.unpack(CLIP_HEADER, header)
        if magic != CLIP_MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}")
        if channels != 1:
            raise FormatError(f"channels={channels} unsupported in {path}")
        payload = f.read(t * h * w)
    if len(payload) < t * h * w:
        raise FormatError(f"truncated payload in {path}: {len(payload)} of {t * h * w} bytes")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w).copy()
    return VideoClip(frames=frames, fps=fps)


def clip_num_frames(path) -> int:
    """Frame count from the container header without reading the payload."""
    with open(path, "rb") as f:
        header = f.read(CLIP_HEADER_SIZE)
    if len(header) < CLIP_HEADER_SIZE:
        raise FormatError(f"truncated header in {path}")
    magic, t, _, _, _, _ = struct.unpack(CLIP_HEADER, header)
    if magic != CLIP_MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    return t


# ---------------------------------------------------------------------------
# Frame sampling


def sample_frame_indices(num_frames: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct frame indices, uniform without replacement, in sorted order."""
    if not 1 <= k <= num_frames:
        raise FormatError(f"cannot sample k={k} frames from a {num_frames}-frame clip")
    idx = rng.choice(num_frames, size=k, replace=False)
    return np.sort(idx)


def sample_frames(clip: VideoClip, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly sample k distinct frames from a clip (sorted by index)."""
    idx = sample_frame_indices(clip.num_frames, k, rng)
    return clip.frames[idx]


# ---------------------------------------------------------------------------
# Manifests

ENTRY_FIELDS = ("id", "split", "video_path", "audio_path", "image_path", "transcript", "bbox", "frames")

ROLE_REQUIREMENTS = {
    "real": ("video_path", "transcript"),
    "av": ("video_path", "audio_path"),
    "speech": ("audio_path", "transcript"),
    "faces": ("image_path",),
}


@dataclass
class ManifestEntry:
    id: str
    split: str = "train"
    video_path: str | None = None
    audio_path: str | None = None
    image_path: str | None = None
    transcript: str | None = None
    bbox: tuple[int, int, int, int] | None = None
    frames: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        obj = {"id": self.id, "split": self.split}
        for key in ("video_path", "audio_path", "image_path", "transcript", "frames"):
            val = getattr(self, key)
            if val is not None:
                obj[key] = val
        if self.bbox is not None:
            obj["bbox"] = list(self.bbox)
        obj.update(self.extra)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        if "id" not in obj:
            raise FormatError("manifest entry missing 'id'")
        known = {k: obj[k] for k in ENTRY_FIELDS if k in obj}
        bbox = known.pop("bbox", None)
        if bbox is not None:
            bbox = tuple(int(v) for v in bbox)
        extra = {k: v for k, v in obj.items() if k not in ENTRY_FIELDS}
        return cls(bbox=bbox, extra=extra, **known)


class Manifest:
    """An ordered list of dataset entries backed by a JSON-lines file.

    Relative paths inside entries resolve against the manifest's directory.
    """

    def __init__(self, entries: list[ManifestEntry], base_dir: Path | None = None):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise FormatError(f"duplicate manifest ids: {dup[:5]}")
        self.entries = list(entries)
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def filter_split(self, split: str) -> "Manifest":
        return Manifest([e for e in self.entries if e.split == split], base_dir=self.base_dir)

    def validate_role(self, role: str, check_paths: bool = True) -> None:
        """Check that every entry carries the fields its dataset role requires."""
        if role not in ROLE_REQUIREMENTS:
            raise FormatError(f"unknown dataset role {role!r}, expected one of {sorted(ROLE_REQUIREMENTS)}")
        required = ROLE_REQUIREMENTS[role]
        for e in self.entries:
            for fieldname in required:
                if getattr(e, fieldname) is None:
                    raise FormatError(f"entry {e.id!r} missing {fieldname!r} required for role {role!r}")
            if check_paths:
                for fieldname in ("video_path", "audio_path", "image_path"):
                    val = getattr(e, fieldname)
                    if val is not None and fieldname in required and not self.resolve(val).exists():
                        raise FormatError(f"entry {e.id!r}: path {val!r} does not resolve")

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(e.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        self.base_dir = path.parent

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        entries = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as err:
                    raise FormatError(f"{path}:{lineno}: invalid JSON: {err}") from err
                entries.append(ManifestEntry.from_json(obj))
        return cls(entries, base_dir=path.parent)
