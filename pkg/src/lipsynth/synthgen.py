"""Synthetic dataset generation: labeled speech + face pool -> labeled video.

Every (speech clip, replica) pair draws its face from a seed derived as
(seed, speech index, replica index), so regeneration of any subset lands on
the same assignment regardless of order. Output clips are content-hashed for
resumable jobs; transcripts are carried over verbatim.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import checkpoint_hash
from .lipgen.models import Generator, generate
from .media import (
    DEFAULT_FPS,
    FRAME_SIZE,
    FormatError,
    Manifest,
    ManifestEntry,
    RotationSequence,
    Waveform,
    chunk_speech,
    crop_mouth,
    load_wav,
    write_clip,
)

# speech longer than the duration cap is skipped at ingest, not truncated
DURATION_PRESETS = {"short": 6.0, "long": 20.0}


@dataclass
class SynthJob:
    speech_manifest: Manifest  # labeled speech: audio + transcript
    face_manifest: Manifest  # face pool: image paths
    out_dir: Path
    checkpoint_path: Path | None = None
    faces_per_clip: int = 1
    seed: int = 0
    max_duration_s: float = DURATION_PRESETS["short"]
    max_failure_fraction: float = 0.1
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.faces_per_clip < 1:
            raise ValueError(f"faces_per_clip must be >= 1, got {self.faces_per_clip}")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ValueError(f"max_failure_fraction {self.max_failure_fraction} outside [0, 1]")


def load_face(manifest: Manifest, entry: ManifestEntry) -> np.ndarray:
    """Face image file -> 96x96 grayscale uint8, cropped to the mouth bbox."""
    path = manifest.resolve(entry.image_path)
    with Image.open(path) as img:
        arr = np.asarray(img)
    bbox = entry.bbox
    if bbox is None:
        h, w = arr.shape[:2]
        bbox = (0, 0, w, h)
    return crop_mouth(arr, tuple(bbox))


def sample_face_entry(face_manifest: Manifest, rng: np.random.Generator) -> ManifestEntry:
    """Uniform draw from the face pool (manifest entry only, no file IO)."""
    if len(face_manifest) == 0:
        raise FormatError("face pool is empty")
    return face_manifest.entries[int(rng.integers(len(face_manifest)))]


def sample_face(face_manifest: Manifest, rng: np.random.Generator):
    """Uniform draw from the face pool; returns (entry, 96x96 image)."""
    entry = sample_face_entry(face_manifest, rng)
    return entry, load_face(face_manifest, entry)


def synthesize_clip(gen: Generator, speech: Waveform, face: np.ndarray, fps: float = DEFAULT_FPS):
    """Speech + one face image -> generated clip with identity rotations."""
    chunks = chunk_speech(speech, fps=fps)
    rotations = RotationSequence.identity(chunks.num_chunks)
    return generate(gen, face, chunks, rotations, fps=fps)


def assign_faces(face_manifest: Manifest, seed: int, speech_index: int, n_per: int) -> list:
    """The replica faces for one speech clip, distinct while the pool allows.

    Seeded per speech index, so any subset of the job can be regenerated in
    any order and land on the same assignment.
    """
    if len(face_manifest) == 0:
        raise FormatError("face pool is empty")
    rng = np.random.default_rng((seed, speech_index))
    pool = len(face_manifest)
    if n_per <= pool:
        idx = rng.choice(pool, size=n_per, replace=False)
    else:
        idx = rng.integers(pool, size=n_per)
    return [face_manifest.entries[int(i)] for i in idx]


@dataclass
class SynthResult:
    manifest: Manifest
    generated: int = 0
    skipped: int = 0  # already present with matching hash
    too_long: int = 0
    failures: list = field(default_factory=list)  # (entry id, replica, message)


def build_synth_dataset(job: SynthJob, gen: Generator, log=print) -> SynthResult:
    """Run the whole generation job; writes clips, sidecars, and a manifest.

    Resumable: a clip whose file exists and matches its recorded hash is not
    regenerated. Per-clip failures are logged and recorded; the job only
    fails when more than max_failure_fraction of planned clips failed.
    """
    job.speech_manifest.validate_role("speech")
    job.face_manifest.validate_role("faces")
    out_dir = Path(job.out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    ckpt_hash = checkpoint_hash(job.checkpoint_path) if job.checkpoint_path else "unsaved"

    hash_file = out_dir / "clip_hashes.json"
    known_hashes: dict = {}
    if hash_file.exists():
        known_hashes = json.loads(hash_file.read_text())

    result = SynthResult(manifest=Manifest([], base_dir=out_dir))
    entries = []
    planned = 0
    t0 = time.monotonic()
    error_log = open(out_dir / "errors.log", "a")
    try:
        for si, sp_entry in enumerate(job.speech_manifest.entries):
            wave = load_wav(job.speech_manifest.resolve(sp_entry.audio_path))
            if wave.duration_s > job.max_duration_s:
                result.too_long += 1
                continue
            face_entries = assign_faces(job.face_manifest, job.seed, si, job.faces_per_clip)
            for replica in range(job.faces_per_clip):
                planned += 1
                clip_id = f"{sp_entry.id}_f{replica}"
                clip_path = clip_dir / f"{clip_id}.svsr"
                rel_path = str(clip_path.relative_to(out_dir))
                try:
                    face_entry = face_entries[replica]
                    face = load_face(job.face_manifest, face_entry)
                    if clip_path.exists() and known_hashes.get(clip_id) == checkpoint_hash(clip_path):
                        result.skipped += 1
                    else:
                        clip = synthesize_clip(gen, wave, face, fps=job.fps)
                        write_clip(clip, clip_path)
                        known_hashes[clip_id] = checkpoint_hash(clip_path)
                        result.generated += 1
                    entries.append(
                        ManifestEntry(
                            id=clip_id,
                            split=sp_entry.split,
                            video_path=rel_path,
                            transcript=sp_entry.transcript,
                            extra={
                                "speech_id": sp_entry.id,
                                "face_id": face_entry.id,
                                "generator_hash": ckpt_hash,
                            },
                        )
                    )
                except Exception as exc:  # noqa: BLE001 - per-clip isolation is the point
                    result.failures.append((sp_entry.id, replica, str(exc)))
                    error_log.write(f"{clip_id}\t{exc}\n")
    finally:
        error_log.close()

    hash_file.write_text(json.dumps(known_hashes, indent=0, sort_keys=True))
    if planned and len(result.failures) / planned > job.max_failure_fraction:
        raise FormatError(
            f"{len(result.failures)} of {planned} clips failed "
            f"(> {job.max_failure_fraction:.0%}); see {out_dir / 'errors.log'}"
        )
    result.manifest = Manifest(entries, base_dir=out_dir)
    result.manifest.save(out_dir / "manifest.jsonl")
    dt = time.monotonic() - t0
    log(f"synth: {result.generated} generated, {result.skipped} reused, "
        f"{len(result.failures)} failed, {result.too_long} over {job.max_duration_s:.0f}s "
        f"({dt:.0f}s)")
    return result
