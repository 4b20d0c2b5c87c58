"""Word error rate scoring and utterance-level evaluation.

The normalizer is pinned (lowercase, strip punctuation except apostrophes,
whitespace tokenize) because WER is meaningless without one. Counts come from
a full DP matrix with a fixed backtrace tie order, so the S/I/D decomposition
is reproducible, not just the distance.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .media import Manifest, VideoClip, read_clip
from .tokenizer import Vocab, decode
from .vsr.frontend import normalize_frames
from .vsr.model import VsrModel
from .vsr.search import beam_decode, greedy_decode

_KEEP = re.compile(r"[^a-z0-9' ]+")


def normalize_text(text: str) -> list[str]:
    """Lowercase, drop punctuation except apostrophes, split on whitespace."""
    cleaned = _KEEP.sub(" ", text.lower())
    return cleaned.split()


def wer_counts(ref: list[str], hyp: list[str]):
    """(substitutions, insertions, deletions) from a unit-cost alignment.

    Backtrace ties resolve substitution > deletion > insertion so the
    decomposition is deterministic even when several alignments share the
    minimal distance.
    """
    r, h = len(ref), len(hyp)
    d = np.zeros((r + 1, h + 1), dtype=np.int64)
    d[:, 0] = np.arange(r + 1)
    d[0, :] = np.arange(h + 1)
    for i in range(1, r + 1):
        for j in range(1, h + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = d[i - 1, j] + 1
            ins = d[i, j - 1] + 1
            d[i, j] = min(sub, dele, ins)
    subs = inss = dels = 0
    i, j = r, h
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return int(subs), int(inss), int(dels)


@dataclass
class WerRow:
    utt_id: str
    ref: str
    hyp: str
    ref_words: int
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / max(1, self.ref_words)

    def to_json(self) -> dict:
        return {
            "id": self.utt_id, "ref": self.ref, "hyp": self.hyp,
            "ref_words": self.ref_words, "substitutions": self.substitutions,
            "insertions": self.insertions, "deletions": self.deletions,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WerRow":
        return cls(
            utt_id=obj["id"], ref=obj["ref"], hyp=obj["hyp"], ref_words=obj["ref_words"],
            substitutions=obj["substitutions"], insertions=obj["insertions"],
            deletions=obj["deletions"],
        )


def score_utterance(utt_id: str, ref_text: str, hyp_text: str) -> WerRow:
    ref = normalize_text(ref_text)
    hyp = normalize_text(hyp_text)
    s, i, d = wer_counts(ref, hyp)
    return WerRow(utt_id, ref_text, hyp_text, len(ref), s, i, d)


@dataclass
class WerReport:
    rows: list = field(default_factory=list)

    @property
    def total_errors(self) -> int:
        return sum(r.errors for r in self.rows)

    @property
    def total_ref_words(self) -> int:
        return sum(r.ref_words for r in self.rows)

    @property
    def wer(self) -> float:
        """Corpus WER: pooled error counts over pooled reference words."""
        ref = self.total_ref_words
        if ref == 0:
            return 0.0 if self.total_errors == 0 else float("inf")
        return self.total_errors / ref

    def save_json(self, path) -> None:
        obj = {
            "wer": self.wer, "total_errors": self.total_errors,
            "total_ref_words": self.total_ref_words,
            "utterances": [r.to_json() for r in self.rows],
        }
        Path(path).write_text(json.dumps(obj, indent=2, ensure_ascii=False))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "ref_words", "substitutions", "insertions", "deletions", "wer"])
            for r in self.rows:
                w.writerow([r.utt_id, r.ref_words, r.substitutions, r.insertions, r.deletions,
                            f"{r.wer:.6f}"])


def score_pairs(pairs) -> WerReport:
    """pairs: iterable of (id, ref text, hyp text)."""
    return WerReport(rows=[score_utterance(u, r, h) for u, r, h in pairs])


def vsr_transcriber(model: VsrModel, vocab: Vocab, beam: int = 1, transform=None):
    """Bind a trained recognizer into a clip -> text callable."""
    model.eval()

    def transcribe(clip: VideoClip) -> str:
        if transform is not None:
            clip = transform(clip)
        clips = normalize_frames(clip.frames, model.cfg.frontend.mean, model.cfg.frontend.std)
        with torch.no_grad():
            z_e = model.features(clips).z_e
            if beam <= 1:
                result = greedy_decode(model, z_e)
            else:
                result = beam_decode(model, z_e, beam)
        return decode(vocab, result.ids)

    return transcribe


def evaluate(transcribe, manifest: Manifest, out_dir=None, tag: str = "eval", log=print) -> WerReport:
    """Decode every utterance in a labeled video manifest and score it."""
    manifest.validate_role("real")
    rows = []
    for entry in manifest.entries:
        clip = read_clip(manifest.resolve(entry.video_path))
        hyp = transcribe(clip)
        rows.append(score_utterance(entry.id, entry.transcript, hyp))
    report = WerReport(rows=rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.save_json(out_dir / f"{tag}.json")
        report.save_csv(out_dir / f"{tag}.csv")
    log(f"{tag}: WER {report.wer:.4f} ({report.total_errors} errors / {report.total_ref_words} words, "
        f"{len(report.rows)} utts)")
    return report
