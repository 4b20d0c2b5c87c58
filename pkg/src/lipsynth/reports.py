"""Domain-mismatch assessment and report rendering.

The mismatch grid compares two recognizers (trained on real data only, and on
real plus synthetic) across two test sets (the real test set, and a synthetic
twin built by driving the lip animator with each test utterance's speech and
first video frame). Generation failures drop the utterance from both test
variants so every cell scores the same utterance list.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lipgen.models import generate
from .media import (
    FormatError,
    Manifest,
    ManifestEntry,
    RotationSequence,
    SpeechChunks,
    chunk_speech,
    read_clip,
    load_wav,
    write_clip,
)
from .scoring import WerReport, WerRow, evaluate, vsr_transcriber

MODEL_TAGS = ("real-only", "real+synth")
TEST_TAGS = ("real", "synthetic")


@dataclass
class MismatchReport:
    """2x2 grid of WER reports: model condition x test condition."""

    cells: dict = field(default_factory=dict)  # (model_tag, test_tag) -> WerReport
    excluded: list = field(default_factory=list)  # ids dropped to keep cells paired

    def validate(self) -> None:
        missing = [
            (m, t) for m in MODEL_TAGS for t in TEST_TAGS if (m, t) not in self.cells
        ]
        if missing:
            raise FormatError(f"mismatch report missing cells: {missing}")

    def wer(self, model_tag: str, test_tag: str) -> float:
        return self.cells[(model_tag, test_tag)].wer

    def rows(self) -> list:
        """Flat per-cell rows in a fixed order, ready for CSV."""
        out = []
        for m in MODEL_TAGS:
            for t in TEST_TAGS:
                if (m, t) not in self.cells:
                    continue
                cell = self.cells[(m, t)]
                out.append({
                    "model": m, "test_set": t, "wer": cell.wer,
                    "errors": cell.total_errors, "ref_words": cell.total_ref_words,
                    "utterances": len(cell.rows),
                })
        return out

    def save_json(self, path) -> None:
        obj = {
            "excluded": list(self.excluded),
            "cells": {
                f"{m}|{t}": {
                    "wer": cell.wer, "errors": cell.total_errors,
                    "ref_words": cell.total_ref_words,
                    "utterances": [r.to_json() for r in cell.rows],
                }
                for (m, t), cell in self.cells.items()
            },
        }
        Path(path).write_text(json.dumps(obj, indent=2, ensure_ascii=False))

    @classmethod
    def load_json(cls, path) -> "MismatchReport":
        obj = json.loads(Path(path).read_text())
        report = cls(excluded=list(obj.get("excluded", [])))
        for key, cell in obj["cells"].items():
            m, _, t = key.partition("|")
            report.cells[(m, t)] = WerReport(
                rows=[WerRow.from_json(u) for u in cell["utterances"]]
            )
        return report


def build_synthetic_test(gen, real_test: Manifest, out_dir, log=print):
    """Synthetic twin of a real test set: same speech, same transcript, video
    regenerated from each utterance's first frame.

    Returns (synthetic manifest, excluded ids). A clip that fails to generate
    is excluded rather than aborting; the caller drops it from the real side
    too so the comparison stays paired.
    """
    real_test.validate_role("real")
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    excluded = []
    for entry in real_test.entries:
        if entry.audio_path is None:
            raise FormatError(f"test entry {entry.id} has no audio to drive the generator")
        try:
            clip = read_clip(real_test.resolve(entry.video_path))
            wave = load_wav(real_test.resolve(entry.audio_path))
            chunks = chunk_speech(wave, clip.fps)
            n = min(chunks.num_chunks, clip.frames.shape[0])
            speech = SpeechChunks(
                chunks.chunks[:n], sample_rate=chunks.sample_rate,
                window_ms=chunks.window_ms, stride_ms=chunks.stride_ms,
            )
            synth = generate(
                gen, clip.frames[0], speech, RotationSequence.identity(n), fps=clip.fps
            )
            path = clip_dir / f"{entry.id}.npz"
            write_clip(synth, path)
        except Exception as exc:  # noqa: BLE001 - isolate per-utterance failures
            excluded.append(entry.id)
            log(f"synthetic test: skipping {entry.id}: {exc}")
            continue
        entries.append(ManifestEntry(
            id=entry.id, split="test", video_path=str(path.relative_to(out_dir)),
            transcript=entry.transcript, frames=synth.frames.shape[0],
            extra={"source_id": entry.id},
        ))
    manifest = Manifest(entries, base_dir=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest, excluded


def mismatch_assessment(
    model_real,
    model_mix,
    real_test: Manifest,
    gen,
    vocab,
    out_dir,
    beam: int = 1,
    transform=None,
    log=print,
) -> MismatchReport:
    """Fill the 2x2 model-by-test WER grid with shared decode settings."""
    out_dir = Path(out_dir)
    synth_test, excluded = build_synthetic_test(gen, real_test, out_dir / "synthetic_test", log=log)
    dropped = set(excluded)
    real_kept = Manifest(
        [e for e in real_test.entries if e.id not in dropped], base_dir=real_test.base_dir
    )

    models = {"real-only": model_real, "real+synth": model_mix}
    tests = {"real": real_kept, "synthetic": synth_test}
    report = MismatchReport(excluded=excluded)
    for m_tag, model in models.items():
        transcribe = vsr_transcriber(model, vocab, beam=beam, transform=transform)
        for t_tag, manifest in tests.items():
            report.cells[(m_tag, t_tag)] = evaluate(
                transcribe, manifest, tag=f"{m_tag}|{t_tag}", log=log
            )
    report.validate()
    report.save_json(out_dir / "mismatch.json")
    return report


CSV_FIELDS = ["model", "test_set", "wer", "errors", "ref_words", "utterances"]


def write_mismatch_csv(report: MismatchReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for row in report.rows():
            # repr round-trips float64 exactly, so the CSV really is the
            # source of truth for the plotted values
            w.writerow({**row, "wer": repr(row["wer"])})


def read_mismatch_csv(path) -> list:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        row["wer"] = float(row["wer"])
    return rows


def plot_mismatch(csv_path, svg_path) -> bool:
    """Grouped bars from the CSV (one group per test set, one bar per model).

    Returns False without writing anything when the CSV holds no rows; the
    CSV stays the source of truth either way.
    """
    rows = read_mismatch_csv(csv_path)
    if not rows:
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    test_tags = [t for t in TEST_TAGS if any(r["test_set"] == t for r in rows)]
    model_tags = [m for m in MODEL_TAGS if any(r["model"] == m for r in rows)]
    by_key = {(r["model"], r["test_set"]): r["wer"] for r in rows}

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    x = np.arange(len(test_tags))
    width = 0.8 / max(1, len(model_tags))
    for k, m in enumerate(model_tags):
        vals = [by_key.get((m, t), 0.0) for t in test_tags]
        ax.bar(x + (k - (len(model_tags) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{t} test" for t in test_tags])
    ax.set_ylabel("WER")
    ax.set_title("Domain mismatch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
    return True


def plot_history(history_csv, svg_path) -> bool:
    """Loss curves from a training history CSV (step column + one line per
    remaining numeric column). Returns False when there is nothing to plot."""
    history_csv = Path(history_csv)
    if not history_csv.exists():
        return False
    with open(history_csv) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [float(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    for name in rows[0]:
        if name == "step":
            continue
        try:
            vals = [float(r[name]) for r in rows]
        except (TypeError, ValueError):
            continue
        ax.plot(steps, vals, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    ax.set_title("Training curves")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
    return True


def emit_plots(report: MismatchReport, out_dir, history_csv=None, log=print) -> dict:
    """CSV first, plots rendered from the re-parsed CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    csv_path = out_dir / "mismatch.csv"
    write_mismatch_csv(report, csv_path)
    written["csv"] = csv_path
    svg_path = out_dir / "mismatch.svg"
    if plot_mismatch(csv_path, svg_path):
        written["plot"] = svg_path

    if history_csv is not None:
        curve_path = out_dir / "losses.svg"
        if plot_history(history_csv, curve_path):
            written["curves"] = curve_path
    log("report files: " + ", ".join(str(p) for p in written.values()))
    return written
