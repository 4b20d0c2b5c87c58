"""Pipeline driver: one subcommand per stage, one run directory per invocation.

Every stage resolves its configuration the same way (defaults, then an
optional config file, then --key value overrides), writes the effective
config and a log into a run directory named by the config hash, and exits
nonzero with a categorized error line on failure. Stages consume artifacts
by path, so the pipeline stays scriptable and each output is attributable
to exactly one run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig, make_run_dir
from .media import FormatError, Manifest
from .tokenizer import Vocab, VocabError, train_vocab

STAGES = [
    "make-toy", "preprocess", "train-vocab", "train-lam", "gen-synth",
    "train-vsr", "decode", "eval", "mismatch", "report",
]


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path, producer: str):
        super().__init__(
            f"missing upstream artifact: {path} (produce it with `lipsynth {producer}`)"
        )


def require(path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def parse_overrides(rest: list) -> dict:
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or i + 1 >= len(rest):
            raise ConfigError(f"expected --key value override pairs, got {tok!r}")
        out[tok[2:]] = rest[i + 1]
        i += 2
    return out


def make_logger(run_dir: Path):
    log_path = run_dir / "log.txt"

    def log(*parts):
        line = " ".join(str(p) for p in parts)
        print(line)
        with open(log_path, "a") as f:
            f.write(line + "\n")

    return log


def start_run(stage: str, cfg: RunConfig, args):
    run_dir = make_run_dir(stage, cfg, args.run_root)
    (run_dir / "run.json").write_text(json.dumps({
        "stage": stage, "config_hash": cfg.hash, "argv": sys.argv[1:],
    }, indent=2))
    log = make_logger(run_dir)
    log(f"[{stage}] run dir {run_dir} (config {cfg.hash})")
    return run_dir, log


# ---------------------------------------------------------------- model glue

def build_vsr_config(cfg: RunConfig, vocab_size: int):
    from .vsr.model import VsrConfig

    presets = {
        "desk": VsrConfig.desk, "small": VsrConfig.small,
        "base": VsrConfig.base, "large": VsrConfig.large,
    }
    name = cfg["vsr.preset"]
    if name not in presets:
        raise ConfigError(f"vsr.preset must be one of {sorted(presets)}, got {name!r}")
    return dataclasses.replace(
        presets[name](vocab_size=vocab_size),
        ctc_weight=cfg["vsr.ctc_weight"], dropout=cfg["vsr.dropout"],
    )


def load_vocab(path) -> Vocab:
    return Vocab.load(require(path, "train-vocab"))


def load_vsr_model(model_path, cfg: RunConfig, vocab: Vocab):
    """Build the recognizer from a checkpoint file, or from a train-vsr run
    directory (averaging the last decode.avg_last checkpoints)."""
    from .checkpoint import average_checkpoints, load_model, select_last_checkpoints
    from .vsr.model import VsrModel

    model_path = require(model_path, "train-vsr")
    model = VsrModel(build_vsr_config(cfg, len(vocab.pieces)))
    if model_path.is_dir():
        found = sorted(model_path.glob("vsr_step*.ckpt"))
        if not found:
            raise MissingArtifactError(model_path / "vsr_step*.ckpt", "train-vsr")
        picked = select_last_checkpoints(found, cfg["decode.avg_last"])
        tensors = average_checkpoints(picked)
        state = {k: torch.from_numpy(np.asarray(v)) for k, v in tensors.items()}
        model.load_state_dict(state)
    else:
        load_model(model_path, model)
    model.eval()
    return model


def load_generator(checkpoint_path, cfg: RunConfig):
    from .checkpoint import load_model
    from .lipgen import Generator, GeneratorConfig

    path = require(checkpoint_path, "train-lam")
    gen = Generator(GeneratorConfig(width_mult=cfg["lam.width_mult"]))
    load_model(path, gen, prefix="gen.")
    gen.eval()
    return gen


def build_eval_transform(cfg: RunConfig):
    if not cfg["aug.enabled"]:
        return None
    from .trainer import AugmentPolicy, augment_eval

    policy = augment_policy(cfg)
    return lambda clip: augment_eval(clip, policy)


def augment_policy(cfg: RunConfig):
    from .trainer import AugmentPolicy

    return AugmentPolicy(
        hflip_prob=cfg["aug.hflip_prob"], crop_size=cfg["aug.crop_size"],
        max_time_masks=cfg["aug.max_time_masks"],
        max_mask_fraction=cfg["aug.max_mask_fraction"],
    )


# ---------------------------------------------------------------- subcommands

def cmd_make_toy(cfg: RunConfig, args) -> int:
    from .toy import ToyConfig, build_toy_corpus

    run_dir, log = start_run("make-toy", cfg, args)
    out = Path(args.out) if args.out else run_dir / "corpus"
    toy = ToyConfig(
        out_dir=out, seed=cfg["seed"], fps=cfg["fps"], words=cfg["toy.words"],
        utterances=cfg["toy.utterances"], test_utterances=cfg["toy.test_utterances"],
        av_clips=cfg["toy.av_clips"], speech_clips=cfg["toy.speech_clips"],
        faces=cfg["toy.faces"], words_min=cfg["toy.words_min"],
        words_max=cfg["toy.words_max"],
    )
    paths = build_toy_corpus(toy, log=log)
    for name, path in paths.items():
        log(f"  {name}: {path}")
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    from .toy import preprocess_av_manifest

    run_dir, log = start_run("preprocess", cfg, args)
    for raw_path in args.manifest:
        raw = Manifest.load(require(raw_path, "make-toy"))
        name = Path(raw_path).parent.name
        out = preprocess_av_manifest(raw, run_dir / name, fps=cfg["fps"], log=log)
        log(f"  {name}: {out}")
    return 0


def cmd_train_vocab(cfg: RunConfig, args) -> int:
    run_dir, log = start_run("train-vocab", cfg, args)
    texts = []
    for path in args.manifest:
        manifest = Manifest.load(require(path, "preprocess"))
        texts += [e.transcript for e in manifest.entries if e.transcript]
    if not texts:
        raise FormatError("no transcripts found in the given manifests")
    vocab = train_vocab(texts, cfg["vocab.size"])
    out = run_dir / "vocab.txt"
    vocab.save(out)
    log(f"  vocab: {len(vocab.pieces)} pieces -> {out}")
    return 0


def cmd_train_lam(cfg: RunConfig, args) -> int:
    from .lipgen import (
        PRESETS, DiscriminatorConfig, FrameDiscriminator, Generator,
        GeneratorConfig, SequenceDiscriminator, TrainLamConfig,
        load_lam_clips, train_lam,
    )
    from .perceptual import freeze_recognizer

    run_dir, log = start_run("train-lam", cfg, args)
    if cfg["lam.weights"] not in PRESETS:
        raise ConfigError(f"lam.weights must be one of {sorted(PRESETS)}, got {cfg['lam.weights']!r}")
    weights = PRESETS[cfg["lam.weights"]]

    recognizer = None
    vocab = None
    if weights.needs_recognizer:
        if args.recognizer is None or args.vocab is None:
            raise ConfigError(
                f"lam.weights={cfg['lam.weights']} uses the recognizer-based loss; "
                "pass --recognizer (from train-vsr) and --vocab (from train-vocab)"
            )
        vocab = load_vocab(args.vocab)
        recognizer = freeze_recognizer(load_vsr_model(args.recognizer, cfg, vocab))

    manifest = Manifest.load(require(args.manifest, "preprocess"))
    clips = load_lam_clips(manifest, vocab=vocab)
    log(f"  {len(clips)} audio-video clips")

    torch.manual_seed(cfg["seed"])
    gen = Generator(GeneratorConfig(width_mult=cfg["lam.width_mult"]))
    disc_cfg = DiscriminatorConfig(width_mult=cfg["lam.width_mult"])
    d_img = FrameDiscriminator(disc_cfg)
    d_seq = SequenceDiscriminator(disc_cfg)
    train_cfg = TrainLamConfig(
        steps=cfg["lam.steps"], window_frames=cfg["lam.window_frames"],
        frames_per_disc=cfg["lam.frames_per_disc"], lr_g=cfg["lam.lr_g"],
        lr_d_img=cfg["lam.lr_d_img"], lr_d_seq=cfg["lam.lr_d_seq"],
        ckpt_every=cfg["lam.ckpt_every"], seed=cfg["seed"],
    )
    ckpts = train_lam(
        gen, d_img, d_seq, clips, weights, train_cfg, run_dir,
        recognizer=recognizer, resume_from=args.resume, log=log,
    )
    log(f"  final checkpoint: {ckpts[-1]}")
    return 0


def cmd_gen_synth(cfg: RunConfig, args) -> int:
    from .synthgen import SynthJob, build_synth_dataset

    run_dir, log = start_run("gen-synth", cfg, args)
    gen = load_generator(args.checkpoint, cfg)
    job = SynthJob(
        speech_manifest=Manifest.load(require(args.speech, "make-toy")),
        face_manifest=Manifest.load(require(args.faces, "make-toy")),
        out_dir=run_dir / "synth",
        checkpoint_path=Path(args.checkpoint),
        faces_per_clip=cfg["synth.n_per"],
        seed=cfg["seed"],
        max_duration_s=cfg["synth.max_duration_s"],
        max_failure_fraction=cfg["synth.max_failure_fraction"],
        fps=cfg["fps"],
    )
    result = build_synth_dataset(job, gen, log=log)
    log(f"  manifest: {job.out_dir / 'manifest.jsonl'} ({len(result.manifest)} entries)")
    return 0


def _load_datasets(paths, vocab):
    from .trainer import load_vsr_items

    datasets = []
    for path in paths:
        manifest = Manifest.load(require(path, "preprocess (or gen-synth)"))
        datasets.append(load_vsr_items(manifest, vocab))
    return datasets


def cmd_train_vsr(cfg: RunConfig, args) -> int:
    from .trainer import MixPolicy, init_frontend, mixed_sampler
    from .vsr.model import VsrModel
    from .vsr.train import TrainVsrConfig, train_vsr

    run_dir, log = start_run("train-vsr", cfg, args)
    vocab = load_vocab(args.vocab)
    datasets = _load_datasets(args.train, vocab)
    log("  datasets: " + ", ".join(str(len(d)) for d in datasets) + " clips")

    torch.manual_seed(cfg["seed"])
    model = VsrModel(build_vsr_config(cfg, len(vocab.pieces)))
    log(f"  model: {model.num_parameters()} parameters")
    if args.init_frontend:
        init_frontend(model, require(args.init_frontend, "train-lam"))
        log(f"  front-end initialized from {args.init_frontend}")

    weights = None
    if cfg["mix.weights"]:
        weights = tuple(float(tok) for tok in cfg["mix.weights"].split(","))
    policy = MixPolicy(weights=weights, frame_budget=cfg["train.frame_budget"])
    aug = augment_policy(cfg) if cfg["aug.enabled"] else None
    batches = mixed_sampler(policy, datasets, np.random.default_rng(cfg["seed"]), aug)

    train_cfg = TrainVsrConfig(
        steps=cfg["train.steps"], warmup_steps=cfg["train.warmup_steps"],
        peak_lr=cfg["train.peak_lr"], weight_decay=cfg["train.weight_decay"],
        grad_clip=cfg["train.grad_clip"], frame_budget=cfg["train.frame_budget"],
        ckpt_every=cfg["train.ckpt_every"], seed=cfg["seed"],
    )
    ckpts = train_vsr(model, batches, train_cfg, run_dir, log=log)
    log(f"  final checkpoint: {ckpts[-1]}")
    return 0


def _decode_manifest(model, vocab, manifest: Manifest, cfg: RunConfig, out_path, log):
    from .media import read_clip
    from .tokenizer import decode as decode_ids
    from .vsr.frontend import normalize_frames
    from .vsr.search import beam_decode, greedy_decode

    transform = build_eval_transform(cfg)
    beam = cfg["decode.beam"]
    records = []
    with open(out_path, "w") as f:
        for entry in manifest.entries:
            clip = read_clip(manifest.resolve(entry.video_path))
            if transform is not None:
                clip = transform(clip)
            clips = normalize_frames(clip.frames, model.cfg.frontend.mean, model.cfg.frontend.std)
            with torch.no_grad():
                z_e = model.features(clips).z_e
                result = greedy_decode(model, z_e) if beam <= 1 else beam_decode(model, z_e, beam)
            record = {
                "id": entry.id, "hypothesis": decode_ids(vocab, result.ids),
                "logprob": result.logprob, "truncated": result.truncated,
            }
            records.append(record)
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    log(f"  {len(records)} hypotheses -> {out_path}")
    return records


def cmd_decode(cfg: RunConfig, args) -> int:
    run_dir, log = start_run("decode", cfg, args)
    vocab = load_vocab(args.vocab)
    model = load_vsr_model(args.model, cfg, vocab)
    manifest = Manifest.load(require(args.manifest, "preprocess"))
    manifest.validate_role("real")
    _decode_manifest(model, vocab, manifest, cfg, run_dir / "hypotheses.jsonl", log)
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    from .scoring import score_pairs

    run_dir, log = start_run("eval", cfg, args)
    manifest = Manifest.load(require(args.manifest, "preprocess"))
    manifest.validate_role("real")
    if args.hyp:
        hyp_by_id = {}
        for line in Path(require(args.hyp, "decode")).read_text().splitlines():
            if line.strip():
                record = json.loads(line)
                hyp_by_id[record["id"]] = record["hypothesis"]
        missing = [e.id for e in manifest.entries if e.id not in hyp_by_id]
        if missing:
            raise FormatError(f"hypotheses file lacks ids {missing[:5]} (rerun decode)")
        report = score_pairs(
            [(e.id, e.transcript, hyp_by_id[e.id]) for e in manifest.entries]
        )
        report.save_json(run_dir / "eval.json")
        report.save_csv(run_dir / "eval.csv")
        log(f"eval: WER {report.wer:.4f} ({report.total_errors} errors / "
            f"{report.total_ref_words} words, {len(report.rows)} utts)")
    else:
        from .scoring import evaluate, vsr_transcriber

        vocab = load_vocab(args.vocab)
        model = load_vsr_model(args.model, cfg, vocab)
        transcribe = vsr_transcriber(
            model, vocab, beam=cfg["decode.beam"], transform=build_eval_transform(cfg)
        )
        evaluate(transcribe, manifest, out_dir=run_dir, tag="eval", log=log)
    return 0


def cmd_mismatch(cfg: RunConfig, args) -> int:
    from .reports import mismatch_assessment

    run_dir, log = start_run("mismatch", cfg, args)
    vocab = load_vocab(args.vocab)
    model_real = load_vsr_model(args.model_real, cfg, vocab)
    model_mix = load_vsr_model(args.model_mix, cfg, vocab)
    gen = load_generator(args.generator, cfg)
    manifest = Manifest.load(require(args.test, "preprocess"))
    report = mismatch_assessment(
        model_real, model_mix, manifest, gen, vocab, run_dir,
        beam=cfg["decode.beam"], transform=build_eval_transform(cfg), log=log,
    )
    for (m, t), cell in sorted(report.cells.items()):
        log(f"  {m:12s} on {t:9s} test: WER {cell.wer:.4f}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    from .reports import MismatchReport, emit_plots

    run_dir, log = start_run("report", cfg, args)
    report = MismatchReport.load_json(require(args.mismatch, "mismatch"))
    written = emit_plots(report, run_dir, history_csv=args.history, log=log)
    for kind, path in written.items():
        log(f"  {kind}: {path}")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipsynth",
        description="speech-driven lip animation, synthetic data, and lip reading",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, help, **flags):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--run-root", default=None, help="run directory root (or $LIPSYNTH_RUN_ROOT)")
        for flag, kw in flags.items():
            p.add_argument(flag, **kw)
        return p

    stage("make-toy", "generate the procedural toy corpus",
          **{"--out": dict(default=None, help="corpus directory (default: inside the run dir)")})
    stage("preprocess", "crop raw videos into 96x96 clips",
          **{"--manifest": dict(nargs="+", required=True, help="raw manifest(s)")})
    stage("train-vocab", "learn the subword inventory",
          **{"--manifest": dict(nargs="+", required=True, help="manifest(s) with transcripts")})
    stage("train-lam", "train the lip animation model",
          **{"--manifest": dict(required=True, help="preprocessed audio-video manifest"),
             "--recognizer": dict(default=None, help="recognizer checkpoint for the perceptual loss"),
             "--vocab": dict(default=None, help="vocab file (with --recognizer)"),
             "--resume": dict(default=None, help="animation checkpoint to resume from")})
    stage("gen-synth", "generate the synthetic video dataset",
          **{"--speech": dict(required=True, help="labeled speech manifest"),
             "--faces": dict(required=True, help="face image manifest"),
             "--checkpoint": dict(required=True, help="animation checkpoint")})
    stage("train-vsr", "train the recognizer",
          **{"--train": dict(nargs="+", required=True, help="training manifest(s), real and/or synthetic"),
             "--vocab": dict(required=True, help="vocab file"),
             "--init-frontend": dict(default=None, help="checkpoint supplying front-end weights")})
    stage("decode", "write hypotheses for a manifest",
          **{"--model": dict(required=True, help="recognizer checkpoint or train-vsr run dir"),
             "--vocab": dict(required=True), "--manifest": dict(required=True)})
    stage("eval", "score a manifest (end-to-end, or a decode output via --hyp)",
          **{"--model": dict(default=None), "--vocab": dict(default=None),
             "--manifest": dict(required=True),
             "--hyp": dict(default=None, help="hypotheses.jsonl from decode")})
    stage("mismatch", "2x2 real/synthetic WER grid",
          **{"--model-real": dict(required=True, help="recognizer trained on real data"),
             "--model-mix": dict(required=True, help="recognizer trained on real+synthetic"),
             "--test": dict(required=True, help="real test manifest"),
             "--generator": dict(required=True, help="animation checkpoint"),
             "--vocab": dict(required=True)})
    stage("report", "render CSV + SVG from saved reports",
          **{"--mismatch": dict(required=True, help="mismatch.json from the mismatch stage"),
             "--history": dict(default=None, help="training history.csv for loss curves")})
    return parser


COMMANDS = {
    "make-toy": cmd_make_toy,
    "preprocess": cmd_preprocess,
    "train-vocab": cmd_train_vocab,
    "train-lam": cmd_train_lam,
    "gen-synth": cmd_gen_synth,
    "train-vsr": cmd_train_vsr,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "mismatch": cmd_mismatch,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        overrides = parse_overrides(rest)
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "eval" and not args.hyp and not (args.model and args.vocab):
            raise ConfigError("eval needs either --hyp, or --model and --vocab")
        t0 = time.monotonic()
        code = COMMANDS[args.command](cfg, args)
        print(f"[{args.command}] done in {time.monotonic() - t0:.1f}s")
        return code
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error[missing-artifact]: {exc}", file=sys.stderr)
        return 3
    except (FormatError, VocabError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 4
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
