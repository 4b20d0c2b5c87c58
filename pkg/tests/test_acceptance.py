"""Acceptance gate: eleven go/no-go properties for the whole system.

Each criterion is one test so the verbose run gives one pass/fail line
per criterion. Numeric oracles (1-6, 11) are cheap; 7-10 actually train
on the procedural corpus and are wall-clock bounded, so this module is
where a slow machine shows up first.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest
import torch
from torch import nn

from lipsynth.checkpoint import (
    average_checkpoints,
    load_model,
    save_model,
    select_last_checkpoints,
)
from lipsynth.cli import main as cli_main
from lipsynth.lipgen import (
    PRESETS,
    FrameDiscriminator,
    Generator,
    GeneratorConfig,
    SPEECH_CHUNK_SAMPLES,
    SequenceDiscriminator,
    TrainLamConfig,
    disc_objective_value,
    frame_disc_objective,
    generate,
    lam_total_loss,
    reconstruction_loss,
    seq_disc_objective,
    train_lam,
)
from lipsynth.media import Manifest, RotationSequence, SpeechChunks, chunk_speech, load_wav, read_clip
from lipsynth.perceptual import PerceptualWeights, kl_rows, perceptual_value
from lipsynth.scoring import WerReport, score_pairs, vsr_transcriber, wer_counts
from lipsynth.tokenizer import EOS_ID, SOS_ID, train_vocab
from lipsynth.toy import ToyConfig, build_toy_corpus, preprocess_av_manifest
from lipsynth.trainer import MixPolicy, load_vsr_items, mixed_sampler
from lipsynth.vsr.ctc import ctc_loss, min_frames
from lipsynth.vsr.frontend import FrontendConfig
from lipsynth.vsr.model import (
    VsrConfig,
    VsrModel,
    ce_loss,
    make_decoder_batch,
    teacher_forced_logprob,
)
from lipsynth.vsr.train import TrainVsrConfig, train_vsr
from numutil import central_difference_grad, ctc_brute_force, relative_error
from test_scoring import oracle_counts

torch.set_num_threads(1)


def noop(*args):
    pass


def micro_vsr_config(vocab=12):
    return VsrConfig(
        vocab_size=vocab, enc_depth=1, dim=16, ff_dim=32, heads=2,
        dec_depth=1, dec_ff_dim=32, rel_max_dist=8,
        frontend=FrontendConfig(stem_channels=4, stage_channels=(4, 8), blocks_per_stage=1),
    )


def test_criterion_01_ctc_forward_matches_enumeration():
    t0 = time.monotonic()
    rng = torch.Generator().manual_seed(101)
    worst = 0.0
    for _ in range(200):
        T = int(torch.randint(1, 7, (1,), generator=rng))
        V = int(torch.randint(2, 5, (1,), generator=rng))
        blank = V - 1
        logits = torch.randn(T, V, dtype=torch.float64, generator=rng)
        labels = [i for i in range(V) if i != blank]
        tlen = int(torch.randint(0, min(3, T) + 1, (1,), generator=rng))
        target = [
            labels[int(torch.randint(0, len(labels), (1,), generator=rng))]
            for _ in range(tlen)
        ]
        while min_frames(target) > T:
            target = target[:-1]
        got = ctc_loss(logits, target, blank=blank).item()
        want = ctc_brute_force(logits, target, blank=blank)
        err = relative_error(torch.tensor(got), torch.tensor(want))
        worst = max(worst, err)
        assert err <= 1e-6, (T, V, target, got, want)
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    print(f"[criterion 1] PASS ctc oracle: 200 instances, worst rel err {worst:.2e}, {elapsed:.1f}s")


class HalfFrameD(nn.Module):
    def forward(self, frames, first):
        return torch.full((frames.shape[0],), 0.5, dtype=torch.float64)


class HalfSeqD(nn.Module):
    def forward(self, clip):
        return torch.full((clip.shape[0],), 0.5, dtype=torch.float64)


class TinyFrameD(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(2, 4, 3, padding=1).double()
        self.head = nn.Conv2d(4, 1, 3, padding=1).double()

    def forward(self, frames, first):
        h = torch.relu(self.conv(torch.cat([frames, first], dim=1)))
        return torch.sigmoid(self.head(h).mean(dim=(1, 2, 3)))


class TinySeqD(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv3d(1, 3, (2, 3, 3), padding=(0, 1, 1)).double()
        self.head = nn.Conv3d(3, 1, (1, 3, 3), padding=(0, 1, 1)).double()

    def forward(self, clip):
        h = torch.relu(self.conv(clip))
        return torch.sigmoid(self.head(h).mean(dim=(1, 2, 3, 4)))


def test_criterion_02_gradient_suite():
    checks = {}

    # CTC
    torch.manual_seed(201)
    logits0 = torch.randn(4, 6, dtype=torch.float64)
    x = logits0.clone().requires_grad_(True)
    ctc_loss(x, [5, 0]).backward()
    num = central_difference_grad(lambda t: ctc_loss(t, [5, 0]).item(), logits0.clone())
    checks["ctc"] = relative_error(x.grad, num)

    # decoder cross-entropy
    inp, tgt = make_decoder_batch([[6, 7, 5]])
    lg0 = torch.randn(1, inp.shape[1], 12, dtype=torch.float64)
    x = lg0.clone().requires_grad_(True)
    ce_loss(x, tgt).backward()
    num = central_difference_grad(lambda t: ce_loss(t, tgt).item(), lg0.clone())
    checks["ce"] = relative_error(x.grad, num)

    # reconstruction, away from the |.| kink
    target = torch.zeros(2, 8, 8, dtype=torch.float64)
    x0 = torch.rand(2, 8, 8, dtype=torch.float64) * 0.8 + 0.1
    x = x0.clone().requires_grad_(True)
    reconstruction_loss(target, x).backward()
    num = central_difference_grad(lambda t: reconstruction_loss(target, t).item(), x0.clone())
    checks["reconstruction"] = relative_error(x.grad, num)

    # frame adversarial objective
    torch.manual_seed(202)
    d_img = TinyFrameD()
    real = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    first = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    f0 = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    x = f0.clone().requires_grad_(True)
    frame_disc_objective(d_img, real, x, first).backward()
    num = central_difference_grad(
        lambda t: frame_disc_objective(d_img, real, t, first).item(), f0.clone())
    checks["frame_adv"] = relative_error(x.grad, num)

    # sequence adversarial objective
    d_seq = TinySeqD()
    real_clip = torch.rand(1, 1, 2, 8, 8, dtype=torch.float64)
    c0 = torch.rand(1, 1, 2, 8, 8, dtype=torch.float64)
    x = c0.clone().requires_grad_(True)
    seq_disc_objective(d_seq, real_clip, x).backward()
    num = central_difference_grad(
        lambda t: seq_disc_objective(d_seq, real_clip, t).item(), c0.clone())
    checks["seq_adv"] = relative_error(x.grad, num)

    # perceptual functional, differentiated in the synthetic-branch inputs
    rng = np.random.default_rng(203)
    w = PerceptualWeights(lam_visual=250.0, lam_logits=10.0)
    z_r = torch.from_numpy(rng.standard_normal((1, 3, 4)))
    lg_r = torch.from_numpy(rng.standard_normal((1, 2, 5)))
    z_s0 = torch.from_numpy(rng.standard_normal((1, 3, 4)))
    lg_s0 = torch.from_numpy(rng.standard_normal((1, 2, 5)))
    z_s = z_s0.clone().requires_grad_(True)
    lg_s = lg_s0.clone().requires_grad_(True)
    perceptual_value(w, z_r, z_s, lg_r, lg_s).backward()
    num_z = central_difference_grad(
        lambda t: perceptual_value(w, z_r, t, lg_r, lg_s0).item(), z_s0.clone())
    num_lg = central_difference_grad(
        lambda t: perceptual_value(w, z_r, z_s0, lg_r, t).item(), lg_s0.clone())
    checks["perceptual_z"] = relative_error(z_s.grad, num_z)
    checks["perceptual_logits"] = relative_error(lg_s.grad, num_lg)

    for name, err in checks.items():
        assert err <= 1e-4, (name, err)
    worst = max(checks.values())
    print(f"[criterion 2] PASS gradient suite: {len(checks)} losses, worst rel err {worst:.2e}")


def test_criterion_03_analytic_loss_points():
    # uninformative discriminator, both adversarial objectives
    half_frames = torch.full((4,), 0.5, dtype=torch.float64)
    half_clips = torch.full((1,), 0.5, dtype=torch.float64)
    v_frame = disc_objective_value(half_frames, half_frames)
    v_seq = disc_objective_value(half_clips, half_clips)
    assert abs(v_frame.item() - 2 * math.log(0.5)) <= 1e-9
    assert abs(v_seq.item() - 2 * math.log(0.5)) <= 1e-9

    # identical clips
    clip = torch.rand(3, 16, 16, dtype=torch.float64)
    assert reconstruction_loss(clip, clip.clone()).item() == 0.0
    z = torch.randn(1, 2, 3, dtype=torch.float64)
    lg = torch.randn(1, 2, 4, dtype=torch.float64)
    assert abs(perceptual_value(PerceptualWeights(), z, z.clone(), lg, lg.clone()).item()) <= 1e-9

    # KL((1,0) || (0.5,0.5)) = log 2
    p = torch.tensor([1.0, 0.0], dtype=torch.float64)
    q = torch.tensor([0.5, 0.5], dtype=torch.float64)
    assert abs(kl_rows(p, q).item() - math.log(2.0)) <= 1e-6

    # weighted-sum identity at unit terms, bit-exact in float64
    assert lam_total_loss(PRESETS["baseline"], 1.0, 1.0, 1.0, 0.0) == 301.2
    print("[criterion 3] PASS analytic loss points: 2log0.5, zero at identity, log2 KL, 301.2 exact")


def make_chunks(n, seed=0):
    rng = np.random.default_rng(seed)
    return SpeechChunks(
        chunks=rng.standard_normal((n, SPEECH_CHUNK_SAMPLES)) * 0.01,
        sample_rate=16000, window_ms=200.0, stride_ms=40.0,
    )


def test_criterion_04_generator_contract():
    torch.manual_seed(401)
    gen = Generator(GeneratorConfig())
    face = np.full((96, 96), 120, np.uint8)
    for n in (1, 5, 75):
        clip = generate(gen, face, make_chunks(n), RotationSequence.identity(n))
        assert clip.frames.shape == (n, 96, 96)
        assert clip.frames.dtype == np.uint8

    # determinism: a fresh generator from the same seed, same inputs
    torch.manual_seed(401)
    gen2 = Generator(GeneratorConfig())
    a = generate(gen, face, make_chunks(4, seed=2), RotationSequence.identity(4))
    b = generate(gen2, face, make_chunks(4, seed=2), RotationSequence.identity(4))
    assert np.array_equal(a.frames, b.frames)

    # every parameter gets gradient from one training-shaped step
    torch.manual_seed(402)
    g = Generator(GeneratorConfig())
    out = g(
        torch.rand(2, 1, 96, 96),
        torch.randn(2, 3, SPEECH_CHUNK_SAMPLES) * 0.01,
        torch.eye(3).expand(2, 3, 3, 3),
    )
    (out * torch.randn_like(out)).sum().backward()
    missing = [n for n, p in g.named_parameters() if p.grad is None or p.grad.abs().max() == 0]
    assert not missing, missing
    n_params = sum(p.numel() for p in g.parameters())
    print(f"[criterion 4] PASS generator contract: n->n frames, bit-deterministic, {n_params} params all with grad")


def test_criterion_05_decoder_factorization_and_causality():
    torch.manual_seed(501)
    model = VsrModel(micro_vsr_config()).double()
    model.eval()
    z_e = torch.randn(1, 6, 16, dtype=torch.float64)
    target = [7, 9, 5, 11]
    with torch.no_grad():
        joint = teacher_forced_logprob(model, z_e, target)
        steps = 0.0
        prefix = [SOS_ID]
        for tok in target + [EOS_ID]:
            logits = model.decoder_logits(z_e, torch.tensor([prefix]))
            steps += float(torch.log_softmax(logits[0, -1], dim=-1)[tok])
            prefix.append(tok)
    assert joint.item() == pytest.approx(steps, abs=1e-6)

    rng = np.random.default_rng(502)
    for _ in range(20):
        length = int(rng.integers(2, 7))
        prefix = [SOS_ID] + [int(t) for t in rng.integers(5, 12, size=length)]
        j = int(rng.integers(1, len(prefix)))
        mutated = list(prefix)
        mutated[j] = 5 + (mutated[j] - 5 + 1) % 7
        base = model.decoder_logits(z_e, torch.tensor([prefix]))
        changed = model.decoder_logits(z_e, torch.tensor([mutated]))
        torch.testing.assert_close(base[0, :j], changed[0, :j], rtol=0, atol=1e-12)
    print("[criterion 5] PASS decoder: joint = sum of stepwise logprobs, causal for 20 prefixes")


def test_criterion_06_wer_oracle():
    alphabet = ["go", "stop", "left", "right", "up", "down"]
    rng = np.random.default_rng(601)
    pairs = []
    for k in range(200):
        ref = [alphabet[i] for i in rng.integers(0, len(alphabet), rng.integers(0, 9))]
        hyp = [alphabet[i] for i in rng.integers(0, len(alphabet), rng.integers(0, 9))]
        got = wer_counts(ref, hyp)
        want = oracle_counts(tuple(ref), tuple(hyp))
        assert got == want, (ref, hyp, got, want)
        pairs.append((f"u{k}", " ".join(ref), " ".join(hyp)))
    report = score_pairs(pairs)
    total_err = sum(r.errors for r in report.rows)
    total_ref = sum(r.ref_words for r in report.rows)
    assert report.wer == total_err / total_ref
    print(f"[criterion 6] PASS wer oracle: 200 pairs exact, aggregate {report.wer:.4f} pooled")


def test_criterion_07_desk_vsr_overfits_toy_corpus(tmp_path):
    t0 = time.monotonic()
    paths = build_toy_corpus(ToyConfig(out_dir=tmp_path / "toy", seed=0), log=noop)
    pre = preprocess_av_manifest(
        Manifest.load(paths["d_real_train"]), tmp_path / "pre", log=noop)
    manifest = Manifest.load(pre)
    assert len(manifest) == 20
    vocab = train_vocab([e.transcript for e in manifest.entries], 64)

    torch.manual_seed(0)
    model = VsrModel(VsrConfig.desk(vocab_size=len(vocab.pieces)))
    assert model.num_parameters() <= 2_000_000

    clips = [
        (e.id, e.transcript, read_clip(manifest.resolve(e.video_path)))
        for e in manifest.entries
    ]
    history = {}

    def stop(model, step):
        model.eval()
        transcribe = vsr_transcriber(model, vocab)
        report = score_pairs([(i, ref, transcribe(c)) for i, ref, c in clips])
        model.train()
        history[step] = report.wer
        return report.wer <= 0.05

    items = load_vsr_items(manifest, vocab)
    batches = mixed_sampler(MixPolicy(frame_budget=80), [items], np.random.default_rng(0))
    train_vsr(
        model, batches, TrainVsrConfig(steps=2000, ckpt_every=2000),
        tmp_path / "run", stop_check=stop, stop_every=100, log=noop,
    )
    elapsed = time.monotonic() - t0
    best_step, best = min(history.items(), key=lambda kv: (kv[1], kv[0]))
    assert best <= 0.05, history
    assert elapsed <= 600.0
    print(f"[criterion 7] PASS overfit smoke: {model.num_parameters()} params, "
          f"train WER {best:.3f} at step {best_step}, {elapsed:.0f}s")


def test_criterion_08_lam_reconstruction_smoke(tmp_path):
    t0 = time.monotonic()
    paths = build_toy_corpus(ToyConfig(out_dir=tmp_path / "toy", seed=0), log=noop)
    pre = preprocess_av_manifest(Manifest.load(paths["d_av"]), tmp_path / "pre", log=noop)
    manifest = Manifest.load(pre)
    assert len(manifest) == 5

    from lipsynth.lipgen import load_lam_clips

    clips = load_lam_clips(manifest)
    torch.manual_seed(0)
    gen = Generator(GeneratorConfig())
    d_img = FrameDiscriminator()
    d_seq = SequenceDiscriminator()
    history = {}

    def stop(step, recon):
        history[step] = recon
        return recon < 0.05

    train_lam(
        gen, d_img, d_seq, clips, PRESETS["baseline"],
        TrainLamConfig(steps=1000, window_frames=24, ckpt_every=1000),
        tmp_path / "run", stop_check=stop, stop_every=50, log=noop,
    )
    best_step, best = min(history.items(), key=lambda kv: (kv[1], kv[0]))
    assert best < 0.05, history

    # frame count always equals chunk count, on the trained generator
    for entry in manifest.entries:
        clip = read_clip(manifest.resolve(entry.video_path))
        chunks = chunk_speech(load_wav(manifest.resolve(entry.audio_path)), fps=25.0)
        n = min(chunks.num_chunks, clip.frames.shape[0])
        trimmed = SpeechChunks(
            chunks=chunks.chunks[:n], sample_rate=chunks.sample_rate,
            window_ms=chunks.window_ms, stride_ms=chunks.stride_ms,
        )
        out = generate(gen, clip.frames[0], trimmed, RotationSequence.identity(n))
        assert out.frames.shape[0] == n
    elapsed = time.monotonic() - t0
    print(f"[criterion 8] PASS lam smoke: recon {best:.4f} at step {best_step}, "
          f"frame counts match on all 5 clips, {elapsed:.0f}s")


# ---------------------------------------------------------------- criteria 9+10

PIPE_FLAGS = ["--aug.enabled", "false"]


def cli(argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, f"stage failed: {argv}"


def new_dir(root, pattern, before):
    return next(d for d in root.glob(pattern) if d not in before)


def run_full_pipeline(root):
    """Toy corpus through mismatch assessment, returning artifact paths."""
    corpus = root / "corpus"
    cli(["make-toy", "--run-root", root, "--out", corpus] + PIPE_FLAGS)
    cli(["preprocess", "--run-root", root, "--manifest",
         corpus / "d_av" / "manifest.jsonl",
         corpus / "d_real_train" / "manifest.jsonl",
         corpus / "d_real_test" / "manifest.jsonl"] + PIPE_FLAGS)
    pre = next(root.glob("preprocess-*"))
    cli(["train-vocab", "--run-root", root,
         "--manifest", pre / "d_real_train" / "manifest.jsonl"] + PIPE_FLAGS)
    vocab = next(root.glob("train-vocab-*")) / "vocab.txt"
    cli(["train-lam", "--run-root", root,
         "--manifest", pre / "d_av" / "manifest.jsonl",
         "--lam.steps", "200", "--lam.window_frames", "24",
         "--lam.ckpt_every", "200"] + PIPE_FLAGS)
    lam = next(root.glob("train-lam-*")) / "lam_step000200.ckpt"
    cli(["gen-synth", "--run-root", root,
         "--speech", corpus / "d_s" / "manifest.jsonl",
         "--faces", corpus / "d_f" / "manifest.jsonl",
         "--checkpoint", lam, "--synth.n_per", "2"] + PIPE_FLAGS)
    synth = next(root.glob("gen-synth-*")) / "synth"

    before = set(root.glob("train-vsr-*"))
    cli(["train-vsr", "--run-root", root,
         "--train", pre / "d_real_train" / "manifest.jsonl", "--vocab", vocab,
         "--train.steps", "200", "--train.ckpt_every", "200",
         "--run.tag", "real"] + PIPE_FLAGS)
    vsr_real = new_dir(root, "train-vsr-*", before)

    before = set(root.glob("train-vsr-*"))
    cli(["train-vsr", "--run-root", root,
         "--train", pre / "d_real_train" / "manifest.jsonl", synth / "manifest.jsonl",
         "--vocab", vocab, "--train.steps", "200", "--train.ckpt_every", "200",
         "--run.tag", "mix", "--mix.weights", "1,1"] + PIPE_FLAGS)
    vsr_mix = new_dir(root, "train-vsr-*", before)

    cli(["decode", "--run-root", root, "--model", vsr_mix, "--vocab", vocab,
         "--manifest", pre / "d_real_test" / "manifest.jsonl"] + PIPE_FLAGS)
    hyp = next(root.glob("decode-*")) / "hypotheses.jsonl"
    cli(["mismatch", "--run-root", root, "--model-real", vsr_real,
         "--model-mix", vsr_mix, "--test", pre / "d_real_test" / "manifest.jsonl",
         "--generator", lam, "--vocab", vocab] + PIPE_FLAGS)
    mismatch = next(root.glob("mismatch-*")) / "mismatch.json"
    return {
        "corpus": corpus, "synth": synth, "hyp": hyp, "mismatch": mismatch,
    }


@pytest.fixture(scope="module")
def pipeline_a(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_a")
    t0 = time.monotonic()
    art = run_full_pipeline(root)
    art["elapsed"] = time.monotonic() - t0
    return art


def test_criterion_09_pipeline_and_mismatch_structure(pipeline_a):
    speech = Manifest.load(pipeline_a["corpus"] / "d_s" / "manifest.jsonl")
    synth = Manifest.load(pipeline_a["synth"] / "manifest.jsonl")
    assert len(synth) == 2 * len(speech)

    blob = json.loads(pipeline_a["mismatch"].read_text())
    assert blob["excluded"] == []
    cells = blob["cells"]
    assert sorted(cells) == [
        "real+synth|real", "real+synth|synthetic",
        "real-only|real", "real-only|synthetic",
    ]
    n_test = len(Manifest.load(
        pipeline_a["corpus"] / "d_real_test" / "manifest.jsonl"))
    for name, cell in cells.items():
        assert len(cell["utterances"]) == n_test, name
        assert cell["ref_words"] > 0
    assert pipeline_a["elapsed"] <= 1800.0
    print(f"[criterion 9] PASS pipeline: {len(synth)} synth entries = 2x{len(speech)}, "
          f"4 populated cells, {pipeline_a['elapsed']:.0f}s")


def test_criterion_10_pipeline_determinism(pipeline_a, tmp_path_factory):
    root_b = tmp_path_factory.mktemp("accept_b")
    art_b = run_full_pipeline(root_b)
    for key, rel in [
        ("synth", "manifest.jsonl"), ("synth", "clip_hashes.json"),
    ]:
        a = (pipeline_a[key] / rel).read_bytes()
        b = (art_b[key] / rel).read_bytes()
        assert a == b, f"{key}/{rel} differs between reruns"
    assert pipeline_a["hyp"].read_bytes() == art_b["hyp"].read_bytes()
    assert pipeline_a["mismatch"].read_bytes() == art_b["mismatch"].read_bytes()
    print("[criterion 10] PASS determinism: manifests, clip hashes, hypotheses, report all bit-identical")


def test_criterion_11_checkpoint_averaging(tmp_path):
    torch.manual_seed(1101)
    model = nn.Linear(5, 3).double()
    paths = []
    for k in range(3):
        p = tmp_path / f"same{k}.ckpt"
        save_model(p, model, {"step": k})
        paths.append(p)
    avg = average_checkpoints(paths)
    for name, tensor in model.state_dict().items():
        assert np.array_equal(np.asarray(avg[name]), tensor.numpy()), name

    plus = nn.Linear(4, 2).double()
    minus = nn.Linear(4, 2).double()
    with torch.no_grad():
        for p, m in zip(plus.parameters(), minus.parameters()):
            m.copy_(-p)
    pa, pb = tmp_path / "w.ckpt", tmp_path / "neg.ckpt"
    save_model(pa, plus)
    save_model(pb, minus)
    zero = average_checkpoints([pa, pb])
    for name in plus.state_dict():
        assert np.abs(np.asarray(zero[name])).max() == 0.0, name

    twelve = []
    for k in range(12):
        p = tmp_path / f"vsr_step{k:06d}.ckpt"
        save_model(p, model, {"step": k})
        twelve.append(p)
    picked = select_last_checkpoints(twelve, 10)
    assert picked == twelve[2:]
    print("[criterion 11] PASS averaging: identical bit-equal, w/-w zero, last-10-of-12")
