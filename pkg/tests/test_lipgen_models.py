"""Generator and discriminator architecture contracts."""

import math

import numpy as np
import pytest
import torch

from lipsynth.lipgen import (
    SPEECH_CHUNK_SAMPLES,
    FrameDiscriminator,
    Generator,
    GeneratorConfig,
    ImageEncoder,
    ModulatedConv2d,
    SequenceDiscriminator,
    SpeechEncoder,
    generate,
)
from lipsynth.media import FormatError, RotationSequence, SpeechChunks


def make_chunks(n, seed=0):
    rng = np.random.default_rng(seed)
    return SpeechChunks(
        chunks=rng.standard_normal((n, SPEECH_CHUNK_SAMPLES)) * 0.01,
        sample_rate=16000,
        window_ms=200.0,
        stride_ms=40.0,
    )


def spin_rotations(n, step=0.3):
    mats = []
    for k in range(n):
        c, s = math.cos(step * k), math.sin(step * k)
        mats.append([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return torch.tensor(mats)


@pytest.fixture(scope="module")
def gen():
    torch.manual_seed(0)
    return Generator(GeneratorConfig())


class TestGenerate:
    @pytest.mark.parametrize("n", [1, 5, 75])
    def test_frame_count_matches_chunks(self, gen, n):
        clip = generate(gen, np.full((96, 96), 120, np.uint8), make_chunks(n), RotationSequence.identity(n))
        assert clip.frames.shape == (n, 96, 96)
        assert clip.frames.dtype == np.uint8

    def test_determinism_bit_identical(self, gen):
        face = np.full((96, 96), 90, np.uint8)
        a = generate(gen, face, make_chunks(4, seed=2), RotationSequence.identity(4))
        b = generate(gen, face, make_chunks(4, seed=2), RotationSequence.identity(4))
        assert np.array_equal(a.frames, b.frames)

    def test_length_mismatch_reports_both(self, gen):
        with pytest.raises(FormatError, match="3.*5|5.*3"):
            generate(gen, np.zeros((96, 96), np.uint8), make_chunks(5), RotationSequence.identity(3))

    def test_wrong_face_size_rejected(self, gen):
        with pytest.raises(FormatError):
            generate(gen, np.zeros((64, 64), np.uint8), make_chunks(2), RotationSequence.identity(2))

    def test_training_mode_restored(self, gen):
        gen.train()
        generate(gen, np.zeros((96, 96), np.uint8), make_chunks(1), RotationSequence.identity(1))
        assert gen.training
        gen.eval()


class TestGeneratorForward:
    def test_all_parameters_receive_gradient(self):
        torch.manual_seed(1)
        g = Generator(GeneratorConfig())
        out = g(torch.rand(2, 1, 96, 96), torch.randn(2, 3, SPEECH_CHUNK_SAMPLES) * 0.01,
                torch.eye(3).expand(2, 3, 3, 3))
        weights = torch.randn_like(out)
        (out * weights).sum().backward()
        for name, p in g.named_parameters():
            assert p.grad is not None, name
            assert p.grad.abs().max().item() > 0, name

    def test_rotation_sensitivity(self, gen):
        gen.eval()
        first = torch.rand(1, 1, 96, 96)
        chunks = torch.randn(1, 5, SPEECH_CHUNK_SAMPLES) * 0.01
        rots = spin_rotations(5)[None]
        with torch.no_grad():
            a = gen(first, chunks, rots)
            b = gen(first, chunks, rots[:, [4, 3, 2, 1, 0]])
        assert (a - b).abs().max().item() > 1e-6

    def test_speech_sensitivity(self, gen):
        gen.eval()
        first = torch.rand(1, 1, 96, 96)
        rots = torch.eye(3).expand(1, 4, 3, 3)
        with torch.no_grad():
            a = gen(first, torch.randn(1, 4, SPEECH_CHUNK_SAMPLES), rots)
            b = gen(first, torch.randn(1, 4, SPEECH_CHUNK_SAMPLES), rots)
        assert (a - b).abs().max().item() > 1e-6

    def test_identity_sensitivity(self, gen):
        gen.eval()
        chunks = torch.randn(1, 2, SPEECH_CHUNK_SAMPLES) * 0.01
        rots = torch.eye(3).expand(1, 2, 3, 3)
        with torch.no_grad():
            a = gen(torch.zeros(1, 1, 96, 96), chunks, rots)
            b = gen(torch.ones(1, 1, 96, 96), chunks, rots)
        assert (a - b).abs().max().item() > 1e-6

    def test_output_in_unit_interval(self, gen):
        with torch.no_grad():
            out = gen(torch.rand(1, 1, 96, 96), torch.randn(1, 2, SPEECH_CHUNK_SAMPLES),
                      torch.eye(3).expand(1, 2, 3, 3))
        assert out.min().item() >= 0.0 and out.max().item() <= 1.0

    def test_rotation_shape_mismatch(self, gen):
        with pytest.raises(FormatError):
            gen(torch.rand(1, 1, 96, 96), torch.randn(1, 4, SPEECH_CHUNK_SAMPLES),
                torch.eye(3).expand(1, 3, 3, 3))


class TestEncoders:
    def test_image_encoder_shapes(self):
        cfg = GeneratorConfig()
        enc = ImageEncoder(cfg)
        z_i, penult = enc(torch.rand(2, 1, 96, 96) * 2 - 1)
        assert z_i.shape == (2, cfg.z_i_dim)
        assert penult.shape[2:] == (6, 6)

    def test_image_encoder_full_width(self):
        cfg = GeneratorConfig(width_mult=1.0)
        assert cfg.z_i_dim == 512 and cfg.z_s_dim == 256
        z_i, penult = ImageEncoder(cfg)(torch.rand(1, 1, 96, 96))
        assert z_i.shape == (1, 512)
        assert penult.shape == (1, 512, 6, 6)

    def test_speech_encoder_shapes(self):
        cfg = GeneratorConfig()
        out = SpeechEncoder(cfg)(torch.randn(2, 7, SPEECH_CHUNK_SAMPLES))
        assert out.shape == (2, 7, cfg.z_s_dim)

    def test_speech_encoder_full_width_dim(self):
        out = SpeechEncoder(GeneratorConfig(width_mult=1.0))(
            torch.randn(1, 2, SPEECH_CHUNK_SAMPLES)
        )
        assert out.shape[-1] == 256

    def test_speech_encoder_recurrent_state_is_causal(self):
        torch.manual_seed(3)
        enc = SpeechEncoder(GeneratorConfig()).eval()
        x = torch.randn(1, 6, SPEECH_CHUNK_SAMPLES)
        y = x.clone()
        y[0, 5] += 1.0
        with torch.no_grad():
            a, b = enc(x), enc(y)
        # context flows forward only: earlier chunks never see the change
        assert torch.allclose(a[0, :5], b[0, :5], atol=1e-6)
        assert (a[0, 5] - b[0, 5]).abs().max().item() > 1e-6

    def test_speech_encoder_context_persists_across_chunks(self):
        torch.manual_seed(4)
        enc = SpeechEncoder(GeneratorConfig()).eval()
        x = torch.randn(1, 6, SPEECH_CHUNK_SAMPLES)
        y = x.clone()
        y[0, 0] += 1.0
        with torch.no_grad():
            a, b = enc(x), enc(y)
        assert (a[0, 5] - b[0, 5]).abs().max().item() > 1e-8

    def test_wrong_chunk_length_rejected(self):
        with pytest.raises(FormatError, match="3200"):
            SpeechEncoder(GeneratorConfig())(torch.randn(1, 2, 1600))


class TestModulatedConv:
    def test_uniform_gain_scaling_is_demodulated_away(self):
        torch.manual_seed(7)
        conv = ModulatedConv2d(3, 5, 3, style_dim=4)
        with torch.no_grad():
            conv.affine.weight.zero_()
            conv.affine.bias.fill_(2.0)
        x = torch.randn(2, 3, 8, 8)
        style = torch.zeros(2, 4)
        with torch.no_grad():
            a = conv(x, style)
            conv.affine.bias.fill_(4.0)  # doubling every gain must cancel
            b = conv(x, style)
        assert torch.allclose(a, b, atol=1e-5)

    def test_style_changes_output_when_not_uniform(self):
        torch.manual_seed(8)
        conv = ModulatedConv2d(3, 5, 3, style_dim=4)
        x = torch.randn(1, 3, 8, 8)
        with torch.no_grad():
            a = conv(x, torch.zeros(1, 4))
            b = conv(x, torch.randn(1, 4))
        assert (a - b).abs().max().item() > 1e-6

    def test_per_sample_independence(self):
        torch.manual_seed(9)
        conv = ModulatedConv2d(2, 3, 3, style_dim=4)
        x = torch.randn(2, 2, 6, 6)
        s = torch.randn(2, 4)
        with torch.no_grad():
            both = conv(x, s)
            solo = conv(x[:1], s[:1])
        assert torch.allclose(both[:1], solo, atol=1e-6)


class TestDiscriminators:
    def test_frame_disc_output_range(self):
        torch.manual_seed(10)
        d = FrameDiscriminator()
        p = d(torch.rand(6, 1, 96, 96), torch.rand(6, 1, 96, 96))
        assert p.shape == (6,)
        assert (p > 0).all() and (p < 1).all()

    def test_frame_disc_sees_conditioning(self):
        torch.manual_seed(11)
        d = FrameDiscriminator().eval()
        frames = torch.rand(2, 1, 96, 96)
        with torch.no_grad():
            a = d(frames, torch.zeros(2, 1, 96, 96))
            b = d(frames, torch.ones(2, 1, 96, 96))
        assert (a - b).abs().max().item() > 1e-6

    @pytest.mark.parametrize("t", [1, 7, 20])
    def test_seq_disc_handles_any_length(self, t):
        torch.manual_seed(12)
        d = SequenceDiscriminator()
        p = d(torch.rand(2, 1, t, 96, 96))
        assert p.shape == (2,)
        assert (p > 0).all() and (p < 1).all()

    def test_seq_disc_order_sensitivity(self):
        torch.manual_seed(13)
        d = SequenceDiscriminator().eval()
        clip = torch.rand(1, 1, 6, 96, 96)
        with torch.no_grad():
            a = d(clip)
            b = d(clip.flip(dims=[2]))
        assert (a - b).abs().max().item() > 1e-8


class TestConfig:
    def test_invalid_width_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(width_mult=0.0)

    def test_style_dim_composition(self):
        cfg = GeneratorConfig(width_mult=1.0)
        assert cfg.style_dim == 512 + 256 + 9
