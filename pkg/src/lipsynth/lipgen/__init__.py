from .losses import (
    EPS,
    PRESETS,
    LamLossWeights,
    disc_objective_value,
    frame_disc_objective,
    generator_adv_terms,
    generator_adv_value,
    lam_total_loss,
    reconstruction_loss,
    seq_disc_objective,
)
from .models import (
    SPEECH_CHUNK_SAMPLES,
    DiscriminatorConfig,
    FrameDecoder,
    FrameDiscriminator,
    Generator,
    GeneratorConfig,
    ImageEncoder,
    ModulatedConv2d,
    SequenceDiscriminator,
    SpeechEncoder,
    generate,
)
from .train import (
    LamClip,
    TrainLamConfig,
    load_lam_checkpoint,
    load_lam_clips,
    save_lam_checkpoint,
    train_lam,
)

__all__ = [
    "EPS",
    "PRESETS",
    "SPEECH_CHUNK_SAMPLES",
    "DiscriminatorConfig",
    "FrameDecoder",
    "FrameDiscriminator",
    "Generator",
    "GeneratorConfig",
    "ImageEncoder",
    "LamClip",
    "LamLossWeights",
    "ModulatedConv2d",
    "SequenceDiscriminator",
    "SpeechEncoder",
    "TrainLamConfig",
    "disc_objective_value",
    "frame_disc_objective",
    "generate",
    "generator_adv_terms",
    "generator_adv_value",
    "lam_total_loss",
    "load_lam_checkpoint",
    "load_lam_clips",
    "reconstruction_loss",
    "save_lam_checkpoint",
    "seq_disc_objective",
    "train_lam",
]
