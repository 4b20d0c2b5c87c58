from .ctc import INFEASIBLE_LOSS, ctc_loss, ctc_loss_batch, min_frames
from .frontend import FrontendConfig, VisualFrontend, clip_to_tensor, normalize_frames
from .conformer import ConformerEncoder
from .decoder import TransformerDecoder, sinusoidal_positions
from .model import (
    VsrConfig,
    VsrFeatureBundle,
    VsrModel,
    ce_loss,
    joint_loss,
    make_decoder_batch,
    teacher_forced_logprob,
)
from .search import DecodeResult, beam_decode, greedy_decode, max_output_length
from .train import Batch, TrainVsrConfig, collate, frame_budget_batches, lr_at, train_vsr

__all__ = [
    "INFEASIBLE_LOSS", "ctc_loss", "ctc_loss_batch", "min_frames",
    "FrontendConfig", "VisualFrontend", "clip_to_tensor", "normalize_frames",
    "ConformerEncoder", "TransformerDecoder", "sinusoidal_positions",
    "VsrConfig", "VsrFeatureBundle", "VsrModel", "ce_loss", "joint_loss",
    "make_decoder_batch", "teacher_forced_logprob",
    "DecodeResult", "beam_decode", "greedy_decode", "max_output_length",
    "Batch", "TrainVsrConfig", "collate", "frame_budget_batches", "lr_at", "train_vsr",
]
