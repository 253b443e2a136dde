"""Multiscale video transformer (MVTN) on per-frame feature sequences."""

__version__ = "0.1.0"

from .attention import PyramidSchedule, ScheduleKind, SRAParams, pyramid_schedule, sra_forward
from .cost import CostReport, count_macs, count_params, cost_report
from .fusion import ModalityPrediction, fuse_accuracy, late_fuse
from .model import ModelConfig, ModelParams, forward, init_params, predict_proba
from .tensor import Tape, Tensor, backward, grad_check
from .train import TrainConfig, evaluate, train

__all__ = [
    "CostReport", "ModalityPrediction", "ModelConfig", "ModelParams", "PyramidSchedule", "SRAParams",
    "ScheduleKind", "Tape", "Tensor", "TrainConfig", "backward", "cost_report", "count_macs",
    "count_params", "evaluate", "forward", "fuse_accuracy", "grad_check", "init_params", "late_fuse",
    "predict_proba", "pyramid_schedule", "sra_forward", "train",
]
