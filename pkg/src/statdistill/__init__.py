"""Statistics-transfer knowledge distillation on a numpy autodiff engine.

The package is self-contained: a reverse-mode Tensor, desk-scale wide
residual networks, channel-statistics losses with feature re-normalization,
classic distillation baselines, evaluation metrics, and a CLI harness.
"""

from .checkpoint import load_tensors, save_tensors
from .config import (DatasetSpec, RunSpec, apply_overrides, build_dataset,
                     desk_dataset, desk_distill_spec, desk_teacher_spec,
                     spec_from_dict, spec_from_file, spec_to_dict,
                     spec_to_file, spec_to_json)
from .data import (AugmentSpec, DatasetHandle, augment_batch,
                   load_cifar_binary, make_synthetic)
from .errors import (ConfigError, FormatError, InputError, ShapeError,
                     StatDistillError, StateError, UsageError)
from .gradcheck import GradCheckReport, grad_check
from .metrics import (MetricsRecord, accuracy, ce_with_labels,
                      evaluate_model, export_features, kl_teacher_student,
                      kmeans, load_features, nmi, nmi_features,
                      stats_distance)
from .models import HOOK_NAMES, Module, WrnConfig, build_wrn
from .stats import (adain, adain_loss, channel_stats, stats_match_loss,
                    stats_match_total)
from .tensor import Tensor, no_grad
from .trainer import (SGD, Distiller, LossConfig, RunReport, StepReport,
                      TrainConfig, build_adapters, effective_lr,
                      load_teacher, loss_at, loss_kd, pretrain_teacher,
                      run_distillation, train_step)

__all__ = [
    "AugmentSpec", "ConfigError", "DatasetHandle", "DatasetSpec",
    "Distiller", "FormatError", "GradCheckReport", "HOOK_NAMES", "InputError",
    "LossConfig", "MetricsRecord", "Module", "RunReport", "RunSpec", "SGD",
    "ShapeError", "StatDistillError", "StateError", "StepReport", "Tensor",
    "TrainConfig", "UsageError", "WrnConfig", "accuracy", "adain",
    "adain_loss", "apply_overrides", "augment_batch", "build_adapters",
    "build_dataset", "build_wrn", "ce_with_labels", "channel_stats",
    "desk_dataset", "desk_distill_spec", "desk_teacher_spec",
    "effective_lr", "evaluate_model", "export_features", "grad_check",
    "kl_teacher_student", "kmeans", "load_cifar_binary", "load_features",
    "load_tensors", "load_teacher", "loss_at", "loss_kd", "make_synthetic",
    "nmi", "nmi_features", "no_grad", "pretrain_teacher", "run_distillation",
    "save_tensors", "spec_from_dict", "spec_from_file", "spec_to_dict",
    "spec_to_file", "spec_to_json", "stats_distance", "stats_match_loss",
    "stats_match_total", "train_step",
]
