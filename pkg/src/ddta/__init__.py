"""Temperature-distilled CNN classifiers, minimal-perturbation attacks, and
robustness metrics, built on a small NumPy reverse-mode autodiff engine."""

__version__ = "0.1.0"

from .attacks import (AttackConfig, AttackResult, attack_l0, attack_l2,
                      attack_linf, objective_f, objective_f_untargeted,
                      search_constant_c)
from .datasets import LabeledDataset, load_cifar10, load_mnist, synthetic_digits
from .distillation import (DistillationPlan, TrainingHyperparameters,
                           generate_soft_labels, run_distillation_chain,
                           train_hard, train_soft)
from .estimators import DistilledChainClassifier, TemperatureScaledCNN
from .evaluation import (EvaluationReport, RobustnessReport,
                         SensitivityProfile, accuracy, confidence, robustness,
                         sensitivity_profile)
from .harness import ExperimentConfig, RunManifest, run_experiment
from .network import (ArchitectureSpec, TrainedModel, build_model,
                      input_gradient, load_checkpoint, logits, predict,
                      save_checkpoint)
from .tensor import Tape, Tensor, backward, cross_entropy_soft, softmax_t

__all__ = [
    "AttackConfig", "AttackResult", "attack_l0", "attack_l2", "attack_linf",
    "objective_f", "objective_f_untargeted", "search_constant_c",
    "LabeledDataset", "load_cifar10", "load_mnist", "synthetic_digits",
    "DistillationPlan", "TrainingHyperparameters", "generate_soft_labels",
    "run_distillation_chain", "train_hard", "train_soft",
    "DistilledChainClassifier", "TemperatureScaledCNN",
    "EvaluationReport", "RobustnessReport", "SensitivityProfile",
    "accuracy", "confidence", "robustness", "sensitivity_profile",
    "ExperimentConfig", "RunManifest", "run_experiment",
    "ArchitectureSpec", "TrainedModel", "build_model", "input_gradient",
    "load_checkpoint", "logits", "predict", "save_checkpoint",
    "Tape", "Tensor", "backward", "cross_entropy_soft", "softmax_t",
    "__version__",
]
