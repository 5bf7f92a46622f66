"""Self-explaining neural classifiers with quantitative interpretability
evaluation: concept-based additive models trained with a gradient-matching
robustness penalty, post-hoc attribution baselines, and faithfulness /
stability metrics."""

from .estimator import SennClassifier
from .explainers import (EXPLAINERS, epsilon_lrp, exact_shapley,
                         grad_times_input, integrated_gradients, kernel_shap,
                         lime_explain, occlusion, saliency)
from .metrics import (adversarial_pair, aggregate_faithfulness, faithfulness,
                      gaussian_perturbation_probe, lipschitz_black_box,
                      lipschitz_discrete, lipschitz_gradient_ascent)
from .model import Explanation, SennModel, build_senn, prototype_grounding
from .objectives import robustness_loss, total_loss, training_objective
from .persistence import (CheckpointError, ExperimentConfig,
                          ShapeMismatchError, TruncatedBlobError,
                          VersionMismatchError, load_checkpoint,
                          save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "SennClassifier", "SennModel", "Explanation", "build_senn",
    "prototype_grounding", "robustness_loss", "total_loss",
    "training_objective", "EXPLAINERS", "saliency", "grad_times_input",
    "integrated_gradients", "occlusion", "epsilon_lrp", "lime_explain",
    "kernel_shap", "exact_shapley", "faithfulness", "aggregate_faithfulness",
    "lipschitz_gradient_ascent", "lipschitz_black_box", "lipschitz_discrete",
    "adversarial_pair", "gaussian_perturbation_probe", "ExperimentConfig",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "VersionMismatchError", "ShapeMismatchError", "TruncatedBlobError",
]
