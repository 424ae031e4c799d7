"""Plan recognition and human motion prediction."""
from .baseline import constant_speed_predictor
from .classifier import PlanClassifier, class_probabilities, classify_plan, train_plan_classifier
from .encoding import Bounds, TrajectoryImage, TrajectoryWindow, encode_trajectory_image, max_pool
from .motion import (AdaptivePredictor, adapt_online, kalman_gain, make_predictor, msee_matrix, nn_forward,
                     phi_matrix, predict_with_uncertainty, train_nn_offline)
from .result import PredictionResult, from_covariance

__all__ = [
    "constant_speed_predictor", "PlanClassifier", "class_probabilities", "classify_plan",
    "train_plan_classifier", "Bounds", "TrajectoryImage", "TrajectoryWindow", "encode_trajectory_image",
    "max_pool", "AdaptivePredictor", "adapt_online", "kalman_gain", "make_predictor", "msee_matrix",
    "nn_forward", "phi_matrix", "predict_with_uncertainty", "train_nn_offline", "PredictionResult",
    "from_covariance",
]
