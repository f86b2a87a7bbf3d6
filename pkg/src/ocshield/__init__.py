"""Adversarial-example detection for tree ensembles in output-configuration space."""

from .attack import (
    AdversarialExample,
    FeasibleOC,
    budgeted_adversarial,
    closest_adversarial,
    count_feasible,
    enumerate_feasible,
    median_delta,
)
from .detectors import (
    DETECTORS,
    DetectorScore,
    DetectorSuite,
    IsolationForest,
    fit_iforest,
    score_ambiguity,
    score_iforest,
    score_mlloo,
    score_ocscore,
)
from .errors import OcShieldError
from .harness import (
    EvalConfig,
    coverage_detection_curve,
    evaluate_dataset,
    make_dataset,
    refset_sweep,
    roc_auc,
)
from .kernels import BACKEND
from .model import (
    Ensemble,
    LeafBox,
    Tree,
    bundled_model_path,
    evaluate,
    leaf_boxes,
    leaf_path,
    load_model,
    parse_model,
    save_model,
)
from .ocspace import ReferenceSet, batch_oc_scores, build_reference, hamming, oc_score, oc_score_simd
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AdversarialExample", "BACKEND", "DETECTORS", "DetectorScore", "DetectorSuite", "Ensemble",
    "EvalConfig", "FeasibleOC", "IsolationForest", "LeafBox", "OcShieldError", "ReferenceSet",
    "TrainConfig", "Tree", "batch_oc_scores", "budgeted_adversarial", "build_reference",
    "bundled_model_path", "closest_adversarial", "count_feasible", "coverage_detection_curve",
    "enumerate_feasible", "evaluate", "evaluate_dataset", "fit_iforest", "hamming", "leaf_boxes",
    "leaf_path", "load_model", "make_dataset", "median_delta", "oc_score", "oc_score_simd",
    "parse_model", "refset_sweep", "roc_auc", "save_model", "score_ambiguity", "score_iforest",
    "score_mlloo", "score_ocscore", "train",
]
