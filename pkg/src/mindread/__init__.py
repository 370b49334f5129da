"""Pedestrian crossing intent with multi-label reasons.

A numpy reverse-mode autodiff core drives per-stream transformer encoders,
attention fusion and a label co-occurrence graph over reason embeddings.
"""

from .dataset import AnnotationRecord, generate_synthetic, load_corpus, save_corpus, split
from .estimator import MindreadClassifier
from .icc import icc
from .training import TrainConfig, evaluate, gradcheck, run_ablation, train
from .vocab import ReasonVocabulary

__all__ = [
    "AnnotationRecord",
    "MindreadClassifier",
    "ReasonVocabulary",
    "TrainConfig",
    "evaluate",
    "generate_synthetic",
    "gradcheck",
    "icc",
    "load_corpus",
    "run_ablation",
    "save_corpus",
    "split",
    "train",
]
