"""Unsupervised decipherment of undersegmented lost-language texts."""

from .alignment import Stem, align_topk_stems, align_viterbi
from .corpus import (
    Corpus,
    Inscription,
    SynthSpec,
    Vocabulary,
    generate_synthetic,
    load_bundle,
    load_corpus,
    load_vocab,
    save_bundle,
)
from .errors import DecipherError
from .evaluation import closeness_auc, closeness_curve, precision_at_k
from .objective import ObjectiveConfig
from .phonetics import FeatureTable, MappingMatrix, mapping_matrix
from .segmentation import extract_predictions, viterbi_segmentation
from .training import Trainer, TrainConfig, run_experiment, supervision_targets

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DecipherError",
    "FeatureTable",
    "Inscription",
    "MappingMatrix",
    "ObjectiveConfig",
    "Stem",
    "SynthSpec",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "align_topk_stems",
    "align_viterbi",
    "closeness_auc",
    "closeness_curve",
    "extract_predictions",
    "generate_synthetic",
    "load_bundle",
    "load_corpus",
    "load_vocab",
    "mapping_matrix",
    "precision_at_k",
    "run_experiment",
    "save_bundle",
    "supervision_targets",
    "viterbi_segmentation",
]
