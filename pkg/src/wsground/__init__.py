"""Weakly supervised phrase grounding with detector-distilled region targets.

Training sees only image/sentence pairs plus precomputed detector class
posteriors; inference needs neither the detector nor any box labels.
"""

from .dataset import GroundingDataset, TrainingView, Vocabulary, strip_supervision
from .evaluate import EvalReport, ablate, accuracy, evaluate, ground, heatmap, iou
from .fileio import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .knowledge import Taxonomy, match_phrase_class, pseudo_labels
from .losses import LossConfig, combined_loss, distill_loss, lambda_schedule, margin_loss, nce_loss
from .model import ModelConfig, ParamStore, score_image_sentence, score_region_phrase
from .synthcorpus import WorldSpec, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "GroundingDataset", "LossConfig", "ModelConfig", "ParamStore", "Taxonomy",
    "TrainConfig", "TrainingView", "Vocabulary", "WorldSpec", "ablate", "accuracy",
    "combined_loss", "distill_loss", "evaluate", "generate", "ground", "heatmap", "iou",
    "lambda_schedule", "load_checkpoint", "load_dataset", "margin_loss", "match_phrase_class",
    "nce_loss", "pseudo_labels", "save_checkpoint", "save_dataset", "score_image_sentence",
    "score_region_phrase", "strip_supervision", "train",
]
