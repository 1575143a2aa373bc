"""Detector-free grounding, accuracy / Recall@1, per-category breakdown, heatmaps.

Nothing in this module accepts detector posteriors: inference only sees
region features, boxes, phrase tokens and learned parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dataset import GroundingDataset, Vocabulary
from .knowledge import Taxonomy, phrase_category
from .losses import VARIANTS
from .model import ParamStore, score_matrix
from .synthcorpus import generate
from .trainer import FeatureStats, train


class GroundingPrediction(NamedTuple):
    region: int
    box: np.ndarray
    score: float


def ground(params: ParamStore, features: np.ndarray, boxes: np.ndarray,
           phrases: Sequence[Sequence[int]]) -> list[GroundingPrediction]:
    """Pick the best-scoring region for each phrase (ties go to the lowest index)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != params["W1_f"].shape[0]:
        raise ValueError(f"features have {features.shape[1]} dims, checkpoint expects {params['W1_f'].shape[0]}")
    s = score_matrix(params, features, phrases)
    return predictions_from_scores(s, boxes)


def predictions_from_scores(s: np.ndarray, boxes: np.ndarray) -> list[GroundingPrediction]:
    boxes = np.asarray(boxes, dtype=np.float64)
    out = []
    for row in np.asarray(s):
        r = int(np.argmax(row))
        out.append(GroundingPrediction(r, boxes[r], float(row[r])))
    return out


def iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for box in (a, b):
        if box.shape != (4,) or not (box[2] > box[0] and box[3] > box[1]):
            raise ValueError(f"invalid box {box.tolist()}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


@dataclass
class EvalReport:
    correct: dict[str, int] = field(default_factory=dict)
    total: dict[str, int] = field(default_factory=dict)
    recall_hits: int = 0
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def num_correct(self) -> int:
        return sum(self.correct.values())

    @property
    def num_total(self) -> int:
        return sum(self.total.values())

    @property
    def accuracy(self) -> float:
        return self.num_correct / self.num_total if self.num_total else 0.0

    @property
    def recall_at_1(self) -> float:
        return self.recall_hits / self.num_total if self.num_total else 0.0

    def bucket_accuracy(self, bucket: str) -> float:
        return self.correct[bucket] / self.total[bucket] if self.total.get(bucket) else 0.0

    def subset_accuracy(self, buckets) -> float:
        c = sum(self.correct.get(b, 0) for b in buckets)
        t = sum(self.total.get(b, 0) for b in buckets)
        return c / t if t else 0.0

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport(dict(self.correct), dict(self.total), self.recall_hits + other.recall_hits, dict(self.meta))
        for b in other.total:
            out.correct[b] = out.correct.get(b, 0) + other.correct.get(b, 0)
            out.total[b] = out.total.get(b, 0) + other.total[b]
        return out

    def to_csv(self) -> str:
        lines = ["bucket,correct,total,accuracy"]
        for b in sorted(self.total):
            lines.append(f"{b},{self.correct.get(b, 0)},{self.total[b]},{self.bucket_accuracy(b):.6f}")
        lines.append(f"overall,{self.num_correct},{self.num_total},{self.accuracy:.6f}")
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        doc = {"accuracy": round(self.accuracy, 6), "recall_at_1": round(self.recall_at_1, 6),
               "correct": self.num_correct, "total": self.num_total, **self.meta}
        return json.dumps(doc, sort_keys=True)


class MissingGroundTruth(ValueError):
    pass


def accuracy(predictions: Sequence[GroundingPrediction], ground_truth: Sequence, scores: Sequence[np.ndarray],
             boxes: Sequence[np.ndarray], categories: Sequence[str] | None = None,
             threshold: float = 0.5) -> EvalReport:
    """Fraction of phrases whose predicted box has IoU > ``threshold`` with the truth.

    ``scores[k]``/``boxes[k]`` are the score row and candidate boxes of
    phrase k; they feed an independent Recall@1 count (rank all regions,
    check the top one) that must agree with the accuracy.
    """
    missing = [k for k, gt in enumerate(ground_truth) if gt is None]
    if missing:
        raise MissingGroundTruth(f"phrases without ground truth: {missing}")
    report = EvalReport()
    for k, (pred, gt) in enumerate(zip(predictions, ground_truth)):
        bucket = categories[k] if categories is not None else "all"
        hit = iou(pred.box, gt) > threshold
        report.total[bucket] = report.total.get(bucket, 0) + 1
        report.correct[bucket] = report.correct.get(bucket, 0) + int(hit)
        ranking = np.argsort(-np.asarray(scores[k]), kind="stable")
        report.recall_hits += int(iou(np.asarray(boxes[k])[ranking[0]], gt) > threshold)
    if report.recall_hits != report.num_correct:
        raise AssertionError(f"accuracy ({report.num_correct}) and Recall@1 ({report.recall_hits}) disagree")
    return report


def evaluate(params: ParamStore, stats: FeatureStats, vocab: Vocabulary, dataset: GroundingDataset,
             split: str = "test", per_category: bool = True, threshold: float = 0.5) -> EvalReport:
    """Ground every phrase of ``split`` and score it against the hidden boxes."""
    if vocab is not None and len(vocab) != params["E"].shape[0]:
        raise ValueError(f"vocabulary has {len(vocab)} ids, checkpoint embeds {params['E'].shape[0]}")
    taxonomy: Taxonomy = dataset.taxonomy
    preds, gts, rows, cands, cats = [], [], [], [], []
    for j in dataset.sentence_ids(split):
        sent = dataset.sentences[j]
        image = dataset.images[sent.image]
        ids = [vocab.encode(p) for p in sent.phrases]
        s = score_matrix(params, stats.apply(image.features), ids)
        preds.extend(predictions_from_scores(s, image.boxes))
        gts.extend(dataset.gt_boxes(j))
        rows.extend(s)
        cands.extend([image.boxes] * len(ids))
        cats.extend(phrase_category(p, taxonomy) if per_category else "all" for p in sent.phrases)
    return accuracy(preds, gts, rows, cands, cats, threshold)


COVERED_EXCLUDE = ("uncovered",)


def covered_accuracy(report: EvalReport) -> float:
    return report.subset_accuracy([b for b in report.total if b not in COVERED_EXCLUDE])


@dataclass
class Heatmap:
    scores: np.ndarray  # H x W
    covered: np.ndarray  # H x W bool; False means no proposal covers the pixel

    def to_pgm(self) -> bytes:
        H, W = self.scores.shape
        lo, hi = float(self.scores.min()), float(self.scores.max())
        if hi == lo:
            pix = np.full((H, W), 128, dtype=np.uint8)
        else:
            pix = np.round((self.scores - lo) / (hi - lo) * 255.0).astype(np.uint8)
        return f"P5\n{W} {H}\n255\n".encode("ascii") + pix.tobytes()


def heatmap_from_scores(region_scores: np.ndarray, boxes: np.ndarray, canvas: tuple[float, float],
                        grid: tuple[int, int]) -> Heatmap:
    """Per-pixel mean score over the proposals containing the pixel center.

    A center belongs to a box when ``min <= c < max`` on both axes.
    """
    H, W = grid
    if H < 1 or W < 1:
        raise ValueError("grid must be at least 1x1")
    cw, ch = canvas
    cx = (np.arange(W) + 0.5) * cw / W
    cy = (np.arange(H) + 0.5) * ch / H
    acc = np.zeros((H, W))
    count = np.zeros((H, W), dtype=np.int64)
    for score, (x0, y0, x1, y1) in zip(np.asarray(region_scores, dtype=np.float64), np.asarray(boxes)):
        inside = ((cy >= y0) & (cy < y1))[:, None] & ((cx >= x0) & (cx < x1))[None, :]
        acc[inside] += score
        count[inside] += 1
    covered = count > 0
    out = np.zeros((H, W))
    out[covered] = acc[covered] / count[covered]
    return Heatmap(out, covered)


def heatmap(params: ParamStore, stats: FeatureStats, vocab: Vocabulary, dataset: GroundingDataset,
            image: int, phrase: Sequence[str], grid: tuple[int, int]) -> Heatmap:
    im = dataset.images[image]
    s = score_matrix(params, stats.apply(im.features), [vocab.encode(phrase)])[0]
    return heatmap_from_scores(s, im.boxes, im.canvas, grid)


def category_fn(taxonomy: Taxonomy) -> Callable[[Sequence[str]], str]:
    return lambda tokens: phrase_category(tokens, taxonomy)


# -- ablation --------------------------------------------------------------------

ABLATION_HEADER = ("variant", "accuracy", "covered_accuracy", "correct", "total")


@dataclass
class AblationTable:
    rows: dict[str, EvalReport]  # variant -> report, in run order

    def accuracy(self, variant: str) -> float:
        return self.rows[variant].accuracy

    def covered(self, variant: str) -> float:
        return covered_accuracy(self.rows[variant])

    def to_csv(self) -> str:
        lines = [",".join(ABLATION_HEADER)]
        for v, rep in self.rows.items():
            lines.append(f"{v},{rep.accuracy:.6f},{covered_accuracy(rep):.6f},{rep.num_correct},{rep.num_total}")
        return "\n".join(lines) + "\n"


def ablate(dataset: GroundingDataset, cfg, variants: Sequence[str] = None, split: str = "test") -> AblationTable:
    """Train each loss variant with otherwise identical settings and evaluate it.

    ``cfg`` is a :class:`~wsground.trainer.TrainConfig`; only its loss
    variant changes between rows.
    """
    rows = {}
    for v in variants or VARIANTS:
        run_cfg = replace(cfg, loss=replace(cfg.loss, variant=v))
        result = train(dataset, run_cfg)
        rows[v] = evaluate(result.params, result.stats, result.vocab, dataset, split)
    return AblationTable(rows)


def ablation_benchmark(world, cfg, seeds: Sequence[int], variants: Sequence[str] = None) -> dict[int, AblationTable]:
    """One ablation per seed; the seed drives both world generation and training."""
    out = {}
    for seed in seeds:
        dataset, _ = generate(world, seed)
        out[seed] = ablate(dataset, replace(cfg, seed=seed), variants)
    return out
