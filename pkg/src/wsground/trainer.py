"""Optimization loop: feature standardization, in-batch negatives, Adam, lambda schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .dataset import GroundingDataset, TrainingView, Vocabulary, strip_supervision, training_vocabulary
from .knowledge import PseudoLabelMatrix, match_phrase_class, pseudo_labels
from .losses import LossConfig, NoDistillSignal, combined_loss, lambda_schedule
from .model import (
    ModelConfig,
    ParamStore,
    encode_phrase,
    encode_region,
    pairwise_image_sentence,
    score_region_phrase,
)

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
LOG_HEADER = ("step", "total", "loss_is", "loss_rp", "lambda")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 512
    embed_dim: int = 512
    token_dim: int = 300
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so every sentence has a negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray  # bool per dimension

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def fit_feature_stats(train_features: Sequence[np.ndarray] | np.ndarray) -> FeatureStats:
    """Per-dimension mean and population std over all training regions."""
    x = np.vstack(train_features) if not isinstance(train_features, np.ndarray) else train_features
    if x.shape[0] < 2:
        raise ValueError("need at least two training regions")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    floored = std < STD_FLOOR
    if floored.any():
        log.warning("constant feature dimensions %s; std floored at %g", np.flatnonzero(floored).tolist(), STD_FLOOR)
    return FeatureStats(mean, np.maximum(std, STD_FLOOR), floored)


def apply_standardization(view: TrainingView, stats: FeatureStats) -> TrainingView:
    if view.standardized:
        raise ValueError("features are already standardized")
    return view.with_features([stats.apply(im.features) for im in view.images])


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = np.flatnonzero(~np.isfinite(g.reshape(-1)))
            raise FloatingPointError(
                f"non-finite gradient for {name} at step {state.step}: {bad.size} entries, first at {bad[0]}")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class Batch:
    images: tuple[int, ...]
    sentences: tuple[int, ...]  # sentences[b] describes images[b]; the other images are its negatives


def sample_batch(rng: np.random.Generator, view: TrainingView, batch_size: int, split: str = "train") -> Batch:
    pool = [i for i in view.image_ids(split) if view.sentences_of(i)]
    if batch_size > len(pool):
        raise ValueError(f"batch_size {batch_size} exceeds the {len(pool)} {split} images; use a smaller batch")
    images = rng.choice(pool, size=batch_size, replace=False)
    sentences = []
    for i in images:
        options = view.sentences_of(int(i))
        sentences.append(options[int(rng.integers(len(options)))])
    return Batch(tuple(int(i) for i in images), tuple(sentences))


class PreparedData:
    """Standardized view plus per-sentence token ids and pseudo-labels, computed once."""

    def __init__(self, view: TrainingView, stats: FeatureStats, vocab: Vocabulary, want_labels: bool):
        self.view = apply_standardization(view, stats)
        self.stats = stats
        self.vocab = vocab
        self.token_ids = [[vocab.encode(p) for p in s.phrases] for s in view.sentences]
        self.labels: list[PseudoLabelMatrix] | None = None
        if want_labels and view.has_posteriors:
            taxonomy = view.taxonomy
            self.labels = []
            for s in view.sentences:
                matches = [match_phrase_class(p, taxonomy) for p in s.phrases]
                self.labels.append(pseudo_labels(view.posterior(s.image), matches))


def batch_loss(params: ParamStore, data: PreparedData, batch: Batch, cfg: LossConfig, step: int):
    tape = dc.Tape()
    bound = params.bind(tape)
    images = [data.view.images[i] for i in batch.images]
    feats = np.vstack([im.features for im in images])
    phrases = [ids for j in batch.sentences for ids in data.token_ids[j]]
    region_lengths = [im.num_regions for im in images]
    phrase_lengths = [len(data.token_ids[j]) for j in batch.sentences]

    s_all = score_region_phrase(encode_region(bound, feats, tape), encode_phrase(bound, phrases, tape))
    S = pairwise_image_sentence(s_all, region_lengths, phrase_lengths)

    p_hat = mask = region_mask = None
    if data.labels is not None:
        P, R = s_all.shape
        p_hat = np.zeros((P, R))
        region_mask = np.zeros((P, R), dtype=bool)
        mask = np.zeros(P, dtype=bool)
        row = 0
        col = 0
        for b, j in enumerate(batch.sentences):
            lab = data.labels[j]
            m, n = lab.values.shape
            p_hat[row:row + m, col:col + n] = lab.values
            region_mask[row:row + m, col:col + n] = True
            mask[row:row + m] = lab.mask
            row += m
            col += n
    return tape, bound, combined_loss(S, s_all, p_hat, mask, region_mask, cfg, step)


@dataclass
class TrainResult:
    params: ParamStore
    stats: FeatureStats
    vocab: Vocabulary
    log: list[tuple[int, float, float, float, float]]

    def log_csv(self) -> str:
        lines = [",".join(LOG_HEADER)]
        for step, total, l_is, l_rp, lam in self.log:
            lines.append(f"{step},{total!r},{l_is!r},{l_rp!r},{lam!r}")
        return "\n".join(lines) + "\n"


def steps_per_epoch(view: TrainingView, batch_size: int) -> int:
    n = sum(1 for i in view.image_ids("train") if view.sentences_of(i))
    return max(1, n // batch_size)


def train(data: GroundingDataset | TrainingView, cfg: TrainConfig) -> TrainResult:
    """Train from scratch.  Identical ``(data, cfg)`` give bit-identical results."""
    view = strip_supervision(data) if isinstance(data, GroundingDataset) else data
    if view.standardized:
        raise ValueError("pass the raw view; standardization happens here")
    loss_cfg = cfg.loss
    if loss_cfg.uses_distill and not view.has_posteriors:
        raise NoDistillSignal(f"variant {loss_cfg.variant} needs detector posteriors; the dataset has none")

    train_ids = view.image_ids("train")
    stats = fit_feature_stats([view.images[i].features for i in train_ids])
    vocab = training_vocabulary(view)
    prepared = PreparedData(view, stats, vocab, want_labels=view.has_posteriors)
    if loss_cfg.uses_distill:
        train_set = set(train_ids)
        covered = sum(lab.num_valid for s, lab in zip(view.sentences, prepared.labels) if s.image in train_set)
        if covered == 0:
            raise NoDistillSignal("no training phrase matches a detector class")

    mcfg = ModelConfig(view.images[0].features.shape[1], len(vocab), cfg.hidden, cfg.embed_dim, cfg.token_dim)
    params = ParamStore.init(mcfg, np.random.default_rng([cfg.seed, 0]))
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 1])
    rows = []
    n_steps = cfg.epochs * steps_per_epoch(view, cfg.batch_size)
    for step in range(n_steps):
        batch = sample_batch(rng, view, cfg.batch_size)
        try:
            tape, bound, out = batch_loss(params, prepared, batch, loss_cfg, step)
        except NoDistillSignal:
            log.info("step %d: no matched phrase in batch, skipped", step)
            rows.append((step, math.nan, math.nan, math.nan, lambda_schedule(step, loss_cfg.lambda_a, loss_cfg.lambda_b)))
            continue
        grads = dc.backprop(tape, out.total)
        adam_step(params, {k: grads[t] for k, t in bound.items()}, state, cfg.learning_rate,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        rows.append((step, out.total.item(), out.loss_is, out.loss_rp, out.lam))
        if step % 100 == 0:
            log.debug("step %d total %.5f is %.5f rp %.5f lambda %g", step, rows[-1][1], out.loss_is, out.loss_rp, out.lam)
    return TrainResult(params, stats, vocab, rows)
