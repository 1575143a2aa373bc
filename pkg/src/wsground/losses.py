"""Training objectives: region-phrase distillation, image-sentence NCE, max margin.

All losses take score tensors recorded on a tape so they can be
differentiated; softmax-style terms go through a masked log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

VARIANTS = ("margin", "nce", "distill", "nce_distill")


class NoDistillSignal(RuntimeError):
    """Raised when a distillation-only objective has no matched phrase to learn from."""


def canonical_variant(name: str) -> str:
    v = name.strip().lower().replace("+", "_").replace("-", "_")
    if v not in VARIANTS:
        raise ValueError(f"unknown loss variant {name!r}; choose from {', '.join(VARIANTS)}")
    return v


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    lambda_a: int = 200
    lambda_b: float = 3.0
    margin_m: float = 0.05
    variant: str = "nce_distill"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if int(self.lambda_a) != self.lambda_a or self.lambda_a < 1:
            raise ValueError(f"lambda_a must be an integer >= 1, got {self.lambda_a}")
        if self.lambda_b < 0:
            raise ValueError(f"lambda_b must be >= 0, got {self.lambda_b}")
        object.__setattr__(self, "variant", canonical_variant(self.variant))

    @property
    def uses_distill(self) -> bool:
        return self.variant in ("distill", "nce_distill")


def lambda_schedule(step: int, a: int, b: float) -> float:
    """Staircase weight ``min(floor(step / a), b)``."""
    if a < 1:
        raise ValueError("a must be >= 1")
    if step < 0:
        raise ValueError("step must be nonnegative")
    return float(min(step // a, b))


def distill_loss(s: Tensor, p_hat: np.ndarray, mask: np.ndarray, tau: float,
                 region_mask: np.ndarray | None = None) -> tuple[Tensor, int]:
    """Cross-entropy between soft pseudo-labels and the tempered region softmax.

    ``s`` is phrases x regions.  Each valid row is normalized over the regions
    allowed by ``region_mask`` (all of them by default, i.e. one image).
    Returns the loss averaged over valid rows and the number of valid rows;
    with none valid, the loss is a zero constant.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if p_hat.shape != s.shape or mask.shape != (s.shape[0],):
        raise dc.ShapeError(f"distill_loss: scores {s.shape}, targets {p_hat.shape}, mask {mask.shape}")
    n_valid = int(mask.sum())
    if n_valid == 0:
        return s.tape.leaf(0.0), 0
    weights = np.where(mask[:, None], p_hat, 0.0)
    lse_mask = np.ones(s.shape, dtype=bool)
    if region_mask is not None:
        region_mask = np.asarray(region_mask, dtype=bool)
        if np.any(weights[~region_mask] != 0):
            raise ValueError("distill_loss: pseudo-label mass outside the allowed regions")
        lse_mask = region_mask.copy()
        # masked-out rows carry zero weight; any nonempty normalizer will do
        lse_mask[~mask] = True
    logits = dc.scale(s, 1.0 / tau)
    lse = dc.logsumexp(logits, lse_mask)
    log_h = logits - dc.expand_rows(lse, s.shape[1])
    ce = dc.total(log_h * s.tape.leaf(weights))
    return dc.scale(ce, -1.0 / n_valid), n_valid


def nce_loss(scores: Tensor, positive: Sequence[int], tau: float, candidates: np.ndarray | None = None) -> Tensor:
    """Mean over rows of ``-log h`` with ``h`` the tempered softmax weight of the positive.

    ``scores`` is sentences x images; ``positive[j]`` is the column of
    sentence j's ground-truth image and every other allowed column
    (``candidates``, default all) is a negative.
    """
    positive = np.asarray(positive, dtype=np.int64)
    B, C = scores.shape
    if positive.shape != (B,):
        raise dc.ShapeError(f"nce_loss: {B} rows but {positive.shape} positives")
    allowed = np.ones((B, C), dtype=bool) if candidates is None else np.array(candidates, dtype=bool)
    allowed[np.arange(B), positive] = True
    if np.any(allowed.sum(axis=1) < 2):
        raise ValueError("nce_loss: every row needs at least one negative")
    logits = dc.scale(scores, 1.0 / tau)
    pick = np.zeros((B, C))
    pick[np.arange(B), positive] = 1.0
    pos = dc.total(logits * scores.tape.leaf(pick), axis=1)
    per_row = dc.logsumexp(logits, allowed) - pos
    return dc.scale(dc.total(per_row), 1.0 / B)


def margin_loss(scores: Tensor, positive: Sequence[int], m: float, candidates: np.ndarray | None = None) -> Tensor:
    """Mean over rows of ``sum_neg max(0, m - S_pos + S_neg)``."""
    positive = np.asarray(positive, dtype=np.int64)
    B, C = scores.shape
    if positive.shape != (B,):
        raise dc.ShapeError(f"margin_loss: {B} rows but {positive.shape} positives")
    negs = np.ones((B, C), dtype=bool) if candidates is None else np.array(candidates, dtype=bool)
    negs[np.arange(B), positive] = False
    if np.any(negs.sum(axis=1) < 1):
        raise ValueError("margin_loss: every row needs at least one negative")
    pick = np.zeros((B, C))
    pick[np.arange(B), positive] = 1.0
    pos = dc.total(scores * scores.tape.leaf(pick), axis=1)
    hinge = dc.relu(dc.shift(scores - dc.expand_rows(pos, C), m))
    return dc.scale(dc.total(hinge * scores.tape.leaf(negs.astype(np.float64))), 1.0 / B)


class LossBreakdown(NamedTuple):
    total: Tensor
    loss_is: float
    loss_rp: float
    lam: float
    n_valid: int


def combined_loss(S: Tensor, s_all: Tensor, p_hat: np.ndarray | None, mask: np.ndarray | None,
                  region_mask: np.ndarray | None, cfg: LossConfig, step: int) -> LossBreakdown:
    """Variant-specific batch objective plus logging values.

    ``S`` is the sentences x images greedy score matrix with positives on the
    diagonal; ``s_all`` holds every phrase against every region of the batch
    and ``p_hat``/``mask``/``region_mask`` give the block-diagonal pseudo
    labels (None when the batch has no detector posteriors).
    """
    lam = lambda_schedule(step, cfg.lambda_a, cfg.lambda_b)
    positive = np.arange(S.shape[0])
    if cfg.variant == "margin":
        l_is = margin_loss(S, positive, cfg.margin_m)
    else:
        l_is = nce_loss(S, positive, cfg.tau)
    if p_hat is not None:
        l_rp, n_valid = distill_loss(s_all, p_hat, mask, cfg.tau, region_mask)
    else:
        if cfg.uses_distill:
            raise NoDistillSignal("variant needs pseudo-labels but the batch has none")
        l_rp, n_valid = None, 0

    if cfg.variant in ("margin", "nce"):
        total = l_is
    elif cfg.variant == "distill":
        if n_valid == 0:
            raise NoDistillSignal("no matched phrase in batch")
        total = l_rp
    else:
        total = l_is if lam == 0.0 or n_valid == 0 else l_is + dc.scale(l_rp, lam)
    return LossBreakdown(
        total,
        l_is.item(),
        l_rp.item() if l_rp is not None else math.nan,
        lam,
        n_valid,
    )
