"""Two-branch region/phrase network and the two score functions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor

OOV = 0

REGION_PARAMS = ("W1_f", "b1_f", "W2_f", "b2_f")
PHRASE_PARAMS = ("E", "W1_g", "b1_g", "W2_g", "b2_g")


@dataclass(frozen=True)
class ModelConfig:
    region_dim: int
    vocab_size: int
    hidden: int = 512
    embed_dim: int = 512
    token_dim: int = 300


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class ParamStore(dict):
    """Named float64 arrays for both branches and the token table.

    Embedding row 0 is reserved for out-of-vocabulary tokens.
    """

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ParamStore":
        h, d, t = cfg.hidden, cfg.embed_dim, cfg.token_dim
        p = cls()
        p["W1_f"] = _glorot(rng, cfg.region_dim, h)
        p["b1_f"] = np.zeros(h)
        p["W2_f"] = _glorot(rng, h, d)
        p["b2_f"] = np.zeros(d)
        p["E"] = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, t))
        p["W1_g"] = _glorot(rng, t, h)
        p["b1_g"] = np.zeros(h)
        p["W2_g"] = _glorot(rng, h, d)
        p["b2_g"] = np.zeros(d)
        p.check()
        return p

    @property
    def config(self) -> ModelConfig:
        return ModelConfig(
            region_dim=self["W1_f"].shape[0],
            vocab_size=self["E"].shape[0],
            hidden=self["W1_f"].shape[1],
            embed_dim=self["W2_f"].shape[1],
            token_dim=self["E"].shape[1],
        )

    def check(self):
        missing = [k for k in REGION_PARAMS + PHRASE_PARAMS if k not in self]
        if missing:
            raise ValueError(f"parameter store lacks {missing}")
        d_in, h = self["W1_f"].shape
        d = self["W2_f"].shape[1]
        t = self["E"].shape[1]
        expected = {
            "b1_f": (h,), "W2_f": (h, d), "b2_f": (d,),
            "W1_g": (t, h), "b1_g": (h,), "W2_g": (h, d), "b2_g": (d,),
        }
        for name, shape in expected.items():
            if self[name].shape != shape:
                raise ValueError(f"{name} has shape {self[name].shape}, expected {shape}")

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.leaf(self[name], name) for name in sorted(self)}

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.items()})


def _two_layer(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    hidden = dc.relu(dc.bias_add(x @ W1, b1))
    return dc.l2_normalize(dc.bias_add(hidden @ W2, b2))


def encode_region(params: Mapping[str, Tensor], features, tape: Tape) -> Tensor:
    """Embed region features (n x d_region) to unit-norm rows (n x embed_dim)."""
    x = features if isinstance(features, Tensor) else tape.leaf(features)
    if x.shape[1] != params["W1_f"].shape[0]:
        raise dc.ShapeError(
            f"encode_region: feature dim {x.shape[1]} != expected {params['W1_f'].shape[0]}"
        )
    return _two_layer(x, params["W1_f"], params["b1_f"], params["W2_f"], params["b2_f"])


def encode_phrase(params: Mapping[str, Tensor], phrases: Sequence[Sequence[int]], tape: Tape) -> Tensor:
    """Embed token-id phrases: gather, max-pool over tokens, two FC layers, L2-normalize."""
    ids: list[int] = []
    segments = []
    for k, phrase in enumerate(phrases):
        if len(phrase) == 0:
            raise ValueError(f"encode_phrase: phrase {k} is empty")
        segments.append((len(ids), len(ids) + len(phrase)))
        ids.extend(int(t) for t in phrase)
    tokens = dc.gather(params["E"], ids)
    pooled = dc.segment_max(tokens, segments, axis=0)
    return _two_layer(pooled, params["W1_g"], params["b1_g"], params["W2_g"], params["b2_g"])


def score_region_phrase(f_out: Tensor, g_out: Tensor) -> Tensor:
    """Cosine scores, phrases x regions: ``s[k, l] = f(x_l) . g(y_k)``."""
    if f_out.shape[1] != g_out.shape[1]:
        raise dc.ShapeError(f"score_region_phrase: embedding dims {f_out.shape[1]} != {g_out.shape[1]}")
    return g_out @ f_out.T


def score_image_sentence(s: Tensor) -> Tensor:
    """Greedy image-sentence score: each phrase takes its best region, summed."""
    m, n = s.shape
    if m < 1 or n < 1:
        raise dc.ShapeError(f"score_image_sentence: empty score matrix {s.shape}")
    return dc.total(dc.segment_max(s, [(0, n)], axis=1))


def segments_from_lengths(lengths: Sequence[int]) -> list[tuple[int, int]]:
    bounds = np.concatenate([[0], np.cumsum(lengths)]).astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(len(lengths))]


def pairwise_image_sentence(s_all: Tensor, region_lengths: Sequence[int], phrase_lengths: Sequence[int]) -> Tensor:
    """Greedy scores for every (sentence, image) pair of a batch at once.

    ``s_all`` holds all phrases of all sentences (rows) against all regions of
    all images (columns), each group contiguous.  Returns a sentences x images
    matrix whose (j, i) entry equals ``score_image_sentence`` on the block.
    """
    best = dc.segment_max(s_all, segments_from_lengths(region_lengths), axis=1)
    owner = np.zeros((len(phrase_lengths), s_all.shape[0]))
    for j, (lo, hi) in enumerate(segments_from_lengths(phrase_lengths)):
        owner[j, lo:hi] = 1.0
    return s_all.tape.leaf(owner) @ best


def score_matrix(params: ParamStore, features: np.ndarray, phrases: Sequence[Sequence[int]]) -> np.ndarray:
    """Plain-array region-phrase scores for inference (phrases x regions)."""
    tape = Tape()
    bound = params.bind(tape)
    s = score_region_phrase(encode_region(bound, features, tape), encode_phrase(bound, phrases, tape))
    return np.array(s.value)
