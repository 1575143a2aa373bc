"""In-memory grounding dataset and the supervision-free view the trainer sees."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .knowledge import Taxonomy

SPLITS = ("train", "val", "test")

ROLE_WHOLE, ROLE_PART, ROLE_CLUTTER = 0, 1, 2


@dataclass
class ImageRecord:
    boxes: np.ndarray  # n x 4, (x_min, y_min, x_max, y_max)
    features: np.ndarray  # n x d_region
    posteriors: np.ndarray | None = None  # n x K, as stored (not renormalized)
    split: str = "train"
    canvas: tuple[float, float] = (100.0, 100.0)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.boxes)
        if n < 1:
            raise ValueError("an image needs at least one region")
        if self.features.shape[0] != n:
            raise ValueError(f"{n} boxes but {self.features.shape[0]} feature rows")
        if np.any(self.boxes[:, 2] <= self.boxes[:, 0]) or np.any(self.boxes[:, 3] <= self.boxes[:, 1]):
            raise ValueError("box with non-positive extent")
        if self.posteriors is not None:
            self.posteriors = np.asarray(self.posteriors, dtype=np.float64)
            if self.posteriors.shape[0] != n:
                raise ValueError("posterior rows must match regions")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def num_regions(self) -> int:
        return len(self.boxes)


@dataclass
class SentenceRecord:
    image: int
    phrases: list[list[str]]

    def __post_init__(self):
        if not self.phrases:
            raise ValueError("a sentence needs at least one phrase")
        if any(len(p) == 0 for p in self.phrases):
            raise ValueError("empty phrase")
        self.phrases = [[t.lower() for t in p] for p in self.phrases]


@dataclass
class HiddenLabels:
    """Ground truth that training must never see."""

    region_class: list[np.ndarray]  # per image, leaf id or -1
    region_attr: list[np.ndarray]  # per image, attribute id or -1
    region_role: list[np.ndarray]  # per image, ROLE_*
    phrase_region: list[np.ndarray]  # per sentence, index of the ground-truth region
    phrase_boxes: list[np.ndarray]  # per sentence, m x 4


def normalized_posterior(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return raw / raw.sum(axis=1, keepdims=True)


@dataclass
class GroundingDataset:
    taxonomy_text: str
    images: list[ImageRecord]
    sentences: list[SentenceRecord]
    hidden: HiddenLabels | None = None

    def __post_init__(self):
        for j, s in enumerate(self.sentences):
            if not 0 <= s.image < len(self.images):
                raise ValueError(f"sentence {j} points at missing image {s.image}")
        if self.hidden is not None:
            if len(self.hidden.phrase_boxes) != len(self.sentences):
                raise ValueError("hidden labels do not cover every sentence")

    @cached_property
    def taxonomy(self) -> Taxonomy:
        return Taxonomy.parse(self.taxonomy_text)

    @property
    def feature_dim(self) -> int:
        return self.images[0].features.shape[1]

    @property
    def has_posteriors(self) -> bool:
        return bool(self.images) and all(im.posteriors is not None for im in self.images)

    def posterior(self, i: int) -> np.ndarray:
        raw = self.images[i].posteriors
        if raw is None:
            raise KeyError(f"image {i} has no detector posteriors")
        return normalized_posterior(raw)

    def image_ids(self, split: str) -> list[int]:
        return [i for i, im in enumerate(self.images) if im.split == split]

    def sentence_ids(self, split: str) -> list[int]:
        return [j for j, s in enumerate(self.sentences) if self.images[s.image].split == split]

    def gt_boxes(self, j: int) -> np.ndarray:
        if self.hidden is None:
            raise KeyError("dataset carries no ground-truth boxes")
        return self.hidden.phrase_boxes[j]

    def without_posteriors(self) -> "GroundingDataset":
        images = [ImageRecord(im.boxes, im.features, None, im.split, im.canvas) for im in self.images]
        return GroundingDataset(self.taxonomy_text, images, self.sentences, self.hidden)


class TrainingView:
    """What weak supervision may use: regions, detector outputs, image-sentence pairs.

    Built from copies of the visible parts only; there is no reference back to
    the dataset, so hidden labels cannot be reached through it.
    """

    __slots__ = ("taxonomy_text", "_images", "_sentences", "_by_image", "standardized")

    def __init__(self, taxonomy_text: str, images: Sequence[ImageRecord], sentences: Sequence[SentenceRecord],
                 standardized: bool = False):
        self.taxonomy_text = taxonomy_text
        self._images = tuple(images)
        self._sentences = tuple(sentences)
        self.standardized = standardized
        self._by_image: dict[int, list[int]] = {}
        for j, s in enumerate(self._sentences):
            self._by_image.setdefault(s.image, []).append(j)

    @property
    def images(self) -> tuple[ImageRecord, ...]:
        return self._images

    @property
    def sentences(self) -> tuple[SentenceRecord, ...]:
        return self._sentences

    @property
    def taxonomy(self) -> Taxonomy:
        return Taxonomy.parse(self.taxonomy_text)

    @property
    def has_posteriors(self) -> bool:
        return bool(self._images) and all(im.posteriors is not None for im in self._images)

    def posterior(self, i: int) -> np.ndarray:
        raw = self._images[i].posteriors
        if raw is None:
            raise KeyError(f"image {i} has no detector posteriors")
        return normalized_posterior(raw)

    def image_ids(self, split: str) -> list[int]:
        return [i for i, im in enumerate(self._images) if im.split == split]

    def sentences_of(self, i: int) -> list[int]:
        return self._by_image.get(i, [])

    def with_features(self, features: Sequence[np.ndarray]) -> "TrainingView":
        images = [
            ImageRecord(im.boxes, f, im.posteriors, im.split, im.canvas)
            for im, f in zip(self._images, features)
        ]
        return TrainingView(self.taxonomy_text, images, self._sentences, standardized=True)


def strip_supervision(dataset: GroundingDataset) -> TrainingView:
    images = [
        ImageRecord(im.boxes.copy(), im.features.copy(),
                    None if im.posteriors is None else im.posteriors.copy(), im.split, im.canvas)
        for im in dataset.images
    ]
    sentences = [SentenceRecord(s.image, [list(p) for p in s.phrases]) for s in dataset.sentences]
    return TrainingView(dataset.taxonomy_text, images, sentences)


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)  # id = position + 1; 0 is OOV

    @classmethod
    def build(cls, phrases) -> "Vocabulary":
        return cls(sorted({t for p in phrases for t in p}))

    def __len__(self):
        return len(self.tokens) + 1

    @cached_property
    def _index(self) -> dict[str, int]:
        return {t: i + 1 for i, t in enumerate(self.tokens)}

    def encode(self, phrase: Sequence[str]) -> list[int]:
        return [self._index.get(t, 0) for t in phrase]


def training_vocabulary(data: GroundingDataset | TrainingView) -> Vocabulary:
    train = set(i for i, im in enumerate(data.images) if im.split == "train")
    return Vocabulary.build(p for s in data.sentences if s.image in train for p in s.phrases)
