"""Synthetic grounding benchmark with co-occurring wholes and parts.

Every image holds a few objects.  An object contributes its whole box and,
for classes that have a part, often a smaller part box inside it; the rest
of the proposals are clutter.  Sentences name a subset of the objects and
the grounding target is always the whole box, so a model that only learns
which regions co-occur with a word can latch onto the part instead.  A
simulated detector labels regions for the covered subset of classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    ROLE_CLUTTER,
    ROLE_PART,
    ROLE_WHOLE,
    GroundingDataset,
    HiddenLabels,
    ImageRecord,
    SentenceRecord,
    strip_supervision,  # noqa: F401  (re-exported)
)
from .knowledge import BACKGROUND, Taxonomy

# group, leaf, synonyms, hyponyms
DEFAULT_LEXICON = (
    ("person", "man", ["guy"], ["gentleman"]),
    ("person", "woman", ["lady"], ["dancer"]),
    ("person", "child", ["kid"], ["toddler"]),
    ("animal", "dog", ["hound"], ["puppy"]),
    ("animal", "cat", ["kitty"], ["kitten"]),
    ("animal", "horse", ["steed"], ["pony"]),
    ("clothing", "shirt", ["tee"], ["blouse"]),
    ("clothing", "jacket", ["coat"], ["parka"]),
    ("clothing", "hat", ["cap"], ["beanie"]),
    ("bodypart", "face", ["visage"], ["profile"]),
    ("bodypart", "hand", ["palm"], ["fist"]),
    ("bodypart", "head", ["noggin"], ["skull"]),
)
DEFAULT_PARTS = {"man": "face", "woman": "face", "child": "hand", "dog": "head", "cat": "head", "horse": "head"}
# ambiguous word, senses in priority order
DEFAULT_SENSES = {"boxer": ["dog", "man"]}
ATTRIBUTE_NAMES = ("red", "blue", "green", "yellow", "white", "black", "striped", "spotted")
ARTICLES = ("a", "the")


@dataclass(frozen=True)
class WorldSpec:
    leaf_classes: int = 12
    hypernym_groups: int = 4
    attributes: int = 4
    feature_dim: int = 64
    noise_sigma: float = 0.3
    detector_confusion: float = 0.1
    images: int = 1000
    proposals_per_image: int = 12
    objects_per_image: int = 3
    detector_coverage: float = 2 / 3
    part_prob: float = 0.5
    part_leakage: float = 0.9  # share of the whole's appearance (class and colour) a part inherits
    sentences_per_image: int = 2
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    canvas: float = 100.0

    def validate(self):
        if self.leaf_classes < 2 or self.hypernym_groups < 1 or self.hypernym_groups > self.leaf_classes:
            raise ValueError("need >= 2 leaf classes and 1..leaf_classes hypernym groups")
        if self.attributes < 1:
            raise ValueError("need at least one attribute")
        if self.feature_dim < 2 * self.attributes or self.feature_dim < 8:
            raise ValueError("feature_dim too small for class and attribute subspaces")
        if self.objects_per_image < 1:
            raise ValueError("objects_per_image must be >= 1")
        if self.proposals_per_image < 2 * self.objects_per_image:
            raise ValueError("proposals_per_image must leave room for a part per object")
        if self.objects_per_image > self.leaf_classes * self.attributes:
            raise ValueError("not enough distinct (class, attribute) pairs per image")
        if self.images < 1 or self.sentences_per_image < 1:
            raise ValueError("images and sentences_per_image must be >= 1")
        if not (self.noise_sigma >= 0 and 0 <= self.detector_confusion <= 1):
            raise ValueError("noise_sigma must be >= 0 and detector_confusion in [0, 1]")
        if not (0 < self.detector_coverage <= 1 and 0 <= self.part_prob <= 1):
            raise ValueError("detector_coverage in (0, 1], part_prob in [0, 1]")
        if not 0 <= self.part_leakage <= 1:
            raise ValueError("part_leakage must be in [0, 1]")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError("split fractions must be three nonnegative numbers summing to 1")
        if self.canvas < 40:
            raise ValueError("canvas too small")


@dataclass
class Lexicon:
    groups: list[str]
    leaves: list[str]
    leaf_group: list[int]
    words: list[list[str]]  # per leaf: leaf name, synonyms, hyponyms
    synonyms: dict[str, str]
    hyponyms: dict[str, str]
    parts: dict[int, int]  # whole leaf -> part leaf
    senses: dict[str, list[str]] = field(default_factory=dict)
    covered: list[int] = field(default_factory=list)

    def detector_classes(self) -> list[str]:
        return [BACKGROUND] + [self.leaves[i] for i in self.covered]

    def taxonomy(self) -> Taxonomy:
        hyper = {}
        for word, leaf in self.hyponyms.items():
            hyper[word] = leaf
        for i, leaf in enumerate(self.leaves):
            hyper[leaf] = self.groups[self.leaf_group[i]]
        return Taxonomy(self.detector_classes(), dict(self.synonyms), hyper,
                        {k: list(v) for k, v in self.senses.items()})


def build_lexicon(spec: WorldSpec) -> Lexicon:
    L, G = spec.leaf_classes, spec.hypernym_groups
    if (L, G) == (12, 4):
        groups = sorted({g for g, *_ in DEFAULT_LEXICON}, key=[g for g, *_ in DEFAULT_LEXICON].index)
        leaves = [leaf for _, leaf, _, _ in DEFAULT_LEXICON]
        leaf_group = [groups.index(g) for g, *_ in DEFAULT_LEXICON]
        words = [[leaf, *syn, *hyp] for _, leaf, syn, hyp in DEFAULT_LEXICON]
        synonyms = {s: leaf for _, leaf, syn, _ in DEFAULT_LEXICON for s in syn}
        hyponyms = {h: leaf for _, leaf, _, hyp in DEFAULT_LEXICON for h in hyp}
        parts = {leaves.index(w): leaves.index(p) for w, p in DEFAULT_PARTS.items()}
        senses = {w: list(s) for w, s in DEFAULT_SENSES.items()}
        words[leaves.index(senses["boxer"][0])].append("boxer")
    else:
        groups = [f"group{g}" for g in range(G)]
        leaves = [f"thing{i}" for i in range(L)]
        leaf_group = [i % G for i in range(L)]
        words = [[leaf, f"{leaf}alt", f"{leaf}kind"] for leaf in leaves]
        synonyms = {f"{leaf}alt": leaf for leaf in leaves}
        hyponyms = {f"{leaf}kind": leaf for leaf in leaves}
        part_ids = [i for i in range(L) if leaf_group[i] == G - 1] if G > 1 else []
        wholes = [i for i in range(L) if i not in part_ids]
        parts = {w: part_ids[k % len(part_ids)] for k, w in enumerate(wholes)} if part_ids else {}
        senses = {}
    # spread coverage evenly over the leaf order
    covered = [i for i in range(L)
               if int(np.floor((i + 1) * spec.detector_coverage + 1e-9)) > int(np.floor(i * spec.detector_coverage + 1e-9))]
    return Lexicon(groups, leaves, leaf_group, words, synonyms, hyponyms, parts, senses, covered)


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _sample_box(rng, canvas, lo, hi):
    w, h = rng.uniform(lo, hi, size=2)
    x0 = rng.uniform(0, canvas - w)
    y0 = rng.uniform(0, canvas - h)
    return np.array([x0, y0, x0 + w, y0 + h])


def _part_box(rng, whole):
    x0, y0, x1, y1 = whole
    fw, fh = rng.uniform(0.3, 0.5, size=2)
    w, h = max(5.0, fw * (x1 - x0)), max(5.0, fh * (y1 - y0))
    # strictly inside the whole box
    px = rng.uniform(x0 + 0.5, x1 - w - 0.5)
    py = rng.uniform(y0 + 0.5, y1 - h - 0.5)
    return np.array([px, py, px + w, py + h])


def generate(spec: WorldSpec, seed: int) -> tuple[GroundingDataset, Taxonomy]:
    """Build the dataset and its taxonomy deterministically from ``(spec, seed)``."""
    spec.validate()
    lex = build_lexicon(spec)
    taxonomy = lex.taxonomy()
    det_index = {leaf_id: k + 1 for k, leaf_id in enumerate(lex.covered)}
    K = len(lex.covered) + 1

    d = spec.feature_dim
    d_attr = max(spec.attributes, d // 4)
    d_cls = d - d_attr
    world = np.random.default_rng([seed, 0])
    group_mu = world.normal(0.0, 1.0, size=(spec.hypernym_groups, d_cls))
    leaf_mu = np.stack([group_mu[g] + 0.8 * world.normal(0.0, 1.0, size=d_cls) for g in lex.leaf_group])
    attr_mu = 1.5 * world.normal(0.0, 1.0, size=(spec.attributes, d_attr))
    attr_names = [ATTRIBUTE_NAMES[a] if a < len(ATTRIBUTE_NAMES) else f"attr{a}" for a in range(spec.attributes)]

    n_train = int(round(spec.split[0] * spec.images))
    n_val = int(round(spec.split[1] * spec.images))

    images, sentences = [], []
    h_cls, h_attr, h_role, h_region, h_boxes = [], [], [], [], []
    for i in range(spec.images):
        rng = np.random.default_rng([seed, 1, i])
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"

        pairs: list[tuple[int, int]] = []
        while len(pairs) < spec.objects_per_image:
            pair = (int(rng.integers(spec.leaf_classes)), int(rng.integers(spec.attributes)))
            if pair not in pairs:
                pairs.append(pair)

        boxes, feats, cls, attr, role = [], [], [], [], []
        whole_region = []
        canvas = spec.canvas
        for leaf, a in pairs:
            whole = _sample_box(rng, canvas, 0.25 * canvas, 0.6 * canvas)
            whole_region.append(len(boxes))
            boxes.append(whole)
            feat = np.concatenate([leaf_mu[leaf], attr_mu[a]])
            feats.append(feat + spec.noise_sigma * rng.normal(size=d))
            cls.append(leaf), attr.append(a), role.append(ROLE_WHOLE)
            if leaf in lex.parts and rng.random() < spec.part_prob:
                part = lex.parts[leaf]
                boxes.append(_part_box(rng, whole))
                own = np.concatenate([leaf_mu[part], np.zeros(d_attr)])
                feat = (1.0 - spec.part_leakage) * own + spec.part_leakage * np.concatenate([leaf_mu[leaf], attr_mu[a]])
                feats.append(feat + spec.noise_sigma * rng.normal(size=d))
                cls.append(part), attr.append(-1), role.append(ROLE_PART)
        while len(boxes) < spec.proposals_per_image:
            boxes.append(_sample_box(rng, canvas, 0.05 * canvas + 5.0, 0.5 * canvas))
            feat = np.concatenate([rng.normal(0.0, 1.0, size=d_cls), np.zeros(d_attr)])
            feats.append(feat + spec.noise_sigma * rng.normal(size=d))
            cls.append(-1), attr.append(-1), role.append(ROLE_CLUTTER)

        order = rng.permutation(len(boxes))
        position = np.empty_like(order)
        position[order] = np.arange(len(order))
        boxes = _f32(np.stack(boxes)[order])
        feats = _f32(np.stack(feats)[order])
        cls = np.asarray(cls)[order]

        post = np.zeros((len(boxes), K))
        post[np.arange(len(boxes)), [det_index.get(c, 0) for c in cls]] = 1.0
        post = (1.0 - spec.detector_confusion) * post + spec.detector_confusion / K
        post = _f32(post / post.sum(axis=1, keepdims=True))

        images.append(ImageRecord(boxes, feats, post, split, (canvas, canvas)))
        h_cls.append(cls)
        h_attr.append(np.asarray(attr)[order])
        h_role.append(np.asarray(role)[order])

        counts = {}
        for leaf, _ in pairs:
            counts[leaf] = counts.get(leaf, 0) + 1
        for _ in range(spec.sentences_per_image):
            r = int(rng.integers(1, len(pairs) + 1))
            chosen = rng.choice(len(pairs), size=r, replace=False)
            phrases, regions = [], []
            for o in chosen:
                leaf, a = pairs[o]
                words = lex.words[leaf]
                tokens = [ARTICLES[int(rng.integers(len(ARTICLES)))]]
                with_attr = rng.random() < 0.5
                if counts[leaf] > 1 or with_attr:
                    tokens.append(attr_names[a])
                tokens.append(words[int(rng.integers(len(words)))])
                phrases.append(tokens)
                regions.append(int(position[whole_region[o]]))
            sentences.append(SentenceRecord(i, phrases))
            h_region.append(np.asarray(regions))
            h_boxes.append(boxes[regions].copy())

    hidden = HiddenLabels(h_cls, h_attr, h_role, h_region, h_boxes)
    return GroundingDataset(taxonomy.dumps(), images, sentences, hidden), taxonomy
