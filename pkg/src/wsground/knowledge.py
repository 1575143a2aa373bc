"""Detector-side knowledge: taxonomy, phrase-to-class matching, soft pseudo-labels.

Taxonomy file layout (UTF-8, lowercased on load, ``#`` comments)::

    [classes]
    background
    person
    [lemmas]
    spectators -> spectator
    spectator -> person
    [hypernyms]
    sweater -> garment
    garment -> clothing
    [senses]
    boxer: dog, person
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

BACKGROUND = "background"
SECTIONS = ("classes", "lemmas", "hypernyms", "senses")


class TaxonomyError(ValueError):
    pass


@dataclass
class Taxonomy:
    classes: list[str]
    lemmas: dict[str, str] = field(default_factory=dict)
    hypernyms: dict[str, str] = field(default_factory=dict)
    senses: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}

    def concepts(self) -> set[str]:
        known = set(self.classes) | set(self.lemmas.values())
        known |= set(self.hypernyms) | set(self.hypernyms.values())
        return known

    def validate(self):
        if BACKGROUND not in self.classes:
            raise TaxonomyError("taxonomy needs a 'background' class")
        if len(set(self.classes)) != len(self.classes):
            raise TaxonomyError("duplicate class names")
        if BACKGROUND in self.lemmas.values() or BACKGROUND in self.lemmas:
            raise TaxonomyError("'background' must not carry lemmas")
        for start in self.hypernyms:
            seen = {start}
            node = self.hypernyms.get(start)
            while node is not None:
                if node in seen:
                    raise TaxonomyError(f"hypernym cycle through {node!r}")
                seen.add(node)
                node = self.hypernyms.get(node)
        known = self.concepts()
        for word, targets in self.senses.items():
            for t in targets:
                if t not in known:
                    raise TaxonomyError(f"sense {word!r} -> {t!r}: unknown concept")

    def ancestors(self, concept: str) -> list[str]:
        """``concept`` followed by its hypernym chain, nearest first."""
        chain = [concept]
        while chain[-1] in self.hypernyms:
            chain.append(self.hypernyms[chain[-1]])
        return chain

    def root(self, concept: str) -> str:
        return self.ancestors(concept)[-1]

    # -- text format ---------------------------------------------------------

    @classmethod
    def parse(cls, text: str) -> "Taxonomy":
        section = None
        classes: list[str] = []
        lemmas: dict[str, str] = {}
        hypernyms: dict[str, str] = {}
        senses: dict[str, list[str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip().lower()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SECTIONS:
                    raise TaxonomyError(f"line {lineno}: unknown section [{section}]")
                continue
            if section is None:
                raise TaxonomyError(f"line {lineno}: entry outside any section")
            if section == "classes":
                classes.append(line)
            elif section in ("lemmas", "hypernyms"):
                left, sep, right = line.partition("->")
                if not sep or not left.strip() or not right.strip():
                    raise TaxonomyError(f"line {lineno}: expected 'a -> b'")
                target = lemmas if section == "lemmas" else hypernyms
                target[left.strip()] = right.strip()
            else:
                word, sep, rest = line.partition(":")
                entries = [e.strip() for e in rest.split(",") if e.strip()]
                if not sep or not entries:
                    raise TaxonomyError(f"line {lineno}: expected 'word: class, ...'")
                senses[word.strip()] = entries
        return cls(classes, lemmas, hypernyms, senses)

    def dumps(self) -> str:
        out = ["[classes]", *self.classes, "[lemmas]"]
        out += [f"{k} -> {v}" for k, v in self.lemmas.items()]
        out.append("[hypernyms]")
        out += [f"{k} -> {v}" for k, v in self.hypernyms.items()]
        out.append("[senses]")
        out += [f"{k}: {', '.join(v)}" for k, v in self.senses.items()]
        return "\n".join(out) + "\n"

    @classmethod
    def load(cls, path) -> "Taxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())


def lemma_of(word: str, taxonomy: Taxonomy) -> str | None:
    """Dictionary form of ``word`` if the taxonomy knows it, else None.

    Tries the word itself, then the usual English plural endings.
    """
    w = word.lower()
    known = taxonomy.lemmas.keys() | set(taxonomy.classes) | taxonomy.senses.keys() | taxonomy.hypernyms.keys()
    candidates = [w]
    if w.endswith("ies") and len(w) > 3:
        candidates.append(w[:-3] + "y")
    if w.endswith("es"):
        candidates.append(w[:-2])
    if w.endswith("s") and not w.endswith("ss"):
        candidates.append(w[:-1])
    if w == "men" or w.endswith("men"):
        candidates.append(w[:-3] + "man")
    if w == "children":
        candidates.append("child")
    for c in candidates:
        if c in known and c != BACKGROUND:
            return c
    return None


def head_noun(tokens: Sequence[str], taxonomy: Taxonomy) -> str:
    """Rightmost token with a known lemma; the last token if none is known."""
    if not tokens:
        raise ValueError("head_noun: empty phrase")
    for tok in reversed(tokens):
        if lemma_of(tok, taxonomy) is not None:
            return tok
    return tokens[-1]


@dataclass(frozen=True)
class ClassPhraseMatch:
    """Binary phrase/class match.  ``prob`` keeps room for graded matching."""

    class_name: str | None
    class_id: int | None = None
    prob: float = 1.0

    @property
    def matched(self) -> bool:
        return self.class_name is not None


NO_MATCH = ClassPhraseMatch(None, None, 0.0)


def match_phrase_class(tokens: Sequence[str], taxonomy: Taxonomy) -> ClassPhraseMatch:
    """Map a phrase to at most one detector class through its head noun."""
    if not tokens:
        return NO_MATCH
    index = taxonomy.class_index
    lemma = lemma_of(head_noun(tokens, taxonomy), taxonomy)
    if lemma is None:
        return NO_MATCH
    if lemma in index:
        return ClassPhraseMatch(lemma, index[lemma])
    starts = taxonomy.senses.get(lemma, [lemma])
    for concept in starts:
        for node in _upward(concept, taxonomy):
            if node in index and node != BACKGROUND:
                return ClassPhraseMatch(node, index[node])
    return NO_MATCH


def _upward(concept: str, taxonomy: Taxonomy):
    """Follow lemma links first, then hypernym edges, never revisiting a node."""
    seen = set()
    node = concept
    while node is not None and node not in seen:
        seen.add(node)
        yield node
        nxt = taxonomy.lemmas.get(node)
        node = nxt if nxt is not None and nxt != node else taxonomy.hypernyms.get(node)


def match_matrix(matches: Sequence[ClassPhraseMatch], num_classes: int) -> np.ndarray:
    """Phrases x classes matrix of ``p(y, z)``."""
    out = np.zeros((len(matches), num_classes))
    for k, m in enumerate(matches):
        if m.matched:
            out[k, m.class_id] = m.prob
    return out


@dataclass(frozen=True)
class PseudoLabelMatrix:
    values: np.ndarray  # phrases x regions
    mask: np.ndarray  # phrases, bool

    @property
    def num_valid(self) -> int:
        return int(self.mask.sum())


def pseudo_labels(det: np.ndarray, matches, prior_px=None) -> PseudoLabelMatrix:
    """Soft region targets per phrase from detector posteriors.

    ``det`` is regions x classes, ``matches`` either a list of
    :class:`ClassPhraseMatch` or a phrases x classes match matrix.  Rows for
    unmatched phrases, or whose matched class has no posterior mass in the
    image, come back zero with ``mask`` False.
    """
    det = np.asarray(det, dtype=np.float64)
    n, K = det.shape
    if not isinstance(matches, np.ndarray):
        matches = match_matrix(matches, K)
    prior = np.full(n, 1.0 / n) if prior_px is None else np.asarray(prior_px, dtype=np.float64)
    if prior.shape != (n,) or np.any(prior < 0):
        raise ValueError("prior_px must be n nonnegative values")
    u = matches @ (det * prior[:, None]).T
    totals = u.sum(axis=1)
    mask = (matches.sum(axis=1) > 0) & (totals > 0)
    values = np.zeros_like(u)
    values[mask] = u[mask] / totals[mask, None]
    return PseudoLabelMatrix(values, mask)


def phrase_key(tokens: Iterable[str]) -> str:
    return " ".join(t.lower() for t in tokens)


def coverage_stats(phrases: Iterable[Sequence[str]], taxonomy: Taxonomy) -> tuple[int, int]:
    """(matched, total) over unique phrase strings."""
    unique = {phrase_key(p): list(p) for p in phrases}
    matched = sum(match_phrase_class(toks, taxonomy).matched for toks in unique.values())
    return matched, len(unique)


def phrase_category(tokens: Sequence[str], taxonomy: Taxonomy) -> str:
    """Top hypernym of the matched class, or ``"uncovered"``."""
    m = match_phrase_class(tokens, taxonomy)
    return taxonomy.root(m.class_name) if m.matched else "uncovered"
