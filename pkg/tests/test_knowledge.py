from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsground.knowledge import (
    NO_MATCH,
    Taxonomy,
    TaxonomyError,
    coverage_stats,
    head_noun,
    lemma_of,
    match_phrase_class,
    phrase_category,
    pseudo_labels,
)

TEXT = """
# detector classes
[classes]
background
person
clothing
dog
[lemmas]
spectators -> spectator
spectator -> person
puppy -> dog
man -> person
[hypernyms]
sweater -> garment
garment -> clothing
shirt -> clothing
dog -> animal
person -> organism
[senses]
boxer: dog, person
"""


@pytest.fixture
def tax():
    return Taxonomy.parse(TEXT)


def test_parse_and_roundtrip(tax):
    assert tax.classes == ["background", "person", "clothing", "dog"]
    assert tax.senses["boxer"] == ["dog", "person"]
    assert Taxonomy.parse(tax.dumps()) == tax


@pytest.mark.parametrize("text, fragment", [
    ("[classes]\nperson\n", "background"),
    ("[classes]\nbackground\nx\nx\n", "duplicate"),
    ("[classes]\nbackground\n[hypernyms]\na -> b\nb -> a\n", "cycle"),
    ("[classes]\nbackground\n[senses]\nw: nowhere\n", "unknown concept"),
    ("[classes]\nbackground\n[lemmas]\nbroken line\n", "line 4"),
    ("[nonsense]\n", "line 1"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(TaxonomyError, match=fragment):
        Taxonomy.parse(text)


def test_head_noun_examples(tax):
    assert head_noun(["a", "running", "puppy"], tax) == "puppy"
    assert head_noun(["sweater"], tax) == "sweater"
    assert head_noun(["man", "in", "blue", "shirt"], tax) == "shirt"
    assert head_noun(["blue", "thing"], tax) == "thing"


def test_plural_lemmas(tax):
    assert lemma_of("dogs", tax) == "dog"
    assert lemma_of("sweaters", tax) == "sweater"
    assert lemma_of("men", tax) == "man"
    assert lemma_of("whatchamacallit", tax) is None


def test_match_examples(tax):
    assert match_phrase_class(["sweater"], tax).class_name == "clothing"
    assert match_phrase_class(["spectators"], tax).class_name == "person"
    assert match_phrase_class(["whatchamacallit"], tax) == NO_MATCH
    assert match_phrase_class(["a", "running", "puppy"], tax).class_id == 3


def test_sense_priority(tax):
    assert match_phrase_class(["the", "boxer"], tax).class_name == "dog"
    no_dog = Taxonomy(["background", "person"], {}, {"dog": "animal"}, {"boxer": ["dog", "person"]})
    assert match_phrase_class(["boxer"], no_dog).class_name == "person"


def test_pseudo_label_example(tax):
    det = np.array([[0.05, 0.0, 0.05, 0.9], [0.8, 0.0, 0.0, 0.2]])
    lab = pseudo_labels(det, [match_phrase_class(["dog"], tax), match_phrase_class(["tree"], tax)])
    oracle = [Fraction(9, 10) / Fraction(11, 10), Fraction(2, 10) / Fraction(11, 10)]
    np.testing.assert_allclose(lab.values[0], [float(v) for v in oracle], atol=1e-12)
    np.testing.assert_allclose(lab.values[0], [0.81818, 0.18182], atol=1e-5)
    np.testing.assert_array_equal(lab.mask, [True, False])
    np.testing.assert_array_equal(lab.values[1], [0.0, 0.0])


def test_pseudo_label_single_region(tax):
    lab = pseudo_labels(np.array([[0.6, 0.0, 0.0, 0.4]]), [match_phrase_class(["dog"], tax)])
    np.testing.assert_array_equal(lab.values, [[1.0]])


def test_zero_posterior_mass_is_masked(tax):
    lab = pseudo_labels(np.array([[1.0, 0.0, 0.0, 0.0]] * 3), [match_phrase_class(["dog"], tax)])
    assert lab.num_valid == 0


def test_coverage_examples(tax):
    assert coverage_stats([], tax) == (0, 0)
    three = [["sweater"], ["spectators"], ["whatchamacallit"]]
    assert coverage_stats(three, tax) == (2, 3)
    assert coverage_stats(three + [["sweater"]], tax) == (2, 3)


def test_phrase_category(tax):
    assert phrase_category(["a", "puppy"], tax) == "animal"
    assert phrase_category(["sweater"], tax) == "clothing"
    assert phrase_category(["rock"], tax) == "uncovered"


posteriors = st.integers(0, 2 ** 32 - 1).map(
    lambda s: np.random.default_rng(s).dirichlet(np.ones(4), size=int(np.random.default_rng(s).integers(1, 9))))


@given(posteriors, st.floats(0.01, 100.0), st.integers(1, 3))
def test_pseudo_label_rows_are_distributions(det, c, cls):
    matches = np.zeros((2, 4))
    matches[0, cls] = 1.0
    prior = np.random.default_rng(0).uniform(0.1, 1.0, size=det.shape[0])
    lab = pseudo_labels(det, matches, prior)
    assert np.all(lab.values >= 0)
    np.testing.assert_allclose(lab.values[lab.mask].sum(axis=1), 1.0, atol=1e-9)
    scaled = pseudo_labels(det, matches, c * prior)
    np.testing.assert_allclose(scaled.values, lab.values, atol=1e-12)


@given(st.integers(1, 8), st.integers(0, 7))
def test_single_positive_region_gives_one_hot(n, hot):
    hot = hot % n
    det = np.zeros((n, 3))
    det[:, 0] = 1.0
    det[hot] = [0.5, 0.5, 0.0]
    lab = pseudo_labels(det, np.array([[0.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(lab.values[0], np.eye(n)[hot])


@given(st.lists(st.sampled_from(["a", "red", "dogs", "sweater", "spectators", "boxer", "xyz", "man"]),
                min_size=1, max_size=5))
def test_matching_is_deterministic(tokens):
    tax = Taxonomy.parse(TEXT)
    first = match_phrase_class(tokens, tax)
    assert match_phrase_class(tokens, tax) == first
    assert match_phrase_class(tokens, Taxonomy.parse(TEXT)) == first
