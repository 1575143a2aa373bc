import hashlib
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsground.dataset import ROLE_PART, ROLE_WHOLE, strip_supervision
from wsground.fileio import dataset_bytes, parse_dataset
from wsground.knowledge import coverage_stats
from wsground.synthcorpus import WorldSpec, build_lexicon, generate

SPEC = WorldSpec(images=120, feature_dim=32)


def test_no_confusion_gives_one_hot_posteriors():
    ds, tax = generate(replace(SPEC, detector_confusion=0.0), 0)
    index = tax.class_index
    lex = build_lexicon(SPEC)
    for i, im in enumerate(ds.images):
        np.testing.assert_array_equal(im.posteriors.max(axis=1), 1.0)
        for r, c in enumerate(ds.hidden.region_class[i]):
            name = lex.leaves[c] if c >= 0 else "background"
            want = index.get(name, 0)
            assert im.posteriors[r, want] == 1.0


def test_noise_free_regions_of_same_kind_match():
    ds, _ = generate(replace(SPEC, noise_sigma=0.0, detector_confusion=0.0), 1)
    seen = {}
    hits = 0
    for i, im in enumerate(ds.images):
        h = ds.hidden
        for r in np.flatnonzero(h.region_role[i] == ROLE_WHOLE):
            key = (int(h.region_class[i][r]), int(h.region_attr[i][r]))
            if key in seen:
                np.testing.assert_array_equal(im.features[r], seen[key])
                hits += 1
            else:
                seen[key] = im.features[r]
    assert hits > 10


def test_generation_is_byte_deterministic():
    a = hashlib.sha256(dataset_bytes(generate(SPEC, 3)[0])).hexdigest()
    b = hashlib.sha256(dataset_bytes(generate(SPEC, 3)[0])).hexdigest()
    c = hashlib.sha256(dataset_bytes(generate(SPEC, 4)[0])).hexdigest()
    assert a == b != c


def test_training_view_hides_ground_truth_but_dataset_keeps_it():
    ds, _ = generate(SPEC, 0)
    view = strip_supervision(ds)
    assert not hasattr(view, "hidden") and not hasattr(view, "gt_boxes")
    assert ds.gt_boxes(0).shape == (len(ds.sentences[0].phrases), 4)


def test_round_trip_keeps_hidden_partition():
    ds, _ = generate(SPEC, 2)
    back = parse_dataset(dataset_bytes(ds))
    for j in range(len(ds.sentences)):
        np.testing.assert_array_equal(back.gt_boxes(j), ds.gt_boxes(j))
        np.testing.assert_array_equal(back.hidden.phrase_region[j], ds.hidden.phrase_region[j])
    for i in range(len(ds.images)):
        np.testing.assert_array_equal(back.hidden.region_role[i], ds.hidden.region_role[i])
        np.testing.assert_array_equal(back.images[i].features, ds.images[i].features)
    view = strip_supervision(back)
    assert not hasattr(view, "hidden")


def _inside(inner, outer):
    return inner[0] > outer[0] and inner[1] > outer[1] and inner[2] < outer[2] and inner[3] < outer[3]


def test_wholes_and_parts_co_occur():
    ds, _ = generate(WorldSpec(), 0)
    lex = build_lexicon(WorldSpec())
    h = ds.hidden
    for whole, part in lex.parts.items():
        with_class = with_part = 0
        for i in ds.image_ids("train"):
            boxes = ds.images[i].boxes
            wholes = np.flatnonzero((h.region_class[i] == whole) & (h.region_role[i] == ROLE_WHOLE))
            if len(wholes) == 0:
                continue
            with_class += 1
            parts = np.flatnonzero((h.region_class[i] == part) & (h.region_role[i] == ROLE_PART))
            if any(_inside(boxes[p], boxes[w]) for w in wholes for p in parts):
                with_part += 1
        assert with_part / with_class > 0.4, lex.leaves[whole]


def test_coverage_fraction_within_tolerance():
    spec = WorldSpec()
    ds, tax = generate(spec, 0)
    matched, total = coverage_stats([p for s in ds.sentences for p in s.phrases], tax)
    assert abs(matched / total - spec.detector_coverage) <= 0.1


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_boxes_valid(seed):
    ds, _ = generate(replace(SPEC, images=15), seed)
    for i, im in enumerate(ds.images):
        b = im.boxes
        assert np.all(b >= 0) and np.all(b <= 100.0)
        assert np.all(b[:, 2] - b[:, 0] >= 5.0 - 1e-4) and np.all(b[:, 3] - b[:, 1] >= 5.0 - 1e-4)
        for p in np.flatnonzero(ds.hidden.region_role[i] == ROLE_PART):
            assert any(_inside(b[p], b[w]) for w in np.flatnonzero(ds.hidden.region_role[i] == ROLE_WHOLE))


def test_ground_truth_is_the_whole_box():
    ds, _ = generate(SPEC, 0)
    for j, s in enumerate(ds.sentences):
        roles = ds.hidden.region_role[s.image][ds.hidden.phrase_region[j]]
        assert np.all(roles == ROLE_WHOLE)


def test_attribute_dims_disjoint_from_class_dims():
    spec = replace(SPEC, noise_sigma=0.0, detector_confusion=0.0)
    ds, _ = generate(spec, 0)
    d_attr = max(spec.attributes, spec.feature_dim // 4)
    h = ds.hidden
    for i, im in enumerate(ds.images[:30]):
        for r in range(im.num_regions):
            if h.region_role[i][r] != ROLE_WHOLE:
                continue
            for r2 in range(im.num_regions):
                if h.region_role[i][r2] == ROLE_WHOLE and h.region_class[i][r2] == h.region_class[i][r]:
                    np.testing.assert_array_equal(im.features[r, :-d_attr], im.features[r2, :-d_attr])


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        generate(replace(SPEC, split=(0.5, 0.5, 0.5)), 0)
    with pytest.raises(ValueError):
        generate(replace(SPEC, part_leakage=1.5), 0)
