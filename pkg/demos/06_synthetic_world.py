"""What the generator produces, and what training is allowed to see."""

import numpy as np

from wsground.dataset import strip_supervision
from wsground.knowledge import coverage_stats
from wsground.synthcorpus import WorldSpec, generate

spec = WorldSpec(images=50, feature_dim=16)
dataset, taxonomy = generate(spec, seed=3)
print("detector classes:", taxonomy.classes)

im = dataset.images[0]
print("image 0:", im.num_regions, "proposals, canvas", im.canvas, "split", im.split)
print("posterior row sums:", np.round(im.posteriors.sum(axis=1)[:5], 3))

for j in range(3):
    print("sentence", j, [" ".join(p) for p in dataset.sentences[j].phrases])

phrases = [p for s in dataset.sentences for p in s.phrases]
covered, total = coverage_stats(phrases, taxonomy)
print(f"detector covers {covered}/{total} phrases ({covered / total:.0%})")

view = strip_supervision(dataset)
print("training view hides boxes' labels:", not hasattr(view, "hidden"))
