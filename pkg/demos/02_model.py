"""Two-branch embedding model and the greedy image-sentence score."""

import numpy as np

from wsground.diffcore import Tape, backprop
from wsground.model import ModelConfig, ParamStore, encode_phrase, encode_region, score_image_sentence, score_region_phrase

cfg = ModelConfig(region_dim=8, vocab_size=12, hidden=16, embed_dim=6, token_dim=5)
params = ParamStore.init(cfg, np.random.default_rng(0))
print({name: value.shape for name, value in params.items()})

tape = Tape()
bound = params.bind(tape)
regions = encode_region(bound, np.random.default_rng(1).normal(size=(4, 8)), tape)
phrases = encode_phrase(bound, [[1, 2, 3], [7]], tape)
s = score_region_phrase(regions, phrases)  # phrases x regions, cosine similarities
print("region-phrase scores:\n", np.round(s.value, 3))

S = score_image_sentence(s)
print("image-sentence score (sum of per-phrase maxima):", round(S.item(), 4))

# the score is not symmetric: phrases pick regions, not the other way round
w = np.array([[0.9, 0.1], [0.8, 0.2]])
print("phrases choose:", score_image_sentence(Tape().leaf(w)).item(),
      "regions choose:", score_image_sentence(Tape().leaf(w.T)).item())

g = backprop(tape, S)
print("gradient reaches", int(np.count_nonzero(np.abs(g[bound["E"]]).sum(axis=1))), "embedding rows")
