"""The three objectives and the weight schedule that mixes them."""

import math

import numpy as np

from wsground.diffcore import Tape
from wsground.losses import distill_loss, lambda_schedule, margin_loss, nce_loss


def leaf(x):
    return Tape().leaf(np.asarray(x, dtype=float))


# sentence-image scores, positives on the diagonal
S = [[0.8, 0.1], [0.3, 0.5]]
print("nce (tau 0.5):   ", nce_loss(leaf(S), [0, 1], 0.5).item())
print("margin (m 0.05): ", margin_loss(leaf(S), [0, 1], 0.05).item())

# phrase-region scores against soft pseudo-labels
s = [[1.0, 0.0]]
print("distill, one-hot:", distill_loss(leaf(s), np.array([[1.0, 0.0]]), np.array([True]), 0.5)[0].item(),
      "closed form:", math.log1p(math.exp(-2)))

print("lambda at steps 0..1000 by 100:", [lambda_schedule(t, 200, 3) for t in range(0, 1001, 100)])
