"""Reverse-mode autodiff on a tape, checked against finite differences."""

import numpy as np

from wsground import diffcore as dc
from wsground.diffcore import Tape, backprop

# A tape records every operation; backprop walks it in reverse.
tape = Tape()
x = tape.leaf([[1.0, 2.0, -0.5]])
W = tape.leaf(np.arange(6.0).reshape(3, 2) / 10)
y = dc.total(dc.relu(x @ W) * dc.relu(x @ W))
grads = backprop(tape, y)
print("y =", y.item())
print("dy/dW =\n", grads[W])

# segment_max routes the gradient to the winning element only
tape = Tape()
s = tape.leaf([[0.2, 0.9, 0.1], [0.5, 0.4, 0.3]])
best = dc.segment_max(s, [(0, 3)], axis=1)
print("row maxima:", best.value.ravel(), "gradient:\n", backprop(tape, dc.total(best))[s])

# grad_check compares backprop with central differences at eps=1e-5
rng = np.random.default_rng(0)
err = dc.grad_check(lambda t, a, b: dc.total(dc.l2_normalize(a @ b)), [rng.normal(size=(2, 3)), rng.normal(size=(3, 4))])
print(f"max relative error: {err:.2e}")
