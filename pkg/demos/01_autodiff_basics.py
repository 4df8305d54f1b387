#!/usr/bin/env python3
# A tour of the float64 tape substrate: build tensors, run ops, record a
# tape, pull gradients back, and cross-check them with finite differences.

import numpy as np

from kgtn import autodiff as ad
from kgtn.gradcheck import check_gradients

rng = np.random.default_rng(0)

# Parameters are leaves with eagerly zeroed gradient buffers; constants
# never receive gradients.
w = ad.parameter(rng.normal(size=(3, 4)))
x = ad.constant(rng.normal(size=(4, 2)))

# Ops compose like numpy. Nothing is recorded until a tape is active.
y = ad.matmul(w, x)            # (3, 2)
print("forward product:\n", y.values)

# Record a scalar loss and replay the tape backward.
with ad.Tape() as tape:
    h = ad.sigmoid(ad.matmul(w, x))
    loss = ad.mean_all(ad.mul(h, h))
print("tape length:", len(tape), "ops:", tape.op_counts())
tape.backward(loss)
print("dloss/dw row 0:", w.grad[0])

# Gradients accumulate additively across uses, so zero between steps.
w.zero_grad()

# The checker re-evaluates the loss at perturbed parameter values, fully
# independent of the backward pass it verifies.
result = check_gradients(
    lambda: ad.mean_all(ad.mul(ad.sigmoid(ad.matmul(w, x)), ad.sigmoid(ad.matmul(w, x)))),
    [("w", w)],
)
print(f"finite-difference max rel err: {result.max_rel_err:.2e} (tolerance 1e-4)")

# Softmax is max-shifted: shifting all logits leaves the output unchanged.
v = rng.normal(size=5)
print("softmax:", ad.softmax(ad.constant(v)).values)
print("shifted:", ad.softmax(ad.constant(v + 100.0)).values)

# Segment softmax normalizes within CSR neighborhoods; segments of a
# 2-edge and a 3-edge node each sum to one.
logits = ad.constant(rng.normal(size=5))
offsets = np.array([0, 2, 5])
seg = ad.segment_softmax(logits, offsets).values
print("segment sums:", seg[:2].sum(), seg[2:].sum())
