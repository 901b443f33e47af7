#!/usr/bin/env python3
"""A tour of the tensor core: forward math, backward pass, masking.

Everything downstream (recurrent layers, attention, the temporal resnet)
is built from the handful of primitives shown here.
"""

import numpy as np

from videoseq import Tensor, TimeMask, backward, conv1d_same, matmul, softmax_masked
from videoseq.autodiff import numerical_gradient, tensor_sum

# --- tensors and the tape ---------------------------------------------------
# A Tensor wraps a float64 ndarray. Operations on tensors with
# requires_grad=True are recorded on a tape in creation order, so one reverse
# sweep computes every gradient.

w = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
x = Tensor(np.array([[0.5], [-1.0]]))

y = matmul(w, x)          # [2x1]
loss = tensor_sum(y * y)  # scalar
backward(loss)

print("loss          :", loss.item())
print("grad of w     :\n", w.grad)

# The analytic gradient can always be cross-checked with central finite
# differences; the library uses exactly this oracle in its test suite.
w2 = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)


def f():
    return tensor_sum(matmul(w2, x) * matmul(w2, x)).data


numeric = numerical_gradient(f, w2, step=1e-6)
print("finite diff   :\n", numeric)
print("max abs diff  :", np.max(np.abs(w.grad - numeric)))

# --- temporal convolution ----------------------------------------------------
# conv1d_same cross-correlates along time and zero-pads so the length is
# preserved. A centered identity kernel reproduces its input.

signal = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
identity_kernel = Tensor(np.array([[[0.0, 1.0, 0.0]]]))
box_kernel = Tensor(np.array([[[1.0, 1.0, 1.0]]]))
zero_bias = Tensor(np.zeros(1))

print("\nidentity kernel:", conv1d_same(signal, identity_kernel, zero_bias).data[0, 0])
print("box kernel     :", conv1d_same(signal, box_kernel, zero_bias).data[0, 0])

# --- masking ------------------------------------------------------------------
# Batches of videos are zero-padded to a common length; a TimeMask records
# each item's true frame count. Masked softmax gives padded positions weight
# exactly 0, so whatever is stored there cannot matter.

scores = Tensor(np.array([[2.0, 1.0, 99.0], [0.0, 0.0, 0.0]]))
mask = TimeMask(batch=2, max_time=3, valid_lengths=np.array([2, 3]))
weights = softmax_masked(scores, mask)
print("\nattention weights (item 0 has 2 valid frames):")
print(weights.data)
print("row sums:", weights.data.sum(axis=1))
