"""Tour of the numeric core: tensors, tape-based gradients, gradient reversal.

Run with:  python demos/01_autodiff_basics.py
"""

import numpy as np

import mixfed.tensor as T
from mixfed.gradcheck import max_relative_error, numeric_gradient
from mixfed.tensor import Tensor, backward, grl

# Tensors wrap float64 arrays. Ops build a tape when an input requires_grad.
x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
y = T.tsum(T.mul(x, x))  # sum of squares
backward(y)
print("d/dx sum(x^2) =", x.grad, "(expect 2x =", 2 * x.data, ")")

# The tape is consumed by backward: a second call without a fresh forward
# pass raises instead of silently reusing stale state.
try:
    backward(y)
except Exception as e:
    print("second backward:", type(e).__name__, "-", e)

# Analytic gradients agree with central finite differences. The checker
# only evaluates forward passes, so it is an independent oracle.
rng = np.random.default_rng(0)
a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
err = max_relative_error(lambda: T.tsum(T.softmax(T.matmul(a, b), axis=-1).var(axis=-1)), [a, b])
print(f"matmul+softmax+variance chain: max relative error vs finite differences = {err:.2e}")

# Gradient reversal: identity forward, negated (scaled by -lambda) backward.
v = Tensor([1.0, 2.0], requires_grad=True)
out = T.tsum(T.mul(grl(v, 1.0), Tensor([1.0, -2.0])))
backward(out)
print("grl forward is identity; upstream (1, -2) arrives as", v.grad)

# Convolution keeps spatial size (stride 1, zero padding, odd kernels).
img = Tensor(rng.standard_normal((1, 1, 8, 8)))
w = Tensor(rng.standard_normal((4, 1, 3, 3)))
print("conv2d 1x1x8x8 ->", T.conv2d(img, w).shape)

# numeric_gradient is available on its own as well
p = Tensor(np.array(2.0), requires_grad=True)
g = numeric_gradient(lambda: T.mul(p, T.mul(p, p)), p)
print("numeric d/dp p^3 at p=2:", g, "(analytic 12)")
