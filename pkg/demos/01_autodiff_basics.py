"""Tour of the autodiff core: build a graph, run backward, verify a gradient.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from voxseg import ops
from voxseg.tensor import Tensor, no_grad

# A tensor wraps a float32 array; requires_grad opts it into the graph.
x = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]], np.float32), requires_grad=True)
w = Tensor(np.array([[1.0, 0.0], [0.0, -1.0]], np.float32), requires_grad=True)

# Forward ops record how to push gradients back; tsum gives the scalar root.
y = ops.mul(x, w)
loss = ops.tsum(ops.mul(y, y))
print("loss:", float(loss.data))

# backward() walks the graph once and accumulates into the leaves.
loss.backward()
print("dloss/dx:\n", x.grad)
print("dloss/dw:\n", w.grad)

# The analytic gradient of sum((x*w)^2) wrt x is 2*x*w^2; check it.
expected = 2.0 * x.data * w.data ** 2
print("matches 2*x*w^2:", np.allclose(x.grad, expected))

# Central finite differences agree too: nudge one coordinate of x.
eps = 1e-3
for idx in [(0, 0), (1, 1)]:
    bumped = x.data.copy()
    bumped[idx] += eps
    up = float(ops.tsum(ops.mul(ops.mul(Tensor(bumped), w), ops.mul(Tensor(bumped), w))).data)
    bumped[idx] -= 2 * eps
    down = float(ops.tsum(ops.mul(ops.mul(Tensor(bumped), w), ops.mul(Tensor(bumped), w))).data)
    print(f"fd dloss/dx{idx}: {(up - down) / (2 * eps):+.4f}  analytic: {x.grad[idx]:+.4f}")

# no_grad() suspends graph recording: forwards are cheaper, backward impossible.
with no_grad():
    silent = ops.mul(x, w)
print("recorded under no_grad:", silent._parents != ())

# The same machinery drives the 3D layer ops, e.g. a stride-2 convolution.
vol = Tensor(np.ones((1, 1, 4, 4, 4), np.float32), requires_grad=True)
kernel = Tensor(np.full((1, 1, 3, 3, 3), 1 / 27, np.float32), requires_grad=True)
bias = Tensor(np.zeros(1, np.float32), requires_grad=True)
out = ops.conv3d(vol, kernel, bias, stride=2)
print("conv output shape:", out.shape)
ops.tsum(out).backward()
print("every input voxel received gradient:", bool((vol.grad != 0).all()))
