# What an involution layer computes
#
# A single involution with C=3, K=3, G=1 on a toy image: generate the kernel
# field, then check that every channel really is filtered with the same
# per-pixel kernel.

import numpy as np

from involnet.involution import InvolutionSpec, apply_kernels, init_involution_weights, inv_forward
from involnet.tensor import make_rng

spec = InvolutionSpec(channels=3, kernel_size=3, groups=1, reduction_ratio=2)
w = init_involution_weights(spec, make_rng(0, "demo"))
print("reduced width:", spec.reduced, " taps:", spec.taps)

rng = np.random.default_rng(1)
x = rng.random((1, 6, 6, 3))
y, kernels, _ = inv_forward(x, w, spec)
print("output", y.shape, " kernel field", kernels.shape)

# The kernel at two different pixels (location specific). Where the
# bottleneck ReLU is closed only the centre-tap bias is left.

print(kernels[0, 1, 1, :, 0].reshape(3, 3).round(3))
print(kernels[0, 4, 2, :, 0].reshape(3, 3).round(3))

# Channel agnostic: applying the same field to channel 2 alone
# reproduces channel 2 of the output.

single = InvolutionSpec(1, 3, 1, 1)
alone = apply_kernels(x[..., 2:3], kernels, single)[..., 0]
print("channel sharing exact:", np.array_equal(alone, y[..., 2]))

# A constant image gives the same kernel everywhere.

_, flat, _ = inv_forward(np.full((1, 6, 6, 3), 0.5), w, spec)
print("max kernel spread on constant input:", np.abs(flat - flat[0, 0, 0]).max())
