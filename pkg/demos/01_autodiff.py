# %% [markdown]
# # A tiny reverse-mode engine
#
# Every layer in the networks is built from a handful of primitives with
# hand-written backward rules. Here we poke at them directly and compare the
# analytic gradients with central differences.

# %%
import numpy as np

from imnseg.tensor import Tensor, conv2d, gradient_check, max_pool2d, relu, softmax_cross_entropy, weighted_sum

rng = np.random.default_rng(0)

# %% [markdown]
# Convolutions are cross-correlations with zero padding 1, so a 3x3 all-ones
# kernel on a 3x3 all-ones image counts the in-bounds neighbours.

# %%
out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
print(out.values[0, 0])

# %% [markdown]
# Build a small graph, call `backward`, read the leaf gradients.

# %%
x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
k = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
logits = max_pool2d(relu(conv2d(x, k)))
target = rng.random((1, 2, 2)) > 0.5
loss = softmax_cross_entropy(logits, target)
loss.backward()
print("loss", float(loss.values))
print("dL/dx\n", np.round(x.grad[0, 0], 4))

# %% [markdown]
# `gradient_check` projects an op's output onto fixed random weights and
# perturbs each input entry by +-h in float64.

# %%
err = gradient_check(lambda a, b: conv2d(a, b), [rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))])
print(f"conv2d max relative error: {err:.2e}")

# %%
# the harness notices a backward rule that is off by just 1%
from imnseg.tensor.core import make_result


def sloppy_relu(t):
    pos = t.values > 0
    return make_result("sloppy_relu", np.where(pos, t.values, 0.0), (t,), lambda g: (1.01 * g * pos,))


probe = rng.uniform(0.2, 1.0, (1, 1, 3, 3)) * rng.choice([-1, 1], (1, 1, 3, 3))
print(f"correct relu {gradient_check(relu, [probe]):.1e}, sloppy relu {gradient_check(sloppy_relu, [probe]):.1e}")
