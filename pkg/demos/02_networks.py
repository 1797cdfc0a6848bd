# %% [markdown]
# # Magnify first, then shrink
#
# The IMN encoder grows the feature maps with stride-2 transposed convolutions
# and the decoder max-pools them back down, the opposite of a U-Net. Same
# recipe, mirrored, so the parameter counts line up exactly.

# %%
import numpy as np

from imnseg.imagery import gen_synthetic_vessels
from imnseg.metrics import confusion, overlap_metrics
from imnseg.networks import ArchitectureConfig, build, count_parameters, predict_mask, train_step
from imnseg.tensor import Adam

for kind in ("imn", "unet", "cnn7"):
    net = build(ArchitectureConfig(kind=kind, depth=2, width=16))
    trace = []
    net.forward(np.zeros((1, 1, 76, 76), np.float32), trace=trace)
    sizes = " -> ".join(f"{tag}:{h}" for tag, h, _ in trace)
    print(f"{kind:5s} params={count_parameters(net):6d}  {sizes}")

# %% [markdown]
# A short overfit on two synthetic 76x76 crops. Capillaries are one pixel
# wide, which is the whole point of looking at them magnified.

# %%
crops = [gen_synthetic_vessels(s) for s in range(2)]
for kind in ("imn", "unet"):
    net = build(ArchitectureConfig(kind=kind, depth=2, width=8, seed=0))
    opt = Adam(lr=3e-3)
    for step in range(40):
        img, mask = crops[step % 2]
        loss = train_step(net, opt, img, mask)
    dice = np.mean([overlap_metrics(confusion(predict_mask(net, i), m))[0] for i, m in crops])
    print(f"{kind}: last loss {loss:.3f}, train dice {dice:.3f}")
