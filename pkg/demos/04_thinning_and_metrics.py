# %% [markdown]
# # Skeletons and the connectivity-aware metrics

# %%
import numpy as np

from imnseg.imagery import gen_synthetic_vessels
from imnseg.metrics import evaluate_all, summarize, reports_to_csv
from imnseg.morphology import count_components, zhang_suen_thin


def show(m):
    print("\n".join("".join("#" if v else "." for v in row) for row in m))


rect = np.ones((3, 7), bool)
show(zhang_suen_thin(rect))

# %% [markdown]
# On a vessel tree the skeleton keeps one pixel per strand and the same
# number of connected pieces.

# %%
_, mask = gen_synthetic_vessels(8)
skel = zhang_suen_thin(mask)
print(f"{mask.sum()} vessel px -> {skel.sum()} skeleton px; components {count_components(mask)} -> {count_components(skel)}")
show(skel[:20, :40])

# %% [markdown]
# Scoring a degraded prediction: drop 20% of vessel pixels at random.

# %%
rng = np.random.default_rng(0)
reports = []
for seed in range(3):
    _, gt = gen_synthetic_vessels(seed)
    pred = gt & (rng.random(gt.shape) > 0.2)
    reports.append(evaluate_all(pred, gt, image_id=f"img{seed}"))
print(reports_to_csv(reports, summarize(reports)))
