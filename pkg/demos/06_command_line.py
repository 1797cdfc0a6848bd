# %% [markdown]
# # The `imnseg` command
#
# Same steps as the other demos, driven through the CLI entry point so the
# outputs land on disk the way batch scripts expect.

# %%
import tempfile
from pathlib import Path

from imnseg.cli import main
from imnseg.pipeline import write_synthetic_dataset

work = Path(tempfile.mkdtemp())
data = write_synthetic_dataset(work / "ds", 4)

# %%
main(["train", "--data", str(data), "--arch", "imn", "--depth", "1", "--width", "8",
      "--steps", "20", "--lr", "3e-3", "--out-dir", str(work / "run")])
main(["predict", str(data / "images"), "--checkpoint", str(work / "run" / "final.ckpt"),
      "--out-dir", str(work / "pred"), "--prob"])

# %%
main(["evaluate", "--pred", str(work / "pred"), "--gt", str(data / "labels")])

# %%
main(["filter", str(data / "images"), "--method", "gabor", "--out-dir", str(work / "gabor")])
main(["skeletonize", str(work / "pred"), "--out-dir", str(work / "skel")])
print(sorted(p.name for p in (work / "skel").iterdir()))
