"""Drive the whole pipeline against the toy backbone: invert, edit, ablate,
sweep, evaluate.

Everything here is also reachable from the command line:

    picedit invert --input img.npy --src-prompt "a dog is lying on the grass"
    picedit edit   --input img.npy --task dog2cat
    picedit ablate --input img.npy --task dog2cat
    picedit sweep  --input img.npy --task dog2cat
    picedit evaluate --source-dir src/ --translated-dir out/ --target-prompt "a cat"
    picedit toy-verify
"""

import json
import os
import tempfile

import numpy as np

from picedit.pipeline import RunConfig, cmd_ablate, cmd_edit, cmd_evaluate, cmd_invert

work = tempfile.mkdtemp(prefix="picedit-demo-")
print("working under", work)

rng = np.random.default_rng(0)
source_path = os.path.join(work, "source.npy")
np.save(source_path, rng.standard_normal((8, 8)))

config = RunConfig(
    backbone="toy",
    input=source_path,
    src_prompt="a dog is lying on the grass",
    task="dog2cat",
    output_dir=os.path.join(work, "out"),
    cache_dir=os.path.join(work, "cache"),
)

cache_dir = cmd_invert(config)
print("inversion cached at", cache_dir)
print("  files:", sorted(os.listdir(cache_dir))[:4], "...")

manifest = cmd_edit(config)
print()
print("edit manifest highlights:")
print("  target prompt:", manifest["config"]["tgt_prompt"])
print("  plan:", manifest["plan"]["kind"], "beta", manifest["plan"]["beta"])
print("  call ledger:", manifest["call_ledger"])
print("  raw denoiser calls:", manifest["raw_denoiser_calls"])
print("  output image:", manifest["output_image"])

report = cmd_ablate(config)
print()
print("ablation over the four variants (shared cache):")
for variant, ledger in report["variants"].items():
    print(f"  {variant:<8s} {ledger}")
print("  toy background ordering ok:", report["background_ordering_ok"])

src_dir = os.path.join(work, "eval_src")
tgt_dir = os.path.join(work, "eval_tgt")
os.makedirs(src_dir)
os.makedirs(tgt_dir)
for i in range(3):
    img = rng.random((16, 16))
    np.save(os.path.join(src_dir, f"img{i}.npy"), img)
    np.save(os.path.join(tgt_dir, f"img{i}.npy"), img + 0.05 * rng.random((16, 16)))

metrics = cmd_evaluate(src_dir, tgt_dir, "a cat on the grass", os.path.join(work, "eval"))
print()
print("evaluation:", metrics.summary_line())
with open(os.path.join(work, "eval", "metrics_task.json")) as f:
    print("  rows:", len(json.load(f)["per_image"]))
