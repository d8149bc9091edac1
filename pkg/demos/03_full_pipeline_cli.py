"""The whole pipeline through the command-line driver, at toy scale.

Generates a synthetic shape family, trains the sign corrector and the
diffusion model, precomputes spectral caches, infers a correspondence for
one pair, and scores it against ground truth — exactly the sequence a real
experiment runs, shrunk to finish in seconds.

Run:  python3 demos/03_full_pipeline_cli.py
"""

import os
import sys
import tempfile

import numpy as np

from shapediff import PointMap, make_template, save_off, save_pointmap
from shapediff.cli import main


def run(args):
    print(f"\n$ shapediff {' '.join(args)}")
    code = main(args)
    if code != 0:
        sys.exit(f"command failed with exit code {code}")


def main_demo():
    root = tempfile.mkdtemp(prefix="shapediff-demo-")
    print(f"working directory: {root}")
    shapes = os.path.join(root, "shapes")
    os.makedirs(shapes)

    template = make_template("sphere", 150)
    save_off(template, os.path.join(root, "template.off"))
    # Toy "scan" pair: two copies of the template with identity ground truth.
    save_off(template, os.path.join(shapes, "scan_a.off"))
    save_off(template, os.path.join(shapes, "scan_b.off"))

    config = os.path.join(root, "run.cfg")
    with open(config, "w") as fh:
        fh.write(f"""\
template = {root}/template.off
shapes_dir = {shapes}
cache_dir = {root}/cache
shards_dir = {root}/shards
out_dir = {root}/out
sign_checkpoint = {root}/out/sign.ckpt
ddpm_checkpoint = {root}/out/ddpm.ckpt
n = 32
zoomout_target = 40          # toy meshes are small; real runs use 200
zoomout_step = 4
sign_iterations = 40
sign_shapes = 3
dataset_size = 4
shard_size = 4
decimate_max = 0.2
ddpm_T = 10
beta_end = 0.2
ddpm_epochs = 2
ddpm_batch = 2
candidates = 3
medoid_k = 2
""")
    base = ["--config", config]

    run(base + ["train-sign"])
    run(base + ["gen-dataset"])
    run(base + ["train-ddpm"])
    run(base + ["precompute"])

    pairs = os.path.join(root, "pairs.txt")
    with open(pairs, "w") as fh:
        fh.write("scan_a scan_b\n")
    run(base + ["infer", "--pairs", pairs])

    gt_dir = os.path.join(root, "gt")
    os.makedirs(gt_dir)
    save_pointmap(os.path.join(gt_dir, "scan_a__scan_b.map"),
                  PointMap(np.arange(template.num_vertices)))
    run(base + ["evaluate", "--pairs", pairs,
                "--predictions", f"{root}/out", "--gt", gt_dir])
    print(f"\nreport: {root}/out/report.json")


if __name__ == "__main__":
    main_demo()
