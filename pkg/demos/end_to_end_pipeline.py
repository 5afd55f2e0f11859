"""Drive the whole pipeline the way the CLI does, then poke at the output.

Equivalent command line:

    splatpose --synthetic gaussians=200,size=48,views=8,seed=1 \
              --config demo.cfg --out pipeline_out --seed 4

but called in-process so the artifact paths are easy to inspect afterwards.
The config keeps iteration counts small; this is a tour, not a benchmark.
"""
import csv
from pathlib import Path

from splatpose.io import import_cloud_ply, import_trajectory
from splatpose.pipeline import dataset_from_scene, run_pipeline
from splatpose.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from splatpose.training import TrainConfig

out_dir = Path("pipeline_out")
spec = SyntheticSceneSpec.parse("gaussians=200,size=48,views=8,seed=1")
dataset = dataset_from_scene(generate_synthetic_scene(spec))
print(f"dataset: {len(dataset.images)} images, train {dataset.train_indices}, test {dataset.test_indices}")

config = TrainConfig(
    total_iterations=400,
    pose_interval=20,
    pose_cutoff=100,
    densify_interval=0,
    random_seed=4,
)
result = run_pipeline(dataset, config, out_dir)

print(f"\nartifacts in {out_dir}/:")
for path in sorted(out_dir.rglob("*")):
    if path.is_file():
        print(f"  {path.relative_to(out_dir)}  ({path.stat().st_size} bytes)")

with open(out_dir / "metrics.csv", newline="") as fh:
    row = next(csv.DictReader(fh))
print("\nheld-out metrics:", {k: row[k] for k in ("psnr", "ssim", "ate")})

cloud = import_cloud_ply(out_dir / "cloud.ply")
poses, ids = import_trajectory(out_dir / "trajectory.txt")
print(f"cloud.ply holds {len(cloud)} gaussians; trajectory.txt holds {len(poses)} poses for images {list(ids)}")
