"""Side-by-side: training with frozen poses vs the alternating schedule.

Both runs start from the same deliberately-wrong camera guesses (the true
poses nudged by two degrees and a bit of translation). The frozen variant
can only repaint gaussians to hide the error; the alternating variant also
gets periodic photometric pose updates. Prints the trajectory error of both
as training progresses, which is the whole argument for joint optimization
in one table.

Scaled down to run in about a minute; bump total_iterations for a fairer
fight.
"""
import numpy as np

from splatpose.geometry import CameraPose
from splatpose.metrics import compute_ate
from splatpose.sfm import run_initialization, seed_gaussians
from splatpose.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from splatpose.training import TrainConfig, train

scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=220, size=64, views=10, seed=3))
images = list(scene.images)

recon = run_initialization(images, scene.intrinsics, seed=0)
registered = recon.registered
print(f"sfm registered {len(registered)}/{len(images)} views")
cloud0 = seed_gaussians(recon, scene.intrinsics)
refs = [scene.poses[i] for i in registered]

extent = float(np.linalg.norm(np.ptp(cloud0.positions, axis=0)))
rng = np.random.default_rng(9)
poses0 = []
for i in registered:
    p = recon.poses[i]
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    poses0.append(CameraPose(p.angles + np.deg2rad(2.0) * rng.choice([-1, 1], 3), p.translation + 0.02 * extent * d))

print(f"ATE of the perturbed initialization: {compute_ate(poses0, refs):.4f}\n")

for label, cutoff in (("frozen poses", 0), ("alternating", 200)):
    trace = []

    def hook(t, phase, state):
        if phase == "pose" or t % 100 == 0:
            trace.append((t, compute_ate(state.poses, refs)))

    cfg = TrainConfig(total_iterations=800, pose_interval=25, pose_cutoff=cutoff, densify_interval=0, random_seed=1)
    state = train([images[i] for i in registered], scene.intrinsics,
                  (cloud0.copy(), [p.copy() for p in poses0]), cfg, hook=hook)
    print(f"{label}:")
    for t, ate in trace:
        print(f"  iter {t:4d}  ATE {ate:.4f}")
    print(f"  final loss {state.loss_history[-1][1]:.5f}, {len(state.cloud)} gaussians\n")
