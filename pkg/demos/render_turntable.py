"""Render a small gaussian scene from a ring of viewpoints.

Builds a random blob cluster, walks a camera around it, and writes one PNG
per stop plus a speed readout. Good first check that the renderer and the
pose conventions agree with your expectations.

Usage: python demos/render_turntable.py [out_dir]
"""
import sys
import time
from pathlib import Path

import numpy as np

from splatpose.cloud import GaussianCloud, logit
from splatpose.geometry import CameraIntrinsics, CameraPose
from splatpose.io import save_image
from splatpose.renderer import render

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "turntable_out")
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(11)
n = 400
positions = rng.normal(scale=0.8, size=(n, 3)) * np.array([1.0, 0.6, 1.0])
cloud = GaussianCloud(
    positions=positions,
    log_scales=np.log(rng.uniform(0.04, 0.12, size=(n, 3))),
    rotations=rng.normal(size=(n, 4)),
    opacity_logits=logit(rng.uniform(0.7, 0.97, size=n)),
    colors=rng.uniform(0.05, 0.95, size=(n, 3)),
)
intr = CameraIntrinsics(fx=120.0, fy=120.0, cx=47.5, cy=47.5, width=96, height=96)

radius = 4.0
frames = 12
t0 = time.perf_counter()
for k in range(frames):
    theta = 2.0 * np.pi * k / frames
    center = np.array([radius * np.sin(theta), 0.6, -radius * np.cos(theta)])
    fwd = -center / np.linalg.norm(center)
    right = np.cross(np.array([0.0, 1.0, 0.0]), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    pose = CameraPose.from_rt(r, -r @ center)
    image = render(cloud, pose, intr).image
    save_image(np.clip(image, 0.0, 1.0), out_dir / f"view_{k:02d}.png")
elapsed = time.perf_counter() - t0

print(f"rendered {frames} views of {n} gaussians at {intr.width}x{intr.height}")
print(f"{elapsed / frames * 1000:.0f} ms per frame, output in {out_dir}/")
