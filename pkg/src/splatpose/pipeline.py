"""Batch reconstruction driver.

One call runs the whole chain on a dataset: sparse initialization from the
training images, alternating cloud/pose optimization, rendering of the
held-out views, metric computation, and export of every artifact (cloud PLY,
trajectory, CSV reports, SVG charts, checkpoint). Failures carry the stage
they happened in plus the matching process exit code, so the command line can
report `[sfm] ...` and exit 3 without further bookkeeping.

Held-out views are never part of the reconstruction, so their poses are not
known in the estimated frame. When the dataset ships a reference trajectory,
the similarity between reference and estimated training cameras is solved and
used to map each held-out reference pose into the estimated frame before
rendering. Without a reference, view synthesis and trajectory metrics are
reported as unavailable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cloud import GaussianCloud
from .geometry import CameraPose
from .io import (
    Dataset,
    DatasetError,
    export_cloud_ply,
    export_trajectory,
    load_checkpoint,
    save_checkpoint,
    save_image,
    split_indices,
    write_line_chart_svg,
    write_loss_csv,
    write_metrics_csv,
)
from .metrics import compute_ate, compute_psnr, compute_rpe, compute_ssim, umeyama_alignment
from .renderer import render
from .sfm import SfmError, run_initialization, seed_gaussians
from .training import DivergenceError, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class StageFailure(RuntimeError):
    """A pipeline stage failed; carries the stage tag and the exit code the
    process should return."""

    def __init__(self, stage: str, exit_code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


@dataclass
class PipelineResult:
    metrics: dict
    out_dir: Path
    cloud: GaussianCloud
    poses: list
    trained_indices: tuple


def dataset_from_scene(scene, name="synthetic", ratio=Fraction(7, 8)) -> Dataset:
    """In-memory dataset wrapping a generated scene; the ground-truth orbit
    becomes the reference trajectory."""
    train, test = split_indices(len(scene.images), ratio)
    return Dataset(
        name=name,
        image_paths=(),
        images=list(scene.images),
        intrinsics=scene.intrinsics,
        split_ratio=Fraction(ratio),
        train_indices=train,
        test_indices=test,
        reference=[p.copy() for p in scene.poses],
    )


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _initialize(dataset: Dataset, config: TrainConfig):
    train_images = dataset.train_images
    try:
        recon = run_initialization(train_images, dataset.intrinsics, seed=config.random_seed)
        cloud = seed_gaussians(recon, dataset.intrinsics)
    except SfmError as exc:
        raise StageFailure("sfm", EXIT_NUMERIC, str(exc)) from exc
    registered = recon.registered
    if len(registered) < len(train_images):
        missing = len(train_images) - len(registered)
        warnings.warn(f"{missing} training view(s) failed to register; continuing without them")
    poses = [recon.poses[i] for i in registered]
    trained = tuple(dataset.train_indices[i] for i in registered)
    images = [train_images[i] for i in registered]
    return cloud, poses, images, trained


def _train(dataset, config, cloud, poses, images, trained):
    reference = None
    if dataset.reference is not None and len(trained) >= 3:
        reference = [dataset.reference[i] for i in trained]
    pose_trace = []

    def hook(iteration, phase, state):
        if phase == "pose" and reference is not None:
            try:
                pose_trace.append((iteration, compute_ate(state.poses, reference)))
            except ValueError:
                pass  # degenerate geometry; the chart just skips the sample

    try:
        state = train(images, dataset.intrinsics, (cloud, poses), config, hook=hook)
    except DivergenceError as exc:
        raise StageFailure("train", EXIT_NUMERIC, str(exc)) from exc
    except np.linalg.LinAlgError as exc:
        raise StageFailure("train", EXIT_NUMERIC, f"linear algebra failure: {exc}") from exc
    return state.cloud, state.poses, list(state.loss_history), pose_trace


def _mapped_test_pose(reference_pose: CameraPose, scale, rotation, translation) -> CameraPose:
    """Reference-frame pose re-expressed in the estimated frame given the
    similarity (scale, rotation, translation) mapping reference points to
    estimated points."""
    r_new = reference_pose.rotation @ rotation.T
    center = scale * rotation @ reference_pose.camera_center + translation
    return CameraPose.from_rt(r_new, -r_new @ center)


def _evaluate_views(dataset, cloud, poses, trained):
    """Render held-out views and score them against the captured images.
    Returns (psnr, ssim, rendered images by index), all None/empty when the
    dataset has no reference trajectory or no test views."""
    if not dataset.test_indices or dataset.reference is None or len(trained) < 3:
        return None, None, {}
    ref_centers = np.stack([dataset.reference[i].camera_center for i in trained])
    est_centers = np.stack([p.camera_center for p in poses])
    try:
        scale, rotation, translation = umeyama_alignment(ref_centers, est_centers)
    except ValueError as exc:
        warnings.warn(f"cannot place held-out cameras: {exc}")
        return None, None, {}
    rendered = {}
    psnrs, ssims = [], []
    for index in dataset.test_indices:
        pose = _mapped_test_pose(dataset.reference[index], scale, rotation, translation)
        image = render(cloud, pose, dataset.intrinsics).image
        rendered[index] = image
        psnrs.append(compute_psnr(image, dataset.images[index]))
        ssims.append(compute_ssim(image, dataset.images[index]))
    return float(np.mean(psnrs)), float(np.mean(ssims)), rendered


def _trajectory_metrics(dataset, poses, trained):
    if dataset.reference is None or len(trained) < 3:
        return None, None, None
    reference = [dataset.reference[i] for i in trained]
    try:
        ate = compute_ate(poses, reference)
        rpe_trans, rpe_rot = compute_rpe(poses, reference)
    except ValueError as exc:
        warnings.warn(f"trajectory metrics unavailable: {exc}")
        return None, None, None
    return ate, rpe_trans, rpe_rot


def _export(out_dir, dataset, config, cloud, poses, trained, metrics_row,
            loss_history, pose_trace, rendered, write_checkpoint):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        export_cloud_ply(cloud, out_dir / "cloud.ply")
        export_trajectory(poses, out_dir / "trajectory.txt", ids=trained)
        write_metrics_csv(out_dir / "metrics.csv", [metrics_row])
        if loss_history is not None:
            write_loss_csv(out_dir / "loss.csv", loss_history)
            if loss_history:
                write_line_chart_svg(
                    out_dir / "loss_curve.svg",
                    {"training loss": [(t, v) for t, v in loss_history]},
                    title="photometric loss",
                    x_label="iteration",
                    y_label="loss",
                )
        if pose_trace:
            write_line_chart_svg(
                out_dir / "pose_error.svg",
                {"ATE": pose_trace},
                title="trajectory error at pose updates",
                x_label="iteration",
                y_label="ATE",
            )
        if rendered:
            renders_dir = out_dir / "renders"
            renders_dir.mkdir(exist_ok=True)
            for index, image in sorted(rendered.items()):
                save_image(image, renders_dir / f"test_{index:03d}.png")
        if write_checkpoint:
            meta = {
                "iteration": config.total_iterations,
                "trained_indices": list(trained),
                "seed": config.random_seed,
                "scene": dataset.name,
            }
            save_checkpoint(out_dir / "checkpoint.npz", cloud, poses, dataset.intrinsics, meta)
    except OSError as exc:
        raise StageFailure("export", EXIT_DATA, str(exc)) from exc


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_pipeline(dataset: Dataset, config: TrainConfig, out_dir, *, eval_checkpoint=None) -> PipelineResult:
    """Reconstruct `dataset` under `config` and write all artifacts into
    `out_dir`. With `eval_checkpoint`, initialization and training are skipped
    and the saved cloud/poses are re-evaluated instead."""
    try:
        config.validate()
    except ValueError as exc:
        raise StageFailure("config", EXIT_CONFIG, str(exc)) from exc

    if eval_checkpoint is None:
        cloud, poses, images, trained = _initialize(dataset, config)
        cloud, poses, loss_history, pose_trace = _train(
            dataset, config, cloud, poses, images, trained
        )
    else:
        try:
            cloud, poses, checkpoint_intr, meta = load_checkpoint(eval_checkpoint)
        except DatasetError as exc:
            raise StageFailure("load", EXIT_DATA, str(exc)) from exc
        if checkpoint_intr != dataset.intrinsics:
            raise StageFailure("load", EXIT_DATA, "checkpoint intrinsics differ from dataset")
        trained = tuple(meta.get("trained_indices", range(len(poses))))
        loss_history, pose_trace = None, []

    try:
        psnr, ssim, rendered = _evaluate_views(dataset, cloud, poses, trained)
        ate, rpe_trans, rpe_rot = _trajectory_metrics(dataset, poses, trained)
    except np.linalg.LinAlgError as exc:
        raise StageFailure("metrics", EXIT_NUMERIC, f"linear algebra failure: {exc}") from exc

    metrics_row = {
        "scene": dataset.name,
        "psnr": psnr,
        "ssim": ssim,
        "ate": ate,
        "rpe_trans": rpe_trans,
        "rpe_rot": rpe_rot,
    }
    _export(
        out_dir, dataset, config, cloud, poses, trained, metrics_row,
        loss_history, pose_trace, rendered, write_checkpoint=eval_checkpoint is None,
    )
    return PipelineResult(metrics_row, Path(out_dir), cloud, poses, trained)
