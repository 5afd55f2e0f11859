"""Joint reconstruction by alternating optimization.

Two phases share one loop. On most iterations a gaussian step renders one
training view, evaluates the blended L1 / structural-similarity loss and
applies adaptive-moment updates to every gaussian parameter group. Every
`pose_interval`-th iteration up to `pose_cutoff`, the cloud is frozen instead
and all camera poses are re-aligned photometrically. Density control (clone,
split, prune) runs on its own interval between gaussian steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import GaussianCloud
from .geometry import CameraIntrinsics, CameraPose
from .metrics import compute_ssim, ssim_and_gradient
from .pose_refine import RefineConfig, refine_all_poses
from .renderer import render, render_backward

PARAM_GROUPS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _check_pair(rendered, target):
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    if rendered.shape != target.shape:
        raise ValueError(f"image shape mismatch: {rendered.shape} vs {target.shape}")
    return rendered, target


def photometric_loss(rendered: np.ndarray, target: np.ndarray, loss_lambda: float) -> float:
    """(1-lambda) * mean|r-t| + lambda * (1 - SSIM(r,t)) / 2."""
    rendered, target = _check_pair(rendered, target)
    l1 = float(np.mean(np.abs(rendered - target)))
    if loss_lambda == 0.0:
        return l1
    s = compute_ssim(rendered, target)
    return (1.0 - loss_lambda) * l1 + loss_lambda * (1.0 - s) / 2.0


def photometric_loss_gradient(rendered, target, loss_lambda: float):
    """Loss value and its derivative with respect to the rendered image."""
    rendered, target = _check_pair(rendered, target)
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - loss_lambda) * np.sign(diff) / diff.size
    if loss_lambda == 0.0:
        return l1, np.sign(diff) / diff.size
    s, s_grad = ssim_and_gradient(rendered, target)
    loss = (1.0 - loss_lambda) * l1 + loss_lambda * (1.0 - s) / 2.0
    return loss, grad - 0.5 * loss_lambda * s_grad


# ---------------------------------------------------------------------------
# optimizer state
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


def adam_update(param, grad, state: AdamState, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected adaptive-moment step; mutates `state`, returns the
    updated parameter array."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class GradientStats:
    """Per-gaussian gradient/footprint accumulators between density controls."""

    screen_sum: np.ndarray  # sum of screen-center gradient norms
    world_sum: np.ndarray  # sum of world-position gradients
    count: np.ndarray
    max_radius: np.ndarray  # largest projected 3-sigma radius seen, pixels

    @classmethod
    def zeros(cls, n: int) -> "GradientStats":
        return cls(np.zeros(n), np.zeros((n, 3)), np.zeros(n), np.zeros(n))

    def accumulate(self, grads, projected):
        seen = np.asarray(projected.valid, dtype=bool)
        norms = np.linalg.norm(np.asarray(grads.mean2d), axis=1)
        self.screen_sum[seen] += norms[seen]
        self.world_sum[seen] += np.asarray(grads.positions)[seen]
        self.count[seen] += 1.0
        self.max_radius[seen] = np.maximum(self.max_radius[seen], np.asarray(projected.radius)[seen])

    def average_screen(self) -> np.ndarray:
        return self.screen_sum / np.maximum(self.count, 1.0)


# ---------------------------------------------------------------------------
# density control
# ---------------------------------------------------------------------------

@dataclass
class DensifyThresholds:
    grad_threshold: float  # average screen-gradient norm that triggers growth
    split_size: float  # world sigma above which growth splits instead of cloning
    prune_opacity: float = 0.005
    prune_radius: float | None = None  # pixels; None disables the screen-size prune
    max_gaussians: int | None = None
    clone_offset: float = 0.5  # clone displacement in units of mean parent sigma
    split_factor: float = 1.6


def densify_and_prune(cloud: GaussianCloud, stats: GradientStats, thresholds: DensifyThresholds, rng):
    """Adaptive density control: prune faint or oversized gaussians, clone
    small high-gradient ones (copy offset along the accumulated positional
    gradient) and split large ones into two children sampled inside the
    parent with scales divided by `split_factor`.

    Returns:
        (new cloud, parent map) where parent map holds, per new row, the index
        it carried over from or -1 for a freshly created gaussian.
    """
    alive = cloud.opacities() >= thresholds.prune_opacity
    if thresholds.prune_radius is not None:
        alive &= stats.max_radius <= thresholds.prune_radius
    high = alive & (stats.average_screen() >= thresholds.grad_threshold)
    sizes = cloud.scales().max(axis=1)
    clone = high & (sizes <= thresholds.split_size)
    split = high & (sizes > thresholds.split_size)
    if thresholds.max_gaussians is not None:
        if int(alive.sum() + clone.sum() + split.sum()) > thresholds.max_gaussians:
            clone &= False
            split &= False

    survivors = alive & ~split
    parts = [cloud.subset(survivors)]
    parents = [np.flatnonzero(survivors)]

    idx = np.flatnonzero(clone)
    if idx.size:
        child = cloud.subset(idx)
        g = stats.world_sum[idx]
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        direction = np.where(norm > 0.0, g / np.maximum(norm, 1e-30), 0.0)
        mean_sigma = cloud.scales()[idx].mean(axis=1, keepdims=True)
        child.positions = child.positions + thresholds.clone_offset * mean_sigma * direction
        parts.append(child)
        parents.append(np.full(idx.size, -1, dtype=np.int64))

    idx = np.flatnonzero(split)
    if idx.size:
        parent = cloud.subset(np.repeat(idx, 2))
        rot = _rotations_of(parent)
        xi = rng.standard_normal((len(parent), 3))
        parent.positions = parent.positions + np.einsum("nij,nj->ni", rot, np.exp(parent.log_scales) * xi)
        parent.log_scales = parent.log_scales - np.log(thresholds.split_factor)
        parts.append(parent)
        parents.append(np.full(2 * idx.size, -1, dtype=np.int64))

    out = GaussianCloud.concatenate(parts) if len(parts) > 1 else parts[0]
    return out, np.concatenate(parents) if len(parents) > 1 else parents[0]


def _rotations_of(cloud: GaussianCloud) -> np.ndarray:
    from .cloud import quaternions_to_matrices

    return quaternions_to_matrices(cloud.rotations)


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    total_iterations: int = 3000
    pose_interval: int = 100  # pose phase at every multiple up to the cutoff
    pose_cutoff: int | None = None  # None -> total_iterations // 4
    loss_lambda: float = 0.2
    lr_positions: float = 1.6e-4  # scaled by scene extent at setup
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity_logits: float = 5e-2
    lr_colors: float = 2.5e-3
    densify_interval: int = 300  # 0 disables density control
    densify_start: int = 300
    densify_stop: int | None = None  # None -> total_iterations // 2
    densify_grad_threshold: float = 2e-6
    densify_size_fraction: float = 0.01  # of scene extent; clone/split boundary
    prune_opacity: float = 0.005
    prune_screen_radius: float | None = None
    max_gaussians: int = 100_000
    pose_refine: RefineConfig = field(default_factory=RefineConfig)
    random_seed: int = 0

    def resolved_pose_cutoff(self) -> int:
        return self.total_iterations // 4 if self.pose_cutoff is None else self.pose_cutoff

    def resolved_densify_stop(self) -> int:
        return self.total_iterations // 2 if self.densify_stop is None else self.densify_stop

    def validate(self):
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must lie in [0, 1]")
        if self.pose_interval < 1:
            raise ValueError("pose_interval must be at least 1")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be non-negative")
        m = self.resolved_pose_cutoff()
        if not 0 <= m <= self.total_iterations:
            raise ValueError("pose_cutoff must lie in [0, total_iterations]")
        if m > 0 and self.pose_interval > m:
            raise ValueError(
                "pose_interval exceeds pose_cutoff: no pose update would ever run"
            )


@dataclass
class TrainState:
    cloud: GaussianCloud
    poses: list
    images: list
    intrinsics: CameraIntrinsics
    iteration: int = 0
    loss_history: list = field(default_factory=list)
    moments: dict = field(default_factory=dict)
    grad_stats: GradientStats | None = None
    extent: float = 1.0
    rng: np.random.Generator | None = None
    view_queue: list = field(default_factory=list)

    def next_view(self) -> int:
        if not self.view_queue:
            self.view_queue = [int(v) for v in self.rng.permutation(len(self.images))]
        return self.view_queue.pop(0)


def _scene_extent(cloud: GaussianCloud) -> float:
    if len(cloud) == 0:
        return 1.0
    span = cloud.positions.max(axis=0) - cloud.positions.min(axis=0)
    return max(float(np.linalg.norm(span)), 1e-6)


def init_train_state(cloud, poses, images, intrinsics, config: TrainConfig) -> TrainState:
    """Bind training inputs and allocate optimizer state. The cloud and poses
    are copied; the caller's objects are never mutated."""
    cloud = cloud.copy()
    state = TrainState(
        cloud=cloud,
        poses=[p.copy() for p in poses],
        images=[np.asarray(im, dtype=float) for im in images],
        intrinsics=intrinsics,
        moments={name: AdamState.zeros(getattr(cloud, name).shape) for name in PARAM_GROUPS},
        grad_stats=GradientStats.zeros(len(cloud)),
        extent=_scene_extent(cloud),
        rng=np.random.default_rng(config.random_seed),
    )
    if len(state.poses) != len(state.images):
        raise ValueError("pose count must match image count")
    return state


def _effective_lr(config: TrainConfig, name: str, extent: float) -> float:
    lr = getattr(config, f"lr_{name}")
    return lr * extent if name == "positions" else lr


# ---------------------------------------------------------------------------
# the two phases
# ---------------------------------------------------------------------------

def gaussian_step(state: TrainState, view_index: int, config: TrainConfig) -> TrainState:
    """Render one view, backpropagate the photometric loss, update the cloud."""
    pose = state.poses[view_index]
    forward = render(state.cloud, pose, state.intrinsics)
    loss, d_image = photometric_loss_gradient(
        forward.image, state.images[view_index], config.loss_lambda
    )
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss at iteration {state.iteration}",
            state=state,
            iteration=state.iteration,
        )
    grads = render_backward(state.cloud, pose, state.intrinsics, d_image, forward)
    state.grad_stats.accumulate(grads, forward.projected)
    for name in PARAM_GROUPS:
        old = getattr(state.cloud, name)
        new = adam_update(old, getattr(grads, name), state.moments[name], _effective_lr(config, name, state.extent))
        if not np.array_equal(new, old):
            if name == "rotations":
                new = new / np.linalg.norm(new, axis=1, keepdims=True)
            elif name == "colors":
                new = np.clip(new, 0.0, 1.0)
        setattr(state.cloud, name, new)
    state.loss_history.append((state.iteration, loss))
    return state


def _pose_step(state: TrainState, config: TrainConfig):
    results = refine_all_poses(
        state.cloud, state.poses, state.intrinsics, state.images, config.pose_refine
    )
    state.poses = [r.pose for r in results]


def _densify_step(state: TrainState, config: TrainConfig):
    thresholds = DensifyThresholds(
        grad_threshold=config.densify_grad_threshold,
        split_size=config.densify_size_fraction * state.extent,
        prune_opacity=config.prune_opacity,
        prune_radius=config.prune_screen_radius,
        max_gaussians=config.max_gaussians,
    )
    new_cloud, parent = densify_and_prune(state.cloud, state.grad_stats, thresholds, state.rng)
    keep = parent >= 0
    for name in PARAM_GROUPS:
        st = state.moments[name]
        fresh_m = np.zeros((len(new_cloud),) + st.m.shape[1:])
        fresh_v = np.zeros_like(fresh_m)
        fresh_m[keep] = st.m[parent[keep]]
        fresh_v[keep] = st.v[parent[keep]]
        st.m, st.v = fresh_m, fresh_v
    state.cloud = new_cloud
    state.grad_stats = GradientStats.zeros(len(new_cloud))


def _unpack_init(init, images, intrinsics):
    if isinstance(init, tuple):
        return init
    if hasattr(init, "points") and hasattr(init, "poses"):
        from .sfm import seed_gaussians

        cloud = seed_gaussians(init, intrinsics)
        poses = [init.poses[k] for k in sorted(init.poses)]
        return cloud, poses
    raise TypeError("init must be (cloud, poses) or a sparse reconstruction")


def train(images, intrinsics, init, config: TrainConfig, hook=None) -> TrainState:
    """Alternating optimization of the cloud and all camera poses.

    `init` is either a sparse reconstruction (seeded into a cloud) or an
    explicit (cloud, poses) pair. `hook(iteration, phase, state)`, when given,
    runs after every iteration with phase "pose" or "gaussian".
    """
    config.validate()
    cloud, poses = _unpack_init(init, images, intrinsics)
    state = init_train_state(cloud, poses, images, intrinsics, config)
    cutoff = config.resolved_pose_cutoff()
    densify_stop = config.resolved_densify_stop()
    pending_densify = False

    for t in range(1, config.total_iterations + 1):
        state.iteration = t
        if (
            config.densify_interval > 0
            and config.densify_start <= t <= densify_stop
            and t % config.densify_interval == 0
        ):
            pending_densify = True
        if t % config.pose_interval == 0 and t <= cutoff:
            _pose_step(state, config)
            phase = "pose"
        else:
            gaussian_step(state, state.next_view(), config)
            if pending_densify:
                _densify_step(state, config)
                pending_densify = False
            phase = "gaussian"
        if hook is not None:
            hook(t, phase, state)
    return state
