"""File formats used by the reconstruction pipeline.

Everything on disk is plain text or PNG so runs can be inspected and diffed:
datasets are a directory of images plus a one-line intrinsics file, clouds go
to ASCII PLY, trajectories to one `id tx ty tz qx qy qz qw` line per pose,
configs to flat key = value files, and reports to CSV plus small SVG charts.
Floats are written with 9 significant digits, which makes re-exporting an
imported file reproduce it byte for byte.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

from .cloud import GaussianCloud
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    quaternion_from_rotation,
    rotation_from_quaternion,
)
from .pose_refine import RefineConfig
from .training import TrainConfig

INTRINSICS_FILENAME = "intrinsics.txt"
REFERENCE_FILENAME = "reference_trajectory.txt"
IMAGE_SUFFIXES = (".png", ".ppm")


class DatasetError(RuntimeError):
    """A dataset directory or data file is missing, unreadable, or malformed."""


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


def _fmt(value) -> str:
    return format(float(value), ".9g")


# ---------------------------------------------------------------------------
# images and intrinsics
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """8-bit RGB file as an (H, W, 3) float array in [0, 1]."""
    try:
        with Image.open(path) as handle:
            raw = np.asarray(handle.convert("RGB"))
    except Exception as exc:
        raise DatasetError(f"unreadable image {Path(path).name}: {exc}") from exc
    return raw.astype(float) / 255.0


def save_image(image: np.ndarray, path):
    quantized = np.rint(np.clip(np.asarray(image), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        tokens = Path(path).read_text().split()
    except OSError as exc:
        raise DatasetError(f"cannot read intrinsics file {path}: {exc}") from exc
    if len(tokens) != 6:
        raise DatasetError(f"intrinsics file {path} must hold: fx fy cx cy width height")
    fx, fy, cx, cy = (float(t) for t in tokens[:4])
    return CameraIntrinsics(fx, fy, cx, cy, int(tokens[4]), int(tokens[5]))


def write_intrinsics(intr: CameraIntrinsics, path):
    values = [_fmt(intr.fx), _fmt(intr.fy), _fmt(intr.cx), _fmt(intr.cy)]
    Path(path).write_text(" ".join(values + [str(intr.width), str(intr.height)]) + "\n")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Images plus everything needed to reconstruct and evaluate them. The
    reference trajectory, when present, is aligned with image order."""

    name: str
    image_paths: tuple
    images: list
    intrinsics: CameraIntrinsics
    split_ratio: Fraction
    train_indices: tuple
    test_indices: tuple
    reference: list | None = None

    @property
    def train_images(self) -> list:
        return [self.images[i] for i in self.train_indices]


def split_indices(count: int, ratio: Fraction):
    """Deterministic train/test split holding out every q-th image for ratio
    p/q; 7/8 reproduces the usual hold-out-every-8th rule."""
    ratio = Fraction(ratio).limit_denominator(4096)
    if not 0 < ratio <= 1:
        raise DatasetError(f"split ratio must lie in (0, 1], got {ratio}")
    q, p = ratio.denominator, ratio.numerator
    test = tuple(i for i in range(count) if i % q >= p)
    train = tuple(i for i in range(count) if i % q < p)
    return train, test


def load_dataset(root, ratio=Fraction(7, 8)) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    intrinsics_path = root / INTRINSICS_FILENAME
    if not intrinsics_path.is_file():
        raise DatasetError(f"no intrinsics file at {intrinsics_path}")
    intr = read_intrinsics(intrinsics_path)

    paths = tuple(sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
    images = [load_image(p) for p in paths]
    for path, image in zip(paths, images):
        if image.shape[:2] != (intr.height, intr.width):
            raise DatasetError(
                f"image {path.name} is {image.shape[1]}x{image.shape[0]}, "
                f"intrinsics say {intr.width}x{intr.height}"
            )

    train, test = split_indices(len(images), ratio)
    if len(train) < 2:
        raise DatasetError(f"need at least 2 training images, have {len(train)}")
    if not test:
        warnings.warn("split produced no test images; metrics will skip view synthesis")

    reference = None
    reference_path = root / REFERENCE_FILENAME
    if reference_path.is_file():
        poses, ids = import_trajectory(reference_path)
        if sorted(ids) != list(range(len(images))):
            raise DatasetError("reference trajectory ids must cover all images exactly")
        reference = [poses[ids.index(i)] for i in range(len(images))]

    return Dataset(root.name, paths, images, intr, ratio, train, test, reference)


# ---------------------------------------------------------------------------
# gaussian cloud PLY
# ---------------------------------------------------------------------------

_PLY_PROPERTIES = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "red", "green", "blue",
)


def export_cloud_ply(cloud: GaussianCloud, path):
    """ASCII PLY, one vertex per gaussian. scale_* stores log scale, rot_* the
    unit quaternion (w first), opacity the pre-sigmoid logit."""
    table = np.hstack(
        [
            cloud.positions,
            cloud.log_scales,
            cloud.rotations,
            cloud.opacity_logits[:, None],
            cloud.colors,
        ]
    )
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property float {name}" for name in _PLY_PROPERTIES]
    lines.append("end_header")
    lines += [" ".join(_fmt(v) for v in row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n")


def import_cloud_ply(path) -> GaussianCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise DatasetError(f"{path} is not a PLY file")
    try:
        header_end = lines.index("end_header")
    except ValueError:
        raise DatasetError(f"{path}: missing end_header") from None
    count = None
    names = []
    for line in lines[1:header_end]:
        if line.startswith("element vertex "):
            count = int(line.split()[-1])
        elif line.startswith("property "):
            names.append(line.split()[-1])
    if count is None or tuple(names) != _PLY_PROPERTIES:
        raise DatasetError(f"{path}: expected properties {' '.join(_PLY_PROPERTIES)}")
    body = lines[header_end + 1 : header_end + 1 + count]
    if len(body) != count:
        raise DatasetError(f"{path}: header promises {count} vertices, found {len(body)}")
    table = np.array([[float(v) for v in line.split()] for line in body], dtype=float)
    table = table.reshape(count, len(_PLY_PROPERTIES))
    cloud = GaussianCloud(
        table[:, 0:3], table[:, 3:6], np.zeros((count, 4)) + [1, 0, 0, 0],
        table[:, 10], table[:, 11:14],
    )
    # keep the stored quaternions verbatim so a re-export reproduces the file
    cloud.rotations = table[:, 6:10].copy()
    return cloud


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def export_trajectory(poses, path, ids=None):
    """One line per pose: `id tx ty tz qx qy qz qw` with the world-to-camera
    rotation as a unit quaternion (w canonical non-negative). 12 significant
    digits keep the re-imported pose within 1e-9 of the original."""
    ids = range(len(poses)) if ids is None else list(ids)
    lines = []
    for pose_id, pose in zip(ids, poses):
        w, x, y, z = quaternion_from_rotation(pose.rotation)
        values = [format(float(v), ".12g") for v in (*pose.translation, x, y, z, w)]
        lines.append(" ".join([str(int(pose_id))] + values))
    Path(path).write_text("\n".join(lines) + "\n")


def import_trajectory(path):
    """Returns (poses, ids) in file order."""
    poses, ids = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise DatasetError(f"{path}: trajectory lines need 8 fields, got {len(tokens)}")
        values = [float(t) for t in tokens[1:]]
        rotation = rotation_from_quaternion([values[6], values[3], values[4], values[5]])
        poses.append(CameraPose.from_rt(rotation, values[0:3]))
        ids.append(int(tokens[0]))
    return poses, tuple(ids)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path) -> dict:
    """Flat `key = value` file; `#` starts a comment."""
    mapping = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def write_config(mapping: dict, path):
    lines = [f"{key} = {value}" for key, value in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


_OPTIONAL_INT_KEYS = {"pose_cutoff", "densify_stop"}
_OPTIONAL_FLOAT_KEYS = {"prune_screen_radius"}


def _coerce(key: str, value: str, kind):
    if key in _OPTIONAL_INT_KEYS or key in _OPTIONAL_FLOAT_KEYS:
        if value.lower() in ("none", ""):
            return None
        kind = int if key in _OPTIONAL_INT_KEYS else float
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_train_config(mapping: dict) -> TrainConfig:
    """TrainConfig from string key/value pairs; `refine_` prefixed keys set
    the photometric pose refiner's options."""
    config = TrainConfig()
    train_fields = {f.name: f for f in fields(TrainConfig) if f.name != "pose_refine"}
    refine_fields = {f.name: f for f in fields(RefineConfig)}
    for key, value in mapping.items():
        if key.startswith("refine_") and key[len("refine_"):] in refine_fields:
            name = key[len("refine_"):]
            kind = type(getattr(config.pose_refine, name))
            setattr(config.pose_refine, name, _coerce(key, value, kind))
        elif key in train_fields:
            default = train_fields[key].default
            kind = type(default) if default is not None else None
            setattr(config, key, _coerce(key, value, kind))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return config


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ("scene", "psnr", "ssim", "ate", "rpe_trans", "rpe_rot", "lpips")


def write_metrics_csv(path, rows):
    """One row per scene. The lpips column is always `unavailable` (needs a
    pretrained network)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            record = [str(row.get("scene", ""))]
            for key in METRICS_COLUMNS[1:-1]:
                value = row.get(key)
                record.append("nan" if value is None else _fmt(value))
            record.append("unavailable")
            writer.writerow(record)


def write_loss_csv(path, history):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("iteration", "loss"))
        for iteration, loss in history:
            writer.writerow((str(int(iteration)), _fmt(loss)))


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def write_line_chart_svg(path, series: dict, title: str, x_label: str, y_label: str):
    """Minimal line chart: one polyline per named series on shared axes."""
    width, height, margin = 640, 400, 60
    points = [p for pts in series.values() for p in pts]
    if not points:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 16}" text-anchor="middle" font-size="12">'
        f"{escape(x_label)}</text>",
        f'<text x="16" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2})">{escape(y_label)}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" font-size="10">{_fmt(x_lo)}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" '
        f'font-size="10">{_fmt(x_hi)}</text>',
        f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end" font-size="10">'
        f"{_fmt(y_lo)}</text>",
        f'<text x="{margin - 4}" y="{margin + 4}" text-anchor="end" font-size="10">'
        f"{_fmt(y_hi)}</text>",
    ]
    for index, (name, pts) in enumerate(series.items()):
        color = _SVG_COLORS[index % len(_SVG_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * index}" font-size="10" '
            f'fill="{color}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, cloud: GaussianCloud, poses, intr: CameraIntrinsics, meta: dict):
    pose_params = np.stack([p.params() for p in poses]) if poses else np.zeros((0, 6))
    np.savez(
        path,
        positions=cloud.positions,
        log_scales=cloud.log_scales,
        rotations=cloud.rotations,
        opacity_logits=cloud.opacity_logits,
        colors=cloud.colors,
        pose_params=pose_params,
        intrinsics=np.array([intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height]),
        meta=json.dumps(meta, sort_keys=True),
    )


def load_checkpoint(path):
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read checkpoint {path}: {exc}") from exc
    cloud = GaussianCloud(
        data["positions"], data["log_scales"], data["rotations"],
        data["opacity_logits"], data["colors"],
    )
    cloud.rotations = np.array(data["rotations"], dtype=float)
    poses = [CameraPose(row[:3], row[3:]) for row in data["pose_params"]]
    fx, fy, cx, cy, width, height = data["intrinsics"]
    intr = CameraIntrinsics(float(fx), float(fy), float(cx), float(cy), int(width), int(height))
    return cloud, poses, intr, json.loads(str(data["meta"]))
