"""Planar three-link arm simulator with synchronized multimodal sensing.

The workspace is 2-D. A fixed orthographic camera maps workspace metres to
pixels, a row of binary taxels covers the distal link, and joint encoders
report angles with additive Gaussian noise. All randomness flows through
caller-supplied numpy generators, so every simulated quantity is
reproducible from a seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

DEFAULT_LINK_LENGTHS = (0.30, 0.25, 0.15)
DEFAULT_JOINT_LIMITS = ((-2.5, 2.5), (-2.5, 2.5), (-2.5, 2.5))
DEFAULT_TAXEL_LAYOUT = tuple((k + 0.5) / 8.0 for k in range(8))


@dataclass(frozen=True)
class Camera:
    """Orthographic camera: u = cx + s*x, v = cy - s*y."""

    center_px: tuple[float, float] = (320.0, 240.0)
    scale: float = 300.0
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValidationError(f"camera scale must be positive, got {self.scale}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValidationError(f"image size must be positive, got {self.image_size}")


@dataclass(frozen=True)
class ArmConfig:
    """Geometry, sensor noise, and sensor layout of the simulated arm."""

    link_lengths: tuple[float, float, float] = DEFAULT_LINK_LENGTHS
    joint_limits: tuple[tuple[float, float], ...] = DEFAULT_JOINT_LIMITS
    sigma_proprio: float = 0.02
    sigma_visual: float = 5.0
    camera: Camera = field(default_factory=Camera)
    taxel_layout: tuple[float, ...] = DEFAULT_TAXEL_LAYOUT
    contact_radius: float = 0.04

    def __post_init__(self):
        if len(self.link_lengths) != 3 or any(l <= 0 for l in self.link_lengths):
            raise ValidationError(f"link lengths must be 3 positive reals, got {self.link_lengths}")
        if len(self.joint_limits) != 3 or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValidationError(f"joint limits must be 3 non-empty intervals, got {self.joint_limits}")
        if self.sigma_proprio < 0 or self.sigma_visual < 0:
            raise ValidationError("noise standard deviations must be non-negative")
        offs = np.asarray(self.taxel_layout, dtype=float)
        if offs.size == 0 or np.any(offs < 0) or np.any(offs > 1) or np.any(np.diff(offs) <= 0):
            raise ValidationError("taxel offsets must be strictly increasing within [0, 1]")
        if self.contact_radius <= 0:
            raise ValidationError(f"contact radius must be positive, got {self.contact_radius}")

    @property
    def num_taxels(self) -> int:
        return len(self.taxel_layout)

    def to_dict(self) -> dict:
        return {
            "link_lengths": list(self.link_lengths),
            "joint_limits": [list(iv) for iv in self.joint_limits],
            "sigma_proprio": self.sigma_proprio,
            "sigma_visual": self.sigma_visual,
            "camera": {
                "center_px": list(self.camera.center_px),
                "scale": self.camera.scale,
                "image_size": list(self.camera.image_size),
            },
            "taxel_layout": list(self.taxel_layout),
            "contact_radius": self.contact_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmConfig":
        cam = d.get("camera", {})
        return cls(
            link_lengths=tuple(d["link_lengths"]),
            joint_limits=tuple(tuple(iv) for iv in d["joint_limits"]),
            sigma_proprio=d["sigma_proprio"],
            sigma_visual=d["sigma_visual"],
            camera=Camera(
                center_px=tuple(cam.get("center_px", (320.0, 240.0))),
                scale=cam.get("scale", 300.0),
                image_size=tuple(cam.get("image_size", (640, 480))),
            ),
            taxel_layout=tuple(d["taxel_layout"]),
            contact_radius=d["contact_radius"],
        )


@dataclass(frozen=True)
class SensorSnapshot:
    """One synchronized multimodal reading.

    ``visual_self``/``visual_other`` are None when the projected point falls
    outside the image. Tactile entries are exactly 0.0 or 1.0 (raw 255
    contact values stored normalized).
    """

    proprio: np.ndarray
    visual_self: np.ndarray | None
    visual_other: np.ndarray | None
    tactile: np.ndarray
    timestamp: int = 0


@dataclass
class Dataset:
    """Aligned rows of joint angles and the sensor readings they produced.

    Absent visual readings are stored as NaN rows so the arrays stay
    rectangular; (de)serialization maps NaN to empty CSV cells.
    """

    inputs: np.ndarray        # (n, 3) true joint angles
    proprio: np.ndarray       # (n, 3)
    visual_self: np.ndarray   # (n, 2), NaN when absent
    visual_other: np.ndarray  # (n, 2), NaN when absent
    tactile: np.ndarray       # (n, T)
    seed: object = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one row")
        for name in ("proprio", "visual_self", "visual_other", "tactile"):
            if getattr(self, name).shape[0] != n:
                raise ValidationError(f"dataset column block '{name}' has mismatched row count")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TouchZone:
    """Workspace region where the touch object is placed during acquisition.

    Object positions are drawn from an isotropic Gaussian around ``center``;
    with probability ``1 - p_present`` the object is absent for that sample.
    """

    center: tuple[float, float]
    spread: float = 0.05
    p_present: float = 0.75

    def __post_init__(self):
        if self.spread < 0:
            raise ValidationError("touch zone spread must be non-negative")
        if not 0.0 <= self.p_present <= 1.0:
            raise ValidationError("touch zone presence probability must lie in [0, 1]")


def forward_kinematics(theta, config: ArmConfig, check_limits: bool = True) -> np.ndarray:
    """Positions of the base and the three link endpoints, shape (4, 2).

    Endpoint k is the partial sum of link vectors rotated by the cumulative
    joint angles; row 0 is the origin and row 3 the end-effector. Pass
    ``check_limits=False`` to evaluate believed configurations that may
    wander outside the physical limits.
    """
    theta = np.asarray(theta, dtype=float).reshape(3)
    if check_limits:
        for i, (lo, hi) in enumerate(config.joint_limits):
            if not lo <= theta[i] <= hi:
                raise ValidationError(
                    f"joint {i} angle {theta[i]:.6g} outside limits [{lo}, {hi}]"
                )
    phi = np.cumsum(theta)
    steps = np.asarray(config.link_lengths)[:, None] * np.column_stack([np.cos(phi), np.sin(phi)])
    points = np.zeros((4, 2))
    points[1:] = np.cumsum(steps, axis=0)
    return points


def end_effector(theta, config: ArmConfig, check_limits: bool = True) -> np.ndarray:
    return forward_kinematics(theta, config, check_limits)[-1]


def pixel_coords(point, camera: Camera) -> np.ndarray:
    """Affine workspace-to-pixel map without the in-frame test."""
    x, y = np.asarray(point, dtype=float).reshape(2)
    cx, cy = camera.center_px
    return np.array([cx + camera.scale * x, cy - camera.scale * y])


def unproject_pixels(uv, camera: Camera) -> np.ndarray:
    """Inverse of :func:`pixel_coords`."""
    u, v = np.asarray(uv, dtype=float).reshape(2)
    cx, cy = camera.center_px
    return np.array([(u - cx) / camera.scale, (cy - v) / camera.scale])


def project_to_pixels(point, config: ArmConfig) -> np.ndarray | None:
    """Pixel coordinates of a workspace point, or None when out of frame."""
    point = np.asarray(point, dtype=float).reshape(2)
    if not np.all(np.isfinite(point)):
        raise ValidationError(f"cannot project non-finite point {point}")
    uv = pixel_coords(point, config.camera)
    w, h = config.camera.image_size
    if not (0.0 <= uv[0] <= w and 0.0 <= uv[1] <= h):
        return None
    return uv


def taxel_positions(theta, config: ArmConfig) -> np.ndarray:
    """Workspace positions of the taxels, interpolated along the distal link."""
    joints = forward_kinematics(theta, config)
    offs = np.asarray(config.taxel_layout)[:, None]
    return joints[2] + offs * (joints[3] - joints[2])


def tactile_contact(theta, other, config: ArmConfig) -> np.ndarray:
    """Binary contact vector: 1 where the object is within contact radius."""
    taxels = taxel_positions(theta, config)
    if other is None:
        return np.zeros(len(taxels))
    other = np.asarray(other, dtype=float).reshape(2)
    dists = np.linalg.norm(taxels - other, axis=1)
    return (dists <= config.contact_radius).astype(float)


def synthesize_snapshot(theta, other, config: ArmConfig, rng, timestamp: int = 0) -> SensorSnapshot:
    """Noisy multimodal reading of the arm at ``theta`` with an optional object.

    Proprio gets per-joint Gaussian noise, the visible end-effector gets
    per-axis pixel noise (clipped to the image so in-frame readings stay in
    frame), tactile is noiseless binary contact. Out-of-frame projections
    are reported as absent rather than clamped.
    """
    theta = np.asarray(theta, dtype=float).reshape(3)
    proprio = theta + rng.normal(0.0, config.sigma_proprio, size=3) if config.sigma_proprio > 0 else theta.copy()

    w, h = config.camera.image_size
    visual_self = project_to_pixels(end_effector(theta, config), config)
    if visual_self is not None and config.sigma_visual > 0:
        visual_self = np.clip(visual_self + rng.normal(0.0, config.sigma_visual, size=2), [0, 0], [w, h])

    visual_other = None
    if other is not None:
        visual_other = project_to_pixels(other, config)

    tactile = tactile_contact(theta, other, config)
    return SensorSnapshot(proprio, visual_self, visual_other, tactile, timestamp)


def sample_joint_state(config: ArmConfig, rng) -> np.ndarray:
    limits = np.asarray(config.joint_limits)
    return rng.uniform(limits[:, 0], limits[:, 1])


def acquire_dataset(config: ArmConfig, n: int, seed, touch_zone: TouchZone | None = None) -> Dataset:
    """Sample ``n`` uniform joint states and record one snapshot each.

    When a touch zone is given, the external object is drawn around its
    center (or omitted) per sample, which is what gives the tactile channel
    its spatial structure. Fully reproducible from ``seed``.
    """
    if n < 1:
        raise ValidationError(f"dataset size must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    limits = np.asarray(config.joint_limits)
    thetas = rng.uniform(limits[:, 0], limits[:, 1], size=(n, 3))

    proprio = np.zeros((n, 3))
    visual_self = np.full((n, 2), np.nan)
    visual_other = np.full((n, 2), np.nan)
    tactile = np.zeros((n, config.num_taxels))
    for i in range(n):
        other = None
        if touch_zone is not None and rng.uniform() < touch_zone.p_present:
            other = np.asarray(touch_zone.center) + touch_zone.spread * rng.normal(size=2)
        snap = synthesize_snapshot(thetas[i], other, config, rng, timestamp=i)
        proprio[i] = snap.proprio
        if snap.visual_self is not None:
            visual_self[i] = snap.visual_self
        if snap.visual_other is not None:
            visual_other[i] = snap.visual_other
        tactile[i] = snap.tactile
    return Dataset(thetas, proprio, visual_self, visual_other, tactile, seed=seed)


# --- persistence -----------------------------------------------------------

def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def dataset_header(num_taxels: int) -> list[str]:
    cols = ["theta0", "theta1", "theta2", "proprio0", "proprio1", "proprio2",
            "u_self", "v_self", "u_other", "v_other"]
    cols += [f"taxel{t}" for t in range(num_taxels)]
    return cols


def save_dataset(dataset: Dataset, csv_path, config: ArmConfig,
                 touch_zone: TouchZone | None = None) -> list[Path]:
    """Write the dataset CSV plus a JSON sidecar with config and seed.

    Returns the paths written (csv first, sidecar second).
    """
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(dataset_header(dataset.tactile.shape[1]))
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.inputs[i]]
            row += [repr(float(v)) for v in dataset.proprio[i]]
            row += [_fmt(v) for v in dataset.visual_self[i]]
            row += [_fmt(v) for v in dataset.visual_other[i]]
            row += [str(int(v)) for v in dataset.tactile[i]]
            writer.writerow(row)

    sidecar = csv_path.with_suffix(".json")
    meta = {
        "arm": config.to_dict(),
        "seed": dataset.seed if not isinstance(dataset.seed, np.integer) else int(dataset.seed),
        "n": dataset.n,
        "touch_zone": None if touch_zone is None else {
            "center": list(touch_zone.center),
            "spread": touch_zone.spread,
            "p_present": touch_zone.p_present,
        },
    }
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return [csv_path, sidecar]


def load_dataset(csv_path) -> Dataset:
    """Parse a dataset CSV; raises ValidationError naming the offending row."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{csv_path}: empty dataset file") from None
        base = ["theta0", "theta1", "theta2", "proprio0", "proprio1", "proprio2",
                "u_self", "v_self", "u_other", "v_other"]
        if header[: len(base)] != base:
            missing = [c for c in base if c not in header]
            raise ValidationError(f"{csv_path}: missing modality columns {missing}")
        num_taxels = len(header) - len(base)
        if num_taxels < 1 or header[len(base):] != [f"taxel{t}" for t in range(num_taxels)]:
            raise ValidationError(f"{csv_path}: malformed taxel columns {header[len(base):]}")

        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{csv_path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [np.nan if cell == "" else float(cell) for cell in row]
            except ValueError as exc:
                raise ValidationError(f"{csv_path}: row {lineno}: {exc}") from None
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{csv_path}: dataset has a header but no data rows")

    arr = np.asarray(rows, dtype=float)
    seed = None
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar) as f:
            seed = json.load(f).get("seed")
    return Dataset(
        inputs=arr[:, 0:3],
        proprio=arr[:, 3:6],
        visual_self=arr[:, 6:8],
        visual_other=arr[:, 8:10],
        tactile=arr[:, 10:],
        seed=seed,
    )
