"""Camera pose algebra, pinhole projection, raymaps, and aspect handling.

Conventions (fixed once, used everywhere):
  - right-handed world, cameras look along +z, x right, y down,
    projection u = fx*X/Z + cx
  - rays pass through pixel centers (u + 0.5, v + 0.5)
  - world up is +y for look-at construction (see trajectories)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: X_world = R @ X_cam + t."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,) camera center in world coordinates

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3g})")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has determinant -1 (reflection)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other (apply other first)."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) through the transform."""
        return np.asarray(points) @ self.rotation.T + self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis (+z column) in world coordinates."""
        return self.rotation[:, 2]


def relative_pose(target: Pose, reference: Pose) -> Pose:
    """Pose of `target` expressed in `reference`'s camera frame (ref⁻¹ ∘ tgt).

    Invariant to applying one rigid transform to both arguments.
    """
    return reference.inverse().compose(target)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


class ViewKind(str, Enum):
    OBSERVED = "observed"
    ANCHOR = "anchor"
    GENERATED = "generated"


@dataclass(frozen=True)
class View:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    pose: Pose
    intrinsics: Intrinsics
    kind: ViewKind = ViewKind.OBSERVED

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.shape != (self.intrinsics.height, self.intrinsics.width, 3):
            raise ValueError(
                f"image shape {img.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}x3")
        if not np.all(np.isfinite(img)):
            raise ValueError("image contains non-finite values")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "kind", ViewKind(self.kind))


@dataclass(frozen=True)
class Raymap:
    """Per-cell ray origins/directions in a reference camera's frame."""

    origins: np.ndarray  # (h', w', 3)
    directions: np.ndarray  # (h', w', 3), unit norm
    resolution_divisor: int = field(default=1)


def pixel_directions(intrinsics: Intrinsics, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Unit camera-frame directions through continuous pixel coords (u, v)."""
    x = (us - intrinsics.cx) / intrinsics.fx
    y = (vs - intrinsics.cy) / intrinsics.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def camera_rays(pose: Pose, intrinsics: Intrinsics):
    """World-frame (origins, directions) for every pixel center, (H, W, 3)."""
    h, w = intrinsics.height, intrinsics.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = pixel_directions(intrinsics, us, vs) @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def compute_raymap(camera: Pose, intrinsics: Intrinsics, reference: Pose,
                   resolution_divisor: int = 1) -> Raymap:
    """Rays of `camera`, one per low-resolution cell, in `reference`'s frame.

    Cell (i, j) casts through full-resolution pixel coordinate
    ((j + 0.5) * divisor, (i + 0.5) * divisor).
    """
    d = int(resolution_divisor)
    if d < 1:
        raise ValueError("resolution_divisor must be >= 1")
    if intrinsics.width % d or intrinsics.height % d:
        raise ValueError(
            f"image dimensions {intrinsics.width}x{intrinsics.height} are not "
            f"divisible by resolution_divisor {d}")
    hh, ww = intrinsics.height // d, intrinsics.width // d
    us, vs = np.meshgrid((np.arange(ww) + 0.5) * d, (np.arange(hh) + 0.5) * d)
    rel = relative_pose(camera, reference)
    dirs = pixel_directions(intrinsics, us, vs) @ rel.rotation.T
    origins = np.broadcast_to(rel.translation, dirs.shape).copy()
    return Raymap(origins=origins, directions=dirs, resolution_divisor=d)


def project(pose: Pose, intrinsics: Intrinsics, points: np.ndarray) -> np.ndarray:
    """Project world points (..., 3) to continuous pixel coordinates (..., 2)."""
    pc = np.asarray(points) - pose.translation
    pc = pc @ pose.rotation  # world -> camera (R^T on the right)
    z = pc[..., 2]
    u = intrinsics.fx * pc[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * pc[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


class CropMode(str, Enum):
    CENTER_CROP = "center_crop"
    PAD_TO_SQUARE = "pad_to_square"


def square_crop_and_pad(view: View, mode: CropMode | str) -> View:
    """Make a view square by centered cropping or mid-gray centered padding."""
    mode = CropMode(mode)
    img = view.image
    h, w = img.shape[:2]
    intr = view.intrinsics
    if h == w:
        return view
    if mode is CropMode.CENTER_CROP:
        side = min(h, w)
        oy, ox = (h - side) // 2, (w - side) // 2
        out = img[oy:oy + side, ox:ox + side]
        new_intr = replace(intr, cx=intr.cx - ox, cy=intr.cy - oy,
                           width=side, height=side)
    else:
        side = max(h, w)
        oy, ox = (side - h) // 2, (side - w) // 2
        out = np.full((side, side, 3), 0.5)
        out[oy:oy + h, ox:ox + w] = img
        new_intr = replace(intr, cx=intr.cx + ox, cy=intr.cy + oy,
                           width=side, height=side)
    return View(image=out, pose=view.pose, intrinsics=new_intr, kind=view.kind)
