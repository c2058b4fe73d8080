"""Camera path families and per-dataset generation presets.

Conventions: world up is +y; orbit/spiral azimuth starts on the +x axis and
advances toward +z; spiral cylinders have their axis along +y.

Each dataset preset concatenates path variants of 80 poses each, so the
number of variants is total/80 (mip360 720, re10k 800, llff 960, dtu 480,
co3d 640, single-image presets 80).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import Pose
from .scene import SceneSpec

WORLD_UP = np.array([0.0, 1.0, 0.0])

VIEWS_PER_VARIANT = 80

PRESET_KINDS = ("single_forward", "single_orbit", "re10k", "llff", "dtu",
                "co3d", "mip360")


def look_at(position, target, up=WORLD_UP) -> Pose:
    """Pose at `position` with the optical axis through `target` (y down)."""
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    f = target - position
    norm = np.linalg.norm(f)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    f = f / norm
    down = -np.asarray(up, dtype=float)
    x = np.cross(down, f)
    if np.linalg.norm(x) < 1e-9:
        # forward parallel to up: fall back to a +z up hint
        x = np.cross(-np.array([0.0, 0.0, 1.0]), f)
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    return Pose(np.stack([x, y, f], axis=1), position)


def frame_from_forward(forward, up=WORLD_UP) -> np.ndarray:
    """Rotation matrix with +z along `forward` and y pointing down-ish."""
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    down = -np.asarray(up, dtype=float)
    x = np.cross(down, f)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(-np.array([0.0, 0.0, 1.0]), f)
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    return np.stack([x, y, f], axis=1)


def orbit_path(center, radius: float, height: float, n: int) -> list[Pose]:
    """n look-at poses equally spaced on a horizontal circle around center."""
    center = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("orbit radius must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    poses = []
    for i in range(n):
        az = 2.0 * np.pi * i / n
        pos = center + np.array([radius * np.cos(az), height, radius * np.sin(az)])
        poses.append(look_at(pos, center))
    return poses


def forward_circle_path(fit_views: list[Pose], scale: float, z_offset: float,
                        n: int) -> list[Pose]:
    """Circle in the plane orthogonal to the mean forward axis of the fit.

    Radius is scale times the mean distance of the fit camera centers from
    their centroid; every output pose shares the mean orientation, and the
    whole circle is pushed along the mean forward axis by z_offset.
    """
    if len(fit_views) < 2:
        raise ValueError("forward_circle_path needs at least 2 fit poses")
    centers = np.array([p.translation for p in fit_views])
    centroid = centers.mean(axis=0)
    fwd = np.array([p.forward for p in fit_views]).mean(axis=0)
    fwd = fwd / np.linalg.norm(fwd)
    radius = scale * float(np.linalg.norm(centers - centroid, axis=1).mean())
    rot = frame_from_forward(fwd)
    e1, e2 = rot[:, 0], rot[:, 1]
    base = centroid + z_offset * fwd
    poses = []
    for i in range(n):
        az = 2.0 * np.pi * i / n
        pos = base + radius * (np.cos(az) * e1 + np.sin(az) * e2)
        poses.append(Pose(rot, pos))
    return poses


def _catmull_rom(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Endpoint-clamped Catmull-Rom through `points`, sampled at u in [0,1]."""
    m = len(points)
    pts = np.concatenate([points[:1], points, points[-1:]], axis=0)
    seg = np.clip((u * (m - 1)).astype(int), 0, m - 2)
    s = u * (m - 1) - seg
    p0, p1, p2, p3 = (pts[seg], pts[seg + 1], pts[seg + 2], pts[seg + 3])
    s = s[:, None]
    return 0.5 * ((2 * p1) + (-p0 + p2) * s + (2 * p0 - 5 * p1 + 4 * p2 - p3) * s ** 2
                  + (-p0 + 3 * p1 - 3 * p2 + p3) * s ** 3)


def spline_path(control: list[Pose], lateral_offset, n: int) -> list[Pose]:
    """Catmull-Rom positions + slerped orientations through the control poses.

    `lateral_offset` is a 2-vector expressed in the first control pose's
    (x, z) axes and shifts every output position.
    """
    if len(control) < 2:
        raise ValueError("spline_path needs at least 2 control poses")
    if n < 1:
        raise ValueError("n must be >= 1")
    centers = np.array([p.translation for p in control])
    u = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.0])
    positions = _catmull_rom(centers, u)
    off = np.asarray(lateral_offset, dtype=float).reshape(2)
    shift = off[0] * control[0].rotation[:, 0] + off[1] * control[0].rotation[:, 2]
    positions = positions + shift
    rots = Rotation.from_matrix(np.array([p.rotation for p in control]))
    slerp = Slerp(np.linspace(0.0, 1.0, len(control)), rots)
    mats = slerp(u).as_matrix()
    return [Pose(mats[i], positions[i]) for i in range(len(u))]


def spiral_cylinder_path(radius: float, z_start: float, z_end: float,
                         turns: float, center, n: int,
                         round_trip: bool = False) -> list[Pose]:
    """Spiral on a vertical cylinder, each pose looking at the axis point at
    its own height. With round_trip the height runs start -> end -> start."""
    if radius <= 0:
        raise ValueError("spiral radius must be positive")
    if n < 2:
        raise ValueError("n must be >= 2")
    center = np.asarray(center, dtype=float)
    poses = []
    for i in range(n):
        frac = i / (n - 1)
        az = 2.0 * np.pi * turns * frac
        if round_trip:
            h = z_start + (z_end - z_start) * (1.0 - abs(2.0 * frac - 1.0))
        else:
            h = z_start + (z_end - z_start) * frac
        pos = center + np.array([radius * np.cos(az), h, radius * np.sin(az)])
        target = center + np.array([0.0, h, 0.0])
        poses.append(look_at(pos, target))
    return poses


def _fit_focus_center(poses: list[Pose]) -> np.ndarray:
    """Estimated point the cameras collectively look at."""
    centers = np.array([p.translation for p in poses])
    centroid = centers.mean(axis=0)
    if len(poses) == 1:
        d = float(np.linalg.norm(centers[0]))
        d = d if d > 1e-9 else 1.0
        return centers[0] + poses[0].forward * d
    d = float(np.linalg.norm(centers - centroid, axis=1).mean())
    d = d if d > 1e-9 else 1.0
    targets = centers + np.array([p.forward for p in poses]) * d
    return targets.mean(axis=0)


def _fit_radius(poses: list[Pose], center: np.ndarray) -> float:
    centers = np.array([p.translation for p in poses])
    r = float(np.linalg.norm(centers - center, axis=1).mean())
    return r if r > 1e-9 else 1.0


def _scaled_controls(control: list[Pose], scale: float) -> list[Pose]:
    centers = np.array([p.translation for p in control])
    centroid = centers.mean(axis=0)
    return [Pose(p.rotation, centroid + scale * (p.translation - centroid))
            for p in control]


def dataset_preset(kind: str, input_poses: list[Pose]) -> list[Pose]:
    """Concatenated path variants for a named dataset family.

    Per-variant offsets/scales: scales are log-spaced in [0.5, 2.0]; height
    and lateral offsets are symmetric around 0 with step 10% of the fit
    radius.
    """
    if kind not in PRESET_KINDS:
        raise ValueError(f"unknown preset {kind!r}; valid kinds: {', '.join(PRESET_KINDS)}")
    if not input_poses:
        raise ValueError("dataset_preset needs at least one input pose")
    nv = VIEWS_PER_VARIANT
    center = _fit_focus_center(input_poses)
    radius = _fit_radius(input_poses, center)
    step = 0.1 * radius

    if kind == "single_forward":
        return spiral_cylinder_path(0.7 * radius, center[1] - 0.3 * radius,
                                    center[1] + 0.3 * radius, turns=2.0,
                                    center=center, n=nv, round_trip=True)
    if kind == "single_orbit":
        height = input_poses[0].translation[1] - center[1]
        return orbit_path(center, radius, height, nv)

    poses: list[Pose] = []
    if kind == "re10k":  # 10 spline offsets x 80
        for dx in (-2.0, -1.0, 0.0, 1.0, 2.0):
            for dz in (-1.0, 1.0):
                poses += spline_path(input_poses, (dx * step, dz * step), nv)
    elif kind == "llff":  # 12 forward-circle variants x 80
        for s in np.geomspace(0.5, 2.0, 4):
            for dz in (-1.0, 0.0, 1.0):
                poses += forward_circle_path(input_poses, float(s), dz * step, nv)
    elif kind == "dtu":  # 6 forward-circle variants x 80
        for s in np.geomspace(0.5, 2.0, 3):
            for dz in (-1.0, 1.0):
                poses += forward_circle_path(input_poses, float(s), dz * step, nv)
    elif kind == "co3d":  # 8 spline scales x 80
        for s in np.geomspace(0.5, 2.0, 8):
            poses += spline_path(_scaled_controls(input_poses, float(s)), (0.0, 0.0), nv)
    elif kind == "mip360":  # 9 orbit variants x 80 (circle fit stands in for the ellipse)
        base_h = float(np.mean([p.translation[1] for p in input_poses])) - center[1]
        for s in np.geomspace(0.5, 2.0, 3):
            for dh in (-1.0, 0.0, 1.0):
                poses += orbit_path(center, float(s) * radius, base_h + dh * step, nv)
    return poses


def validate_path(poses: list[Pose], scene: SceneSpec) -> list[int]:
    """Indices of poses whose camera center lies strictly inside a sphere."""
    bad = []
    for i, p in enumerate(poses):
        for s in scene.spheres:
            if np.linalg.norm(p.translation - s.center) < s.radius:
                bad.append(i)
                break
    return bad
