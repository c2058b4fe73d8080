"""Procedural sphere scenes and an analytic Lambertian ray tracer.

The tracer doubles as ground truth for observed views and as the perfect
generator behind the scene oracle denoiser: shading is view-independent, so
any two cameras see the same color at the same surface point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Intrinsics, Pose, camera_rays

PRESET_NAMES = ("single_sphere", "cluster", "room")


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray  # (3,)
    radius: float
    albedo: np.ndarray  # (3,) in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=float).reshape(3))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.albedo.min() < 0 or self.albedo.max() > 1:
            raise ValueError("albedo components must lie in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    spheres: tuple
    background: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.07, 0.10]))
    ambient: float = 0.25
    light_direction: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.5, 0.8]))

    def __post_init__(self):
        bg = np.asarray(self.background, dtype=float).reshape(3)
        if bg.min() < 0 or bg.max() > 1:
            raise ValueError("background components must lie in [0, 1]")
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")
        light = np.asarray(self.light_direction, dtype=float).reshape(3)
        norm = np.linalg.norm(light)
        if norm == 0:
            raise ValueError("light_direction must be nonzero")
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "light_direction", light / norm)
        object.__setattr__(self, "spheres", tuple(self.spheres))

    def arrays(self):
        """(centers, radii, albedos) as packed float arrays for the kernels."""
        n = len(self.spheres)
        centers = np.zeros((n, 3))
        radii = np.zeros(n)
        albedos = np.zeros((n, 3))
        for i, s in enumerate(self.spheres):
            centers[i] = s.center
            radii[i] = s.radius
            albedos[i] = s.albedo
        return centers, radii, albedos

    def to_json(self) -> dict:
        return {
            "spheres": [{"center": list(s.center), "radius": s.radius,
                         "albedo": list(s.albedo)} for s in self.spheres],
            "background": list(self.background),
            "ambient": self.ambient,
            "light_direction": list(self.light_direction),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        spheres = tuple(Sphere(s["center"], s["radius"], s["albedo"])
                        for s in data["spheres"])
        return cls(spheres=spheres, background=np.asarray(data["background"]),
                   ambient=float(data["ambient"]),
                   light_direction=np.asarray(data["light_direction"]))


def render_scene(scene: SceneSpec, pose: Pose, intrinsics: Intrinsics) -> np.ndarray:
    """Ray-trace an (H, W, 3) image; nearest-hit Lambertian + ambient shading."""
    origins, dirs = camera_rays(pose, intrinsics)
    h, w = origins.shape[:2]
    centers, radii, albedos = scene.arrays()
    colors = kernels.trace_spheres(
        np.ascontiguousarray(origins.reshape(-1, 3)),
        np.ascontiguousarray(dirs.reshape(-1, 3)),
        centers, radii, albedos, scene.background, float(scene.ambient),
        scene.light_direction)
    return np.clip(colors.reshape(h, w, 3), 0.0, 1.0)


def shade_point(scene: SceneSpec, sphere_index: int, point: np.ndarray) -> np.ndarray:
    """Closed-form shaded color at a surface point (view-independent)."""
    s = scene.spheres[sphere_index]
    n = (np.asarray(point) - s.center) / s.radius
    n = n / np.linalg.norm(n)
    lam = max(0.0, float(n @ scene.light_direction))
    return np.clip(s.albedo * (scene.ambient + (1.0 - scene.ambient) * lam), 0.0, 1.0)


def preset_scene(name: str, seed: int = 0) -> SceneSpec:
    """Deterministic named scenes; raises on unknown names."""
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown scene preset {name!r}; valid names: {', '.join(PRESET_NAMES)}")
    if name == "single_sphere":
        return SceneSpec(spheres=(Sphere(np.zeros(3), 1.0, np.array([0.80, 0.35, 0.30])),))

    rng = np.random.default_rng(seed)
    spheres = []
    count = int(rng.integers(5, 13))
    # rejection sampling keeps spheres inside the unit ball and disjoint
    while len(spheres) < count:
        radius = float(rng.uniform(0.10, 0.25))
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = direction * (1.0 - radius) * rng.uniform(0.0, 1.0) ** (1 / 3)
        ok = all(np.linalg.norm(center - s.center) > radius + s.radius + 0.02
                 for s in spheres)
        if ok:
            spheres.append(Sphere(center, radius, rng.uniform(0.2, 0.95, size=3)))
    if name == "room":
        spheres.append(Sphere(np.zeros(3), 8.0, np.array([0.55, 0.55, 0.60])))
    return SceneSpec(spheres=tuple(spheres))
