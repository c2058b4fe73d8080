"""End-to-end driver: scene -> trajectories -> plan -> sampling ->
reconstruction -> evaluation, with every stage also exposed standalone.

Each stage reads its inputs from, and writes its artifacts into, a single
output directory, so the monolithic pipeline and the chained subcommands
produce byte-identical results. No artifact contains wall-clock data; runs
are reproducible from (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import imageio
from .diffusion import (GaussianOracle, SamplerOptions, SceneOracle, execute_plan)
from .geometry import Intrinsics, Pose, View, ViewKind
from .metrics import MetricReport, evaluate_pairs
from .reconstruction import LossConfig, VoxelGrid, perceptual_proxy, reconstruct, render_view
from .scene import SceneSpec, preset_scene, render_scene
from .scheduler import SamplingPlan, build_plan
from .trajectories import (PRESET_KINDS, dataset_preset, forward_circle_path,
                           look_at, orbit_path, spiral_cylinder_path, spline_path)


def pose_to_json(p: Pose) -> dict:
    return {"rotation": [float(x) for x in p.rotation.ravel()],
            "translation": [float(x) for x in p.translation]}


def pose_from_json(d: dict) -> Pose:
    return Pose(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                np.asarray(d["translation"], dtype=float))


def intrinsics_to_json(i: Intrinsics) -> dict:
    return {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
            "width": i.width, "height": i.height}


def intrinsics_from_json(d: dict) -> Intrinsics:
    return Intrinsics(**d)


def _dump_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


@dataclass
class PipelineConfig:
    scene: dict = field(default_factory=lambda: {"preset": "single_sphere", "seed": 0})
    mode: str = "single_image"
    observed: dict = field(default_factory=lambda: {
        "preset": "arc", "count": 1, "radius": 3.0, "height": 0.3,
        "spread_degrees": 60.0})
    trajectory: dict | list = field(default_factory=lambda: {"preset": "single_orbit"})
    oracle: dict = field(default_factory=lambda: {"kind": "scene", "inconsistency_sigma": 0.0})
    sampler: dict = field(default_factory=dict)
    recon: dict = field(default_factory=dict)
    holdout: dict | list = field(default_factory=lambda: {
        "preset": "orbit", "count": 8, "radius": 3.0, "height": 0.6})
    image_size: int = 64
    fov_degrees: float = 50.0
    grid_resolution: int = 64
    bounds: list = field(default_factory=lambda: [[-1.6, -1.6, -1.6], [1.6, 1.6, 1.6]])
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        return asdict(self)

    # ---- derived objects ----

    def intrinsics(self) -> Intrinsics:
        size = self.image_size
        f = (size / 2.0) / np.tan(np.radians(self.fov_degrees) / 2.0)
        return Intrinsics(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0,
                          width=size, height=size)

    def scene_spec(self) -> SceneSpec:
        if "preset" in self.scene:
            return preset_scene(self.scene["preset"], int(self.scene.get("seed", 0)))
        return SceneSpec.from_json(self.scene)

    def observed_poses(self) -> list[Pose]:
        if isinstance(self.observed, list):
            return [pose_from_json(p) for p in self.observed]
        if "poses" in self.observed:
            return [pose_from_json(p) for p in self.observed["poses"]]
        spec = self.observed
        if spec.get("preset") != "arc":
            raise ValueError(f"unknown observed preset {spec.get('preset')!r}; valid: arc")
        count = int(spec.get("count", 3))
        radius = float(spec.get("radius", 3.0))
        height = float(spec.get("height", 0.3))
        spread = np.radians(float(spec.get("spread_degrees", 60.0)))
        azimuths = np.linspace(-spread / 2, spread / 2, count) if count > 1 else [0.0]
        return [look_at(np.array([radius * np.cos(a), height, radius * np.sin(a)]),
                        np.zeros(3)) for a in azimuths]

    def target_poses(self, observed: list[Pose]) -> list[Pose]:
        spec = self.trajectory
        if isinstance(spec, list):
            poses = []
            for item in spec:
                poses += _path_from_spec(item, observed)
            return poses
        if "preset" in spec:
            return dataset_preset(spec["preset"], observed)
        return _path_from_spec(spec, observed)

    def holdout_poses(self) -> list[Pose]:
        spec = self.holdout
        if isinstance(spec, list):
            return [pose_from_json(p) for p in spec]
        if "poses" in spec:
            return [pose_from_json(p) for p in spec["poses"]]
        count = int(spec.get("count", 8))
        radius = float(spec.get("radius", 3.0))
        height = float(spec.get("height", 0.6))
        return orbit_path(np.zeros(3), radius, height, count)

    def sampler_options(self) -> SamplerOptions:
        s = dict(self.sampler)
        s.setdefault("seed", self.seed)
        return SamplerOptions(**s)

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.recon)

    def denoiser(self, scene: SceneSpec):
        kind = self.oracle.get("kind", "scene")
        if kind == "scene":
            return SceneOracle(scene=scene,
                               inconsistency_sigma=float(self.oracle.get("inconsistency_sigma", 0.0)),
                               seed=int(self.oracle.get("seed", self.seed)))
        if kind == "gaussian":
            return GaussianOracle(mu=float(self.oracle.get("mu", 0.5)),
                                  tau=float(self.oracle.get("tau", 0.2)))
        raise ValueError(f"unknown oracle kind {kind!r}; valid: scene, gaussian")


def _path_from_spec(spec: dict, observed: list[Pose]) -> list[Pose]:
    family = spec.get("family")
    n = int(spec.get("n_views", 80))
    if family == "orbit":
        return orbit_path(np.asarray(spec.get("center", [0, 0, 0]), dtype=float),
                          float(spec.get("radius", 3.0)),
                          float(spec.get("height", 0.0)), n)
    if family == "forward_circle":
        return forward_circle_path(observed, float(spec.get("scale", 1.0)),
                                   float(spec.get("z_offset", 0.0)), n)
    if family == "spline":
        return spline_path(observed, spec.get("lateral_offset", (0.0, 0.0)), n)
    if family == "spiral_cylinder":
        return spiral_cylinder_path(
            float(spec.get("radius", 2.0)), float(spec.get("z_start", -0.5)),
            float(spec.get("z_end", 0.5)), float(spec.get("turns", 2.0)),
            np.asarray(spec.get("center", [0, 0, 0]), dtype=float), n,
            bool(spec.get("round_trip", False)))
    raise ValueError(
        f"unknown path family {family!r}; valid: orbit, forward_circle, spline, "
        f"spiral_cylinder (or use a dataset preset: {', '.join(PRESET_KINDS)})")


# ---------------------------------------------------------------------------
# stages (each reads predecessors' artifacts from out_dir)


def stage_trajectory(cfg: PipelineConfig, out_dir: Path) -> list[Pose]:
    out_dir.mkdir(parents=True, exist_ok=True)
    observed = cfg.observed_poses()
    targets = cfg.target_poses(observed)
    _dump_json(out_dir / "target_poses.json", [pose_to_json(p) for p in targets])
    return targets


def stage_plan(cfg: PipelineConfig, out_dir: Path) -> SamplingPlan:
    scene = cfg.scene_spec()
    intr = cfg.intrinsics()
    observed_poses = cfg.observed_poses()
    targets = [pose_from_json(p) for p in _load_json(out_dir / "target_poses.json")]

    views_dir = out_dir / "views"
    views_dir.mkdir(exist_ok=True)
    observed_meta = []
    observed_views = []
    for i, pose in enumerate(observed_poses):
        img = render_scene(scene, pose, intr)
        name = f"view_{i:04d}.ppm"
        imageio.write_ppm(views_dir / name, img)
        observed_meta.append({"id": i, "file": f"views/{name}", "kind": "observed",
                              "pose": pose_to_json(pose)})
        observed_views.append(View(image=img, pose=pose, intrinsics=intr,
                                   kind=ViewKind.OBSERVED))
    _dump_json(out_dir / "observed.json",
               {"intrinsics": intrinsics_to_json(intr), "views": observed_meta})

    plan = build_plan(observed_views, targets, cfg.mode)
    _dump_json(out_dir / "plan.json", plan.to_json())
    return plan


def _load_observed(out_dir: Path):
    meta = _load_json(out_dir / "observed.json")
    intr = intrinsics_from_json(meta["intrinsics"])
    views = []
    for item in meta["views"]:
        img = imageio.read_ppm(out_dir / item["file"])
        views.append(View(image=img, pose=pose_from_json(item["pose"]),
                          intrinsics=intr, kind=ViewKind.OBSERVED))
    return views, intr


def stage_sample(cfg: PipelineConfig, out_dir: Path) -> list[View]:
    plan = SamplingPlan.from_json(_load_json(out_dir / "plan.json"))
    observed, intr = _load_observed(out_dir)
    denoiser = cfg.denoiser(cfg.scene_spec())
    views = execute_plan(denoiser, plan, observed, cfg.sampler_options(),
                         threads=cfg.threads)

    step_of = {}
    for si, step in enumerate(plan.steps):
        for tid in step.target_ids:
            step_of[tid] = si

    views_dir = out_dir / "views"
    manifest = []
    for vid, view in enumerate(views):
        name = f"view_{vid:04d}.ppm"
        if view.kind is not ViewKind.OBSERVED:
            imageio.write_ppm(views_dir / name, view.image)
        entry = {"id": vid, "file": f"views/{name}", "kind": view.kind.value,
                 "pose": pose_to_json(view.pose)}
        if vid in step_of:
            entry["step"] = step_of[vid]
        manifest.append(entry)
    _dump_json(out_dir / "manifest.json",
               {"intrinsics": intrinsics_to_json(intr), "views": manifest})
    return views


def stage_reconstruct(cfg: PipelineConfig, out_dir: Path) -> VoxelGrid:
    meta = _load_json(out_dir / "manifest.json")
    intr = intrinsics_from_json(meta["intrinsics"])
    views = []
    for item in meta["views"]:
        img = imageio.read_ppm(out_dir / item["file"])
        views.append(View(image=img, pose=pose_from_json(item["pose"]),
                          intrinsics=intr, kind=ViewKind(item["kind"])))
    grid = reconstruct(views, np.asarray(cfg.bounds, dtype=float),
                       cfg.loss_config(), seed=cfg.seed,
                       resolution=cfg.grid_resolution)
    grid.save(out_dir / "grid.ckpt")
    return grid


def stage_render(cfg: PipelineConfig, out_dir: Path) -> list[np.ndarray]:
    grid = VoxelGrid.load(out_dir / "grid.ckpt")
    intr = cfg.intrinsics()
    poses = cfg.holdout_poses()
    renders_dir = out_dir / "renders"
    renders_dir.mkdir(exist_ok=True)
    images = []
    meta = []
    n_samples = cfg.loss_config().n_samples
    for i, pose in enumerate(poses):
        img = render_view(grid, pose, intr, n_samples=n_samples)
        name = f"holdout_{i:04d}.ppm"
        imageio.write_ppm(renders_dir / name, img)
        meta.append({"id": i, "file": f"renders/{name}", "pose": pose_to_json(pose)})
        images.append(img)
    _dump_json(out_dir / "holdout.json", meta)
    return images


def stage_evaluate(cfg: PipelineConfig, out_dir: Path) -> MetricReport:
    scene = cfg.scene_spec()
    intr = cfg.intrinsics()
    meta = _load_json(out_dir / "holdout.json")
    pairs = []
    for item in meta:
        img = imageio.read_ppm(out_dir / item["file"])
        truth = render_scene(scene, pose_from_json(item["pose"]), intr)
        pairs.append((item["id"], img, truth))
    report = evaluate_pairs(pairs, perceptual_proxy)
    _dump_json(out_dir / "report.json",
               {"config": cfg.to_json(), "metrics": report.to_json()})
    return report


STAGES = (stage_trajectory, stage_plan, stage_sample, stage_reconstruct,
          stage_render, stage_evaluate)


def run_pipeline(cfg: PipelineConfig, out_dir) -> MetricReport:
    """Run all stages in order; on failure, record the error in report.json
    (partial artifacts are retained) and re-raise."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for stage in STAGES[:-1]:
            stage(cfg, out_dir)
        return stage_evaluate(cfg, out_dir)
    except Exception as exc:
        _dump_json(out_dir / "report.json",
                   {"config": cfg.to_json(), "error": str(exc)})
        raise
