"""Acceptance suite: one test per release criterion, each printing a single
pass/fail line. Tolerances are part of the contract and must not be loosened.
"""

import json
import time

import numpy as np
import pytest

from fewview import (LossConfig, NoiseSchedule, PipelineConfig, SamplerOptions,
                     SceneOracle, anneal_schedules, build_plan, execute_plan,
                     orbit_path, preset_scene, psnr, reconstruct, render_scene,
                     render_view, run_pipeline)
from fewview.diffusion import (DenoiserRequest, GaussianOracle, ddim_sample,
                               shifted_logsnr)
from fewview.geometry import Intrinsics, Pose, View, compute_raymap
from fewview.reconstruction import (VoxelGrid, ray_box_intersect,
                                    render_gradients, render_rays,
                                    volume_render)
from fewview.scheduler import select_anchors
from fewview.trajectories import dataset_preset, look_at

INTR64 = PipelineConfig(image_size=64).intrinsics()


def report(criterion: str, passed: bool, detail: str = ""):
    line = f"[acceptance] {criterion}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert passed, line


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng):
    return Pose(random_rotation(rng), rng.uniform(-3, 3, size=3))


def arc_views(scene, intr, radius=3.0, height=0.3, count=3, spread=1.0):
    azimuths = np.linspace(-spread / 2, spread / 2, count)
    poses = [look_at(np.array([radius * np.cos(a), height, radius * np.sin(a)]),
                     np.zeros(3)) for a in azimuths]
    return [View(image=render_scene(scene, p, intr), pose=p, intrinsics=intr)
            for p in poses]


def test_criterion_01_trajectory_counts():
    t0 = time.time()
    expected = {"mip360": 720, "re10k": 800, "llff": 960, "dtu": 480,
                "co3d": 640, "single_forward": 80, "single_orbit": 80}
    counts = {}
    for kind, want in expected.items():
        n_in = 1 if kind.startswith("single") else 3
        inputs = [look_at(np.array([3 * np.cos(a), 0.4, 3 * np.sin(a)]),
                          np.zeros(3)) for a in np.linspace(0.0, 0.9, n_in)]
        counts[kind] = len(dataset_preset(kind, inputs))
    elapsed = time.time() - t0
    ok = counts == expected and elapsed < 1.0
    report("criterion-01 trajectory-counts", ok, f"{counts}, {elapsed:.2f}s")


def test_criterion_02_plan_structure():
    t0 = time.time()
    scene = preset_scene("single_sphere")
    observed = arc_views(scene, INTR64, count=1)
    targets = orbit_path(np.zeros(3), 3.0, 0.5, 80)
    plan = build_plan(observed, targets, "single_image")

    anchor = plan.steps[0]
    ok = (anchor.stage.value == "anchor"
          and anchor.conditioning_ids == (0,)
          and len(anchor.target_ids) == 7)
    for step in plan.steps[1:]:
        ok &= (step.stage.value == "group"
               and len(step.conditioning_ids) == 3
               and 1 <= len(step.target_ids) <= 5)
    ok &= all(len(s.conditioning_ids) + len(s.target_ids) <= 8 for s in plan.steps)
    generated = sorted(t for s in plan.steps for t in s.target_ids)
    ok &= generated == list(range(1, 81))
    elapsed = time.time() - t0
    ok &= elapsed < 1.0
    report("criterion-02 plan-structure", ok,
           f"{len(plan.steps)} steps, {elapsed:.2f}s")


def test_criterion_03_anchor_selection_oracle():
    def brute_force(cands, obs, k):
        chosen, seeds = [], list(obs)
        for _ in range(k):
            best_i, best_d = None, -1.0
            for i in range(len(cands)):
                if i in chosen:
                    continue
                d = min(float(np.linalg.norm(cands[i] - s)) for s in seeds)
                if d > best_d:
                    best_i, best_d = i, d
            chosen.append(best_i)
            seeds.append(cands[best_i])
        return chosen

    rng = np.random.default_rng(42)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 13))
        k = int(rng.integers(1, n + 1))
        cands = rng.uniform(-2, 2, size=(n, 3))
        obs = rng.uniform(-2, 2, size=(int(rng.integers(1, 4)), 3))
        if select_anchors(cands, obs, k) != brute_force(list(cands), list(obs), k):
            mismatches += 1
    report("criterion-03 anchor-selection-oracle", mismatches == 0,
           f"{mismatches}/200 mismatches")


def test_criterion_04_raymap_rigid_invariance():
    rng = np.random.default_rng(7)
    intr = Intrinsics(fx=50.0, fy=45.0, cx=16.0, cy=16.0, width=32, height=32)
    worst = 0.0
    for _ in range(100):
        cam, ref, g = random_pose(rng), random_pose(rng), random_pose(rng)
        a = compute_raymap(cam, intr, ref, 4)
        b = compute_raymap(g.compose(cam), intr, g.compose(ref), 4)
        worst = max(worst,
                    float(np.max(np.abs(a.origins - b.origins))),
                    float(np.max(np.abs(a.directions - b.directions))))
    report("criterion-04 raymap-rigid-invariance", worst < 1e-9,
           f"max deviation {worst:.2e}")


def test_criterion_05_ddim_gaussian_oracle_moments():
    t0 = time.time()
    mu, tau = 0.3, 0.2
    oracle = GaussianOracle(mu=mu, tau=tau)
    opts = SamplerOptions(steps=50, cfg_weight=1.0, seed=0, clip=None)

    def eps_fn(x, t, alpha, sigma, conditional):
        req = DenoiserRequest(
            noisy_targets=x, clean_conditioning=np.zeros((0,) + x.shape[1:]),
            raymaps=(), mask=np.zeros(0, dtype=bool), t=t, alpha=alpha,
            sigma=sigma, conditional=conditional)
        return oracle(req)

    samples = ddim_sample(eps_fn, (10_000,), opts)
    elapsed = time.time() - t0
    mean, std = float(samples.mean()), float(samples.std())
    ok = abs(mean - mu) < 0.01 and abs(std - tau) / tau < 0.05 and elapsed < 30
    report("criterion-05 ddim-gaussian-moments", ok,
           f"mean {mean:.4f} (target 0.3±0.01), std {std:.4f} "
           f"(target 0.2±5%), {elapsed:.1f}s")


def test_criterion_06_scene_oracle_generation_fidelity():
    t0 = time.time()
    scene = preset_scene("single_sphere")
    observed = arc_views(scene, INTR64, count=1)
    targets = dataset_preset("single_orbit", [v.pose for v in observed])
    plan = build_plan(observed, targets, "single_image")
    opts = SamplerOptions(steps=50, cfg_weight=1.0, seed=0)
    views = execute_plan(SceneOracle(scene=scene, inconsistency_sigma=0.0),
                         plan, observed, opts)
    worst = 0.0
    for view in views[1:]:
        truth = render_scene(scene, view.pose, INTR64)
        worst = max(worst, float(np.abs(view.image - truth).mean()))
    elapsed = time.time() - t0
    ok = worst <= 1e-3 and elapsed < 120
    report("criterion-06 scene-oracle-fidelity", ok,
           f"worst MAE {worst:.2e} over {len(views) - 1} views, {elapsed:.0f}s")


def test_criterion_07_volume_rendering_gradients():
    rng = np.random.default_rng(3)
    worst_rel, worst_energy = 0.0, 0.0
    for _ in range(3):
        grid = VoxelGrid(resolution=(8, 8, 8),
                         bounds=np.array([[-1.0] * 3, [1.0] * 3]),
                         raw_density=rng.normal(0, 1, (8, 8, 8)),
                         raw_color=rng.normal(0, 1, (8, 8, 8, 3)),
                         raw_background=rng.normal(0, 0.5, 3),
                         density_gain=1.0)
        origins = np.tile([0.0, 0.0, -3.0], (20, 1)) + rng.normal(0, 0.2, (20, 3))
        dirs = np.array([0.0, 0.0, 1.0]) + rng.normal(0, 0.25, (20, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        upstream = rng.normal(size=(20, 3))

        gd, gc, gb, _ = render_gradients(grid, origins, dirs, 24, upstream)

        def loss_with(field, idx, delta):
            g2 = VoxelGrid(resolution=grid.resolution, bounds=grid.bounds,
                           raw_density=grid.raw_density.copy(),
                           raw_color=grid.raw_color.copy(),
                           raw_background=grid.raw_background.copy(),
                           density_gain=1.0)
            getattr(g2, field)[idx] += delta
            colors, _ = render_rays(g2, origins, dirs, 24)
            return float((colors * upstream).sum())

        h = 1e-4
        for field, grad in (("raw_density", gd), ("raw_color", gc),
                            ("raw_background", gb)):
            flat = np.abs(grad).ravel()
            for k in np.argsort(flat)[-7:]:
                idx = np.unravel_index(k, grad.shape)
                fd = (loss_with(field, idx, h) - loss_with(field, idx, -h)) / (2 * h)
                scale = max(abs(fd), abs(grad[idx]), 1e-8)
                worst_rel = max(worst_rel, abs(fd - grad[idx]) / scale)

        near, far = ray_box_intersect(origins, dirs, grid.bounds)
        for i in range(20):
            if near[i] >= far[i]:
                continue
            _, trans, weights = volume_render(grid, origins[i], dirs[i],
                                              float(near[i]), float(far[i]),
                                              24, return_weights=True)
            worst_energy = max(worst_energy, abs(weights.sum() + trans - 1.0))

    ok = worst_rel < 1e-4 and worst_energy < 1e-9
    report("criterion-07 volume-render-gradients", ok,
           f"max rel grad err {worst_rel:.2e}, max energy err {worst_energy:.2e}")


def test_criterion_08_reconstruction_regression():
    t0 = time.time()
    scene = preset_scene("single_sphere")
    observed = arc_views(scene, INTR64, count=3)
    targets = (orbit_path(np.zeros(3), 3.0, 0.5, 26)
               + orbit_path(np.zeros(3), 3.0, -0.8, 26)
               + orbit_path(np.zeros(3), 3.0, 1.8, 25))
    plan = build_plan(observed, targets, "few_view")
    views = execute_plan(SceneOracle(scene=scene, inconsistency_sigma=0.0),
                         plan, observed,
                         SamplerOptions(steps=50, cfg_weight=1.0, seed=0))
    assert len(views) == 80

    cfg = LossConfig(b_max=15.0, iterations=1000, lr_start=0.04, lr_end=1e-3,
                     patches_per_iter=8)
    grid = reconstruct(views, [[-1.6] * 3, [1.6] * 3], cfg, seed=0,
                       resolution=64)
    holdout = orbit_path(np.zeros(3), 3.0, 1.1, 8)
    scores = [psnr(render_view(grid, p, INTR64, 128),
                   render_scene(scene, p, INTR64)) for p in holdout]
    elapsed = time.time() - t0
    mean_psnr = float(np.mean(scores))
    ok = mean_psnr >= 30.0 and elapsed < 600
    report("criterion-08 reconstruction-regression", ok,
           f"held-out PSNR {mean_psnr:.2f} dB over 8 views "
           f"(min {min(scores):.2f}), {elapsed:.0f}s")


def test_criterion_09_robust_weighting_direction():
    intr = PipelineConfig(image_size=32).intrinsics()
    scene = preset_scene("cluster", 0)
    observed = arc_views(scene, intr, radius=2.5, height=0.3, count=3, spread=0.8)
    targets = (orbit_path(np.zeros(3), 2.5, 0.5, 13)
               + orbit_path(np.zeros(3), 2.5, -0.6, 12))
    plan = build_plan(observed, targets, "few_view")
    holdout = [look_at(np.array([2.5 * np.cos(a), 0.45, 2.5 * np.sin(a)]),
                       np.zeros(3)) for a in np.linspace(-0.3, 0.3, 4)]
    truths = [render_scene(scene, p, intr) for p in holdout]

    def run(seed, b_max):
        views = execute_plan(
            SceneOracle(scene=scene, inconsistency_sigma=0.1, seed=seed),
            plan, observed, SamplerOptions(steps=20, cfg_weight=1.0, seed=seed))
        cfg = LossConfig(b_max=b_max, iterations=300, n_samples=48, patch=16)
        grid = reconstruct(views, [[-1.4] * 3, [1.4] * 3], cfg, seed=seed,
                           resolution=32)
        return float(np.mean([psnr(render_view(grid, p, intr, 48), t)
                              for p, t in zip(holdout, truths)]))

    weighted = [run(seed, 15.0) for seed in range(5)]
    uniform = [run(seed, 0.0) for seed in range(5)]
    med_w, med_u = float(np.median(weighted)), float(np.median(uniform))
    report("criterion-09 robust-weighting-direction", med_w >= med_u,
           f"median weighted {med_w:.2f} dB vs uniform {med_u:.2f} dB")


def test_criterion_10_schedule_constants():
    sched = NoiseSchedule()
    rng = np.random.default_rng(11)
    worst = 0.0
    for t in rng.uniform(0.001, 0.999, size=100):
        delta = float(shifted_logsnr(sched, t, 7) - sched.base_logsnr(t))
        worst = max(worst, abs(delta + np.log(7.0)))
    cfg = LossConfig()
    b0, _, lr0 = anneal_schedules(0, 1000, cfg)
    b1, _, lr1 = anneal_schedules(1000, 1000, cfg)
    ok = (worst < 1e-12 and b0 == 0.0 and lr0 == 0.04 and b1 == 15.0
          and abs(lr1 - 1e-3) < 1e-15)
    report("criterion-10 schedule-constants", ok,
           f"max shift err {worst:.1e}, endpoints ({b0},{lr0}) ({b1},{lr1:.4f})")


def test_criterion_11_pipeline_determinism(tmp_path):
    config = {
        "image_size": 32,
        "trajectory": {"family": "orbit", "radius": 3.0, "height": 0.5,
                       "n_views": 12},
        "sampler": {"steps": 8, "cfg_weight": 1.0},
        "recon": {"iterations": 30, "patch": 16, "n_samples": 24,
                  "patches_per_iter": 2},
        "grid_resolution": 16,
        "holdout": {"preset": "orbit", "count": 2, "radius": 3.0,
                    "height": 0.6},
        "seed": 3,
    }
    runs = {}
    for name, threads in (("a", 1), ("b", 1), ("c", 2)):
        cfg = PipelineConfig.from_json({**config, "threads": threads})
        run_pipeline(cfg, tmp_path / name)
        runs[name] = tmp_path / name

    def file_bytes(d):
        return {str(p.relative_to(d)): p.read_bytes()
                for p in sorted(d.rglob("*")) if p.is_file()}

    a, b, c = file_bytes(runs["a"]), file_bytes(runs["b"]), file_bytes(runs["c"])
    repeat_ok = a == b
    # threaded run: same report and identical images
    report_a = json.loads(a["report.json"])
    report_c = json.loads(c["report.json"])
    thread_ok = report_a["metrics"] == report_c["metrics"]
    images_ok = all(a[k] == c[k] for k in a
                    if str(k).endswith(".ppm") or str(k).endswith(".ckpt"))
    ok = repeat_ok and thread_ok and images_ok
    report("criterion-11 pipeline-determinism", ok,
           f"repeat byte-identical: {repeat_ok}, threads 1 vs 2 identical: "
           f"{thread_ok and images_ok}")
