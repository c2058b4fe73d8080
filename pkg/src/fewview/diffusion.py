"""Noise schedule, DDIM sampling with CFG, and the analytic oracle denoisers.

The schedule is a cosine curve in log-SNR space with two shifts: a fixed base
shift of +3 toward high SNR (appropriate for low-resolution desk images and
needed for accurate 50-step deterministic sampling), and the multi-view shift
of -ln(N) for N jointly generated target views.

Sampling operates in pixel space: images in [0, 1] are remapped to [-1, 1]
internally and the predicted clean signal is clipped to that range.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import zoom

from .geometry import Intrinsics, Pose, View, ViewKind, compute_raymap
from .scene import SceneSpec, render_scene
from .scheduler import MAX_VIEWS_PER_STEP, SamplingPlan, StepStage

DEFAULT_BASE_SHIFT = 3.0
LOGSNR_CLAMP = 20.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine log-SNR schedule with base and multi-view shifts."""

    base_shift: float = DEFAULT_BASE_SHIFT
    clamp: float = LOGSNR_CLAMP

    def base_logsnr(self, t) -> np.ndarray:
        tt = np.clip(np.asarray(t, dtype=float), 1e-12, 1.0 - 1e-12)
        return 2.0 * np.log(1.0 / np.tan(np.pi * tt / 2.0)) + self.base_shift

    def logsnr(self, t, n_targets: int = 1) -> np.ndarray:
        if n_targets < 1:
            raise ValueError("n_targets must be >= 1")
        return self.base_logsnr(t) - np.log(n_targets)

    def alpha_sigma(self, t, n_targets: int = 1):
        """(alpha, sigma) with alpha^2 + sigma^2 = 1."""
        lam = np.clip(self.logsnr(t, n_targets), -self.clamp, self.clamp)
        alpha = np.sqrt(1.0 / (1.0 + np.exp(-lam)))
        sigma = np.sqrt(1.0 / (1.0 + np.exp(lam)))
        return alpha, sigma


def shifted_logsnr(schedule: NoiseSchedule, t, n_targets: int) -> np.ndarray:
    """base_logsnr(t) - ln(n_targets); exact, no clamping applied."""
    return schedule.logsnr(t, n_targets)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond)."""
    eps_cond = np.asarray(eps_cond, dtype=float)
    eps_uncond = np.asarray(eps_uncond, dtype=float)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_update(x_t, eps_hat, alpha_t, sigma_t, alpha_s, sigma_s,
                clip: float = 1.0) -> np.ndarray:
    """One deterministic DDIM step given explicit coefficients."""
    x0 = (x_t - sigma_t * eps_hat) / alpha_t
    if clip is not None:
        x0 = np.clip(x0, -clip, clip)
    return alpha_s * x0 + sigma_s * eps_hat


def ddim_step(x_t, eps_hat, t: float, s: float, schedule: NoiseSchedule,
              n_targets: int = 1, clip: float = 1.0) -> np.ndarray:
    """DDIM update from time t down to time s (eta = 0)."""
    if not (0.0 <= s <= t <= 1.0):
        raise ValueError("ddim_step requires 0 <= s <= t <= 1")
    if s == t:
        return np.asarray(x_t, dtype=float)
    at, st = schedule.alpha_sigma(t, n_targets)
    as_, ss = schedule.alpha_sigma(s, n_targets)
    return ddim_update(np.asarray(x_t, dtype=float), np.asarray(eps_hat, dtype=float),
                       at, st, as_, ss, clip)


@dataclass(frozen=True)
class DenoiserRequest:
    """Inputs handed to a denoiser at one DDIM step.

    Values live in the internal [-1, 1] range. `alpha`/`sigma` are the
    (shifted) schedule coefficients at time t; `mask` is True for
    conditioning slots. Target poses/intrinsics carry the plan context the
    analytic oracles need.
    """

    noisy_targets: np.ndarray  # (N, ...) noisy target signal
    clean_conditioning: np.ndarray  # (M, ...) clean conditioning signal
    raymaps: tuple  # one Raymap per view, conditioning first
    mask: np.ndarray  # (M+N,) bool, True = conditioning
    t: float
    alpha: float
    sigma: float
    conditional: bool = True
    target_poses: tuple = ()
    intrinsics: Intrinsics | None = None
    step_id: int = 0

    def __post_init__(self):
        n_cond = len(self.clean_conditioning)
        if len(self.raymaps) and len(self.raymaps) != len(self.mask):
            raise ValueError("raymap count must equal view count")
        if int(np.sum(self.mask)) != n_cond:
            raise ValueError("mask must flag exactly the conditioning views")


def gaussian_oracle_denoise(request: DenoiserRequest, mu, tau: float) -> np.ndarray:
    """Exact posterior noise prediction for x0 ~ N(mu, tau^2 I)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    a, s = request.alpha, request.sigma
    if s == 0:
        raise ValueError("sigma = 0: there is no noise to predict")
    x = np.asarray(request.noisy_targets, dtype=float)
    e_x0 = (a * tau * tau * x + s * s * np.asarray(mu)) / (a * a * tau * tau + s * s)
    return (x - a * e_x0) / s


@dataclass(frozen=True)
class GaussianOracle:
    """Denoiser wrapper around `gaussian_oracle_denoise`."""

    mu: float
    tau: float

    def __call__(self, request: DenoiserRequest) -> np.ndarray:
        return gaussian_oracle_denoise(request, self.mu, self.tau)


def low_frequency_field(height: int, width: int, sigma: float,
                        rng: np.random.Generator, coarse: int = 8) -> np.ndarray:
    """Smooth (H, W, 3) noise field with per-pixel std `sigma`."""
    base = rng.standard_normal((coarse, coarse, 3))
    f = zoom(base, (height / coarse, width / coarse, 1.0), order=1)
    f = f[:height, :width]
    std = f.std()
    return f * (sigma / std) if std > 0 else f * 0.0


@dataclass
class SceneOracle:
    """Perfect-generator denoiser: predicts the analytic render of each
    target pose, optionally perturbed by a deterministic low-frequency field
    (amplitude `inconsistency_sigma`, seeded by (seed, step id, target id))
    standing in for multi-view inconsistency. The unconditional branch
    predicts mid-gray."""

    scene: SceneSpec
    inconsistency_sigma: float = 0.0
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def _clean_target(self, pose: Pose, intrinsics: Intrinsics, step_id: int,
                      target_index: int) -> np.ndarray:
        key = (step_id, target_index)
        if key not in self._cache:
            img = render_scene(self.scene, pose, intrinsics)
            if self.inconsistency_sigma > 0:
                rng = np.random.default_rng((self.seed, step_id, target_index))
                img = img + low_frequency_field(img.shape[0], img.shape[1],
                                                self.inconsistency_sigma, rng)
                img = np.clip(img, 0.0, 1.0)
            self._cache[key] = img * 2.0 - 1.0
        return self._cache[key]

    def __call__(self, request: DenoiserRequest) -> np.ndarray:
        if request.sigma == 0:
            raise ValueError("sigma = 0: there is no noise to predict")
        x = np.asarray(request.noisy_targets, dtype=float)
        if not request.conditional:
            x0 = np.zeros_like(x)  # mid-gray in [-1, 1]
        else:
            if request.intrinsics is None or not request.target_poses:
                raise ValueError("scene oracle needs target poses and intrinsics")
            x0 = np.stack([
                self._clean_target(p, request.intrinsics, request.step_id, i)
                for i, p in enumerate(request.target_poses)])
        return (x - request.alpha * x0) / request.sigma


@dataclass(frozen=True)
class SamplerOptions:
    steps: int = 50
    cfg_weight: float = 3.0
    seed: int = 0
    clip: float = 1.0
    raymap_divisor: int = 1
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)


def ddim_sample(eps_fn, shape, opts: SamplerOptions, n_targets: int = 1,
                seed_key: tuple = ()) -> np.ndarray:
    """Run the deterministic DDIM loop from pure noise down to t = 0.

    `eps_fn(x, t, alpha, sigma, conditional)` returns the noise prediction;
    it is evaluated on both CFG branches unless cfg_weight == 1.
    """
    rng = np.random.default_rng((opts.seed,) + tuple(seed_key))
    x = rng.standard_normal(shape)
    ts = np.linspace(1.0, 0.0, opts.steps + 1)
    sched = opts.schedule
    for i in range(opts.steps):
        t, s = float(ts[i]), float(ts[i + 1])
        at, st = sched.alpha_sigma(t, n_targets)
        eps = eps_fn(x, t, float(at), float(st), True)
        if opts.cfg_weight != 1.0:
            eps_u = eps_fn(x, t, float(at), float(st), False)
            eps = cfg_combine(eps, eps_u, opts.cfg_weight)
        as_, ss = sched.alpha_sigma(s, n_targets)
        x = ddim_update(x, eps, float(at), float(st), float(as_), float(ss), opts.clip)
    return x


def sample_group(denoiser, cond: list[View], target_poses: list[Pose],
                 opts: SamplerOptions, step_id: int = 0) -> list[np.ndarray]:
    """Generate one group of target images conditioned on `cond` views.

    Raymaps are computed relative to the first conditioning view's pose.
    Deterministic given (opts.seed, step_id) and the inputs.
    """
    if len(cond) + len(target_poses) > MAX_VIEWS_PER_STEP:
        raise ValueError(
            f"group size {len(cond)}+{len(target_poses)} exceeds {MAX_VIEWS_PER_STEP}")
    if not cond:
        raise ValueError("at least one conditioning view is required")
    intr = cond[0].intrinsics
    n_targets = len(target_poses)
    reference = cond[0].pose
    raymaps = tuple(
        compute_raymap(v.pose, intr, reference, opts.raymap_divisor) for v in cond
    ) + tuple(
        compute_raymap(p, intr, reference, opts.raymap_divisor) for p in target_poses
    )
    mask = np.array([True] * len(cond) + [False] * n_targets)
    clean = np.stack([v.image * 2.0 - 1.0 for v in cond])

    def eps_fn(x, t, alpha, sigma, conditional):
        req = DenoiserRequest(
            noisy_targets=x, clean_conditioning=clean, raymaps=raymaps,
            mask=mask, t=t, alpha=alpha, sigma=sigma, conditional=conditional,
            target_poses=tuple(target_poses), intrinsics=intr, step_id=step_id)
        return denoiser(req)

    shape = (n_targets, intr.height, intr.width, 3)
    x = ddim_sample(eps_fn, shape, opts, n_targets=n_targets, seed_key=(step_id,))
    return [np.clip((x[i] + 1.0) / 2.0, 0.0, 1.0) for i in range(n_targets)]


def execute_plan(denoiser, plan: SamplingPlan, observed: list[View],
                 opts: SamplerOptions, threads: int = 1) -> list[View]:
    """Run a plan: anchor steps first, then the independent group steps.

    Per-step seeds derive from the step id, so serial and threaded execution
    produce identical views. Returns observed views followed by one View per
    target pose, ordered by id.
    """
    if len(observed) != len(plan.observed_ids):
        raise ValueError(
            f"plan expects {len(plan.observed_ids)} observed views, got {len(observed)}")
    views: dict[int, View] = {i: v for i, v in enumerate(observed)}
    intr = observed[0].intrinsics

    def run_step(index_step):
        idx, step = index_step
        cond = [views[c] for c in step.conditioning_ids]
        poses = [plan.pose_for(t) for t in step.target_ids]
        images = sample_group(denoiser, cond, poses, opts, step_id=idx)
        kind = ViewKind.ANCHOR if step.stage is StepStage.ANCHOR else ViewKind.GENERATED
        return [(tid, View(image=img, pose=pose, intrinsics=intr, kind=kind))
                for tid, pose, img in zip(step.target_ids, poses, images)]

    anchor_steps = [(i, s) for i, s in enumerate(plan.steps) if s.stage is StepStage.ANCHOR]
    group_steps = [(i, s) for i, s in enumerate(plan.steps) if s.stage is StepStage.GROUP]

    for item in anchor_steps:
        for tid, view in run_step(item):
            views[tid] = view

    if threads > 1 and len(group_steps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_step, group_steps))
    else:
        results = [run_step(item) for item in group_steps]
    for batch in results:
        for tid, view in batch:
            views[tid] = view

    return [views[i] for i in sorted(views)]
