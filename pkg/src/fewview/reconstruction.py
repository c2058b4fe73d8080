"""Robust voxel-grid 3D recovery from observed + generated views.

A dense node-based density/color grid (softplus and sigmoid activations over
raw parameters, plus a learnable background color) is optimized with
adaptive-moment gradient descent against an L2 + gradient-domain perceptual
loss over ray patches. Generated views are downweighted by a Gaussian kernel
exp(-b s^2) of their normalized distance s to the nearest observed camera,
with b annealed linearly from 0 to b_max and the generated-view weight also
annealed globally; the learning rate decays logarithmically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import Intrinsics, Pose, View, ViewKind, camera_rays

CHECKPOINT_MAGIC = b"FVGRID02"


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class VoxelGrid:
    """Dense density+color field on an axis-aligned node lattice."""

    resolution: tuple  # (nx, ny, nz)
    bounds: np.ndarray  # (2, 3) min/max corners
    raw_density: np.ndarray = None  # (nx, ny, nz)
    raw_color: np.ndarray = None  # (nx, ny, nz, 3)
    raw_background: np.ndarray = None  # (3,)
    # density = gain * softplus(raw). The gain keeps opaque surfaces reachable:
    # adaptive-moment steps move raw parameters at most ~lr per iteration, so
    # over a full schedule raw values stay O(10); without the gain that caps
    # optical depth per sample far below opacity.
    density_gain: float = 25.0

    def __post_init__(self):
        nx, ny, nz = self.resolution
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        if not np.all(self.bounds[0] < self.bounds[1]):
            raise ValueError("bounds min must be strictly below max componentwise")
        if self.raw_density is None:
            self.raw_density = np.full((nx, ny, nz), -6.0)
        if self.raw_color is None:
            self.raw_color = np.zeros((nx, ny, nz, 3))
        if self.raw_background is None:
            self.raw_background = np.zeros(3)
        self.raw_density = np.asarray(self.raw_density, dtype=float)
        self.raw_color = np.asarray(self.raw_color, dtype=float)
        self.raw_background = np.asarray(self.raw_background, dtype=float)

    @property
    def density(self) -> np.ndarray:
        return self.density_gain * softplus(self.raw_density)

    @property
    def color(self) -> np.ndarray:
        return sigmoid(self.raw_color)

    @property
    def background(self) -> np.ndarray:
        return sigmoid(self.raw_background)

    @property
    def node_scale(self) -> np.ndarray:
        """Grid-coordinate units per world unit, (3,)."""
        n = np.asarray(self.resolution, dtype=float)
        return (n - 1.0) / (self.bounds[1] - self.bounds[0])

    def save(self, path):
        """Binary checkpoint: magic, resolution, bounds, raw f32 parameters."""
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<3I", *self.resolution))
            fh.write(struct.pack("<f", self.density_gain))
            fh.write(np.asarray(self.bounds, dtype="<f4").tobytes())
            fh.write(np.asarray(self.raw_density, dtype="<f4").tobytes())
            fh.write(np.asarray(self.raw_color, dtype="<f4").tobytes())
            fh.write(np.asarray(self.raw_background, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "VoxelGrid":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"not a voxel grid checkpoint (magic {magic!r})")
            nx, ny, nz = struct.unpack("<3I", fh.read(12))
            gain = struct.unpack("<f", fh.read(4))[0]
            bounds = np.frombuffer(fh.read(24), dtype="<f4").reshape(2, 3).astype(float)
            dens = np.frombuffer(fh.read(4 * nx * ny * nz), dtype="<f4")
            col = np.frombuffer(fh.read(4 * nx * ny * nz * 3), dtype="<f4")
            bg = np.frombuffer(fh.read(12), dtype="<f4")
        return cls(resolution=(nx, ny, nz), bounds=bounds,
                   raw_density=dens.reshape(nx, ny, nz).astype(float),
                   raw_color=col.reshape(nx, ny, nz, 3).astype(float),
                   raw_background=bg.astype(float), density_gain=gain)


def ray_box_intersect(origins, dirs, bounds):
    """Slab test; returns (near, far) clipped to t >= 0, near=far on miss."""
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bounds[0] - origins) * inv
        t1 = (bounds[1] - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    near = np.maximum(tmin, 1e-6)
    far = np.maximum(tmax, near)
    miss = tmax <= near
    near = np.where(miss, 0.0, near)
    far = np.where(miss, 0.0, far)
    return near, far


def volume_render(grid: VoxelGrid, ray_origin, ray_dir, near: float, far: float,
                  n_samples: int, background=None, return_weights: bool = False):
    """Reference single-ray emission-absorption renderer (readable, unjitted).

    Midpoint sampling, trilinear interpolation of the activated grids,
    alpha_i = 1 - exp(-sigma_i * delta). Returns (color, transmittance) or,
    with return_weights, (color, transmittance, per-sample weights).
    """
    if not near < far:
        raise ValueError("volume_render requires near < far")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    bg = grid.background if background is None else np.asarray(background, dtype=float)
    density, color = grid.density, grid.color
    nx, ny, nz = grid.resolution
    origin = np.asarray(ray_origin, dtype=float)
    direction = np.asarray(ray_dir, dtype=float)
    delta = (far - near) / n_samples
    t_acc = 1.0
    out = np.zeros(3)
    weights = np.zeros(n_samples)
    for i in range(n_samples):
        p = origin + (near + (i + 0.5) * delta) * direction
        g = (p - grid.bounds[0]) * grid.node_scale
        if np.any(g < 0) or np.any(g > np.array([nx - 1, ny - 1, nz - 1])):
            continue
        i0 = np.minimum(np.floor(g).astype(int), np.array([nx - 2, ny - 2, nz - 2]))
        f = g - i0
        sig, col = 0.0, np.zeros(3)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1])
                         * (f[2] if dz else 1 - f[2]))
                    sig += w * density[i0[0] + dx, i0[1] + dy, i0[2] + dz]
                    col = col + w * color[i0[0] + dx, i0[1] + dy, i0[2] + dz]
        alpha = 1.0 - np.exp(-sig * delta)
        weights[i] = t_acc * alpha
        out += weights[i] * col
        t_acc *= 1.0 - alpha
    out += t_acc * bg
    if return_weights:
        return out, t_acc, weights
    return out, t_acc


def render_rays(grid: VoxelGrid, origins, dirs, n_samples: int):
    """Batched render through the active kernel backend; (colors, trans)."""
    near, far = ray_box_intersect(origins, dirs, grid.bounds)
    return kernels.render_rays_fwd(
        grid.density, grid.color, grid.background, grid.bounds[0],
        grid.node_scale, np.ascontiguousarray(origins, dtype=float),
        np.ascontiguousarray(dirs, dtype=float), near, far, n_samples)


def render_view(grid: VoxelGrid, pose: Pose, intrinsics: Intrinsics,
                n_samples: int = 128) -> np.ndarray:
    origins, dirs = camera_rays(pose, intrinsics)
    colors, _ = render_rays(grid, origins.reshape(-1, 3), dirs.reshape(-1, 3), n_samples)
    return np.clip(colors.reshape(intrinsics.height, intrinsics.width, 3), 0.0, 1.0)


def render_gradients(grid: VoxelGrid, origins, dirs, n_samples: int, upstream):
    """Exact gradients of rendered colors w.r.t. the raw grid parameters.

    Returns (grad_raw_density, grad_raw_color, grad_raw_background, colors).
    """
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=float)
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=float)
    upstream = np.ascontiguousarray(np.atleast_2d(upstream), dtype=float)
    near, far = ray_box_intersect(origins, dirs, grid.bounds)
    gd, gc, gb, colors, _ = kernels.render_rays_bwd(
        grid.density, grid.color, grid.background, grid.bounds[0],
        grid.node_scale, origins, dirs, near, far, n_samples, upstream)
    # chain through the activations
    gd_raw = gd * grid.density_gain * sigmoid(grid.raw_density)
    c = grid.color
    gc_raw = gc * c * (1.0 - c)
    b = grid.background
    gb_raw = gb * b * (1.0 - b)
    return gd_raw, gc_raw, gb_raw, colors


def distance_weight(s: float, b: float) -> float:
    """Gaussian kernel exp(-b s^2); observed views have s = 0 and weight 1."""
    if s < 0 or b < 0:
        raise ValueError("distance_weight requires s >= 0 and b >= 0")
    return float(np.exp(-b * s * s))


@dataclass(frozen=True)
class LossConfig:
    b_max: float = 15.0
    iterations: int = 1000
    lr_start: float = 0.04
    lr_end: float = 1e-3
    perceptual_weight: float = 0.25
    patch: int = 32
    global_anneal_end: float = 0.1
    n_samples: int = 128
    patches_per_iter: int = 4
    tv_weight: float = 1e-4
    # optional L1 penalty on mean density (discourages fog in free space)
    sparsity_weight: float = 0.0
    # density converges far slower than color at a shared rate: its raw
    # parameters must travel an order of magnitude farther to reach opacity
    density_lr_scale: float = 10.0
    # the background must first chase the mean image color and then retreat
    # to the true empty-space color once geometry forms; at the shared rate
    # the retreat outlives the lr schedule
    background_lr_scale: float = 10.0

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("need lr_start > lr_end > 0")
        if self.b_max < 0 or self.patch < 1:
            raise ValueError("need b_max >= 0 and patch >= 1")


def anneal_schedules(iteration: int, total: int, cfg: LossConfig):
    """(b, global generated-view weight, learning rate) at an iteration."""
    if not 0 <= iteration <= total:
        raise ValueError("iteration must lie in [0, total]")
    frac = iteration / total
    b = cfg.b_max * frac
    gg = 1.0 + (cfg.global_anneal_end - 1.0) * frac
    lr = cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac
    return b, gg, lr


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    return img[:h - h % 2, :w - w % 2].reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))


def _upsample2_adjoint(grad: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    h2, w2 = grad.shape[:2]
    out[:h2 * 2, :w2 * 2] = np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1) / 4.0
    return out


_PROXY_SCALES = 3


def perceptual_proxy(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference of image gradients over 3 dyadic scales.

    Symmetric; zero when the patches differ by a constant per scale. A
    gradient-domain stand-in for a learned perceptual distance.
    """
    return _proxy_impl(np.asarray(a, dtype=float), np.asarray(b, dtype=float))[0]


def perceptual_proxy_grad(a: np.ndarray, b: np.ndarray):
    """(proxy value, gradient w.r.t. `a`)."""
    return _proxy_impl(np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                       want_grad=True)


def _proxy_impl(a, b, want_grad: bool = False):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    total = 0.0
    grads = []
    ca, cb = a, b
    for _ in range(_PROXY_SCALES):
        dxa = ca[:, 1:] - ca[:, :-1]
        dya = ca[1:, :] - ca[:-1, :]
        dxb = cb[:, 1:] - cb[:, :-1]
        dyb = cb[1:, :] - cb[:-1, :]
        rx, ry = dxa - dxb, dya - dyb
        total += float((rx ** 2).mean() + (ry ** 2).mean())
        if want_grad:
            g = np.zeros_like(ca)
            g[:, 1:] += 2.0 * rx / rx.size
            g[:, :-1] -= 2.0 * rx / rx.size
            g[1:, :] += 2.0 * ry / ry.size
            g[:-1, :] -= 2.0 * ry / ry.size
            grads.append(g)
        ca, cb = _downsample2(ca), _downsample2(cb)
    value = total / _PROXY_SCALES
    if not want_grad:
        return value, None
    # pull coarse-scale gradients back to full resolution through the pooling
    shapes = [a.shape]
    cur = a
    for _ in range(_PROXY_SCALES - 1):
        cur = _downsample2(cur)
        shapes.append(cur.shape)
    grad = np.zeros_like(a)
    for level in reversed(range(_PROXY_SCALES)):
        g = grads[level]
        for lv in reversed(range(level)):
            g = _upsample2_adjoint(g, shapes[lv])
        grad += g
    return value, grad / _PROXY_SCALES


class _Adam:
    def __init__(self, shape, beta1=0.9, beta2=0.99, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, param, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        param -= lr * mh / (np.sqrt(vh) + self.eps)


def _tv_grad(x: np.ndarray) -> np.ndarray:
    """Gradient of the anisotropic squared-difference total variation."""
    g = np.zeros_like(x)
    for axis in range(3):
        d = np.diff(x, axis=axis)
        sl_lo = [slice(None)] * x.ndim
        sl_hi = [slice(None)] * x.ndim
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        g[tuple(sl_hi)] += 2.0 * d
        g[tuple(sl_lo)] -= 2.0 * d
    return g / x.size


def view_distances(views: list[View], bounds) -> np.ndarray:
    """Per-view normalized distance s to the nearest observed camera center.

    Observed views get s = 0; distances are normalized by the scene diameter
    (the bounding-box diagonal).
    """
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    diameter = float(np.linalg.norm(bounds[1] - bounds[0]))
    obs = np.array([v.pose.translation for v in views if v.kind is ViewKind.OBSERVED])
    if len(obs) == 0:
        raise ValueError("at least one observed view is required")
    out = np.zeros(len(views))
    for i, v in enumerate(views):
        if v.kind is ViewKind.OBSERVED:
            continue
        out[i] = float(np.min(np.linalg.norm(obs - v.pose.translation, axis=1))) / diameter
    return out


def reconstruct(views: list[View], scene_bounds, cfg: LossConfig, seed: int = 0,
                resolution: int | tuple = 64, callback=None) -> VoxelGrid:
    """Optimize a voxel grid against the views with the annealed schedules.

    Deterministic given seed (single-threaded parameter updates). `callback`,
    if given, is called as callback(iteration, loss) once per iteration.
    """
    if not any(v.kind is ViewKind.OBSERVED for v in views):
        raise ValueError("at least one observed view is required")
    bounds = np.asarray(scene_bounds, dtype=float).reshape(2, 3)
    if isinstance(resolution, int):
        resolution = (resolution, resolution, resolution)
    grid = VoxelGrid(resolution=tuple(resolution), bounds=bounds)
    rng = np.random.default_rng(seed)

    s_view = view_distances(views, bounds)
    observed_mask = np.array([v.kind is ViewKind.OBSERVED for v in views])

    # precompute full-image rays per view
    rays = []
    for v in views:
        o, d = camera_rays(v.pose, v.intrinsics)
        rays.append((o, d))

    patch = cfg.patch
    opt_d = _Adam(grid.raw_density.shape)
    opt_c = _Adam(grid.raw_color.shape)
    opt_b = _Adam(grid.raw_background.shape)

    for it in range(cfg.iterations):
        b, gg, lr = anneal_schedules(it, cfg.iterations, cfg)

        # importance-sample views by their current robustness weight: the
        # estimator of the weighted objective is unbiased and no compute is
        # spent on patches whose weight has annealed to ~0
        w_view = np.where(observed_mask, 1.0,
                          np.exp(-b * s_view ** 2) * gg)
        probs = w_view / w_view.sum()
        picks = rng.choice(len(views), size=cfg.patches_per_iter, p=probs)
        batch = []
        for vi in picks:
            v = views[vi]
            h, w = v.intrinsics.height, v.intrinsics.width
            py = int(rng.integers(0, max(h - patch, 0) + 1))
            px = int(rng.integers(0, max(w - patch, 0) + 1))
            batch.append((int(vi), py, px))

        gd = np.zeros_like(grid.raw_density)
        gc = np.zeros_like(grid.raw_color)
        gb = np.zeros(3)
        loss = 0.0
        for vi, py, px in batch:
            v = views[vi]
            ph = min(patch, v.intrinsics.height)
            pw = min(patch, v.intrinsics.width)
            o = rays[vi][0][py:py + ph, px:px + pw].reshape(-1, 3)
            d = rays[vi][1][py:py + ph, px:px + pw].reshape(-1, 3)
            target = v.image[py:py + ph, px:px + pw]

            near, far = ray_box_intersect(o, d, bounds)
            dens, col = grid.density, grid.color
            colors, _ = kernels.render_rays_fwd(
                dens, col, grid.background, bounds[0], grid.node_scale,
                np.ascontiguousarray(o), np.ascontiguousarray(d), near, far,
                cfg.n_samples)
            rendered = colors.reshape(ph, pw, 3)
            resid = rendered - target
            l2 = float((resid ** 2).mean())
            upstream = 2.0 * resid / resid.size
            pval = 0.0
            if cfg.perceptual_weight > 0 and ph >= 4 and pw >= 4:
                pval, pgrad = perceptual_proxy_grad(rendered, target)
                upstream = upstream + cfg.perceptual_weight * pgrad
            loss += l2 + cfg.perceptual_weight * pval

            up = upstream.reshape(-1, 3) / len(batch)
            gdd, gcc, gbb, _, _ = kernels.render_rays_bwd(
                dens, col, grid.background, bounds[0], grid.node_scale,
                np.ascontiguousarray(o), np.ascontiguousarray(d), near, far,
                cfg.n_samples, np.ascontiguousarray(up))
            gd += gdd
            gc += gcc
            gb += gbb
        loss /= len(batch)

        # activation chain + total-variation smoothness on raw density
        act_sig = sigmoid(grid.raw_density)
        gd = gd * grid.density_gain * act_sig
        c = grid.color
        gc = gc * c * (1.0 - c)
        bgv = grid.background
        gb = gb * bgv * (1.0 - bgv)
        if cfg.tv_weight > 0:
            gd += cfg.tv_weight * _tv_grad(grid.raw_density)
        if cfg.sparsity_weight > 0:
            gd += (cfg.sparsity_weight * grid.density_gain / grid.raw_density.size) \
                * act_sig

        opt_d.step(grid.raw_density, gd, lr * cfg.density_lr_scale)
        opt_c.step(grid.raw_color, gc, lr)
        opt_b.step(grid.raw_background, gb, lr * cfg.background_lr_scale)
        if callback is not None:
            callback(it, loss)
    return grid
