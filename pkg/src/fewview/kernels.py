"""Hot numeric kernels: sphere ray tracing and voxel volume rendering.

Each kernel has a numba-jitted loop version and a vectorized numpy fallback;
`backend.HAVE_NUMBA` (controlled by the FEWVIEW_NO_NUMBA env flag) picks the
public binding. All kernels are pure and take/return float64 arrays.

Volume grids are node-based: values live on an nx*ny*nz lattice spanning the
bounding box, and samples are trilinearly interpolated from the eight
surrounding nodes. Points outside the box contribute zero density.
"""

from __future__ import annotations

import numpy as np

from .backend import HAVE_NUMBA, njit

_EPS = 1e-12


# ---------------------------------------------------------------------------
# sphere tracing


def _trace_spheres_np(origins, dirs, centers, radii, albedos, background,
                      ambient, light):
    r, s = origins.shape[0], centers.shape[0]
    out = np.tile(background, (r, 1))
    if s == 0:
        return out
    oc = origins[:, None, :] - centers[None, :, :]  # (R, S, 3)
    b = np.einsum("rsk,rk->rs", oc, dirs)
    c0 = np.einsum("rsk,rsk->rs", oc, oc) - radii[None, :] ** 2
    disc = b * b - c0
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > 1e-6, t_near, t_far)
    t = np.where(hit & (t > 1e-6), t, np.inf)
    best = np.argmin(t, axis=1)
    tbest = t[np.arange(r), best]
    valid = np.isfinite(tbest)
    if not np.any(valid):
        return out
    idx = best[valid]
    p = origins[valid] + tbest[valid, None] * dirs[valid]
    n = (p - centers[idx]) / radii[idx, None]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    lam = np.maximum(0.0, n @ light)
    out[valid] = albedos[idx] * (ambient + (1.0 - ambient) * lam)[:, None]
    return out


@njit(cache=True)
def _trace_spheres_nb(origins, dirs, centers, radii, albedos, background,
                      ambient, light):  # pragma: no cover - jitted
    r = origins.shape[0]
    s = centers.shape[0]
    out = np.empty((r, 3))
    for i in range(r):
        tbest = np.inf
        kbest = -1
        for k in range(s):
            ocx = origins[i, 0] - centers[k, 0]
            ocy = origins[i, 1] - centers[k, 1]
            ocz = origins[i, 2] - centers[k, 2]
            b = ocx * dirs[i, 0] + ocy * dirs[i, 1] + ocz * dirs[i, 2]
            c0 = ocx * ocx + ocy * ocy + ocz * ocz - radii[k] * radii[k]
            disc = b * b - c0
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t = -b - sq
            if t <= 1e-6:
                t = -b + sq
            if t > 1e-6 and t < tbest:
                tbest = t
                kbest = k
        if kbest < 0:
            out[i, 0] = background[0]
            out[i, 1] = background[1]
            out[i, 2] = background[2]
        else:
            nx = (origins[i, 0] + tbest * dirs[i, 0] - centers[kbest, 0]) / radii[kbest]
            ny = (origins[i, 1] + tbest * dirs[i, 1] - centers[kbest, 1]) / radii[kbest]
            nz = (origins[i, 2] + tbest * dirs[i, 2] - centers[kbest, 2]) / radii[kbest]
            nn = np.sqrt(nx * nx + ny * ny + nz * nz)
            lam = (nx * light[0] + ny * light[1] + nz * light[2]) / nn
            if lam < 0.0:
                lam = 0.0
            shade = ambient + (1.0 - ambient) * lam
            out[i, 0] = albedos[kbest, 0] * shade
            out[i, 1] = albedos[kbest, 1] * shade
            out[i, 2] = albedos[kbest, 2] * shade
    return out


# ---------------------------------------------------------------------------
# volume rendering (emission-absorption, midpoint samples)


def _gather_trilinear_np(density, color, pts):
    """Vectorized trilinear interpolation; outside-box points get sigma=0."""
    nx, ny, nz = density.shape
    g = pts  # already in grid coordinates
    inside = np.all((g >= 0.0) & (g <= np.array([nx - 1, ny - 1, nz - 1])), axis=-1)
    gc = np.clip(g, 0.0, np.array([nx - 1, ny - 1, nz - 1]) - 1e-9)
    i0 = np.floor(gc).astype(np.int64)
    i0 = np.minimum(i0, np.array([nx - 2, ny - 2, nz - 2]))
    f = gc - i0
    sig = np.zeros(g.shape[:-1])
    col = np.zeros(g.shape[:-1] + (3,))
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                w = wx * wy * wz
                ix, iy, iz = i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz
                sig += w * density[ix, iy, iz]
                col += w[..., None] * color[ix, iy, iz]
    sig = np.where(inside, sig, 0.0)
    col = np.where(inside[..., None], col, 0.0)
    return sig, col, inside, i0, f


def _render_rays_fwd_np(density, color, bg, bmin, scale, origins, dirs,
                        near, far, n_samples):
    r = origins.shape[0]
    span = np.maximum(far - near, 0.0)
    delta = span / n_samples  # (R,)
    tm = near[:, None] + (np.arange(n_samples) + 0.5)[None, :] * delta[:, None]
    pts = origins[:, None, :] + tm[..., None] * dirs[:, None, :]
    g = (pts - bmin) * scale
    sig, col, _, _, _ = _gather_trilinear_np(density, color, g)
    sig = np.where(span[:, None] > 0.0, sig, 0.0)
    alpha = 1.0 - np.exp(-sig * delta[:, None])
    t_excl = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((r, 1)), t_excl[:, :-1]], axis=1)
    w = t_before * alpha
    out = np.einsum("rs,rsk->rk", w, col) + t_excl[:, -1:] * bg
    return out, t_excl[:, -1]


def _render_rays_bwd_np(density, color, bg, bmin, scale, origins, dirs,
                        near, far, n_samples, upstream):
    r = origins.shape[0]
    nx, ny, nz = density.shape
    span = np.maximum(far - near, 0.0)
    delta = span / n_samples
    tm = near[:, None] + (np.arange(n_samples) + 0.5)[None, :] * delta[:, None]
    pts = origins[:, None, :] + tm[..., None] * dirs[:, None, :]
    g = (pts - bmin) * scale
    sig, col, inside, i0, f = _gather_trilinear_np(density, color, g)
    sig = np.where(span[:, None] > 0.0, sig, 0.0)
    alpha = 1.0 - np.exp(-sig * delta[:, None])
    t_excl = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((r, 1)), t_excl[:, :-1]], axis=1)
    w = t_before * alpha
    out = np.einsum("rs,rsk->rk", w, col) + t_excl[:, -1:] * bg

    # suffix_i = sum_{j>i} w_j c_j + T_final * bg
    wc = w[..., None] * col
    suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([suffix[:, 1:], np.zeros((r, 1, 3))], axis=1)
    suffix += t_excl[:, -1, None, None] * bg

    up_c = np.einsum("rk,rsk->rs", upstream, col)
    up_suf = np.einsum("rk,rsk->rs", upstream, suffix)
    d_sig = delta[:, None] * ((1.0 - alpha) * t_before * up_c - up_suf)
    d_col = w[..., None] * upstream[:, None, :]

    d_sig = np.where(inside, d_sig, 0.0)
    d_col = np.where(inside[..., None], d_col, 0.0)

    grad_density = np.zeros_like(density)
    grad_color = np.zeros_like(color)
    flat_d = grad_density.ravel()
    flat_c = grad_color.reshape(-1, 3)
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                wt = wx * wy * wz
                idx = ((i0[..., 0] + dx) * ny + (i0[..., 1] + dy)) * nz + (i0[..., 2] + dz)
                np.add.at(flat_d, idx.ravel(), (wt * d_sig).ravel())
                np.add.at(flat_c, idx.ravel(), (wt[..., None] * d_col).reshape(-1, 3))
    grad_bg = t_excl[:, -1] @ upstream
    return grad_density, grad_color, grad_bg, out, t_excl[:, -1]


@njit(cache=True)
def _render_rays_fwd_nb(density, color, bg, bmin, scale, origins, dirs,
                        near, far, n_samples):  # pragma: no cover - jitted
    nx, ny, nz = density.shape
    r = origins.shape[0]
    out = np.empty((r, 3))
    trans = np.empty(r)
    for i in range(r):
        span = far[i] - near[i]
        t_acc = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        if span > 0.0:
            delta = span / n_samples
            for s in range(n_samples):
                t = near[i] + (s + 0.5) * delta
                gx = (origins[i, 0] + t * dirs[i, 0] - bmin[0]) * scale[0]
                gy = (origins[i, 1] + t * dirs[i, 1] - bmin[1]) * scale[1]
                gz = (origins[i, 2] + t * dirs[i, 2] - bmin[2]) * scale[2]
                if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > nx - 1 or gy > ny - 1 or gz > nz - 1:
                    continue
                ix = int(gx)
                iy = int(gy)
                iz = int(gz)
                if ix > nx - 2:
                    ix = nx - 2
                if iy > ny - 2:
                    iy = ny - 2
                if iz > nz - 2:
                    iz = nz - 2
                fx = gx - ix
                fy = gy - iy
                fz = gz - iz
                sig = 0.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                for dx in range(2):
                    wx = fx if dx == 1 else 1.0 - fx
                    for dy in range(2):
                        wy = fy if dy == 1 else 1.0 - fy
                        for dz in range(2):
                            wz = fz if dz == 1 else 1.0 - fz
                            w = wx * wy * wz
                            sig += w * density[ix + dx, iy + dy, iz + dz]
                            cr += w * color[ix + dx, iy + dy, iz + dz, 0]
                            cg += w * color[ix + dx, iy + dy, iz + dz, 1]
                            cb += w * color[ix + dx, iy + dy, iz + dz, 2]
                alpha = 1.0 - np.exp(-sig * delta)
                wgt = t_acc * alpha
                c0 += wgt * cr
                c1 += wgt * cg
                c2 += wgt * cb
                t_acc *= 1.0 - alpha
        out[i, 0] = c0 + t_acc * bg[0]
        out[i, 1] = c1 + t_acc * bg[1]
        out[i, 2] = c2 + t_acc * bg[2]
        trans[i] = t_acc
    return out, trans


@njit(cache=True)
def _render_rays_bwd_nb(density, color, bg, bmin, scale, origins, dirs,
                        near, far, n_samples, upstream):  # pragma: no cover - jitted
    nx, ny, nz = density.shape
    r = origins.shape[0]
    grad_density = np.zeros((nx, ny, nz))
    grad_color = np.zeros((nx, ny, nz, 3))
    grad_bg = np.zeros(3)
    out = np.empty((r, 3))
    trans = np.empty(r)

    sig_s = np.empty(n_samples)
    col_s = np.empty((n_samples, 3))
    alpha_s = np.empty(n_samples)
    tb_s = np.empty(n_samples)
    in_s = np.empty(n_samples, dtype=np.bool_)
    ix_s = np.empty(n_samples, dtype=np.int64)
    iy_s = np.empty(n_samples, dtype=np.int64)
    iz_s = np.empty(n_samples, dtype=np.int64)
    fx_s = np.empty(n_samples)
    fy_s = np.empty(n_samples)
    fz_s = np.empty(n_samples)

    for i in range(r):
        span = far[i] - near[i]
        t_acc = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        if span <= 0.0:
            out[i, 0] = bg[0]
            out[i, 1] = bg[1]
            out[i, 2] = bg[2]
            trans[i] = 1.0
            grad_bg[0] += upstream[i, 0]
            grad_bg[1] += upstream[i, 1]
            grad_bg[2] += upstream[i, 2]
            continue
        delta = span / n_samples
        for s in range(n_samples):
            t = near[i] + (s + 0.5) * delta
            gx = (origins[i, 0] + t * dirs[i, 0] - bmin[0]) * scale[0]
            gy = (origins[i, 1] + t * dirs[i, 1] - bmin[1]) * scale[1]
            gz = (origins[i, 2] + t * dirs[i, 2] - bmin[2]) * scale[2]
            if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > nx - 1 or gy > ny - 1 or gz > nz - 1:
                in_s[s] = False
                sig_s[s] = 0.0
                col_s[s, 0] = 0.0
                col_s[s, 1] = 0.0
                col_s[s, 2] = 0.0
            else:
                ix = int(gx)
                iy = int(gy)
                iz = int(gz)
                if ix > nx - 2:
                    ix = nx - 2
                if iy > ny - 2:
                    iy = ny - 2
                if iz > nz - 2:
                    iz = nz - 2
                fx = gx - ix
                fy = gy - iy
                fz = gz - iz
                sig = 0.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                for dx in range(2):
                    wx = fx if dx == 1 else 1.0 - fx
                    for dy in range(2):
                        wy = fy if dy == 1 else 1.0 - fy
                        for dz in range(2):
                            wz = fz if dz == 1 else 1.0 - fz
                            w = wx * wy * wz
                            sig += w * density[ix + dx, iy + dy, iz + dz]
                            cr += w * color[ix + dx, iy + dy, iz + dz, 0]
                            cg += w * color[ix + dx, iy + dy, iz + dz, 1]
                            cb += w * color[ix + dx, iy + dy, iz + dz, 2]
                in_s[s] = True
                ix_s[s] = ix
                iy_s[s] = iy
                iz_s[s] = iz
                fx_s[s] = fx
                fy_s[s] = fy
                fz_s[s] = fz
                sig_s[s] = sig
                col_s[s, 0] = cr
                col_s[s, 1] = cg
                col_s[s, 2] = cb
            alpha = 1.0 - np.exp(-sig_s[s] * delta)
            alpha_s[s] = alpha
            tb_s[s] = t_acc
            wgt = t_acc * alpha
            c0 += wgt * col_s[s, 0]
            c1 += wgt * col_s[s, 1]
            c2 += wgt * col_s[s, 2]
            t_acc *= 1.0 - alpha
        out[i, 0] = c0 + t_acc * bg[0]
        out[i, 1] = c1 + t_acc * bg[1]
        out[i, 2] = c2 + t_acc * bg[2]
        trans[i] = t_acc
        grad_bg[0] += t_acc * upstream[i, 0]
        grad_bg[1] += t_acc * upstream[i, 1]
        grad_bg[2] += t_acc * upstream[i, 2]

        # backward: suffix accumulation from the far end
        suf0 = t_acc * bg[0]
        suf1 = t_acc * bg[1]
        suf2 = t_acc * bg[2]
        for s in range(n_samples - 1, -1, -1):
            if not in_s[s]:
                continue
            up_c = (upstream[i, 0] * col_s[s, 0] + upstream[i, 1] * col_s[s, 1]
                    + upstream[i, 2] * col_s[s, 2])
            up_suf = (upstream[i, 0] * suf0 + upstream[i, 1] * suf1
                      + upstream[i, 2] * suf2)
            d_sig = delta * ((1.0 - alpha_s[s]) * tb_s[s] * up_c - up_suf)
            wgt = tb_s[s] * alpha_s[s]
            dc0 = wgt * upstream[i, 0]
            dc1 = wgt * upstream[i, 1]
            dc2 = wgt * upstream[i, 2]
            ix = ix_s[s]
            iy = iy_s[s]
            iz = iz_s[s]
            fx = fx_s[s]
            fy = fy_s[s]
            fz = fz_s[s]
            for dx in range(2):
                wx = fx if dx == 1 else 1.0 - fx
                for dy in range(2):
                    wy = fy if dy == 1 else 1.0 - fy
                    for dz in range(2):
                        wz = fz if dz == 1 else 1.0 - fz
                        w = wx * wy * wz
                        grad_density[ix + dx, iy + dy, iz + dz] += w * d_sig
                        grad_color[ix + dx, iy + dy, iz + dz, 0] += w * dc0
                        grad_color[ix + dx, iy + dy, iz + dz, 1] += w * dc1
                        grad_color[ix + dx, iy + dy, iz + dz, 2] += w * dc2
            suf0 += wgt * col_s[s, 0]
            suf1 += wgt * col_s[s, 1]
            suf2 += wgt * col_s[s, 2]
    return grad_density, grad_color, grad_bg, out, trans


trace_spheres_numpy = _trace_spheres_np
render_rays_fwd_numpy = _render_rays_fwd_np
render_rays_bwd_numpy = _render_rays_bwd_np
trace_spheres_numba = _trace_spheres_nb if HAVE_NUMBA else None
render_rays_fwd_numba = _render_rays_fwd_nb if HAVE_NUMBA else None
render_rays_bwd_numba = _render_rays_bwd_nb if HAVE_NUMBA else None

if HAVE_NUMBA:
    trace_spheres = _trace_spheres_nb
    render_rays_fwd = _render_rays_fwd_nb
    render_rays_bwd = _render_rays_bwd_nb
else:
    trace_spheres = _trace_spheres_np
    render_rays_fwd = _render_rays_fwd_np
    render_rays_bwd = _render_rays_bwd_np
