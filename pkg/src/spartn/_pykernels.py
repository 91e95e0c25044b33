"""Pure-numpy ray-marching kernels; same contract as the compiled ``_ckernels``."""
from __future__ import annotations

import numpy as np

_OFFSETS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def _samples(shape, og, dg, t0, t1, n, jitter):
    nx, ny, nz = shape
    R = og.shape[0]
    u = jitter if jitter.shape[0] > 0 else np.full((R, n), 0.5)
    valid = t1 > t0
    dt = np.where(valid, (t1 - t0) / n, 0.0)
    t = t0[:, None] + (np.arange(n)[None, :] + u) * dt[:, None]
    g = og[:, None, :] + t[..., None] * dg[:, None, :]
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=float)
    inside = np.all((g >= 0.0) & (g <= hi), axis=-1) & valid[:, None]
    i0 = np.minimum(np.floor(np.where(inside[..., None], g, 0.0)), hi - 1).astype(np.int64)
    f = np.where(inside[..., None], g - i0, 0.0)
    idx, w = [], []
    for dx, dy, dz in _OFFSETS:
        idx.append(((i0[..., 0] + dx) * ny + i0[..., 1] + dy) * nz + i0[..., 2] + dz)
        wx = f[..., 0] if dx else 1 - f[..., 0]
        wy = f[..., 1] if dy else 1 - f[..., 1]
        wz = f[..., 2] if dz else 1 - f[..., 2]
        w.append(np.where(inside, wx * wy * wz, 0.0))
    return np.stack(idx, -1), np.stack(w, -1), inside, dt


def _forward(density, color, bg, og, dg, t0, t1, n, jitter):
    idx, w, inside, dt = _samples(density.shape, og, dg, t0, t1, n, jitter)
    dflat = density.reshape(-1)
    cflat = color.reshape(-1, 3)
    sig = np.sum(w * dflat[idx], axis=-1)
    col = np.sum(w[..., None] * cflat[idx], axis=-2)
    keep = np.where(inside, np.exp(-sig * dt[:, None]), 1.0)
    trans = np.concatenate([np.ones((len(og), 1)), np.cumprod(keep, axis=1)], axis=1)
    wgt = trans[:, :-1] - trans[:, 1:]
    rgb = np.sum(wgt[..., None] * col, axis=1) + trans[:, -1:] * bg
    return rgb, trans, wgt, col, idx, w, inside, dt


def render_rays(density, color, bg, og, dg, t0, t1, n, jitter, out_rgb, out_T, out_w):
    if len(og) == 0:
        return
    rgb, trans, wgt, *_ = _forward(density, color, bg, og, dg, t0, t1, n, jitter)
    out_rgb[...] = rgb
    out_T[...] = trans[:, -1]
    if out_w.shape[0] > 0:
        out_w[...] = wgt


def loss_grad_rays(density, color, bg, og, dg, t0, t1, n, jitter, target, scale,
                   grad_density, grad_color, touched, grad_bg):
    if len(og) == 0:
        return 0.0
    rgb, trans, wgt, col, idx, w, inside, dt = _forward(
        density, color, bg, og, dg, t0, t1, n, jitter
    )
    diff = rgb - target
    loss = float(scale * np.sum(diff * diff))
    g = 2.0 * scale * diff
    grad_bg += np.sum(trans[:, -1:] * g, axis=0)
    # suffix radiance after each sample, background included
    contrib = wgt[..., None] * col
    after = rgb[:, None, :] - np.cumsum(contrib, axis=1)
    gdotc = np.einsum("rc,rnc->rn", g, col)
    gdots = np.einsum("rc,rnc->rn", g, after)
    dsig = dt[:, None] * (trans[:, 1:] * gdotc - gdots)
    dsig = np.where(inside, dsig, 0.0)
    size = grad_density.size
    flat_idx = idx.reshape(-1)
    wd = (w * dsig[..., None]).reshape(-1)
    grad_density.reshape(-1)[:] += np.bincount(flat_idx, wd, minlength=size)
    gc = grad_color.reshape(-1, 3)
    for ch in range(3):
        vals = (w * (wgt * g[:, None, ch])[..., None]).reshape(-1)
        gc[:, ch] += np.bincount(flat_idx, vals, minlength=size)
    touched[flat_idx[np.repeat(inside.reshape(-1), 8)]] = 1
    return loss
