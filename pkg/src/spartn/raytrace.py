"""Closest-hit ray casting against analytic primitives (numpy, batched over rays)."""
from __future__ import annotations

import numpy as np

from .se3 import Transform

INF = np.inf


def _local(pose: Transform, origins, dirs):
    o = (origins - pose.translation) @ pose.rotation
    d = dirs @ pose.rotation
    return o, d


def hit_sphere(center, radius, origins, dirs):
    """Distance to the first intersection in front of the origin (inf on miss)."""
    oc = origins - center
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t = -b - sq
    t = np.where(t > 1e-9, t, -b + sq)
    t = np.where((disc >= 0) & (t > 1e-9), t, INF)
    n = origins + t[:, None] * dirs - center
    with np.errstate(invalid="ignore"):
        n = n / radius
    return t, n


def hit_box(pose: Transform, half, origins, dirs):
    o, d = _local(pose, origins, dirs)
    half = np.asarray(half, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (-half - o) * inv
        tb = (half - o) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    par = d == 0
    inside = np.abs(o) <= half
    tmin = np.where(par, np.where(inside, -INF, INF), tmin)
    tmax = np.where(par, np.where(inside, INF, -INF), tmax)
    tn = tmin.max(axis=1)
    tf = tmax.min(axis=1)
    t = np.where(tn > 1e-9, tn, tf)
    t = np.where((tf >= tn) & (t > 1e-9), t, INF)
    axis = np.where(tn > 1e-9, tmin.argmax(axis=1), tmax.argmin(axis=1))
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    nl = np.zeros_like(o)
    rows = np.arange(len(o))
    nl[rows, axis] = np.sign(p[rows, axis])
    return t, nl @ pose.rotation.T


def hit_cylinder(pose: Transform, radius, half_height, origins, dirs):
    """Capped cylinder with axis along the local z."""
    o, d = _local(pose, origins, dirs)
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius * radius
    disc = b * b - a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = []
        for sgn in (-1.0, 1.0):
            t = (-b + sgn * sq) / a
            z = o[:, 2] + t * d[:, 2]
            ts.append(np.where(ok & (t > 1e-9) & (np.abs(z) <= half_height), t, INF))
        t_side = np.minimum(*ts)
        tcaps = []
        for zc in (-half_height, half_height):
            t = (zc - o[:, 2]) / d[:, 2]
            x = o[:, 0] + t * d[:, 0]
            y = o[:, 1] + t * d[:, 1]
            tcaps.append(np.where((t > 1e-9) & (x * x + y * y <= radius * radius), t, INF))
        t_cap = np.minimum(*tcaps)
    t = np.minimum(t_side, t_cap)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n_side = np.stack([p[:, 0], p[:, 1], np.zeros(len(p))], axis=1) / radius
    n_cap = np.zeros_like(p)
    n_cap[:, 2] = np.sign(p[:, 2])
    nl = np.where((t_cap < t_side)[:, None], n_cap, n_side)
    return t, nl @ pose.rotation.T


def hit_table(height, half_extent, origins, dirs):
    """Top face of a square table centered at the origin, visible from above."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (height - origins[:, 2]) / dirs[:, 2]
    p = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
    ok = (
        (dirs[:, 2] < 0) & (t > 1e-9)
        & (np.abs(p[:, 0]) <= half_extent) & (np.abs(p[:, 1]) <= half_extent)
    )
    t = np.where(ok, t, INF)
    n = np.zeros_like(origins)
    n[:, 2] = 1.0
    return t, n
