"""Dense voxel radiance field: volume rendering and per-scene training.

The grid stores density and RGB at ``nx * ny * nz`` lattice nodes spanning an
axis-aligned box ``[lo, hi]`` expressed in the grid's own frame; ``frame``
maps grid coordinates into the reference frame the camera poses live in
(identity for world-frame fields).  Values between nodes are trilinearly
interpolated and density is zero outside the box.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .se3 import Transform

__all__ = [
    "CameraIntrinsics", "PosedImage", "RadianceField", "RenderConfig",
    "FieldTrainConfig", "InsufficientViews", "IntrinsicsMismatch",
    "DimensionMismatch", "camera_rays", "render_rays", "render_ray", "render",
    "train_field", "psnr", "save_field", "load_field",
]


class InsufficientViews(ValueError):
    pass


class IntrinsicsMismatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x: float) -> "CameraIntrinsics":
        f = 0.5 * width / math.tan(0.5 * fov_x)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height)


@dataclass
class PosedImage:
    image: np.ndarray
    pose: Transform
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 64
    near: float = 0.02
    far: float = 1.0

    def __post_init__(self):
        if self.samples_per_ray < 1 or not 0 < self.near < self.far:
            raise ValueError("invalid render config")

    def scaled(self, s: float) -> "RenderConfig":
        return RenderConfig(self.samples_per_ray, self.near * s, self.far * s)


@dataclass
class RadianceField:
    density: np.ndarray
    color: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    background: np.ndarray
    frame: Transform = dc_field(default_factory=Transform.identity)
    train_losses: list = dc_field(default_factory=list, repr=False)

    def __post_init__(self):
        self.density = np.ascontiguousarray(self.density, dtype=np.float64)
        self.color = np.ascontiguousarray(self.color, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.background = np.ascontiguousarray(self.background, dtype=np.float64)
        if self.color.shape != self.density.shape + (3,):
            raise ValueError("color grid must match density grid")
        if min(self.density.shape) < 2:
            raise ValueError("grid needs at least two nodes per axis")

    @classmethod
    def empty(cls, resolution, lo, hi, background=(0.0, 0.0, 0.0), color=0.5,
              frame: Transform | None = None) -> "RadianceField":
        shape = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
        return cls(
            np.zeros(shape), np.full(shape + (3,), float(color)), lo, hi,
            np.asarray(background, dtype=float),
            Transform.identity() if frame is None else frame,
        )

    @property
    def shape(self) -> tuple:
        return self.density.shape

    @property
    def index_scale(self) -> np.ndarray:
        return (np.array(self.shape) - 1) / (self.hi - self.lo)

    @property
    def voxel_size(self) -> float:
        return float(np.mean(1.0 / self.index_scale))

    def copy(self) -> "RadianceField":
        return RadianceField(self.density.copy(), self.color.copy(), self.lo.copy(),
                             self.hi.copy(), self.background.copy(), self.frame)


def camera_rays(pose: Transform, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rays for every pixel (row-major), camera looking along +z,
    x right, y down.  Pixel ``(u, v)`` has its center at coordinate ``(u, v)``."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    d = np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1
    ).reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    dirs = d @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def _grid_rays(fld: RadianceField, origins, dirs, cfg: RenderConfig):
    """Rays in continuous index coordinates, clipped to box and [near, far]."""
    r, t = fld.frame.rotation, fld.frame.translation
    o = (np.asarray(origins, dtype=float) - t) @ r
    d = np.asarray(dirs, dtype=float) @ r
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (fld.lo - o) * inv
        tb = (fld.hi - o) * inv
    tmin = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    tmax = np.where(np.isnan(ta), np.inf, np.maximum(ta, tb))
    # axis-parallel rays: inside the slab for all t, or never
    par = d == 0
    inside_slab = (o >= fld.lo) & (o <= fld.hi)
    tmin = np.where(par, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside_slab, np.inf, -np.inf), tmax)
    t0 = np.maximum(tmin.max(axis=1), cfg.near)
    t1 = np.minimum(tmax.min(axis=1), cfg.far)
    t1 = np.where(t1 > t0, t1, t0)
    s = fld.index_scale
    og = np.ascontiguousarray((o - fld.lo) * s)
    dg = np.ascontiguousarray(d * s)
    return og, dg, np.ascontiguousarray(t0), np.ascontiguousarray(t1)


def render_rays(fld: RadianceField, origins, dirs, cfg: RenderConfig,
                rng: np.random.Generator | None = None, with_weights: bool = False,
                backend=None):
    """Composite color, final transmittance and optionally per-sample weights."""
    kb = kernels.get_backend(backend) if isinstance(backend, (str, type(None))) else backend
    og, dg, t0, t1 = _grid_rays(fld, origins, dirs, cfg)
    n = cfg.samples_per_ray
    R = len(og)
    jitter = rng.random((R, n)) if rng is not None else np.zeros((0, 0))
    rgb = np.empty((R, 3))
    trans = np.empty(R)
    w = np.empty((R, n)) if with_weights else np.zeros((0, 0))
    kb.render_rays(fld.density, fld.color, fld.background, og, dg, t0, t1, n,
                   jitter, rgb, trans, w)
    if with_weights:
        return rgb, trans, w
    return rgb, trans


def render_ray(fld: RadianceField, origin, direction, cfg: RenderConfig) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    assert abs(np.linalg.norm(direction) - 1.0) <= 1e-9, "direction must be unit length"
    rgb, _ = render_rays(fld, np.asarray(origin, dtype=float)[None], direction[None], cfg)
    return rgb[0]


def render(fld: RadianceField, pose: Transform, intr: CameraIntrinsics,
           cfg: RenderConfig, seed: int | None = None, backend=None) -> np.ndarray:
    """Render an image; midpoint samples unless a jitter seed is given."""
    origins, dirs = camera_rays(pose, intr)
    rng = np.random.default_rng(seed) if seed is not None else None
    rgb, _ = render_rays(fld, origins, dirs, cfg, rng=rng, backend=backend)
    return np.clip(rgb, 0.0, 1.0).reshape(intr.height, intr.width, 3)


@dataclass(frozen=True)
class FieldTrainConfig:
    iters: int = 1000
    rays_per_step: int = 2048
    resolution: int | tuple = 64
    lr_density: float = 0.1
    lr_color: float = 0.05
    rms_decay: float = 0.95
    eps: float = 1e-8
    sparsity: float = 0.01  # L1 shrink per step, as a fraction of the density step
    render: RenderConfig = RenderConfig()


BG_STEP = 1.0


def _frustum_box(views: Sequence[PosedImage], fld_frame: Transform, far: float):
    pts = []
    for v in views:
        intr = v.intrinsics
        corners = np.array(
            [[-intr.cx, -intr.cy], [intr.width - 1 - intr.cx, -intr.cy],
             [-intr.cx, intr.height - 1 - intr.cy],
             [intr.width - 1 - intr.cx, intr.height - 1 - intr.cy]]
        ) / [intr.fx, intr.fy]
        d = np.concatenate([corners, np.ones((4, 1))], axis=1) * far
        pts.append(d @ v.pose.rotation.T + v.pose.translation)
        pts.append(v.pose.translation[None])
    pts = (np.concatenate(pts) - fld_frame.translation) @ fld_frame.rotation
    return pts.min(axis=0), pts.max(axis=0)


def train_field(views: Sequence[PosedImage], mask: np.ndarray | None, iters: int | None = None,
                seed: int = 0, config: FieldTrainConfig = FieldTrainConfig(),
                bounds: tuple | None = None, frame: Transform | None = None,
                backend=None) -> RadianceField:
    """Fit a field to posed images by RMS-scaled gradient descent.

    Pixels with ``mask == 1`` are never sampled.  ``bounds`` is the workspace
    box (in grid coordinates); it is intersected with the union of camera
    frusta.  Density updates are taken in units of optical depth per voxel,
    so learning rates do not depend on the metric scale of the poses.
    """
    if len(views) < 3:
        raise InsufficientViews(f"need at least 3 views, got {len(views)}")
    intr = views[0].intrinsics
    if any(v.intrinsics != intr for v in views):
        raise IntrinsicsMismatch("all training views must share intrinsics")
    iters = config.iters if iters is None else iters
    kb = kernels.get_backend(backend)
    cfg = config.render
    frame = Transform.identity() if frame is None else frame
    rng = np.random.default_rng(seed)

    flo, fhi = _frustum_box(views, frame, cfg.far)
    if bounds is not None:
        lo = np.maximum(flo, bounds[0])
        hi = np.minimum(fhi, bounds[1])
        if np.any(hi <= lo):
            lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    else:
        lo, hi = flo, fhi

    keep = np.ones((intr.height, intr.width), bool) if mask is None else ~np.asarray(mask, bool)
    border = np.zeros_like(keep)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    imgs = np.stack([np.asarray(v.image, dtype=float) for v in views])
    bsel = border & keep
    background = imgs[:, bsel].reshape(-1, 3).mean(axis=0) if bsel.any() else imgs.mean(axis=(0, 1, 2))

    # neutral start: if colors began at the background, density would be unidentifiable
    fld = RadianceField.empty(config.resolution, lo, hi, background, color=0.5, frame=frame)

    origins, dirs, targets = [], [], []
    for v in views:
        o, d = camera_rays(v.pose, intr)
        sel = keep.reshape(-1)
        origins.append(o[sel])
        dirs.append(d[sel])
        targets.append(np.asarray(v.image, dtype=float).reshape(-1, 3)[sel])
    og, dg, t0, t1 = _grid_rays(fld, np.concatenate(origins), np.concatenate(dirs), cfg)
    targets = np.concatenate(targets)
    n_rays = len(og)
    n = cfg.samples_per_ray

    unit = fld.voxel_size  # optical depth per voxel is density * unit
    size = fld.density.size
    gd = np.zeros(fld.shape)
    gc = np.zeros(fld.shape + (3,))
    touched = np.zeros(size, np.uint8)
    vd = np.zeros(size)
    vc = np.zeros((size, 3))
    rho, eps = config.rms_decay, config.eps
    dflat, cflat = fld.density.reshape(-1), fld.color.reshape(-1, 3)
    gdf, gcf = gd.reshape(-1), gc.reshape(-1, 3)
    B = min(config.rays_per_step, n_rays)

    for _ in range(iters):
        sel = rng.integers(0, n_rays, B)
        jit = rng.random((B, n))
        gb = np.zeros(3)
        loss = kb.loss_grad_rays(
            fld.density, fld.color, fld.background, og[sel], dg[sel], t0[sel], t1[sel],
            n, jit, targets[sel], 1.0 / (3 * B), gd, gc, touched, gb,
        )
        fld.train_losses.append(loss)
        idx = np.flatnonzero(touched)
        g = gdf[idx] / unit
        v = vd[idx]
        v = np.where(v == 0, g * g, rho * v + (1 - rho) * g * g)
        vd[idx] = v
        step = config.lr_density / unit
        # proximal L1 step: density the images do not ask for decays to zero
        dflat[idx] = np.maximum(
            dflat[idx] - step * (g / (np.sqrt(v) + eps) + config.sparsity), 0.0
        )
        g = gcf[idx]
        v = vc[idx]
        v = np.where(v == 0, g * g, rho * v + (1 - rho) * g * g)
        vc[idx] = v
        cflat[idx] = np.clip(cflat[idx] - config.lr_color * g / (np.sqrt(v) + eps), 0.0, 1.0)
        # the loss is quadratic in the background with curvature <= 2/3 per
        # channel, so a plain gradient step of 1 contracts and never amplifies noise
        fld.background = np.clip(fld.background - BG_STEP * gb, 0.0, 1.0)
        gdf[idx] = 0.0
        gcf[idx] = 0.0
        touched[idx] = 0
    return fld


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio of [0, 1] images; ``inf`` when identical."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# Checkpoint layout (little-endian):
#   b"SPRF" | u32 version | u32 nx, ny, nz | f32 lo[3] | f32 hi[3]
#   | f32 background[3] | f32 frame[12] (row-major 3x4) | f32 density[nx*ny*nz]
#   | f32 color[nx*ny*nz*3]            (arrays in C order, x slowest)
_MAGIC = b"SPRF"
_HEADER = struct.Struct("<4sI3I3f3f3f12f")


def save_field(path, fld: RadianceField) -> None:
    header = _HEADER.pack(
        _MAGIC, 1, *fld.shape, *fld.lo, *fld.hi, *fld.background, *fld.frame.row12()
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(fld.density.astype("<f4").tobytes())
        f.write(fld.color.astype("<f4").tobytes())


def load_field(path) -> RadianceField:
    data = Path(path).read_bytes()
    vals = _HEADER.unpack_from(data)
    if vals[0] != _MAGIC:
        raise ValueError(f"{path} is not a field checkpoint")
    shape = tuple(vals[2:5])
    lo, hi, bg = vals[5:8], vals[8:11], vals[11:14]
    frame = Transform.from_row12(vals[14:26])
    n = int(np.prod(shape))
    off = _HEADER.size
    density = np.frombuffer(data, "<f4", n, off).reshape(shape).astype(np.float64)
    color = np.frombuffer(data, "<f4", 3 * n, off + 4 * n).reshape(shape + (3,)).astype(np.float64)
    return RadianceField(density, color, lo, hi, bg, frame)
