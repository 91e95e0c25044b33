"""Rigid-transform algebra used for every frame chain in the package.

Transforms are stored as a rotation matrix plus a translation vector. Both
fields may carry leading batch dimensions, so ``compose`` and friends operate
on a single pose or on a stack of poses with the same code.

Euler convention: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, i.e. fixed-axis
rotations applied X, then Y, then Z.  Angles are returned as
``(roll, pitch, yaw)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ORTHO_REPAIR_TOL = 1e-7
GIMBAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Transform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape[-2:] != (3, 3) or t.shape[-1:] != (3,):
            raise ValueError(f"bad transform shapes {r.shape}, {t.shape}")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, batch: Sequence[int] = ()) -> "Transform":
        r = np.broadcast_to(np.eye(3), (*batch, 3, 3)).copy()
        return cls(r, np.zeros((*batch, 3)))

    @classmethod
    def from_translation(cls, t) -> "Transform":
        t = np.asarray(t, dtype=float)
        return cls(np.broadcast_to(np.eye(3), (*t.shape[:-1], 3, 3)).copy(), t)

    @classmethod
    def from_matrix(cls, m) -> "Transform":
        m = np.asarray(m, dtype=float)
        return cls(m[..., :3, :3].copy(), m[..., :3, 3].copy())

    @classmethod
    def from_row12(cls, row) -> "Transform":
        m = np.asarray(row, dtype=float).reshape(*np.shape(row)[:-1], 3, 4)
        return cls(m[..., :3].copy(), m[..., 3].copy())

    @property
    def batch_shape(self) -> tuple:
        return self.translation.shape[:-1]

    def matrix(self) -> np.ndarray:
        m = np.zeros((*self.batch_shape, 4, 4))
        m[..., :3, :3] = self.rotation
        m[..., :3, 3] = self.translation
        m[..., 3, 3] = 1.0
        return m

    def row12(self) -> np.ndarray:
        """Row-major 3x4 ``(R | t)`` flattened to 12 numbers."""
        m = np.concatenate([self.rotation, self.translation[..., None]], axis=-1)
        return m.reshape(*self.batch_shape, 12)

    def __getitem__(self, idx) -> "Transform":
        return Transform(self.rotation[idx], self.translation[idx])

    def __len__(self) -> int:
        return self.batch_shape[0]

    def __matmul__(self, other: "Transform") -> "Transform":
        return compose(self, other)

    def inv(self) -> "Transform":
        return inverse(self)

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def max_error(self, other: "Transform") -> float:
        """Largest absolute entry difference in rotation or translation."""
        return float(max(np.max(np.abs(self.rotation - other.rotation)),
                         np.max(np.abs(self.translation - other.translation))))

    def __repr__(self) -> str:
        if self.batch_shape:
            return f"Transform(batch={self.batch_shape})"
        return f"Transform(R={self.rotation.tolist()}, t={self.translation.tolist()})"


@dataclass(frozen=True)
class NoiseParams:
    """Bounds of the uniform perturbation distribution (radians, meters)."""

    alpha: float
    beta_t: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta_t < 0:
            raise ValueError("noise bounds must be non-negative")


def orthonormality_error(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    e = np.swapaxes(r, -1, -2) @ r - np.eye(3)
    return np.abs(e).max(axis=(-2, -1))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Closest proper rotation (polar decomposition)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    return bool(
        np.all(orthonormality_error(r) <= tol)
        and np.all(np.abs(np.linalg.det(r) - 1.0) <= tol)
    )


def _repair(r: np.ndarray) -> np.ndarray:
    bad = orthonormality_error(r) > ORTHO_REPAIR_TOL
    if np.any(bad):
        r = r.copy()
        r[bad] = orthonormalize(r[bad])
    return r


def compose(a: Transform, b: Transform) -> Transform:
    r = a.rotation @ b.rotation
    t = np.einsum("...ij,...j->...i", a.rotation, b.translation) + a.translation
    return Transform(_repair(r), t)


def inverse(t: Transform) -> Transform:
    rt = np.swapaxes(t.rotation, -1, -2)
    return Transform(rt, -np.einsum("...ij,...j->...i", rt, t.translation))


def from_euler(e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    cx, sx = np.cos(e[..., 0]), np.sin(e[..., 0])
    cy, sy = np.cos(e[..., 1]), np.sin(e[..., 1])
    cz, sz = np.cos(e[..., 2]), np.sin(e[..., 2])
    r = np.empty(e.shape[:-1] + (3, 3))
    r[..., 0, 0] = cy * cz
    r[..., 0, 1] = cz * sy * sx - sz * cx
    r[..., 0, 2] = cz * sy * cx + sz * sx
    r[..., 1, 0] = cy * sz
    r[..., 1, 1] = sz * sy * sx + cz * cx
    r[..., 1, 2] = sz * sy * cx - cz * sx
    r[..., 2, 0] = -sy
    r[..., 2, 1] = cy * sx
    r[..., 2, 2] = cy * cx
    return r


def gimbal_locked(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.hypot(r[..., 2, 1], r[..., 2, 2]) < GIMBAL_TOL


def to_euler(r: np.ndarray, with_flag: bool = False):
    """Inverse of :func:`from_euler`; angles in (-pi, pi].

    At gimbal lock the yaw is pinned to zero and roll absorbs the remaining
    rotation. ``with_flag=True`` additionally returns the degeneracy mask.
    """
    r = np.asarray(r, dtype=float)
    pitch = np.arcsin(np.clip(-r[..., 2, 0], -1.0, 1.0))
    locked = gimbal_locked(r)
    roll = np.where(
        locked,
        np.arctan2(-r[..., 1, 2], r[..., 1, 1]),
        np.arctan2(r[..., 2, 1], r[..., 2, 2]),
    )
    yaw = np.where(locked, 0.0, np.arctan2(r[..., 1, 0], r[..., 0, 0]))
    e = np.stack([roll, pitch, yaw], axis=-1)
    e = np.where(e <= -np.pi, e + 2 * np.pi, e)
    if with_flag:
        return e, locked
    return e


def transform_from_params(p) -> Transform:
    """Build a transform from ``(roll, pitch, yaw, tx, ty, tz)``."""
    p = np.asarray(p, dtype=float)
    return Transform(from_euler(p[..., :3]), p[..., 3:6].copy())


def transform_to_params(t: Transform) -> np.ndarray:
    return np.concatenate([to_euler(t.rotation), t.translation], axis=-1)


def sample_perturbation(
    p: NoiseParams, rng: np.random.Generator, size: int | None = None
) -> Transform:
    """Draw ``eps`` with every Euler angle in U(-alpha, alpha) and every
    translation component in U(-beta_t, beta_t), independently."""
    shape = (3,) if size is None else (size, 3)
    angles = rng.uniform(-p.alpha, p.alpha, shape)
    t = rng.uniform(-p.beta_t, p.beta_t, shape)
    return Transform(from_euler(angles), t)


def perturb_pose(t: Transform, eps: Transform) -> Transform:
    """Noise acts in the end-effector frame: ``T @ eps``."""
    return compose(t, eps)


def corrective_action(eps: Transform, a: Transform) -> Transform:
    """Relative action that reaches the same desired pose from ``T @ eps``."""
    return compose(inverse(eps), a)


def camera_from_ee(w_T_e: Transform, e_T_c: Transform) -> Transform:
    return compose(w_T_e, e_T_c)


def rotation_angle(r: np.ndarray) -> np.ndarray:
    """Geodesic angle of a rotation (radians)."""
    r = np.asarray(r, dtype=float)
    c = (np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform rotations from normalized Gaussian quaternions."""
    q = rng.normal(size=(4,) if size is None else (size, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
            2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
            2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def random_transform(
    rng: np.random.Generator, size: int | None = None, scale: float = 1.0
) -> Transform:
    r = random_rotation(rng, size)
    t = rng.uniform(-scale, scale, (3,) if size is None else (size, 3))
    return Transform(r, t)


def stack(transforms: Sequence[Transform]) -> Transform:
    return Transform(
        np.stack([t.rotation for t in transforms]),
        np.stack([t.translation for t in transforms]),
    )
