"""Homography augmentation baseline: rotation-only perturbations rendered by
warping the original frame instead of querying a radiance field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import AugmentedTransition, Demonstration
from .field import CameraIntrinsics
from .se3 import (
    NoiseParams, Transform, corrective_action, perturb_pose, sample_perturbation,
)
from .seeding import rng_for


@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (3, 3) or abs(np.linalg.det(h)) <= 1e-12:
            raise ValueError("homography must be an invertible 3x3 matrix")
        if h[2, 2] != 0:
            h = h / h[2, 2]
        object.__setattr__(self, "h", h)

    def inv(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        p = np.asarray(pts, dtype=float) @ self.h[:, :2].T + self.h[:, 2]
        return p[..., :2] / p[..., 2:3]


def rotation_homography(intr: CameraIntrinsics, r: np.ndarray) -> Homography:
    """Pixel map from a camera to the same camera rotated by ``r`` (its own frame).

    A direction ``x`` in the original camera has coordinates ``r^T x`` in the
    rotated one, so ``H = K r^T K^-1``.
    """
    K = intr.K
    return Homography(K @ np.asarray(r, dtype=float).T @ np.linalg.inv(K))


def warp(image: np.ndarray, h: Homography, fill) -> np.ndarray:
    """Resample ``image`` so that ``out(H x) = image(x)``, bilinear, out-of-bounds = fill."""
    img = np.asarray(image, dtype=float)
    hh, ww = img.shape[:2]
    v, u = np.mgrid[0:hh, 0:ww]
    src = h.inv().apply(np.stack([u, v], axis=-1).reshape(-1, 2).astype(float))
    x, y = src[:, 0], src[:, 1]
    # tolerance keeps exact lattice hits on the last row/column in bounds
    tol = 1e-9
    valid = (x >= -tol) & (x <= ww - 1 + tol) & (y >= -tol) & (y <= hh - 1 + tol)
    x = np.clip(x, 0, ww - 1)
    y = np.clip(y, 0, hh - 1)
    x0 = np.minimum(np.floor(x).astype(int), ww - 2)
    y0 = np.minimum(np.floor(y).astype(int), hh - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    out = (
        img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy + img[y0 + 1, x0 + 1] * fx * fy
    )
    out[~valid] = np.asarray(fill, dtype=float)
    return out.reshape(img.shape)


def valid_mask(shape, h: Homography) -> np.ndarray:
    """Pixels of the warped image whose source lies inside the original."""
    hh, ww = shape[:2]
    v, u = np.mgrid[0:hh, 0:ww]
    src = h.inv().apply(np.stack([u, v], axis=-1).reshape(-1, 2).astype(float))
    ok = (src[:, 0] >= 0) & (src[:, 0] <= ww - 1) & (src[:, 1] >= 0) & (src[:, 1] <= hh - 1)
    return ok.reshape(hh, ww)


def border_mean(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    edge = np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])
    return edge.mean(axis=0)


def ha_perturbation(noise: NoiseParams, rng: np.random.Generator) -> Transform:
    """Rotation-only perturbation; the translation draw is forced to zero."""
    return sample_perturbation(NoiseParams(noise.alpha, 0.0), rng)


def ha_augment_demo(demo: Demonstration, cfg, demo_id: int = 0) -> list[AugmentedTransition]:
    """Homography-augmented transitions over the same window as the field path.

    The EE-frame rotation is conjugated into the camera frame before building
    the homography; the small camera translation this induces (the camera is
    offset from the rotation center) is ignored, which is the approximation
    the baseline makes.
    """
    from .pipeline import splice_gripper, window_steps

    r_ec = demo.e_T_c.rotation
    out = []
    for k in window_steps(demo, cfg.window):
        st = demo.steps[k]
        fill = border_mean(st.image)
        for i in range(cfg.n_aug):
            eps = ha_perturbation(cfg.noise, rng_for(cfg.seed, "eps", demo_id, k, i))
            r_cam = r_ec.T @ eps.rotation @ r_ec
            img = warp(st.image, rotation_homography(demo.intrinsics, r_cam), fill)
            img = splice_gripper(img, st.image, demo.mask)
            out.append(AugmentedTransition(
                img, perturb_pose(st.w_T_e, eps), corrective_action(eps, st.action),
                st.gripper, (demo_id, k, i),
            ))
    return out
