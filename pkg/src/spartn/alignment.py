"""Relate calibrated world-frame camera poses to scale-ambiguous SfM poses.

SfM poses live in an arbitrary frame ``V`` and their translations carry an
unknown scale ``beta`` (SfM units per meter).  Given matched pairs
``(W_T_C[k], V_H_C[k])`` we recover ``beta`` by regressing relative
translations through the origin, then a per-step ``V_T_W[k]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .se3 import Transform, compose, inverse, orthonormalize

# An SfM pose: rigid rotation, translation in SfM units.
ScaledTransform = Transform


class DegenerateMotion(ValueError):
    """All relative translations vanish; the scale is unobservable."""


class InvalidScale(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class PosePair:
    world: Transform
    sfm: ScaledTransform


@dataclass(frozen=True)
class AlignmentSolution:
    scale_beta: float
    v_T_w: list

    def __post_init__(self):
        if not self.scale_beta > 0:
            raise InvalidScale(f"scale must be positive, got {self.scale_beta}")

    def __len__(self):
        return len(self.v_T_w)


def relative_translations(pairs: Sequence[PosePair]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``t(C_T_W[j] W_T_C[k])`` and ``t(C_H_V[j] V_H_C[k])`` for k = j + 1."""
    world, sfm = [], []
    for a, b in zip(pairs[:-1], pairs[1:]):
        world.append(compose(inverse(a.world), b.world).translation)
        sfm.append(compose(inverse(a.sfm), b.sfm).translation)
    return np.asarray(world).reshape(-1, 3), np.asarray(sfm).reshape(-1, 3)


def estimate_scale(pairs: Sequence[PosePair]) -> float:
    if len(pairs) < 2:
        raise DegenerateMotion("need at least two pose pairs")
    world, sfm = relative_translations(pairs)
    if np.all(np.linalg.norm(world, axis=1) < 1e-9):
        raise DegenerateMotion("no relative camera translation between steps")
    beta = float(np.sum(world * sfm) / np.sum(world * world))
    if beta <= 0:
        raise DegenerateMotion(f"regressed scale {beta} is not positive")
    return beta


def rescale(h: ScaledTransform, scale_beta: float) -> Transform:
    if not scale_beta > 0:
        raise InvalidScale(f"scale must be positive, got {scale_beta}")
    return Transform(h.rotation, h.translation / scale_beta)


def apply_scale(t: Transform, scale_beta: float) -> ScaledTransform:
    if not scale_beta > 0:
        raise InvalidScale(f"scale must be positive, got {scale_beta}")
    return Transform(t.rotation, t.translation * scale_beta)


def estimate_frame(pairs: Sequence[PosePair], scale_beta: float) -> AlignmentSolution:
    frames = [
        compose(rescale(p.sfm, scale_beta), inverse(p.world)) for p in pairs
    ]
    return AlignmentSolution(float(scale_beta), frames)


def align(pairs: Sequence[PosePair]) -> AlignmentSolution:
    return estimate_frame(pairs, estimate_scale(pairs))


def world_to_sfm(w_T_c: Transform, sol: AlignmentSolution, k: int) -> ScaledTransform:
    """Pose handed to the renderer for a (perturbed) world camera at step k."""
    if not 0 <= k < len(sol.v_T_w):
        raise IndexOutOfRange(f"step {k} outside solution of length {len(sol.v_T_w)}")
    return apply_scale(compose(sol.v_T_w[k], w_T_c), sol.scale_beta)


def mean_frame(sol: AlignmentSolution) -> Transform:
    """Chordal rotation average and mean translation of the per-step frames.

    Diagnostics only; rendering uses each step's own frame.
    """
    rs = np.stack([t.rotation for t in sol.v_T_w])
    ts = np.stack([t.translation for t in sol.v_T_w])
    return Transform(orthonormalize(rs.mean(axis=0)), ts.mean(axis=0))


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_pose_pairs(path, pairs: Sequence[PosePair]) -> None:
    lines = [
        f"{k} {_fmt(p.world.row12())} {_fmt(p.sfm.row12())}"
        for k, p in enumerate(pairs)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_pairs(path) -> list[PosePair]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 25:
            raise ValueError(f"expected 25 fields per pose-pair record, got {len(vals)}")
        nums = [float(v) for v in vals[1:]]
        pairs.append(
            PosePair(Transform.from_row12(nums[:12]), Transform.from_row12(nums[12:]))
        )
    return pairs


def write_solution(path, sol: AlignmentSolution) -> None:
    lines = [f"scale_beta {sol.scale_beta!r}"]
    lines += [f"{k} {_fmt(t.row12())}" for k, t in enumerate(sol.v_T_w)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_solution(path) -> AlignmentSolution:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    key, value = lines[0].split()
    if key != "scale_beta":
        raise ValueError("solution file must start with 'scale_beta'")
    frames = [Transform.from_row12([float(v) for v in l.split()[1:]]) for l in lines[1:]]
    return AlignmentSolution(float(value), frames)
