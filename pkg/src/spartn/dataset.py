"""Demonstration and augmented-transition records plus their on-disk layout.

Layout of one demonstration directory ``demo_####``::

    meta.json     intrinsics, e_T_c (12 floats), scene seed, extras
    mask.png      gripper mask (255 = gripper pixel)
    frames.csv    k, pose[12], action[12], gripper, image
    images/       8-bit RGB PNG per step
    preroll.csv   optional extra views: j, pose[12], image

Augmented datasets hold one ``aug_####`` directory per source demonstration
with ``frames.csv`` rows ``k, i, pose[12], action[12], gripper, image`` and a
top-level ``manifest.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .field import CameraIntrinsics
from .se3 import Transform

OPEN, CLOSE = 0, 1


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap a [0, 1] float image to 8-bit levels (what gets stored on disk)."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def save_image(path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, bool) * 255).astype(np.uint8)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


@dataclass
class DemoStep:
    image: np.ndarray
    w_T_e: Transform
    action: Transform
    gripper: int


@dataclass
class Demonstration:
    steps: list
    intrinsics: CameraIntrinsics
    e_T_c: Transform
    mask: np.ndarray
    scene_seed: int = 0
    preroll: list = field(default_factory=list)  # (image, w_T_e) pairs
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)

    def validate(self) -> None:
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for s in self.steps:
            if s.image.shape != shape:
                raise ValueError("image does not match intrinsics")
        g = [s.gripper for s in self.steps]
        if any(a > b for a, b in zip(g[:-1], g[1:])):
            raise ValueError("gripper sequence must be monotone open -> close")


@dataclass
class AugmentedTransition:
    image: np.ndarray
    w_T_e_tilde: Transform
    action_tilde: Transform
    gripper: int
    source: tuple  # (demo id, step k, sample i)


def _row(values) -> list:
    return [repr(float(v)) for v in values]


def write_demo(root, demo: Demonstration) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    meta = {
        "intrinsics": demo.intrinsics.as_dict(),
        "e_T_c": [float(v) for v in demo.e_T_c.row12()],
        "scene_seed": int(demo.scene_seed),
        "n_steps": len(demo.steps),
        **demo.meta,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    save_mask(root / "mask.png", demo.mask)
    with open(root / "frames.csv", "w", newline="") as f:
        w = csv.writer(f)
        for k, s in enumerate(demo.steps):
            name = f"images/{k:04d}.png"
            save_image(root / name, s.image)
            w.writerow([k, *_row(s.w_T_e.row12()), *_row(s.action.row12()), s.gripper, name])
    if demo.preroll:
        with open(root / "preroll.csv", "w", newline="") as f:
            w = csv.writer(f)
            for j, (img, pose) in enumerate(demo.preroll):
                name = f"images/preroll_{j:02d}.png"
                save_image(root / name, img)
                w.writerow([j, *_row(pose.row12()), name])
    return root


def read_demo(root) -> Demonstration:
    root = Path(root)
    meta = json.loads((root / "meta.json").read_text())
    intr = CameraIntrinsics(**meta.pop("intrinsics"))
    e_T_c = Transform.from_row12(meta.pop("e_T_c"))
    seed = meta.pop("scene_seed")
    meta.pop("n_steps", None)
    steps = []
    with open(root / "frames.csv", newline="") as f:
        for row in csv.reader(f):
            nums = [float(v) for v in row[1:25]]
            steps.append(DemoStep(
                load_image(root / row[26]), Transform.from_row12(nums[:12]),
                Transform.from_row12(nums[12:]), int(row[25]),
            ))
    preroll = []
    if (root / "preroll.csv").exists():
        with open(root / "preroll.csv", newline="") as f:
            for row in csv.reader(f):
                pose = Transform.from_row12([float(v) for v in row[1:13]])
                preroll.append((load_image(root / row[13]), pose))
    return Demonstration(steps, intr, e_T_c, load_mask(root / "mask.png"), seed, preroll, meta)


def demo_dirs(root) -> list[Path]:
    return sorted(p for p in Path(root).glob("demo_*") if p.is_dir())


def write_transitions(root, rows: Sequence[AugmentedTransition]) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "frames.csv", "w", newline="") as f:
        w = csv.writer(f)
        for tr in rows:
            _, k, i = tr.source
            name = f"images/{k:04d}_{i:04d}.png"
            save_image(root / name, tr.image)
            w.writerow([k, i, *_row(tr.w_T_e_tilde.row12()),
                        *_row(tr.action_tilde.row12()), tr.gripper, name])
    return root


def read_transitions(root, demo_id=None, load_images: bool = True) -> list[AugmentedTransition]:
    root = Path(root)
    out = []
    with open(root / "frames.csv", newline="") as f:
        for row in csv.reader(f):
            nums = [float(v) for v in row[2:26]]
            img = load_image(root / row[27]) if load_images else None
            out.append(AugmentedTransition(
                img, Transform.from_row12(nums[:12]), Transform.from_row12(nums[12:]),
                int(row[26]), (demo_id, int(row[0]), int(row[1])),
            ))
    return out


def hash_tree(root, exclude: Iterable[str] = ()) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``."""
    root = Path(root)
    skip = set(exclude)
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            rel = p.relative_to(root).as_posix()
            if rel in skip or name in skip:
                continue
            h.update(rel.encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()
