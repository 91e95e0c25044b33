"""Image-only behavior-cloning policy: a small fully connected network over a
downsampled wrist image, trained with hand-written backpropagation."""
from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CLOSE, OPEN
from .se3 import Transform, transform_from_params, transform_to_params
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

INPUT_RES = 32
POSE_DIM = 6


class ResolutionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


def downsample(images: np.ndarray, res: int = INPUT_RES) -> np.ndarray:
    """Box-filter ``(..., H, W, 3)`` images down to ``res x res``."""
    images = np.asarray(images, dtype=float)
    h, w = images.shape[-3:-1]
    if h % res or w % res:
        raise ResolutionMismatch(f"{h}x{w} is not a multiple of {res}")
    fy, fx = h // res, w // res
    shp = images.shape[:-3] + (res, fy, res, fx, 3)
    return images.reshape(shp).mean(axis=(-4, -2))


@dataclass
class PolicyNet:
    """Layer sizes ``[in, e1, 128, h1, h2, 7]``; ReLU between layers.

    The first two affine maps form the encoder (image -> 128-vector), the last
    three the head.  ``params`` is one flat vector; ``layers()`` returns views.
    """
    sizes: tuple
    bounds: np.ndarray
    params: np.ndarray
    image_res: int = 64

    @classmethod
    def init(cls, bounds, seed: int = 0, hidden: tuple = (256, 128, 128, 64),
             image_res: int = 64) -> "PolicyNet":
        sizes = (INPUT_RES * INPUT_RES * 3, *hidden, POSE_DIM + 1)
        rng = rng_for(seed, "policy-init")
        chunks = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            chunks.append(rng.normal(0.0, math.sqrt(2.0 / a), (a, b)).ravel())
            chunks.append(np.zeros(b))
        params = np.concatenate(chunks)
        n_last = sizes[-2] * sizes[-1] + sizes[-1]
        params[-n_last:] *= 0.1  # near-identity initial actions
        return cls(tuple(sizes), np.asarray(bounds, dtype=float), params, image_res)

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        p = self.params if params is None else params
        out, off = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = p[off:off + a * b].reshape(a, b)
            off += a * b
            out.append((w, p[off:off + b]))
            off += b
        return out

    def features(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        if images.shape[-3:] != (self.image_res, self.image_res, 3):
            raise ResolutionMismatch(f"expected {self.image_res}x{self.image_res} RGB, got {images.shape}")
        x = downsample(images) - 0.5
        return x.reshape(len(x), -1)

    def raw(self, x: np.ndarray, params=None):
        """Pre-squash outputs and the per-layer activations needed by backprop."""
        acts = [x]
        layers = self.layers(params)
        for j, (w, b) in enumerate(layers):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if j < len(layers) - 1 else z)
        return acts[-1], acts

    def predict(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pose parameters ``bounds * tanh(raw)`` and gripper logits, batched."""
        out, _ = self.raw(self.features(images))
        return self.bounds * np.tanh(out[:, :POSE_DIM]), out[:, POSE_DIM]

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.sizes, self.bounds.copy(), self.params.copy(), self.image_res)


def forward(p: PolicyNet, image: np.ndarray):
    """Single observation -> (delta Transform, gripper command)."""
    from .sim import EnvAction
    pose, logit = p.predict(np.asarray(image)[None])
    return EnvAction(transform_from_params(pose[0]), CLOSE if logit[0] > 0 else OPEN)


@dataclass
class Batch:
    images: np.ndarray
    poses: np.ndarray  # (B, 12) observed ee poses, diagnostics only
    targets: np.ndarray  # (B, 7): six pose parameters and the gripper bit


GRIPPER_WEIGHT = 0.1


def loss_and_grad(p: PolicyNet, batch: Batch, params: np.ndarray | None = None,
                  features: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Pose MSE on bound-normalized parameters plus weighted gripper BCE."""
    if len(batch.targets) == 0:
        raise EmptyDataset("empty batch")
    x = p.features(batch.images) if features is None else features
    out, acts = p.raw(x, params)
    B = len(x)
    th = np.tanh(out[:, :POSE_DIM])
    tgt = batch.targets[:, :POSE_DIM] / p.bounds
    diff = th - tgt
    mse = float(np.mean(diff ** 2))
    logit = out[:, POSE_DIM]
    y = batch.targets[:, POSE_DIM]
    # numerically stable log(1 + exp(-|z|)) form
    bce_each = np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    bce = float(np.mean(bce_each))
    loss = mse + GRIPPER_WEIGHT * bce

    g = np.empty_like(out)
    g[:, :POSE_DIM] = 2.0 * diff * (1.0 - th ** 2) / (B * POSE_DIM)
    sig = 0.5 * (1.0 + np.tanh(0.5 * logit))
    g[:, POSE_DIM] = GRIPPER_WEIGHT * (sig - y) / B

    layers = p.layers(params)
    grads = []
    for j in range(len(layers) - 1, -1, -1):
        w, _ = layers[j]
        grads.append(((acts[j].T @ g).ravel(), g.sum(axis=0)))
        if j > 0:
            g = (g @ w.T) * (acts[j] > 0)
    flat = np.concatenate([np.concatenate(pair) for pair in reversed(grads)])
    return loss, flat


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch: int = 64
    lr: float = 5e-4
    mix_ratio: float = 0.5
    seed: int = 0
    rms_decay: float = 0.95
    eps: float = 1e-8
    image_aug: bool = False  # random shift + brightness jitter
    schedule: str = "cosine"  # or "constant"

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or not self.lr > 0 or not 0 <= self.mix_ratio <= 1:
            raise ValueError("invalid train config")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, it: int) -> float:
        if self.schedule == "constant":
            return self.lr
        # the gripper term never reaches zero, so normalized steps need to shrink
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * it / max(self.steps, 1)))


@dataclass
class Dataset:
    """Flat arrays of transitions; targets hold (roll, pitch, yaw, x, y, z, gripper)."""
    images: np.ndarray
    poses: np.ndarray
    targets: np.ndarray
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.targets)

    @classmethod
    def from_records(cls, images, poses: Sequence[Transform], actions: Sequence[Transform],
                     grippers, bounds) -> "Dataset":
        bounds = np.asarray(bounds, dtype=float)
        if len(actions) == 0:
            return cls(np.zeros((0, 1, 1, 3)), np.zeros((0, 12)), np.zeros((0, POSE_DIM + 1)))
        params = np.stack([transform_to_params(a) for a in actions])
        # tolerance: corrective actions at the bound differ from it by rounding only
        out = np.abs(params) > bounds * (1 + 1e-9)
        n_clamped = int(np.any(out, axis=1).sum())
        if n_clamped:
            log.warning("%d of %d targets outside action bounds were clamped", n_clamped, len(params))
        params = np.clip(params, -bounds, bounds)
        targets = np.concatenate([params, np.asarray(grippers, float)[:, None]], axis=1)
        return cls(np.asarray(images, dtype=np.float32),
                   np.stack([t.row12() for t in poses]), targets, n_clamped)


def demo_dataset(demos, bounds) -> Dataset:
    imgs, poses, acts, grips = [], [], [], []
    for d in demos:
        for s in d.steps:
            imgs.append(s.image)
            poses.append(s.w_T_e)
            acts.append(s.action)
            grips.append(s.gripper)
    return Dataset.from_records(imgs, poses, acts, grips, bounds)


def transition_dataset(rows, bounds) -> Dataset:
    return Dataset.from_records(
        [r.image for r in rows], [r.w_T_e_tilde for r in rows],
        [r.action_tilde for r in rows], [r.gripper for r in rows], bounds,
    )


def _jitter(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    B, H, W, _ = images.shape
    out = np.empty_like(images)
    pad = np.pad(images, ((0, 0), (2, 2), (2, 2), (0, 0)), mode="edge")
    dy, dx = rng.integers(0, 5, (2, B))
    for b in range(B):
        out[b] = pad[b, dy[b]:dy[b] + H, dx[b]:dx[b] + W]
    return np.clip(out * rng.uniform(0.9, 1.1, (B, 1, 1, 1)), 0.0, 1.0)


def sample_sources(rng: np.random.Generator, batch: int, mix_ratio: float) -> np.ndarray:
    """Per-row Bernoulli draw: True means the row comes from the augmented set."""
    return rng.random(batch) < mix_ratio


@dataclass
class TrainResult:
    policy: PolicyNet
    losses: list = field(default_factory=list)
    aug_fraction: float = 0.0


def train(original: Dataset, augmented: Dataset | None, cfg: TrainConfig,
          bounds, image_res: int | None = None) -> TrainResult:
    if len(original) == 0:
        raise EmptyDataset("original dataset is empty")
    mix = cfg.mix_ratio if augmented is not None and len(augmented) > 0 else 0.0
    res = image_res or original.images.shape[1]
    p = PolicyNet.init(bounds, cfg.seed, image_res=res)
    rng = rng_for(cfg.seed, "policy-train")
    # downsample once; jitter needs full-resolution images
    feats_o = None if cfg.image_aug else p.features(original.images)
    feats_a = None if cfg.image_aug or mix == 0 else p.features(augmented.images)
    v = np.zeros_like(p.params)
    losses = []
    n_aug = 0
    for it in range(cfg.steps):
        from_aug = sample_sources(rng, cfg.batch, mix)
        ia = rng.integers(0, len(augmented), int(from_aug.sum())) if mix > 0 else np.zeros(0, int)
        io = rng.integers(0, len(original), int((~from_aug).sum()))
        n_aug += len(ia)
        targets = np.concatenate([original.targets[io]] + ([augmented.targets[ia]] if len(ia) else []))
        if cfg.image_aug:
            imgs = np.concatenate([original.images[io]] + ([augmented.images[ia]] if len(ia) else []))
            feats = p.features(_jitter(imgs.astype(float), rng))
        else:
            feats = np.concatenate([feats_o[io]] + ([feats_a[ia]] if len(ia) else []))
        batch = Batch(None, None, targets)
        loss, g = loss_and_grad(p, batch, features=feats)
        losses.append(loss)
        v = g * g if it == 0 else cfg.rms_decay * v + (1 - cfg.rms_decay) * g * g
        p.params -= cfg.lr_at(it) * g / (np.sqrt(v) + cfg.eps)
    frac = n_aug / max(cfg.steps * cfg.batch, 1)
    return TrainResult(p, losses, frac)


# Checkpoint: b"SPPL" | u32 version | u32 n_layers+1 | u32 sizes[] | u32 image_res
#             | f32 bounds[6] | f32 params[]
_MAGIC = b"SPPL"


def save_policy(path, p: PolicyNet) -> None:
    head = struct.pack("<4sII", _MAGIC, 1, len(p.sizes))
    head += struct.pack(f"<{len(p.sizes)}II", *p.sizes, p.image_res)
    head += struct.pack("<6f", *p.bounds)
    with open(path, "wb") as f:
        f.write(head)
        f.write(p.params.astype("<f4").tobytes())


def load_policy(path) -> PolicyNet:
    data = Path(path).read_bytes()
    magic, _, n = struct.unpack_from("<4sII", data)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a policy checkpoint")
    off = 12
    vals = struct.unpack_from(f"<{n}II", data, off)
    off += 4 * (n + 1)
    bounds = np.array(struct.unpack_from("<6f", data, off))
    off += 24
    params = np.frombuffer(data, "<f4", offset=off).astype(np.float64)
    return PolicyNet(tuple(vals[:n]), bounds, params, vals[n])


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class EvalResult:
    success_rate: float
    interval: tuple
    episodes: list  # dicts: seed, episode, success, steps, collision

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, ["seed", "episode", "success", "steps", "collision"])
            w.writeheader()
            w.writerows(self.episodes)


def rollout(act, env_cfg, scene_seed: int) -> dict:
    """Run one closed-loop episode; ``act`` maps an EnvState to an EnvAction."""
    from . import sim
    state = sim.reset(env_cfg, scene_seed)
    collided = False
    while not sim.done(state, env_cfg):
        state, _ = sim.step(state, act(state), env_cfg)
        collided |= state.collision
    return {"success": int(sim.success(state, env_cfg.lift_height)),
            "steps": state.step_count, "collision": int(collided)}


def evaluation_seed(seed: int, episode: int) -> int:
    return derive_seed(seed, "eval-scene", episode)


def evaluate(p, env_cfg, n_episodes: int, seed: int) -> EvalResult:
    """Closed-loop success rate over ``n_episodes`` scenes drawn from ``seed``.

    ``p`` is a PolicyNet or any callable ``EnvState -> EnvAction``.
    """
    from . import sim
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if isinstance(p, PolicyNet):
        act = lambda s: forward(p, sim.render_camera(s, env_cfg))  # noqa: E731
    else:
        act = p
    rows = []
    for e in range(n_episodes):
        r = rollout(act, env_cfg, evaluation_seed(seed, e))
        rows.append({"seed": seed, "episode": e, **r})
    k = sum(r["success"] for r in rows)
    return EvalResult(k / n_episodes, wilson_interval(k, n_episodes), rows)
