"""Synthetic scenes with exact ground-truth depth, poses, and matches.

The world is a procedurally textured heightfield z = Z0 + h(x, y) seen by
pinhole cameras looking roughly down +z. Height slopes are kept well below
the ray-steepness bound, so every ray crosses the surface exactly once and
the ray/surface intersection solves by fixed-point iteration to full
float64 precision. That keeps depth, occlusion reasoning, and ground-truth
correspondences closed-form while still exercising parallax.

Photometric "condition" transforms stand in for weather and lighting
variation; they never touch geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DataFault
from ..geometry import CameraIntrinsics, SE3Pose, project_points, se3_exp
from ..losses import CorrespondenceBatch, sample_negatives

_RAY_ITERATIONS = 36

# Coordinate margin (px) for exported level-0 correspondences: bilinear
# sampling, the derivative stencil, and the training jitter must all fit.
CORRESPONDENCE_MARGIN = 6.0


# splitmix64-style mixing constants for the lattice hash.
_UA = np.uint64(0x9E3779B97F4A7C15)
_UB = np.uint64(0xC2B2AE3D27D4EB4F)
_UC = np.uint64(0x165667B19E3779F9)
_UD = np.uint64(0xBF58476D1CE4E5B9)
_UE = np.uint64(0x94D049BB133111EB)


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice values in [0, 1) on an unbounded integer grid."""
    seed_term = np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    h = (
        ix.astype(np.int64).astype(np.uint64) * _UA
        ^ iy.astype(np.int64).astype(np.uint64) * _UB
        ^ seed_term
    )
    h ^= h >> np.uint64(30)
    h *= _UD
    h ^= h >> np.uint64(27)
    h *= _UE
    h ^= h >> np.uint64(31)
    return h.astype(np.float64) / float(2**64)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """C2-smooth value noise in [0, 1) over the whole plane."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    tx = _fade(x - x0)
    ty = _fade(y - y0)
    v00 = _hash01(x0, y0, seed)
    v01 = _hash01(x0 + 1, y0, seed)
    v10 = _hash01(x0, y0 + 1, seed)
    v11 = _hash01(x0 + 1, y0 + 1, seed)
    top = v00 + tx * (v01 - v00)
    bot = v10 + tx * (v11 - v10)
    return top + ty * (bot - top)


def octave_noise(
    x: np.ndarray,
    y: np.ndarray,
    seed: int,
    octaves: int,
    base_freq: float,
    persistence: float,
) -> np.ndarray:
    """Multi-octave value noise, normalized to [0, 1)."""
    total = np.zeros_like(np.asarray(x, dtype=np.float64))
    amp = 1.0
    freq = base_freq
    norm = 0.0
    for o in range(octaves):
        total = total + amp * value_noise(x * freq, y * freq, seed * 1031 + o)
        norm += amp
        amp *= persistence
        freq *= 2.0
    return total / norm


@dataclass(frozen=True)
class ConditionTransform:
    """Photometric perturbation standing in for a weather/lighting change.

    Applied as contrast * gain * img^gamma + brightness, then blur, then
    additive Gaussian noise, clamped to [0, 1]. channel_matrix is the
    per-channel color map; grayscale scenes use the 1x1 case.
    """

    gamma: float = 1.0
    brightness: float = 0.0
    contrast: float = 1.0
    noise_sigma: float = 0.0
    blur_radius: int = 0
    channel_matrix: tuple = ((1.0,),)

    def apply(self, image: np.ndarray, rng) -> np.ndarray:
        out = np.power(np.clip(image, 0.0, 1.0), self.gamma)
        matrix = np.asarray(self.channel_matrix, dtype=np.float64)
        if image.ndim == 3 and matrix.shape == (image.shape[2], image.shape[2]):
            out = out @ matrix.T
        else:
            out = out * float(matrix.reshape(-1)[0])
        out = self.contrast * out + self.brightness
        if self.blur_radius > 0:
            out = _box_blur(out, self.blur_radius)
        if self.noise_sigma > 0.0:
            out = out + rng.normal(0.0, self.noise_sigma, out.shape)
        return np.clip(out, 0.0, 1.0)


def _box_blur(image: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur with reflect padding."""
    k = 2 * radius + 1
    squeeze = image.ndim == 2
    img = image[:, :, None] if squeeze else image
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    img = sum(padded[i : i + img.shape[0]] for i in range(k)) / k
    padded = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    img = sum(padded[:, i : i + img.shape[1]] for i in range(k)) / k
    return img[:, :, 0] if squeeze else img


IDENTITY_CONDITION = ConditionTransform()


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    fx: float = 45.0
    fy: float = 45.0
    cx: float = 31.5
    cy: float = 31.5
    # Height slopes must stay below the ray-steepness bound so the
    # ray/surface intersection is unique: |grad h| <= 2A * 1.875 * 0.5/1.5
    # = 0.625 A per axis at these octaves, times |d_xy/d_z| <= 1.02 at the
    # widest corner, keeps the fixed point a contraction for A <= 0.5.
    depth_base: float = 4.0
    height_amplitude: float = 0.5
    height_octaves: int = 2
    height_base_freq: float = 0.25
    texture_octaves: int = 3
    texture_base_freq: float = 0.4
    texture_persistence: float = 0.55
    n_frames: int = 8
    step_translation: float = 0.12
    step_rotation_deg: float = 1.5
    conditions: tuple = ()
    n_candidates: int = 0
    candidate_condition: int = 0
    baseline_min: float = 0.08
    baseline_max: float = 0.5
    candidate_rotation_deg: float = 2.0
    overlap_threshold: float = 0.6

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("trajectory needs at least one frame")
        if self.width < 8 or self.height < 8:
            raise ValueError("image too small")
        if self.baseline_min < 0 or self.baseline_max < self.baseline_min:
            raise ValueError("bad candidate baseline range")
        if self.candidate_condition < 0 or self.candidate_condition > len(self.conditions):
            raise ValueError("candidate_condition indexes the condition list (0 = canonical)")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass
class Frame:
    frame_id: int
    image: np.ndarray
    depth: np.ndarray
    pose: SE3Pose
    condition_id: int
    sequence: int
    index: int


@dataclass
class RelocCandidate:
    candidate_frame: int
    reference_frame: int
    relative_pose: SE3Pose


@dataclass
class SyntheticScene:
    config: SceneConfig
    seed: int
    frames: list
    candidates: list
    trajectory: list

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.config.intrinsics()

    def surface_height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cfg = self.config
        noise = octave_noise(
            x, y, self.seed * 7 + 1, cfg.height_octaves, cfg.height_base_freq, 0.5
        )
        return cfg.depth_base + cfg.height_amplitude * (2.0 * noise - 1.0)

    def texture(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cfg = self.config
        return octave_noise(
            x, y, self.seed * 13 + 2, cfg.texture_octaves, cfg.texture_base_freq,
            cfg.texture_persistence,
        )

    def ray_depth(self, pose: SE3Pose, pixels: np.ndarray) -> np.ndarray:
        """Exact camera z-depth along the rays of (possibly subpixel) pixels.

        ``pose`` is camera-to-world. Fixed-point on the ray parameter; the
        height slopes guarantee contraction, so this converges to float64
        precision and the intersection is unique (no self-occlusion).
        """
        intr = self.intrinsics
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        d_cam = np.stack(
            [
                (pixels[:, 0] - intr.cx) / intr.fx,
                (pixels[:, 1] - intr.cy) / intr.fy,
                np.ones(pixels.shape[0]),
            ],
            axis=1,
        )
        d_world = d_cam @ pose.rotation.T
        origin = pose.translation
        t = np.full(pixels.shape[0], self.config.depth_base - origin[2])
        for _ in range(_RAY_ITERATIONS):
            x = origin[0] + t * d_world[:, 0]
            y = origin[1] + t * d_world[:, 1]
            t = (self.surface_height(x, y) - origin[2]) / d_world[:, 2]
        return t

    def render(self, pose: SE3Pose):
        """Renders (clean image in [0, 1], z-depth map) at a pose."""
        cfg = self.config
        us, vs = np.meshgrid(np.arange(cfg.width), np.arange(cfg.height))
        pixels = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
        t = self.ray_depth(pose, pixels)
        intr = self.intrinsics
        d_cam = np.stack(
            [
                (pixels[:, 0] - intr.cx) / intr.fx,
                (pixels[:, 1] - intr.cy) / intr.fy,
                np.ones(pixels.shape[0]),
            ],
            axis=1,
        )
        points = pose.translation + (d_cam * t[:, None]) @ pose.rotation.T
        image = self.texture(points[:, 0], points[:, 1]).reshape(cfg.height, cfg.width)
        depth = t.reshape(cfg.height, cfg.width)
        if not np.all(depth > 0):
            raise ValueError("camera pose renders non-positive depth (behind surface?)")
        return image, depth


def _random_walk(rng, config: SceneConfig):
    poses = [SE3Pose.identity()]
    rot = math.radians(config.step_rotation_deg)
    for _ in range(config.n_frames - 1):
        step = np.zeros(6)
        step[0:2] = rng.uniform(-config.step_translation, config.step_translation, 2)
        step[2] = rng.uniform(-config.step_translation / 3.0, config.step_translation / 3.0)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        step[3:] = axis * rng.uniform(0.0, rot)
        poses.append(poses[-1].compose(se3_exp(step)))
    return poses


def _overlap_fraction(scene: SyntheticScene, ref_pose: SE3Pose, rel: SE3Pose) -> float:
    """Fraction of a coarse reference grid that stays in view under rel."""
    cfg = scene.config
    us = np.arange(4, cfg.width - 4, 4, dtype=np.float64)
    vs = np.arange(4, cfg.height - 4, 4, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    depth = scene.ray_depth(ref_pose, pixels)
    intr = scene.intrinsics
    _, _, valid = project_points(pixels, 1.0 / depth, rel, intr, intr, border=2.0)
    return float(valid.mean())


def _sample_candidate_offset(rng, scene: SyntheticScene, ref_pose: SE3Pose) -> SE3Pose:
    """Relative pose (candidate <- reference) with enforced image overlap."""
    cfg = scene.config
    rot = math.radians(cfg.candidate_rotation_deg)
    for scale in (1.0, 0.7, 0.5, 0.35, 0.2):
        for _ in range(40):
            direction = rng.normal(size=3)
            direction[2] *= 0.3
            direction /= np.linalg.norm(direction)
            magnitude = rng.uniform(cfg.baseline_min, cfg.baseline_max) * scale
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            twist = np.concatenate([direction * magnitude, axis * rng.uniform(0.0, rot)])
            rel = se3_exp(twist)
            if _overlap_fraction(scene, ref_pose, rel) >= cfg.overlap_threshold:
                return rel
    raise DataFault("could not sample an overlapping relocalization candidate")


def generate_scene(seed: int, config: SceneConfig) -> SyntheticScene:
    """Deterministic scene: trajectory sequences per condition + candidates.

    Sequence 0 is the canonical (unperturbed) odometry stream; each entry of
    config.conditions re-renders the same trajectory as its own sequence.
    Candidates are extra frames at offset poses, rendered under the
    condition selected by config.candidate_condition, each tracked against
    its reference frame from the canonical stream.
    """
    rng = np.random.default_rng([seed, 0xBE7C])
    scene = SyntheticScene(config, seed, [], [], [])
    scene.trajectory = _random_walk(rng, config)
    conditions = (IDENTITY_CONDITION,) + tuple(config.conditions)
    frame_id = 0
    for seq, condition in enumerate(conditions):
        for index, pose in enumerate(scene.trajectory):
            clean, depth = scene.render(pose)
            cond_rng = np.random.default_rng([seed, seq, index, 0x51DE])
            image = condition.apply(clean, cond_rng)
            scene.frames.append(Frame(frame_id, image, depth, pose, seq, seq, index))
            frame_id += 1
    cand_condition = conditions[config.candidate_condition]
    for k in range(config.n_candidates):
        ref_index = k % config.n_frames
        ref_pose = scene.trajectory[ref_index]
        rel = _sample_candidate_offset(rng, scene, ref_pose)
        # rel maps reference-camera coords to candidate-camera coords.
        cand_pose = ref_pose.compose(rel.inverse())
        clean, depth = scene.render(cand_pose)
        cond_rng = np.random.default_rng([seed, 0xCA2D, k])
        image = cand_condition.apply(clean, cond_rng)
        scene.frames.append(
            Frame(frame_id, image, depth, cand_pose, config.candidate_condition, -1, -1)
        )
        scene.candidates.append(RelocCandidate(frame_id, ref_index, rel))
        frame_id += 1
    return scene


def _interp_depth(depth: np.ndarray, coords: np.ndarray) -> np.ndarray:
    from ..alignment import interp

    return interp(depth[:, :, None], coords)[:, 0]


def make_correspondences(
    scene_or_frames,
    frame_a: int,
    frame_b: int,
    n_pos: int,
    n_neg: int,
    seed: int,
    intrinsics: Optional[CameraIntrinsics] = None,
) -> CorrespondenceBatch:
    """Ground-truth matches between two overlapping frames.

    Positives start at integer pixels of frame a, carried through its depth
    map and the relative ground-truth pose; landing points are kept only if
    they respect the margins and agree with frame b's depth within 2%
    (occlusion / numeric guard). Negatives follow the training-loss rule:
    one far-away wrong location in b per positive.
    """
    frames = scene_or_frames.frames if isinstance(scene_or_frames, SyntheticScene) else scene_or_frames
    if intrinsics is None:
        intrinsics = scene_or_frames.intrinsics
    fa = next(f for f in frames if f.frame_id == frame_a)
    fb = next(f for f in frames if f.frame_id == frame_b)
    rel = fb.pose.inverse().compose(fa.pose)
    rng = np.random.default_rng([seed, frame_a, frame_b])
    height, width = fa.depth.shape
    m = CORRESPONDENCE_MARGIN
    pos_a = np.empty((0, 2))
    pos_b = np.empty((0, 2))
    attempts = 0
    while pos_a.shape[0] < n_pos and attempts < 12:
        attempts += 1
        draw = max(4 * n_pos, 64)
        ua = np.stack(
            [
                rng.integers(int(m), int(width - m), draw),
                rng.integers(int(m), int(height - m), draw),
            ],
            axis=1,
        ).astype(np.float64)
        depth_a = fa.depth[ua[:, 1].astype(int), ua[:, 0].astype(int)]
        projected, p_cam, valid = project_points(
            ua, 1.0 / depth_a, rel, intrinsics, intrinsics, border=m
        )
        if valid.any():
            ub = projected[valid]
            z_pred = p_cam[valid, 2]
            z_map = _interp_depth(fb.depth, ub)
            consistent = np.abs(z_map - z_pred) / z_pred <= 0.02
            pos_a = np.concatenate([pos_a, ua[valid][consistent]])
            pos_b = np.concatenate([pos_b, ub[consistent]])
    if pos_a.shape[0] < n_pos:
        raise DataFault(
            f"frames {frame_a}/{frame_b}: only {pos_a.shape[0]} of {n_pos} valid matches "
            f"(low overlap or occlusion)"
        )
    pos_a, pos_b = pos_a[:n_pos], pos_b[:n_pos]
    if n_neg > 0:
        reps = int(np.ceil(n_neg / n_pos))
        neg_a = np.tile(pos_a, (reps, 1))[:n_neg]
        anchors = np.tile(pos_b, (reps, 1))[:n_neg]
        neg_b = sample_negatives(rng, anchors, width, height, margin=m, min_dist=8.0)
    else:
        neg_a = np.empty((0, 2))
        neg_b = np.empty((0, 2))
    return CorrespondenceBatch(pos_a, pos_b, neg_a, neg_b, frame_a, frame_b)


def default_train_conditions() -> tuple:
    """Photometric variety for training sequences (frozen)."""
    return (
        ConditionTransform(gamma=1.4, brightness=0.08, contrast=0.9, noise_sigma=0.01),
        ConditionTransform(gamma=0.72, brightness=-0.08, contrast=1.1, noise_sigma=0.015),
        ConditionTransform(gamma=1.15, brightness=-0.04, contrast=0.8, noise_sigma=0.02),
    )


def default_eval_condition() -> ConditionTransform:
    """Held-out perturbation for val/test candidates (frozen, harder)."""
    return ConditionTransform(gamma=1.5, brightness=0.12, contrast=0.85, noise_sigma=0.02)
