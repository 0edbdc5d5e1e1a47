"""On-disk dataset format: manifest + PGM images + raw depth + matches.

Per split directory:

    manifest.json          format version, seeds, config echo, per-frame
                           records (paths, 4x4 row-major pose, condition id,
                           crc32 checksums), condition parameters, candidates
    frames/frame_#####.pgm 8-bit binary PGM (single channel)
    frames/frame_#####.depth  header (width u32 LE, height u32 LE) then
                           float64 LE payload
    correspondences.txt    one line per pair:
                           frame_a frame_b u_a v_a u_b v_b label

Round-trips are lossless: images are quantized once at write time, depth
keeps all 64 bits, text floats use shortest-repr formatting.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ChecksumFault, DataFault, FormatVersionFault, TruncatedFileFault
from ..geometry import CameraIntrinsics, SE3Pose
from ..losses import CorrespondenceBatch
from .scene import ConditionTransform, Frame, RelocCandidate, SyntheticScene

MANIFEST_VERSION = 1


def write_pgm(path, image: np.ndarray) -> bytes:
    """Writes a [0, 1] float image as binary 8-bit PGM; returns the bytes."""
    img8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if img8.ndim == 3:
        img8 = img8[:, :, 0]
    header = f"P5\n{img8.shape[1]} {img8.shape[0]}\n255\n".encode()
    blob = header + img8.tobytes()
    Path(path).write_bytes(blob)
    return blob


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise FormatVersionFault(f"{path}: not a binary PGM file")
    parts = blob.split(b"\n", 3)
    if len(parts) < 4:
        raise TruncatedFileFault(f"{path}: incomplete PGM header")
    width, height = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise FormatVersionFault(f"{path}: unsupported PGM maxval")
    payload = parts[3]
    if len(payload) < width * height:
        raise TruncatedFileFault(f"{path}: PGM payload too short")
    img = np.frombuffer(payload[: width * height], dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / 255.0


def write_depth(path, depth: np.ndarray) -> bytes:
    depth = np.asarray(depth, dtype=np.float64)
    blob = struct.pack("<II", depth.shape[1], depth.shape[0]) + depth.astype("<f8").tobytes()
    Path(path).write_bytes(blob)
    return blob


def read_depth(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise TruncatedFileFault(f"{path}: missing depth header")
    width, height = struct.unpack("<II", blob[:8])
    expected = 8 + 8 * width * height
    if len(blob) < expected:
        raise TruncatedFileFault(f"{path}: depth payload ends {expected - len(blob)} bytes early")
    return np.frombuffer(blob[8:expected], dtype="<f8").reshape(height, width).copy()


def write_correspondences(path, batches) -> None:
    lines = []
    for batch in batches:
        for i in range(batch.n_pos):
            lines.append(
                f"{batch.frame_a} {batch.frame_b} "
                f"{float(batch.pos_a[i, 0])!r} {float(batch.pos_a[i, 1])!r} "
                f"{float(batch.pos_b[i, 0])!r} {float(batch.pos_b[i, 1])!r} pos"
            )
        for i in range(batch.n_neg):
            lines.append(
                f"{batch.frame_a} {batch.frame_b} "
                f"{float(batch.neg_a[i, 0])!r} {float(batch.neg_a[i, 1])!r} "
                f"{float(batch.neg_b[i, 0])!r} {float(batch.neg_b[i, 1])!r} neg"
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_correspondences(path) -> list:
    """Groups lines back into per-(frame_a, frame_b) batches, input order."""
    grouped: dict = {}
    order: list = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7 or parts[6] not in ("pos", "neg"):
            raise DataFault(f"{path}:{lineno}: malformed correspondence line")
        key = (int(parts[0]), int(parts[1]))
        if key not in grouped:
            grouped[key] = {"pos": [], "neg": []}
            order.append(key)
        grouped[key][parts[6]].append([float(v) for v in parts[2:6]])
    batches = []
    for key in order:
        pos = np.asarray(grouped[key]["pos"], dtype=np.float64).reshape(-1, 4)
        neg = np.asarray(grouped[key]["neg"], dtype=np.float64).reshape(-1, 4)
        batches.append(
            CorrespondenceBatch(
                pos[:, 0:2], pos[:, 2:4], neg[:, 0:2], neg[:, 2:4], key[0], key[1]
            )
        )
    return batches


def _pose_to_list(pose: SE3Pose) -> list:
    return [float(v) for v in pose.matrix().reshape(-1)]


def _pose_from_list(values) -> SE3Pose:
    return SE3Pose.from_matrix(np.asarray(values, dtype=np.float64).reshape(4, 4))


def _condition_to_dict(cond: ConditionTransform) -> dict:
    return {
        "gamma": cond.gamma,
        "brightness": cond.brightness,
        "contrast": cond.contrast,
        "noise_sigma": cond.noise_sigma,
        "blur_radius": cond.blur_radius,
        "channel_matrix": [list(row) for row in cond.channel_matrix],
    }


def _condition_from_dict(d: dict) -> ConditionTransform:
    return ConditionTransform(
        gamma=d["gamma"],
        brightness=d["brightness"],
        contrast=d["contrast"],
        noise_sigma=d["noise_sigma"],
        blur_radius=d["blur_radius"],
        channel_matrix=tuple(tuple(row) for row in d["channel_matrix"]),
    )


@dataclass
class DatasetSplit:
    """A fully loaded split: frames by id, candidates, matches, metadata."""

    root: Path
    manifest: dict
    intrinsics: CameraIntrinsics
    frames: dict
    candidates: list
    correspondences: list


def write_split(
    directory,
    scene: SyntheticScene,
    correspondences=None,
    config_echo: dict | None = None,
    seed: int | None = None,
) -> None:
    """Serializes one scene (plus optional training matches) as a split."""
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    intr = scene.intrinsics
    frame_records = []
    for frame in scene.frames:
        image_rel = f"frames/frame_{frame.frame_id:05d}.pgm"
        depth_rel = f"frames/frame_{frame.frame_id:05d}.depth"
        image_blob = write_pgm(root / image_rel, frame.image)
        depth_blob = write_depth(root / depth_rel, frame.depth)
        frame_records.append(
            {
                "id": frame.frame_id,
                "image": image_rel,
                "depth": depth_rel,
                "pose": _pose_to_list(frame.pose),
                "condition_id": frame.condition_id,
                "sequence": frame.sequence,
                "index": frame.index,
                "crc32_image": zlib.crc32(image_blob),
                "crc32_depth": zlib.crc32(depth_blob),
            }
        )
    conditions = [_condition_to_dict(c) for c in (scene.config.conditions)]
    manifest = {
        "format_version": MANIFEST_VERSION,
        "writer_version": __version__,
        "seed": scene.seed if seed is None else seed,
        "config_echo": config_echo or {},
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "conditions": conditions,
        "frames": frame_records,
        "candidates": [
            {
                "candidate_frame": c.candidate_frame,
                "reference_frame": c.reference_frame,
                "relative_pose": _pose_to_list(c.relative_pose),
            }
            for c in scene.candidates
        ],
        "correspondence_file": "correspondences.txt" if correspondences is not None else None,
    }
    if correspondences is not None:
        write_correspondences(root / "correspondences.txt", correspondences)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


@dataclass
class LoadedFrame:
    frame_id: int
    image: np.ndarray
    depth: np.ndarray
    pose: SE3Pose
    condition_id: int
    sequence: int
    index: int


def read_split(directory) -> DatasetSplit:
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataFault(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFault(f"{manifest_path}: invalid JSON ({exc})") from exc
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise FormatVersionFault(f"{manifest_path}: format version {version} unsupported")
    intr_d = manifest["intrinsics"]
    intrinsics = CameraIntrinsics(
        intr_d["fx"], intr_d["fy"], intr_d["cx"], intr_d["cy"], intr_d["width"], intr_d["height"]
    )
    frames = {}
    for record in manifest["frames"]:
        image_path = root / record["image"]
        depth_path = root / record["depth"]
        if not image_path.exists() or not depth_path.exists():
            raise DataFault(f"{root}: frame {record['id']} files missing")
        image_blob = image_path.read_bytes()
        depth_blob = depth_path.read_bytes()
        if zlib.crc32(image_blob) != record["crc32_image"]:
            raise ChecksumFault(f"{image_path}: checksum mismatch")
        if zlib.crc32(depth_blob) != record["crc32_depth"]:
            raise ChecksumFault(f"{depth_path}: checksum mismatch")
        frames[record["id"]] = LoadedFrame(
            frame_id=record["id"],
            image=read_pgm(image_path)[:, :, None],
            depth=read_depth(depth_path),
            pose=_pose_from_list(record["pose"]),
            condition_id=record["condition_id"],
            sequence=record["sequence"],
            index=record["index"],
        )
    candidates = [
        RelocCandidate(c["candidate_frame"], c["reference_frame"], _pose_from_list(c["relative_pose"]))
        for c in manifest["candidates"]
    ]
    correspondences = []
    if manifest.get("correspondence_file"):
        corr_path = root / manifest["correspondence_file"]
        if not corr_path.exists():
            raise DataFault(f"{corr_path}: listed correspondence file missing")
        correspondences = read_correspondences(corr_path)
    return DatasetSplit(root, manifest, intrinsics, frames, candidates, correspondences)
