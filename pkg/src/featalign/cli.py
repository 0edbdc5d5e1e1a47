"""Command-line driver: generate, train, align, evaluate, gradcheck.

Exit codes: 0 ok, 1 usage error, 2 data fault, 3 numerical fault. Every
output directory receives a ``run_config.json`` echoing the full argument
set and package version, so any artifact can be reproduced byte-for-byte.
Relative output paths resolve against $FEATALIGN_OUTPUT_ROOT when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import intensity_extractor, method_config, network_extractor, track_candidate, Keyframe, select_keyframe_points
from .bench.dataset_io import read_split, write_split
from .bench.evaluate import evaluate_relocalization, run_relocalization, write_curve_csv, write_curves_svg
from .bench.scene import (
    ConditionTransform,
    SceneConfig,
    default_eval_condition,
    default_train_conditions,
    generate_scene,
    make_correspondences,
)
from .errors import DataFault, NumericalFault
from .gradcheck import run_gradcheck
from .losses import LossConfig
from .network import NetworkConfig, load_network, save_network
from .training import TrainConfig, history_csv, train_network


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get("FEATALIGN_OUTPUT_ROOT")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _echo_config(directory: Path, args: argparse.Namespace) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": __version__,
        "command": args.command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "command"},
    }
    (directory / "run_config.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="featalign", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write train/val/test benchmark splits")
    gen.add_argument("--out", required=True, help="dataset root directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--frames", type=int, default=8, help="trajectory length per split")
    gen.add_argument("--size", type=int, default=64, help="image side length")
    gen.add_argument("--candidates", type=int, default=40, help="test-split candidates")
    gen.add_argument("--val-candidates", type=int, default=16)
    gen.add_argument("--pairs", type=int, default=16, help="training correspondence pairs")
    gen.add_argument("--n-pos", type=int, default=128)
    gen.add_argument("--n-neg", type=int, default=128)
    gen.add_argument("--max-frame-gap", type=int, default=5,
                     help="max trajectory-index gap between paired frames")

    tr = sub.add_parser("train", help="train descriptor network on a dataset")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--out", required=True, help="weights file path (.gnnw)")
    tr.add_argument("--log", default=None, help="loss log CSV path (default: alongside weights)")
    tr.add_argument("--epochs", type=int, default=24)
    tr.add_argument("--lr", type=float, default=1e-4,
                    help="ADAM learning rate (desk-scale default 1e-4; 1e-6 suits "
                         "much larger runs and is accepted unchanged)")
    tr.add_argument("--gn-weight", type=float, default=0.1,
                    help="weight of the Gauss-Newton loss term (0 = contrastive only)")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--descriptor-dim", type=int, default=8)
    tr.add_argument("--levels", type=int, default=3)
    tr.add_argument("--base-width", type=int, default=16)
    tr.add_argument("--vicinity", type=float, default=4.0)
    tr.add_argument("--epsilon", type=float, default=1e-3)
    tr.add_argument("--starts-per-match", type=int, default=1)
    tr.add_argument("--val-candidates", type=int, default=12,
                    help="validation relocalizations per epoch (0 disables)")

    ev = sub.add_parser("evaluate", help="relocalization curves per method")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--split", default="test")
    ev.add_argument("--methods", default="intensity,features,contrastive",
                    help="comma list of: intensity, features, contrastive")
    ev.add_argument("--weights", default=None, help="trained weights (features method)")
    ev.add_argument("--contrastive-weights", default=None)
    ev.add_argument("--points", type=int, default=512)
    ev.add_argument("--candidates", type=int, default=0, help="limit candidates (0 = all)")

    al = sub.add_parser("align", help="track one candidate and print the result")
    al.add_argument("--dataset", required=True)
    al.add_argument("--split", default="test")
    al.add_argument("--candidate", type=int, default=0)
    al.add_argument("--method", default="intensity", choices=("intensity", "features"))
    al.add_argument("--weights", default=None)
    al.add_argument("--points", type=int, default=512)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    gc.add_argument("--seed", type=int, default=0)
    return parser


def cmd_generate(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    if args.size < 16 or args.size % 4:
        raise UsageError("--size must be >= 16 and divisible by 4")
    if args.pairs < 1 or args.n_pos < 1:
        raise UsageError("--pairs and --n-pos must be >= 1")
    root = _resolve_out(args.out)
    root.mkdir(parents=True, exist_ok=True)
    half = (args.size - 1) / 2.0
    base = dict(
        width=args.size, height=args.size, cx=half, cy=half,
        fx=45.0 * args.size / 64.0, fy=45.0 * args.size / 64.0,
        n_frames=args.frames,
    )
    val_condition = ConditionTransform(gamma=1.4, brightness=0.1, contrast=0.9, noise_sigma=0.015)
    split_configs = {
        "train": SceneConfig(**base, conditions=default_train_conditions()),
        "val": SceneConfig(**base, conditions=(val_condition,),
                           n_candidates=args.val_candidates, candidate_condition=1),
        "test": SceneConfig(**base, conditions=(default_eval_condition(),),
                            n_candidates=args.candidates, candidate_condition=1),
    }
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    for index, (name, cfg) in enumerate(split_configs.items()):
        split_seed = args.seed * 10 + index
        scene = generate_scene(split_seed, cfg)
        correspondences = None
        if name == "train":
            correspondences = _training_pairs(scene, args)
        write_split(root / name, scene, correspondences, config_echo=echo, seed=split_seed)
    _echo_config(root, args)
    return 0


def _training_pairs(scene, args):
    """Deterministic pair plan: nearby indices, conditions mixed freely."""
    cfg = scene.config
    n_seq = 1 + len(cfg.conditions)
    rng = np.random.default_rng([args.seed, 99])
    batches = []
    for _ in range(args.pairs):
        for _attempt in range(50):
            i = int(rng.integers(0, cfg.n_frames))
            gap = int(rng.integers(0, args.max_frame_gap + 1))
            j = min(i + gap, cfg.n_frames - 1)
            seq_a = int(rng.integers(0, n_seq))
            seq_b = int(rng.integers(0, n_seq))
            frame_a = seq_a * cfg.n_frames + i
            frame_b = seq_b * cfg.n_frames + j
            if frame_a == frame_b:
                continue
            try:
                batches.append(
                    make_correspondences(
                        scene, frame_a, frame_b, args.n_pos, args.n_neg,
                        seed=int(rng.integers(0, 2**31)),
                    )
                )
                break
            except DataFault:
                continue
        else:
            raise DataFault("could not build a valid training pair plan")
    return batches


def cmd_train(args) -> int:
    dataset = Path(args.dataset)
    train_split = read_split(dataset / "train")
    val_split = None
    if args.val_candidates > 0 and (dataset / "val" / "manifest.json").exists():
        val_split = read_split(dataset / "val")
    config = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        val_candidates=args.val_candidates,
        network=NetworkConfig(
            input_channels=1,
            descriptor_dim=args.descriptor_dim,
            pyramid_levels=args.levels,
            base_width=args.base_width,
            seed=args.seed,
        ),
        loss=LossConfig(
            gn_weight=args.gn_weight,
            vicinity_radius=args.vicinity,
            epsilon=args.epsilon,
            starts_per_match=args.starts_per_match,
        ),
    )
    weights, history = train_network(train_split, val_split, config)
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_network(out, weights)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    log_path.write_text(history_csv(history))
    _echo_config(out.parent, args)
    return 0


def _extractor_for(method: str, args, levels_default: int = 3):
    if method == "intensity":
        return intensity_extractor(levels_default), levels_default
    path = args.weights if method == "features" else args.contrastive_weights
    if not path or not Path(path).exists():
        raise DataFault(f"method '{method}' needs an existing weights file")
    weights = load_network(path)
    return network_extractor(weights), weights.config.pyramid_levels


def cmd_evaluate(args) -> int:
    split = read_split(Path(args.dataset) / args.split)
    if args.candidates > 0:
        split.candidates = split.candidates[: args.candidates]
    if not split.candidates:
        raise DataFault(f"split '{args.split}' has no relocalization candidates")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    known = {"intensity", "features", "contrastive"}
    unknown = set(methods) - known
    if unknown:
        raise UsageError(f"unknown methods: {sorted(unknown)}")
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    summaries = {}
    for method in methods:
        extractor, levels = _extractor_for(method, args)
        config = method_config("intensity" if method == "intensity" else "features", levels)
        results = run_relocalization(split, extractor, config, point_count=args.points)
        curve, summary = evaluate_relocalization(results)
        curves[method] = curve
        summaries[method] = summary
        write_curve_csv(out / f"curve_{method}.csv", curve)
    write_curves_svg(out / "curves.svg", curves)
    (out / "summary.json").write_text(json.dumps(summaries, indent=1, sort_keys=True) + "\n")
    _echo_config(out, args)
    return 0


def cmd_align(args) -> int:
    split = read_split(Path(args.dataset) / args.split)
    if not (0 <= args.candidate < len(split.candidates)):
        raise UsageError(f"--candidate must be in [0, {len(split.candidates)})")
    candidate = split.candidates[args.candidate]
    extractor, levels = _extractor_for(args.method, args)
    config = method_config(args.method, levels)
    ref = split.frames[candidate.reference_frame]
    pixels, inv_depths = select_keyframe_points(ref.image, ref.depth, k=args.points)
    keyframe = Keyframe(ref.image, pixels, inv_depths, split.intrinsics)
    result = track_candidate(
        keyframe, split.frames[candidate.candidate_frame].image, extractor, config
    )
    err = float(np.linalg.norm(result.pose.translation - candidate.relative_pose.translation))
    print(
        json.dumps(
            {
                "candidate": args.candidate,
                "method": args.method,
                "converged": result.converged,
                "iterations": result.iterations,
                "final_residual": result.final_residual,
                "inlier_fraction": result.inlier_fraction,
                "pose": [float(v) for v in result.pose.matrix().reshape(-1)],
                "translation_error": err,
            },
            indent=1,
            sort_keys=True,
        )
    )
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_gradcheck(args.seed)
    width = max(len(r.name) for r in reports)
    failed = False
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_relative_error:.3e}  {status}")
        failed |= not r.passed
    if failed:
        raise NumericalFault("gradient check failed; see per-block report above")
    print("all gradient checks passed")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "align": cmd_align,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataFault as exc:
        print(f"data fault: {exc}", file=sys.stderr)
        return 2
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
