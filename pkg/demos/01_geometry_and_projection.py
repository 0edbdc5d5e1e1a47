#!/usr/bin/env python3
"""Rigid-motion arithmetic and pinhole projection, checked numerically.

Walks through the geometric toolbox: twist exponentials, pose composition,
projecting depth-carrying pixels between cameras, and the analytic 2x6
pose Jacobian compared against finite differences.
"""

import numpy as np

from featalign.geometry import (
    CameraIntrinsics,
    PointWithDepth,
    SE3Pose,
    pose_jacobian,
    project,
    se3_exp,
    se3_log,
)

intr = CameraIntrinsics(fx=60.0, fy=60.0, cx=31.5, cy=31.5, width=64, height=64)

print("== twist exponential ==")
twist = np.array([0.1, -0.2, 0.05, 0.3, 0.1, -0.2])
pose = se3_exp(twist)
print("exp(twist) rotation:\n", np.round(pose.rotation, 6))
print("log(exp(twist)) - twist:", np.abs(se3_log(pose) - twist).max())

print("\n== projection ==")
point = PointWithDepth(np.array([20.0, 30.0]), inverse_depth=0.25)
moved = se3_exp(np.array([0.3, 0.0, 0.1, 0.0, 0.02, 0.0]))
projected = project(point, moved, intr, intr)
print("pixel (20, 30) at depth 4 lands at", np.round(projected, 3))

behind = project(point, SE3Pose(np.eye(3), np.array([0, 0, -9.0])), intr, intr)
print("point pushed behind the camera ->", behind)

print("\n== pose Jacobian vs finite differences ==")
jac = pose_jacobian(point, moved, intr, intr)
h = 1e-6
numeric = np.zeros((2, 6))
for k in range(6):
    d = np.zeros(6)
    d[k] = h
    plus = project(point, se3_exp(d).compose(moved), intr, intr, border=-1e9)
    minus = project(point, se3_exp(-d).compose(moved), intr, intr, border=-1e9)
    numeric[:, k] = (plus - minus) / (2 * h)
print("max |analytic - numeric|:", np.abs(jac - numeric).max())
