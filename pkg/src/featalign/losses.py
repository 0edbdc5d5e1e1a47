"""Training losses for the descriptor network.

Two terms, combined per pyramid level:

* pixelwise contrastive loss: mean squared descriptor distance over matches
  plus mean squared hinge ``max(0, M - dist)^2`` over non-matches;
* probabilistic Gauss-Newton loss: from a start point jittered around the
  true match, build the per-pixel normal equations from the feature map's
  central-difference derivative, and charge the negative log-density of the
  induced 2-D Gaussian at the true correspondence.

Everything here runs on taped tensors so gradients reach the network
through the sampled features, the residual, and the numerical derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import NumericalFault

LOG_2PI = float(np.log(2.0 * np.pi))

# Closest a jittered start point may sit to the map edge: central differences
# at x +- 1 px plus bilinear interpolation must stay in bounds.
STENCIL_MARGIN = 1.0 + 1e-9


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    gn_weight: float = 0.1
    vicinity_radius: float = 4.0
    epsilon: float = 1e-3
    levels_used: Optional[Sequence[int]] = None
    starts_per_match: int = 1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.gn_weight < 0:
            raise ValueError("gn_weight must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.vicinity_radius < 1.0:
            raise ValueError("vicinity_radius must be >= 1 px")

    def vicinity_at(self, level: int) -> float:
        """Level-0 radius halved per level, floored at one pixel."""
        return max(self.vicinity_radius / (2.0**level), 1.0)


@dataclass
class CorrespondenceBatch:
    """Matched and non-matched pixel pairs between two frames (level-0 coords)."""

    pos_a: np.ndarray
    pos_b: np.ndarray
    neg_a: np.ndarray
    neg_b: np.ndarray
    frame_a: int = 0
    frame_b: int = 0

    def __post_init__(self):
        self.pos_a = np.asarray(self.pos_a, dtype=np.float64).reshape(-1, 2)
        self.pos_b = np.asarray(self.pos_b, dtype=np.float64).reshape(-1, 2)
        self.neg_a = np.asarray(self.neg_a, dtype=np.float64).reshape(-1, 2)
        self.neg_b = np.asarray(self.neg_b, dtype=np.float64).reshape(-1, 2)
        if self.pos_a.shape != self.pos_b.shape or self.neg_a.shape != self.neg_b.shape:
            raise ValueError("match arrays must pair up")

    @property
    def n_pos(self) -> int:
        return self.pos_a.shape[0]

    @property
    def n_neg(self) -> int:
        return self.neg_a.shape[0]

    def scaled(self, factor: float) -> "CorrespondenceBatch":
        return CorrespondenceBatch(
            self.pos_a * factor,
            self.pos_b * factor,
            self.neg_a * factor,
            self.neg_b * factor,
            self.frame_a,
            self.frame_b,
        )


@dataclass(frozen=True)
class GaussianBelief:
    """Where the per-pixel system thinks the match is, and how certainly.

    mean is the Gauss-Newton landing point x_s - H^-1 b, hessian the
    information matrix (inverse covariance) of the induced 2-D Gaussian.
    """

    mean: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=np.float64)
        if h.shape != (2, 2) or abs(h[0, 1] - h[1, 0]) > 1e-12:
            raise ValueError("belief hessian must be symmetric 2x2")
        if np.linalg.eigvalsh(h).min() <= 0:
            raise ValueError("belief hessian must be positive definite")

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.hessian)


def pixel_belief(feat_map: np.ndarray, x_s: np.ndarray, f_t: np.ndarray,
                 epsilon: float) -> GaussianBelief:
    """Single-start belief from the regularized per-pixel normal equations.

    Numpy mirror of the arithmetic inside :func:`gauss_newton_loss`, handy
    for inspecting what the loss sees at one correspondence.
    """
    from .alignment import interp, map_gradient

    x_s = np.asarray(x_s, dtype=np.float64).reshape(1, 2)
    f_s = interp(feat_map, x_s)[0]
    jac = map_gradient(feat_map, x_s)[0]
    hess = jac.T @ jac + epsilon * np.eye(2)
    b = jac.T @ (f_s - np.asarray(f_t, dtype=np.float64))
    mean = x_s[0] - np.linalg.solve(hess, b)
    return GaussianBelief(mean, hess)


def sample_negatives(rng, pos_b: np.ndarray, width: int, height: int,
                     margin: float = 2.0, min_dist: float = 8.0):
    """Draws one non-match location in image b per positive.

    Uniform over the valid interior, rejecting points closer than
    ``min_dist`` px to the true match so near-misses are not punished.
    """
    n = pos_b.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        while True:
            cand = np.array(
                [
                    rng.uniform(margin, width - 1 - margin),
                    rng.uniform(margin, height - 1 - margin),
                ]
            )
            if np.linalg.norm(cand - pos_b[i]) > min_dist:
                out[i] = cand
                break
    return out


def contrastive_loss(feat_a, feat_b, batch: CorrespondenceBatch, margin: float) -> T.Tensor:
    """Pixelwise contrastive loss at one pyramid level.

    ``batch`` coordinates must already be expressed at this level's
    resolution. Either pair set may be empty, but not both.
    """
    if batch.n_pos == 0 and batch.n_neg == 0:
        raise ValueError("contrastive loss needs at least one positive or negative pair")
    total = None
    if batch.n_pos:
        fa = T.bilinear_sample(feat_a, T.Tensor(batch.pos_a))
        fb = T.bilinear_sample(feat_b, T.Tensor(batch.pos_b))
        diff = T.sub(fa, fb)
        total = T.mul(T.reduce_sum(T.mul(diff, diff)), 1.0 / batch.n_pos)
    if batch.n_neg:
        na = T.bilinear_sample(feat_a, T.Tensor(batch.neg_a))
        nb = T.bilinear_sample(feat_b, T.Tensor(batch.neg_b))
        ndiff = T.sub(na, nb)
        # The 1e-16 floor keeps sqrt differentiable when a non-match lands
        # on identical descriptors (dead-relu inits); it shifts the
        # distance by at most 1e-8.
        dist = T.sqrt(T.add(T.reduce_sum(T.mul(ndiff, ndiff), axis=1), 1e-16))
        hinge = T.relu(T.add(T.neg(dist), margin))
        l_neg = T.mul(T.reduce_sum(T.mul(hinge, hinge)), 1.0 / batch.n_neg)
        total = l_neg if total is None else T.add(total, l_neg)
    return total


def gaussian_nll_terms(mu: T.Tensor, hessian: T.Tensor, x: np.ndarray):
    """The two error terms of the 2-D Gaussian negative log-density.

    e1 = 1/2 (x - mu)^T H (x - mu), e2 = log(2 pi) - 1/2 log |H|, both per
    row: mu is (N, 2), hessian (N, 2, 2), x a constant (N, 2).
    """
    n = mu.data.shape[0]
    d = T.sub(T.Tensor(np.asarray(x, dtype=np.float64)), mu)
    d_col = T.reshape(d, (n, 2, 1))
    d_row = T.reshape(d, (n, 1, 2))
    e1 = T.mul(T.reshape(T.matmul(d_row, T.matmul(hessian, d_col)), (n,)), 0.5)
    det = T.det2x2(hessian)
    if np.any(det.data <= 0):
        raise NumericalFault("Gauss-Newton system lost positive definiteness")
    e2 = T.add(T.mul(T.log(det), -0.5), LOG_2PI)
    return e1, e2


def _feature_jacobian(feat_map, xs: np.ndarray) -> T.Tensor:
    """Central-difference d(map)/d(position) at each start point, (N, D, 2).

    Expressed through bilinear samples at x +- 1 px so the training gradient
    flows through the same stencil the runtime solver uses.
    """
    ex = np.array([1.0, 0.0])
    ey = np.array([0.0, 1.0])
    jx = T.mul(
        T.sub(
            T.bilinear_sample(feat_map, T.Tensor(xs + ex)),
            T.bilinear_sample(feat_map, T.Tensor(xs - ex)),
        ),
        0.5,
    )
    jy = T.mul(
        T.sub(
            T.bilinear_sample(feat_map, T.Tensor(xs + ey)),
            T.bilinear_sample(feat_map, T.Tensor(xs - ey)),
        ),
        0.5,
    )
    return T.stack_last([jx, jy])


def draw_start_points(rng, pos_b: np.ndarray, vicinity: float, width: int, height: int):
    """u_b plus a uniform square jitter, clamped to the stencil-valid region."""
    offsets = rng.uniform(-vicinity, vicinity, size=pos_b.shape)
    xs = pos_b + offsets
    xs[:, 0] = np.clip(xs[:, 0], STENCIL_MARGIN, width - 1 - STENCIL_MARGIN)
    xs[:, 1] = np.clip(xs[:, 1], STENCIL_MARGIN, height - 1 - STENCIL_MARGIN)
    return xs


def gauss_newton_loss(
    feat_a,
    feat_b,
    batch: CorrespondenceBatch,
    config: LossConfig,
    rng,
    vicinity: Optional[float] = None,
) -> T.Tensor:
    """Probabilistic Gauss-Newton loss at one level, averaged over matches.

    Per correspondence: sample the target feature at u_a, jitter a start
    point around u_b, build H = J^T J + eps I and b = J^T r from the
    numerical map derivative at the start, and charge the Gaussian negative
    log-density with mean x_s - H^-1 b and information H, evaluated at u_b.
    """
    if batch.n_pos == 0:
        raise ValueError("Gauss-Newton loss needs at least one positive pair")
    height, width = feat_b.data.shape[:2]
    if vicinity is None:
        vicinity = config.vicinity_radius
    n = batch.n_pos
    eps_eye = np.broadcast_to(np.eye(2) * config.epsilon, (n, 2, 2)).copy()
    total = None
    for _ in range(max(1, config.starts_per_match)):
        f_t = T.bilinear_sample(feat_a, T.Tensor(batch.pos_a))
        xs = draw_start_points(rng, batch.pos_b, vicinity, width, height)
        f_s = T.bilinear_sample(feat_b, T.Tensor(xs))
        r = T.sub(f_s, f_t)
        jac = _feature_jacobian(feat_b, xs)
        jac_t = T.transpose_last2(jac)
        hess = T.add(T.matmul(jac_t, jac), T.Tensor(eps_eye))
        b = T.matmul(jac_t, T.reshape(r, (n, r.data.shape[1], 1)))
        mu = T.sub(T.Tensor(xs), T.reshape(T.matmul(T.inv2x2(hess), b), (n, 2)))
        e1, e2 = gaussian_nll_terms(mu, hess, batch.pos_b)
        if np.any(e1.data < -1e-9):
            raise NumericalFault("Gauss-Newton loss: negative quadratic term")
        start_loss = T.mul(T.add(T.reduce_sum(e1), T.reduce_sum(e2)), 1.0 / n)
        total = start_loss if total is None else T.add(total, start_loss)
    return T.mul(total, 1.0 / max(1, config.starts_per_match))


def total_loss(
    pyramid_a: Sequence,
    pyramid_b: Sequence,
    batch: CorrespondenceBatch,
    config: LossConfig,
    rng,
):
    """Weighted multi-scale sum, coarse and fine levels alike.

    Returns (scalar loss tensor, {"contrastive": float, "gauss_newton": float}).
    Deterministic for a fixed rng state; levels are processed coarse to fine
    so the rng consumption order is stable.
    """
    levels = (
        list(config.levels_used)
        if config.levels_used is not None
        else list(range(len(pyramid_a)))
    )
    if any(l < 0 or l >= len(pyramid_a) for l in levels):
        raise ValueError(f"levels_used {levels} outside available range")
    loss = None
    parts = {"contrastive": 0.0, "gauss_newton": 0.0}
    for level in sorted(levels, reverse=True):
        scaled = batch.scaled(1.0 / (2.0**level))
        term = contrastive_loss(pyramid_a[level], pyramid_b[level], scaled, config.margin)
        parts["contrastive"] += float(term.data)
        if config.gn_weight > 0.0 and batch.n_pos > 0:
            gn = gauss_newton_loss(
                pyramid_a[level],
                pyramid_b[level],
                scaled,
                config,
                rng,
                vicinity=config.vicinity_at(level),
            )
            parts["gauss_newton"] += float(gn.data)
            term = T.add(term, T.mul(gn, config.gn_weight))
        loss = term if loss is None else T.add(loss, term)
    return loss, parts

