"""Training loop: ADAM over the multi-scale combined loss.

Each step runs the Siamese forward pass (one set of weights, two images) on
a stored correspondence batch, backpropagates the combined loss, and
applies ADAM. Per-epoch validation tracks relocalization quality and the
best epoch is checkpointed, mirroring how the benchmark selects models.
Everything is deterministic from the config seed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .alignment import method_config, network_extractor
from .errors import NumericalFault
from .losses import LossConfig, total_loss
from .network import NetworkConfig, NetworkWeights, build_network, forward_pyramid
from .optim import AdamState, adam_init, adam_step


@dataclass
class TrainConfig:
    epochs: int = 24
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    val_candidates: int = 12
    val_points: int = 192
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class EpochStats:
    epoch: int
    total: float
    contrastive: float
    gauss_newton: float
    val_auc: float


def _image_of(split, frame_id: int) -> np.ndarray:
    return split.frames[frame_id].image


def train_network(train_split, val_split, config: TrainConfig):
    """Trains on a loaded split's correspondence batches.

    Returns (best NetworkWeights, list of EpochStats). The best epoch is
    the one with the highest validation relocalization AUC (falling back to
    the lowest training loss when validation is disabled).
    """
    if not train_split.correspondences:
        raise NumericalFault("training split carries no correspondences")
    weights = build_network(config.network)
    names = list(weights.params)
    params = [weights.params[n] for n in names]
    state: AdamState = adam_init(params)
    batches = list(train_split.correspondences)
    history: list[EpochStats] = []
    best = (None, -np.inf, np.inf)  # (params copy, val auc, train loss)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 17, epoch]).permutation(len(batches))
        sums = {"total": 0.0, "contrastive": 0.0, "gauss_newton": 0.0}
        for slot, batch_index in enumerate(order):
            batch = batches[batch_index]
            rng = np.random.default_rng([config.seed, 23, epoch, slot])
            tape = T.Tape()
            taped = {n: tape.leaf(p) for n, p in zip(names, params)}
            pyr_a = forward_pyramid(taped, _image_of(train_split, batch.frame_a), config.network)
            pyr_b = forward_pyramid(taped, _image_of(train_split, batch.frame_b), config.network)
            loss, parts = total_loss(pyr_a, pyr_b, batch, config.loss, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalFault(
                    f"non-finite loss at epoch {epoch}, pair "
                    f"({batch.frame_a}, {batch.frame_b}): {value!r}"
                )
            tape.backward(loss)
            grads = [tape.grad(taped[n]) for n in names]
            adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps_adam)
            sums["total"] += value
            sums["contrastive"] += parts["contrastive"]
            sums["gauss_newton"] += parts["gauss_newton"]
        n = max(1, len(batches))
        epoch_weights = NetworkWeights(config.network, {m: p for m, p in zip(names, params)})
        val_auc = float("nan")
        if val_split is not None and config.val_candidates > 0:
            val_auc = _validation_auc(val_split, epoch_weights, config)
        history.append(
            EpochStats(epoch, sums["total"] / n, sums["contrastive"] / n,
                       sums["gauss_newton"] / n, val_auc)
        )
        score = val_auc if np.isfinite(val_auc) else -sums["total"] / n
        if score > best[1]:
            best = ({m: p.copy() for m, p in zip(names, params)}, score, sums["total"] / n)
    final = NetworkWeights(config.network, best[0] if best[0] is not None else dict(zip(names, params)))
    return final, history


def _validation_auc(val_split, weights: NetworkWeights, config: TrainConfig) -> float:
    from .bench.evaluate import evaluate_relocalization, run_relocalization

    subset = val_split.candidates[: config.val_candidates]
    if not subset:
        return float("nan")
    trimmed = copy.copy(val_split)
    trimmed.candidates = subset
    results = run_relocalization(
        trimmed,
        network_extractor(weights),
        method_config("features", weights.config.pyramid_levels),
        point_count=config.val_points,
    )
    _, summary = evaluate_relocalization(results)
    return float(summary["auc"])


def history_csv(history) -> str:
    lines = ["epoch,total,contrastive,gauss_newton,val_auc"]
    for row in history:
        lines.append(
            f"{row.epoch},{row.total!r},{row.contrastive!r},{row.gauss_newton!r},{row.val_auc!r}"
        )
    return "\n".join(lines) + "\n"
