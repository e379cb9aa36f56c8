"""Label assignment, ratio-controlled sampling, the training objective, and SGD.

Positive/negative status follows the same dual-IoU rule used at evaluation
time: a proposal is positive when some ground-truth pair overlaps both its
boxes at IoU >= 0.5, and it inherits the union of action labels over every
ground truth it matches. The loss is a per-action binary cross entropy plus
a weighted binary cross entropy on the any-interaction affinity bit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, model_config_from_dict, model_config_to_dict
from .data import Dataset, ground_truth_pairs, pair_proposals, render_all
from .geometry import Box, HOIProposal, iou
from .network import HOIModel, ProposalBatch, build_proposal_batch

logger = logging.getLogger(__name__)

LOSS_EPS = 1e-7

METRICS_COLUMNS = ("iteration", "lr", "total_loss", "relation_loss", "affinity_loss")


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""


@dataclass
class TrainingLabel:
    """Per-proposal targets: action bits y and the derived any-bit z."""

    y: np.ndarray  # (A,) in {0, 1}
    z: int

    @classmethod
    def from_actions(cls, actions: Sequence[int], n_actions: int) -> "TrainingLabel":
        y = np.zeros(n_actions, dtype=np.float64)
        for a in actions:
            y[a] = 1.0
        return cls(y, int(y.any()))


def assign_labels(
    prop: HOIProposal,
    gts: Sequence[tuple[Box, Box, frozenset]],
    n_actions: int,
    thr: float = 0.5,
) -> TrainingLabel:
    """Union of action labels over every ground truth matching both boxes at thr."""
    actions: set[int] = set()
    for gh, go, acts in gts:
        if iou(prop.human, gh) >= thr and iou(prop.object, go) >= thr:
            actions.update(acts)
    return TrainingLabel.from_actions(sorted(actions), n_actions)


def sample_minibatch(
    z: np.ndarray,
    ratio: tuple[int, int],
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Row indices with positives and negatives in the requested proportion.

    When one class cannot fill its share the deficit moves to the other class
    (with a logged warning); when the whole pool is smaller than the batch,
    sampling falls back to drawing with replacement.
    """
    z = np.asarray(z)
    if z.size == 0:
        raise ValueError("cannot sample from an empty proposal pool")
    pos_idx = np.flatnonzero(z == 1)
    neg_idx = np.flatnonzero(z == 0)
    want_pos = round(batch_size * ratio[0] / (ratio[0] + ratio[1]))
    take_pos = min(want_pos, pos_idx.size)
    take_neg = min(batch_size - take_pos, neg_idx.size)
    if take_pos + take_neg < batch_size:  # one class exhausted; refill from the other
        take_pos = min(batch_size - take_neg, pos_idx.size)
    if take_pos != want_pos:
        logger.warning(
            "positive/negative deficit: wanted %d positives of %d, using %d pos / %d neg",
            want_pos, batch_size, take_pos, take_neg,
        )
    chosen = []
    if take_pos:
        chosen.append(rng.choice(pos_idx, size=take_pos, replace=False))
    if take_neg:
        chosen.append(rng.choice(neg_idx, size=take_neg, replace=False))
    out = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    if out.size < batch_size:
        logger.warning("pool smaller than batch (%d < %d); drawing with replacement", out.size, batch_size)
        extra = rng.choice(z.size, size=batch_size - out.size, replace=True)
        out = np.concatenate([out, extra])
    return out


def _bce(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    p = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    return -(t * np.log(p) + (1.0 - t) * np.log1p(-p))


def _bce_grad(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    inside = (p > LOSS_EPS) & (p < 1.0 - LOSS_EPS)
    pc = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    return np.where(inside, -t / pc + (1.0 - t) / (1.0 - pc), 0.0)


def hoi_loss(s_l: np.ndarray, s_g: Optional[np.ndarray], y: np.ndarray, z: np.ndarray, mu: float) -> float:
    """Batch-mean of (sum over actions of BCE) + mu * affinity BCE."""
    total, _, _ = hoi_loss_terms(s_l, s_g, y, z, mu)
    return total


def hoi_loss_terms(s_l, s_g, y, z, mu: float) -> tuple[float, float, float]:
    """(total, relation part, affinity part); the parts are unweighted means."""
    s_l = np.asarray(s_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rel = float(_bce(y, s_l).sum(axis=1).mean())
    if s_g is None:
        return rel, rel, 0.0
    aff = float(_bce(np.asarray(z, dtype=np.float64), np.asarray(s_g, dtype=np.float64)).mean())
    return rel + mu * aff, rel, aff


def hoi_loss_grad(s_l, s_g, y, z, mu: float):
    """Gradients of hoi_loss with respect to the score arrays."""
    n = s_l.shape[0]
    gs_l = _bce_grad(np.asarray(y, dtype=np.float64), s_l) / n
    gs_g = None
    if s_g is not None:
        gs_g = mu * _bce_grad(np.asarray(z, dtype=np.float64), s_g) / n
    return gs_l, gs_g


# ---------------------------------------------------------------------------
# Pool construction and the loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingPool:
    """Rendered images plus every labeled proposal, built once per dataset."""

    images: np.ndarray       # (B, H, W, 3)
    batch: ProposalBatch     # all proposals
    y: np.ndarray            # (n, A)
    z: np.ndarray            # (n,)

    def __len__(self) -> int:
        return len(self.batch)


def build_training_pool(dataset: Dataset, cfg: ModelConfig, thr: float = 0.5) -> TrainingPool:
    images = render_all(dataset)
    index_of = {im.id: i for i, im in enumerate(dataset.images)}
    size = (dataset.images[0].width, dataset.images[0].height)
    proposals: list[HOIProposal] = []
    img_idx: list[int] = []
    labels: list[TrainingLabel] = []
    for im in dataset.images:
        props = pair_proposals(dataset, im.id)
        gts = ground_truth_pairs(dataset, im.id)
        for prop in props:
            proposals.append(prop)
            img_idx.append(index_of[im.id])
            labels.append(assign_labels(prop, gts, cfg.a, thr))
    if not proposals:
        raise ValueError("dataset yields no human-object proposals")
    batch = build_proposal_batch(cfg, proposals, img_idx, size)
    y = np.stack([lab.y for lab in labels])
    z = np.array([lab.z for lab in labels], dtype=np.int64)
    return TrainingPool(images, batch, y, z)


class SGD:
    """SGD with momentum and decoupled-from-nothing classic weight decay."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, named_params, lr: float):
        for name, p, g in named_params:
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= lr * v


@dataclass
class TrainResult:
    model: HOIModel
    metrics: list[tuple]
    final_loss: float


def checkpoint_meta(cfg: TrainConfig, iteration: int) -> dict:
    return {
        "format": "hoi-relation-model",
        "model": model_config_to_dict(cfg.model),
        "seed": cfg.seed,
        "iteration": iteration,
    }


def save_model(path, model: HOIModel, meta: dict, optimizer: SGD | None = None) -> None:
    params = dict(model.state_dict())
    if optimizer is not None:
        for name, v in optimizer.velocity.items():
            params[f"opt:{name}"] = v
    save_checkpoint(path, params, meta)


def model_from_checkpoint(path) -> tuple[HOIModel, dict]:
    """Rebuild a model (architecture from metadata, weights from payload)."""
    params, meta = load_checkpoint(path)
    cfg = model_config_from_dict(meta["model"])
    model = HOIModel(cfg, seed=int(meta.get("seed", 0)))
    model.load_state_dict({k: v for k, v in params.items() if not k.startswith("opt:")})
    return model, meta


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    out_path=None,
    metrics_path=None,
    resume=None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Run the SGD loop; deterministic given the config seed.

    Writes a checkpoint to ``out_path`` at the end (and every
    ``checkpoint_every`` iterations when enabled) and appends loss rows to
    ``metrics_path`` as CSV.
    """
    pool = build_training_pool(dataset, cfg.model)
    model = HOIModel(cfg.model, seed=cfg.seed)
    optimizer = SGD(cfg.momentum, cfg.weight_decay)
    start_iteration = 0
    if resume is not None:
        params, meta = load_checkpoint(resume)
        model.load_state_dict({k: v for k, v in params.items() if not k.startswith("opt:")})
        optimizer.velocity = {
            k[len("opt:"):]: v.copy() for k, v in params.items() if k.startswith("opt:")
        }
        start_iteration = int(meta.get("iteration", 0))

    sampler_rng = np.random.default_rng([cfg.seed, 7])
    metrics: list[tuple] = []
    writer = None
    metrics_file = None
    if metrics_path is not None:
        metrics_file = open(metrics_path, "w", newline="")
        writer = csv.writer(metrics_file)
        writer.writerow(METRICS_COLUMNS)

    lr = cfg.lr
    loss_value = float("nan")
    try:
        for it in range(start_iteration, cfg.iterations):
            if it == cfg.lr_drop_iteration:
                lr *= 0.1
            rows = sample_minibatch(pool.z, cfg.pos_neg_ratio, cfg.batch_size, sampler_rng)
            sub = pool.batch.select(rows)
            # only forward the images this minibatch actually references
            unique_images, inverse = np.unique(sub.img_idx, return_inverse=True)
            sub.img_idx = inverse
            y, z = pool.y[rows], pool.z[rows]
            model.zero_grad()
            s_l, s_g, _ = model.forward(pool.images[unique_images], sub)
            s_g_for_loss = s_g if model.fusion.affinity is not None else None
            total, rel, aff = hoi_loss_terms(s_l, s_g_for_loss, y, z, cfg.mu)
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss {total} at iteration {it}")
            gs_l, gs_g = hoi_loss_grad(s_l, s_g_for_loss, y, z, cfg.mu)
            model.backward(gs_l, gs_g)
            optimizer.step(model.named_parameters(), lr)
            loss_value = total
            if it % cfg.log_every == 0 or it + 1 == cfg.iterations:
                row = (it, lr, total, rel, aff)
                metrics.append(row)
                if writer is not None:
                    writer.writerow(row)
                if progress is not None:
                    progress(it, total)
            if cfg.checkpoint_every and out_path is not None and (it + 1) % cfg.checkpoint_every == 0:
                save_model(out_path, model, checkpoint_meta(cfg, it + 1), optimizer)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    if out_path is not None:
        save_model(out_path, model, checkpoint_meta(cfg, cfg.iterations), optimizer)
    return TrainResult(model, metrics, loss_value)
