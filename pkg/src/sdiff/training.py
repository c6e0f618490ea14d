"""Training loop for the conditional spectral denoiser.

Each step samples a user batch, takes the full train-interaction vector x0
as the reconstruction target, masks a random half of it to form the
condition c (the target itself is never masked), projects both into the
spectral domain, draws a continuous time t ~ U(0, tau) per example, noises
the coefficients with the schedule, and takes an Adam step on the mean
squared error of the denoiser's clean-signal estimate. With probability
``p_uncond`` the condition is zeroed so the unconditional branch used by
classifier-free guidance gets trained jointly.

Training runs single-threaded and consumes one RNG stream in a fixed order
(mask, time, noise, condition dropout), so a fixed seed reproduces the loss
trace bitwise. Validation recall is monitored every ``eval_every`` epochs
with early stopping and best-checkpoint tracking.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplit
from .denoiser import AdamState, DenoiserParams, adam_step, init_denoiser, loss_and_grad
from .errors import HashMismatchError
from .graph import SpectralBasis
from .metrics import ndcg_at_k, recall_at_k
from .sampling import recommend_topk, sample_preferences_batch
from .schedule import NoiseSchedule
from .validation import check_probability

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 100
    lr: float = 1e-4
    max_epochs: int = 1000
    p_uncond: float = 0.02
    p_mask: float = 0.5
    dropout_mode: str = "example"  # "example" or "batch" condition dropout
    eval_every: int = 5
    patience: int = 20  # non-improving evaluations before stopping
    eval_k: int = 10
    eval_guidance: float = 0.02
    hidden: int = 1024
    time_dim: int = 64
    film_hidden: int = 16
    seed: int = 0
    collect_diagnostics: bool = False

    def __post_init__(self):
        check_probability(self.p_uncond, "p_uncond")
        check_probability(self.p_mask, "p_mask")
        if self.dropout_mode not in ("example", "batch"):
            raise ValueError(f"dropout_mode must be 'example' or 'batch', got {self.dropout_mode!r}")
        if min(self.batch_size, self.max_epochs, self.eval_every, self.patience) < 1:
            raise ValueError("batch_size, max_epochs, eval_every, and patience must be >= 1")


@dataclass
class TrainResult:
    params: DenoiserParams
    log: list[dict]
    steps: int
    best_epoch: int
    best_recall: float
    stop_reason: str
    uncond_examples: int
    total_examples: int
    t_draws: np.ndarray | None = field(default=None, repr=False)


def build_training_batch(split: DatasetSplit, n_items: int, batch_users, p_mask: float, rng):
    """Assemble (x0, c) rows: full train vectors and masked conditions.

    Only the condition is masked; the reconstruction target stays complete.
    """
    x0 = np.zeros((len(batch_users), n_items), dtype=np.float32)
    for row, u in enumerate(batch_users):
        x0[row, split.train[u]] = 1.0
    keep = rng.random(x0.shape) >= p_mask
    return x0, x0 * keep


def _validation_recall(params, sched, basis, split, val_users, guidance, k, rng):
    conditions = np.zeros((len(val_users), basis.n_items), dtype=np.float32)
    for row, u in enumerate(val_users):
        conditions[row, split.train[u]] = 1.0
    scores = sample_preferences_batch(
        params, sched, basis, conditions, guidance=guidance, rng=rng)
    recalls, ndcgs = [], []
    for row, u in enumerate(val_users):
        ranked = recommend_topk(scores[row], split.train[u], k)
        recalls.append(recall_at_k(ranked, split.val[u], k))
        ndcgs.append(ndcg_at_k(ranked, split.val[u], k))
    return float(np.mean(recalls)), float(np.mean(ndcgs))


def train(cfg: TrainConfig, split: DatasetSplit, basis: SpectralBasis,
          sched: NoiseSchedule, params: DenoiserParams | None = None) -> TrainResult:
    """Run the training loop and return the best checkpoint plus a log.

    ``basis`` and ``split`` must descend from the same interaction matrix
    (content-hash check), and ``sched`` must carry the basis' frequencies.
    Stops on validation-recall patience, the epoch cap, or a non-finite loss
    (in which case the last good checkpoint is returned).
    """
    if split.matrix_hash != basis.matrix_hash:
        raise HashMismatchError(
            "split and spectral basis were built from different interaction data")
    if sched.k != basis.k or not np.array_equal(sched.d, basis.d):
        raise HashMismatchError("schedule frequencies do not match the basis")

    users = np.asarray([u for u in range(split.n_users) if split.train[u].size > 0])
    if users.size == 0:
        raise ValueError("no users with training interactions")
    val_users = [int(u) for u in users if split.val[int(u)].size > 0]

    if params is None:
        params = init_denoiser(basis.k, cfg.hidden, cfg.time_dim, cfg.film_hidden,
                               seed=cfg.seed)
    params.basis_hash = basis.content_hash()
    adam = AdamState.init(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    eval_rng = np.random.default_rng([cfg.seed, 7919])
    u32 = basis.U.astype(np.float32)

    rows: list[dict] = []
    t_draws: list[np.ndarray] = []
    best_params, best_recall, best_epoch = None, -math.inf, -1
    bad_evals = 0
    steps = 0
    uncond_examples = 0
    total_examples = 0
    stop_reason = "max-epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        tic = time.monotonic()
        order = rng.permutation(users)
        epoch_loss, n_batches = 0.0, 0
        diverged = False
        for start in range(0, order.size, cfg.batch_size):
            batch_users = order[start:start + cfg.batch_size]
            x0, c = build_training_batch(split, basis.n_items, batch_users, cfg.p_mask, rng)
            v0 = x0 @ u32
            t = rng.uniform(0.0, sched.tau, size=batch_users.size)
            alpha, sigma = sched.alpha_sigma_at(t)
            eps = rng.standard_normal((batch_users.size, basis.k), dtype=np.float32)
            v_t = alpha.astype(np.float32) * v0 + sigma.astype(np.float32) * eps
            if cfg.dropout_mode == "example":
                drop = rng.random(batch_users.size) < cfg.p_uncond
            else:
                drop = np.full(batch_users.size, rng.random() < cfg.p_uncond)
            c_spec = c @ u32
            c_spec[drop] = 0.0
            uncond_examples += int(drop.sum())
            total_examples += batch_users.size
            if cfg.collect_diagnostics:
                t_draws.append(t)

            try:
                loss, grads = loss_and_grad(params, v_t, c_spec, t, v0)
            except FloatingPointError:
                loss = math.inf
            if not math.isfinite(loss):
                diverged = True
                break
            adam_step(params, grads, adam)
            steps += 1
            epoch_loss += loss
            n_batches += 1

        if diverged:
            log.warning("non-finite loss at epoch %d; stopping with last good checkpoint", epoch)
            stop_reason = "non-finite-loss"
            break

        row = {
            "epoch": epoch,
            "loss": epoch_loss / max(n_batches, 1),
            "val_recall": None,
            "val_ndcg": None,
            "wall_ms": (time.monotonic() - tic) * 1000.0,
        }
        stop = False
        if val_users and epoch % cfg.eval_every == 0:
            recall, ndcg = _validation_recall(
                params, sched, basis, split, val_users, cfg.eval_guidance,
                cfg.eval_k, eval_rng)
            row["val_recall"], row["val_ndcg"] = recall, ndcg
            row["wall_ms"] = (time.monotonic() - tic) * 1000.0
            if recall > best_recall:
                best_params, best_recall, best_epoch = params.copy(), recall, epoch
                bad_evals = 0
            else:
                bad_evals += 1
            log.info("epoch %d: loss %.5f, val recall@%d %.4f (best %.4f @ %d)",
                     epoch, row["loss"], cfg.eval_k, recall, best_recall, best_epoch)
            if bad_evals >= cfg.patience:
                stop_reason = "early-stop"
                stop = True
        rows.append(row)
        if stop:
            break

    if best_params is None:
        best_params, best_epoch = params, rows[-1]["epoch"] if rows else 0
    return TrainResult(
        params=best_params,
        log=rows,
        steps=steps,
        best_epoch=best_epoch,
        best_recall=best_recall if best_recall > -math.inf else float("nan"),
        stop_reason=stop_reason,
        uncond_examples=uncond_examples,
        total_examples=total_examples,
        t_draws=np.concatenate(t_draws) if t_draws else None,
    )
