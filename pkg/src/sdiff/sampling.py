"""Reverse sampling with classifier-free guidance and top-K selection.

Starting from the user's (unmasked) history c, the chain noises its spectral
coefficients to the terminal time and then walks the grid
t = tau*T/T, ..., tau*1/T. At each step the clean-signal estimate blends the
conditional and unconditional denoiser outputs,

    v_hat = (1 - s) * phi(v_t, U^T c, t) + s * phi(v_t, 0, t),

and the state is re-noised to the previous grid point from that estimate.
The grid ends at t = 0 where sigma = 0 by construction, so the returned
item-space scores are the last clean estimate with no residual noise term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, denoise
from .errors import HashMismatchError
from .graph import SpectralBasis
from .schedule import NoiseSchedule
from .validation import as_generator, check_matrix


@dataclass(frozen=True)
class SamplerConfig:
    """``guidance`` is the weight s on the unconditional estimate;
    ``n_samples`` averages several independent chains per user."""

    guidance: float = 0.02
    n_samples: int = 1

    def __post_init__(self):
        if not 0.0 <= self.guidance <= 1.0:
            raise ValueError(f"guidance weight must lie in [0, 1], got {self.guidance}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def _check_compatible(params: DenoiserParams, sched: NoiseSchedule, basis: SpectralBasis):
    if params.k != basis.k:
        raise HashMismatchError(f"model rank {params.k} does not match basis rank {basis.k}")
    if sched.k != basis.k or not np.array_equal(sched.d, basis.d):
        raise HashMismatchError("schedule frequencies do not match the basis")
    if params.basis_hash is not None and params.basis_hash != basis.content_hash():
        raise HashMismatchError("model was trained against a different spectral basis")


def sample_preferences_batch(
    params: DenoiserParams,
    sched: NoiseSchedule,
    basis: SpectralBasis,
    conditions: np.ndarray,
    guidance: float = 0.02,
    n_samples: int = 1,
    rng=None,
    stats: dict | None = None,
    on_empty: str = "error",
    popularity: np.ndarray | None = None,
) -> np.ndarray:
    """Denoised preference scores for a batch of condition rows.

    ``conditions`` is (B, n_items) binary history. Rows without any
    interaction are handled per ``on_empty``: ``"error"`` raises,
    ``"popularity"`` substitutes the supplied popularity score vector.
    With a fixed rng the output is bit-reproducible. When ``stats`` is given,
    the counters ``conditional_calls``/``unconditional_calls`` record batched
    denoiser invocations; with guidance s = 0 the unconditional branch is
    never evaluated.
    """
    _check_compatible(params, sched, basis)
    if not 0.0 <= guidance <= 1.0:
        raise ValueError(f"guidance weight must lie in [0, 1], got {guidance}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = as_generator(rng)
    conditions = check_matrix(conditions, basis.n_items, "conditions").astype(np.float32)
    empty = np.flatnonzero(~conditions.any(axis=1))
    if empty.size:
        if on_empty == "popularity":
            if popularity is None:
                raise ValueError("popularity fallback requested but no popularity scores given")
        else:
            raise ValueError(f"conditions for rows {empty.tolist()} are empty")

    u32 = basis.U.astype(np.float32)
    c_spec = conditions @ u32
    zeros = np.zeros_like(c_spec)
    acc = np.zeros_like(c_spec)
    for _ in range(n_samples):
        alpha_t, sigma_t = sched.alpha_sigma_at(sched.tau)
        v = (alpha_t.astype(np.float32) * c_spec
             + sigma_t.astype(np.float32) * rng.standard_normal(c_spec.shape, dtype=np.float32))
        v_hat = c_spec
        for k in range(sched.T, 0, -1):
            t = sched.tau * k / sched.T
            cond = denoise(params, v, c_spec, t)
            if stats is not None:
                stats["conditional_calls"] = stats.get("conditional_calls", 0) + 1
            if guidance > 0.0:
                uncond = denoise(params, v, zeros, t)
                if stats is not None:
                    stats["unconditional_calls"] = stats.get("unconditional_calls", 0) + 1
                v_hat = (1.0 - guidance) * cond + guidance * uncond
            else:
                v_hat = cond
            t_prev = sched.tau * (k - 1) / sched.T
            alpha_p, sigma_p = sched.alpha_sigma_at(t_prev)
            v = (alpha_p.astype(np.float32) * v_hat
                 + sigma_p.astype(np.float32) * rng.standard_normal(c_spec.shape, dtype=np.float32))
        acc += v_hat
    scores = (acc / n_samples) @ u32.T
    if empty.size and on_empty == "popularity":
        scores[empty] = np.asarray(popularity, dtype=np.float32)
    return scores


def sample_preferences(
    params: DenoiserParams,
    sched: NoiseSchedule,
    basis: SpectralBasis,
    c: np.ndarray,
    cfg: SamplerConfig | None = None,
    rng=None,
    stats: dict | None = None,
    on_empty: str = "error",
    popularity: np.ndarray | None = None,
) -> np.ndarray:
    """Single-user convenience wrapper around the batch sampler."""
    cfg = cfg or SamplerConfig()
    c = np.asarray(c)
    return sample_preferences_batch(
        params, sched, basis, c[None, :], guidance=cfg.guidance,
        n_samples=cfg.n_samples, rng=rng, stats=stats,
        on_empty=on_empty, popularity=popularity,
    )[0]


def recommend_topk(scores: np.ndarray, history, k: int) -> np.ndarray:
    """Top-k item indices by score, excluding the user's history.

    Ties break by ascending item index; if fewer than k candidates remain,
    all of them are returned ranked.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores)
    keep = np.ones(scores.shape[0], dtype=bool)
    history = np.asarray(list(history) if isinstance(history, set) else history, dtype=np.int64)
    if history.size:
        keep[history] = False
    cands = np.flatnonzero(keep)
    order = np.lexsort((cands, -scores[cands]))
    return cands[order[:k]]
