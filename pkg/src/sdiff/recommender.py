"""Scikit-learn style estimator wrapping the full pipeline.

``SDiffRecommender.fit`` accepts an :class:`~sdiff.data.InteractionMatrix`,
a scipy sparse matrix, or a dense binary array of user-by-item interactions;
it splits the data, builds the item-graph eigenbasis, and trains the
conditional denoiser. ``predict`` scores arbitrary binary history vectors
and ``recommend`` produces per-user top-K lists. Hyperparameters follow the
sklearn convention (stored verbatim in ``__init__``, fitted state in
trailing-underscore attributes), so ``get_params``/``clone`` compose with
the wider ecosystem.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import DatasetSplit, InteractionMatrix, interactions_from_rows, split_dataset
from .graph import build_normalized_bipartite, truncated_eigendecomposition
from .metrics import Metrics, evaluate, popularity_baseline
from .sampling import recommend_topk, sample_preferences_batch
from .schedule import build_schedule
from .training import TrainConfig, train
from .validation import check_matrix


def _as_interactions(X) -> InteractionMatrix:
    if isinstance(X, InteractionMatrix):
        return X
    if sp.issparse(X):
        csr = X.tocsr()
        rows = [csr.indices[csr.indptr[u]:csr.indptr[u + 1]] for u in range(csr.shape[0])]
        return interactions_from_rows(rows, n_items=csr.shape[1])
    X = check_matrix(np.asarray(X), name="X")
    return interactions_from_rows([np.flatnonzero(row) for row in X], n_items=X.shape[1])


class SDiffRecommender(BaseEstimator):
    """Anisotropic spectral-diffusion recommender for implicit feedback."""

    def __init__(
        self,
        rank: int = 200,
        lanczos_sweeps: int = 10,
        basis_tol: float = 1e-8,
        tau: float = 1.0,
        steps: int = 5,
        alpha_min: float = 0.05,
        sigma_max: float = 0.45,
        variant: str = "vp",
        hidden: int = 1024,
        time_dim: int = 64,
        film_hidden: int = 16,
        guidance: float = 0.02,
        p_uncond: float = 0.02,
        p_mask: float = 0.5,
        batch_size: int = 100,
        lr: float = 1e-4,
        max_epochs: int = 1000,
        eval_every: int = 5,
        patience: int = 20,
        split_ratios: tuple = (0.7, 0.1, 0.2),
        seed: int = 0,
    ):
        self.rank = rank
        self.lanczos_sweeps = lanczos_sweeps
        self.basis_tol = basis_tol
        self.tau = tau
        self.steps = steps
        self.alpha_min = alpha_min
        self.sigma_max = sigma_max
        self.variant = variant
        self.hidden = hidden
        self.time_dim = time_dim
        self.film_hidden = film_hidden
        self.guidance = guidance
        self.p_uncond = p_uncond
        self.p_mask = p_mask
        self.batch_size = batch_size
        self.lr = lr
        self.max_epochs = max_epochs
        self.eval_every = eval_every
        self.patience = patience
        self.split_ratios = split_ratios
        self.seed = seed

    def fit(self, X, y=None, split: DatasetSplit | None = None):
        m = _as_interactions(X)
        if split is None:
            split = split_dataset(m, self.split_ratios, seed=self.seed)
        bip = build_normalized_bipartite(m)
        rank = min(self.rank, m.n_items)
        basis = truncated_eigendecomposition(
            bip, rank, m=self.lanczos_sweeps, tol=self.basis_tol, seed=self.seed)
        sched = build_schedule(basis, self.tau, self.steps, self.alpha_min,
                               self.sigma_max, self.variant)
        cfg = TrainConfig(
            batch_size=self.batch_size, lr=self.lr, max_epochs=self.max_epochs,
            p_uncond=self.p_uncond, p_mask=self.p_mask, eval_every=self.eval_every,
            patience=self.patience, eval_guidance=self.guidance, hidden=self.hidden,
            time_dim=self.time_dim, film_hidden=self.film_hidden, seed=self.seed,
        )
        result = train(cfg, split, basis, sched)
        self.interactions_ = m
        self.split_ = split
        self.basis_ = basis
        self.schedule_ = sched
        self.params_ = result.params
        self.history_ = result.log
        self.train_result_ = result
        self.rank_ = rank
        self.n_users_ = m.n_users
        self.n_items_ = m.n_items
        return self

    def predict(self, X, on_empty: str = "error") -> np.ndarray:
        """Preference scores for binary history rows of shape (B, n_items).

        Rows without any interaction raise by default; pass
        ``on_empty="popularity"`` to fall back to train-popularity scores.
        """
        check_is_fitted(self, "params_")
        conditions = check_matrix(np.asarray(X, dtype=np.float32), self.n_items_, "X")
        rng = np.random.default_rng([self.seed, 0xC0FFEE])
        pop = popularity_baseline(self.split_, self.n_items_) if on_empty == "popularity" else None
        return sample_preferences_batch(
            self.params_, self.schedule_, self.basis_, conditions,
            guidance=self.guidance, rng=rng, on_empty=on_empty, popularity=pop)

    def _stage_conditions(self, users, stage: str) -> np.ndarray:
        conditions = np.zeros((len(users), self.n_items_), dtype=np.float32)
        for row, u in enumerate(users):
            conditions[row, self.split_.train[u]] = 1.0
            if stage == "test":
                conditions[row, self.split_.val[u]] = 1.0
        return conditions

    def recommend(self, users=None, k: int = 10, stage: str = "test") -> list[np.ndarray]:
        """Per-user top-k item indices, excluding each user's known history."""
        check_is_fitted(self, "params_")
        users = list(range(self.n_users_)) if users is None else [int(u) for u in users]
        scores = sample_preferences_batch(
            self.params_, self.schedule_, self.basis_, self._stage_conditions(users, stage),
            guidance=self.guidance, rng=np.random.default_rng([self.seed, 0x5EED]))
        return [recommend_topk(scores[row], self.split_.excluded(u, stage), k)
                for row, u in enumerate(users)]

    def evaluate(self, ks=(10, 20), stage: str = "test") -> Metrics:
        """Recall/NDCG of the fitted model on the held-out stage."""
        check_is_fitted(self, "params_")
        users = [u for u in range(self.n_users_)
                 if self.split_.held_out(u, stage).size > 0]
        scores = sample_preferences_batch(
            self.params_, self.schedule_, self.basis_, self._stage_conditions(users, stage),
            guidance=self.guidance, rng=np.random.default_rng([self.seed, 0xE7A1]))
        row_of = {u: row for row, u in enumerate(users)}
        kmax = max(ks)

        def ranked(u):
            return recommend_topk(scores[row_of[u]], self.split_.excluded(u, stage), kmax)

        return evaluate(self.split_, ranked, ks=ks, stage=stage, seed=self.seed)
