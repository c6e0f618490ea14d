"""Synthetic implicit-feedback corpora for tests, demos, and calibration."""
from __future__ import annotations

import numpy as np

from .data import InteractionMatrix, interactions_from_rows


def two_block_dataset(n_users: int = 200, n_items: int = 60) -> InteractionMatrix:
    """Two disjoint item blocks; each user interacts with every item of theirs.

    The separable structure is trivially learnable: the first half of the
    users own the first half of the items.
    """
    if n_items % 2 or n_users < 2:
        raise ValueError("need an even n_items and at least 2 users")
    half = n_items // 2
    blocks = (np.arange(half), np.arange(half, n_items))
    rows = [blocks[0] if u < n_users // 2 else blocks[1] for u in range(n_users)]
    return interactions_from_rows(rows, n_items=n_items,
                                  user_ids=[f"u{u}" for u in range(n_users)],
                                  item_ids=[f"i{i}" for i in range(n_items)])


def clustered_dataset(
    n_users: int = 300,
    n_items: int = 240,
    n_clusters: int = 4,
    adoption: float = 0.45,
    p_second_cluster: float = 0.35,
    noise: float = 0.02,
    pop_decay: float = 0.97,
    min_interactions: int = 8,
    seed: int = 0,
) -> InteractionMatrix:
    """Overlapping taste clusters with within-cluster popularity skew.

    Users draw one (sometimes two) clusters and adopt each cluster item with
    a popularity-weighted probability, plus a little cross-cluster noise, so
    conditioning alone does not trivially solve the dataset.
    """
    if n_items % n_clusters:
        raise ValueError("n_items must be divisible by n_clusters")
    rng = np.random.default_rng(seed)
    per = n_items // n_clusters
    cluster_items = [np.arange(c * per, (c + 1) * per) for c in range(n_clusters)]
    popularity = pop_decay ** np.arange(per)  # skew within each cluster

    rows = []
    for _ in range(n_users):
        clusters = [rng.integers(n_clusters)]
        if rng.random() < p_second_cluster:
            other = (clusters[0] + 1 + rng.integers(n_clusters - 1)) % n_clusters
            clusters.append(other)
        liked: set[int] = set()
        while len(liked) < min_interactions:
            for weight, c in zip((1.0, 0.6), clusters):
                take = rng.random(per) < adoption * weight * popularity
                liked.update(cluster_items[c][take].tolist())
            extra = rng.random(n_items) < noise
            liked.update(np.flatnonzero(extra).tolist())
        rows.append(sorted(liked))
    return interactions_from_rows(rows, n_items=n_items,
                                  user_ids=[f"u{u}" for u in range(n_users)],
                                  item_ids=[f"i{i}" for i in range(n_items)])


def write_interactions_file(m: InteractionMatrix, path, sep: str = "\t") -> None:
    """Materialize a corpus as a delimited interaction file.

    A header line is always written: the loader treats a non-numeric first
    token on line 1 as a header, and the synthetic IDs are non-numeric.
    """
    with open(path, "w") as fh:
        fh.write(f"user{sep}item\n")
        for u in range(m.n_users):
            for i in m.rows[u]:
                fh.write(f"{m.user_ids[u]}{sep}{m.item_ids[int(i)]}\n")
