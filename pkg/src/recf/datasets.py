"""Synthetic data with planted low-rank ratings and cluster-driven descriptions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SparseRatings


@dataclass
class PlantedDataset:
    ratings: SparseRatings
    descriptions: list[list[str]]
    truth: np.ndarray  # (N, M) noiseless ratings before clipping
    clusters: np.ndarray  # (M,) cluster of each item


def make_planted(n_users=200, n_items=150, density=0.5, n_clusters=6, words_per_cluster=6,
                 words_per_item=3, item_spread=0.15, noise=0.25, item_skew=0.0, seed=0) -> PlantedDataset:
    """Rank-3 ratings ``3 + a_u . b_v`` on a 1-5 scale.

    User tastes ``a_u`` are standard normal in 2-D; item traits ``b_v`` sit
    close to one of ``n_clusters`` centres on a circle, so an item's cluster
    nearly determines its column of the rating matrix. Each item is described
    by ``words_per_item`` distinct words from its cluster's private
    vocabulary. A ``density`` fraction of cells is observed, items being
    drawn with Zipf-like popularity ``rank ** -item_skew``, with Gaussian
    ``noise`` added and scores clipped into the scale.
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_clusters) / n_clusters
    centres = np.column_stack([np.cos(angles), np.sin(angles)])
    clusters = rng.integers(n_clusters, size=n_items)
    b = centres[clusters] + item_spread * rng.standard_normal((n_items, 2))
    a = rng.standard_normal((n_users, 2))
    truth = 3.0 + a @ b.T

    n_obs = int(round(density * n_users * n_items))
    popularity = (1.0 + rng.permutation(n_items)) ** -item_skew
    p = np.tile(popularity / popularity.sum() / n_users, n_users)
    flat = rng.choice(n_users * n_items, size=n_obs, replace=False, p=p / p.sum())
    users, items = np.divmod(flat, n_items)
    scores = np.clip(truth[users, items] + noise * rng.standard_normal(n_obs), 1.0, 5.0)
    ratings = SparseRatings(n_users, n_items, users, items, scores, scale=(1.0, 5.0))

    descriptions = []
    for v in range(n_items):
        picks = rng.choice(words_per_cluster, size=words_per_item, replace=False)
        descriptions.append([f"topic{clusters[v]}word{j}" for j in picks])
    return PlantedDataset(ratings, descriptions, truth, clusters)
