"""Pairwise-ranking matrix factorization reference baseline.

Plain stochastic gradient descent on user/item factor matrices with the
classic pairwise objective: for sampled (user, seen item, unseen item)
triples, push the seen item's score above the unseen one.  Kept free of the
main pipeline's machinery so it can serve as an independent floor in
comparisons.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset, TRAIN
from .seeding import substream


class BPRMatrixFactorization:
    def __init__(self, num_users: int, num_items: int, factors: int = 32,
                 lr: float = 0.05, reg: float = 0.002, seed: int = 0):
        self.num_users = num_users
        self.num_items = num_items
        self.lr = lr
        self.reg = reg
        rng = substream(seed, "mf-init")
        scale = 0.1
        self.user_factors = rng.normal(0, scale, size=(num_users, factors))
        self.item_factors = rng.normal(0, scale, size=(num_items, factors))
        self._seed = seed

    def fit(self, ds: InteractionDataset, epochs: int = 30) -> "BPRMatrixFactorization":
        positives = ds.positives_by_user(TRAIN)
        pos_sets = [set(int(x) for x in items) for items in positives]
        users_with_items = [u for u in range(ds.num_users) if positives[u].size]
        train_size = int((ds.split_assignment == TRAIN).sum())

        for epoch in range(epochs):
            rng = substream(self._seed, "mf-epoch", epoch)
            for _ in range(train_size):
                u = users_with_items[rng.integers(len(users_with_items))]
                pos = int(positives[u][rng.integers(len(positives[u]))])
                while True:
                    neg = int(rng.integers(ds.num_items))
                    if neg not in pos_sets[u]:
                        break
                self._sgd_step(u, pos, neg)
        return self

    def _sgd_step(self, u: int, pos: int, neg: int) -> None:
        pu = self.user_factors[u]
        vi = self.item_factors[pos]
        vj = self.item_factors[neg]
        x = pu @ (vi - vj)
        e = 1.0 / (1.0 + np.exp(x))  # sigmoid(-x)
        self.user_factors[u] += self.lr * (e * (vi - vj) - self.reg * pu)
        self.item_factors[pos] += self.lr * (e * pu - self.reg * vi)
        self.item_factors[neg] += self.lr * (-e * pu - self.reg * vj)

    def embeddings(self) -> np.ndarray:
        """Stacked (users + items) x factors table for the shared evaluator."""
        return np.vstack([self.user_factors, self.item_factors])
