"""Block-structured synthetic interaction data for quick end-to-end checks.

Users and items are partitioned into aligned blocks; each user interacts
mostly with items from their own block.  A model that learns anything about
the block structure should rank within-block items far above the rest.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset
from .seeding import substream


def make_block_dataset(num_users: int = 200, num_items: int = 200, num_blocks: int = 10,
                       within_rate: float = 0.9, interactions_per_user: int = 15,
                       seed: int = 0) -> InteractionDataset:
    """Generate a deduplicated block-diagonal interaction dataset (unsplit)."""
    if num_users % num_blocks or num_items % num_blocks:
        raise ValueError("block count must divide both user and item counts")
    users_per_block = num_users // num_blocks
    items_per_block = num_items // num_blocks

    pairs: list[tuple[int, int]] = []
    for u in range(num_users):
        rng = substream(seed, "synthetic", u)
        block = u // users_per_block
        block_items = np.arange(block * items_per_block, (block + 1) * items_per_block)
        other_items = np.setdiff1d(np.arange(num_items), block_items)

        n_within = int(rng.binomial(interactions_per_user, within_rate))
        n_within = min(n_within, len(block_items))
        n_out = min(interactions_per_user - n_within, len(other_items))
        chosen = np.concatenate([
            rng.choice(block_items, size=n_within, replace=False),
            rng.choice(other_items, size=n_out, replace=False),
        ])
        pairs.extend((u, int(i)) for i in chosen)

    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        interactions=np.asarray(pairs, dtype=np.int64),
    )
