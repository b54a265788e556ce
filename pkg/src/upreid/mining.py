"""Positive and negative selection for the patch-level contrastive loss.

Three positive-selection strategies are supported:

``horizontally_symmetric``
    positives of patch ``i`` are the key-view patch at ``i`` and at its mirror
    position in the same stripe.
``random_positive``
    a single positive drawn uniformly from the key-view patches at positions
    other than ``i``.
``online_hardest_positive``
    only the least similar (query patch, key patch) pair of each image is
    used; see :func:`select_online_pair`.

Negatives for patch ``i`` always come from queue ``i`` (same location, other
images), whatever the positive strategy.
"""
from dataclasses import dataclass, field

import numpy as np
import torch

from upreid.partition import PatchLayout, symmetric_index
from upreid.queue_bank import QueueBank

KINDS = ("horizontally_symmetric", "random_positive", "online_hardest_positive")
ALIASES = {"symmetric": KINDS[0], "random": KINDS[1], "online": KINDS[2]}


def resolve_kind(name: str) -> str:
    kind = ALIASES.get(name, name)
    if kind not in KINDS:
        raise ValueError(f"unknown mining strategy {name!r}; choose from {sorted(ALIASES)}")
    return kind


@dataclass
class MiningStrategy:
    kind: str
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        self.kind = resolve_kind(self.kind)


def positive_indices(strategy: MiningStrategy, i: int, layout: PatchLayout, batch: int | None = None):
    """1-based key-patch indices forming P(i).

    Returns a tuple for the deterministic strategies; for ``random_positive``
    with ``batch`` set, an integer array with one draw per image.
    """
    if not 1 <= i <= layout.M:
        raise IndexError(f"patch index {i} outside 1..{layout.M}")
    if strategy.kind == "horizontally_symmetric":
        return (i, symmetric_index(i, layout))
    if strategy.kind == "random_positive":
        # uniform over the M - 1 other positions
        draw = strategy.rng.integers(1, layout.M, size=batch)
        return draw + (draw >= i)
    return (i,)


def select_positives(strategy: MiningStrategy, i: int, key_patch_feats, layout: PatchLayout) -> torch.Tensor:
    """Positive key features for query patch ``i``.

    ``key_patch_feats`` is ``M x D`` (one image) or ``B x M x D``; the result is
    ``P x D`` or ``B x P x D`` respectively.
    """
    feats = torch.as_tensor(key_patch_feats)
    single = feats.ndim == 2
    if single:
        feats = feats[None]
    if feats.shape[1] != layout.M:
        raise ValueError(f"expected {layout.M} key patches, got {feats.shape[1]}")
    idx = positive_indices(strategy, i, layout, batch=feats.shape[0])
    if isinstance(idx, tuple):
        out = feats[:, [j - 1 for j in idx]]
    else:
        out = feats[torch.arange(feats.shape[0]), torch.as_tensor(idx - 1)].unsqueeze(1)
    return out[0] if single else out


def select_online_pair(query_patch_feats, key_patch_feats) -> tuple[int, int]:
    """1-based ``(i, p)`` minimising ``q_i . k_p``; ties go to the smallest ``i`` then ``p``."""
    q = torch.as_tensor(query_patch_feats).detach()
    k = torch.as_tensor(key_patch_feats).detach()
    sims = (q @ k.T).reshape(-1)
    # argmin over a row-major flattening returns the first minimum
    flat = int(torch.argmin(sims))
    M = k.shape[0]
    return flat // M + 1, flat % M + 1


def select_online_pairs(query_patch_feats, key_patch_feats) -> np.ndarray:
    """Batched :func:`select_online_pair`: ``B x M x D`` inputs, ``B x 2`` 1-based output."""
    q = torch.as_tensor(query_patch_feats).detach()
    k = torch.as_tensor(key_patch_feats).detach()
    sims = torch.einsum("bid,bpd->bip", q, k).reshape(q.shape[0], -1)
    flat = torch.argmin(sims, dim=1).numpy()
    M = k.shape[1]
    return np.stack([flat // M + 1, flat % M + 1], axis=1)


def select_negative_queue(i: int, bank: QueueBank) -> torch.Tensor:
    """Snapshot of the same-location queue ``Q_i``; level 0 is reserved for the global loss."""
    if not 1 <= i <= bank.M:
        raise IndexError(f"patch index {i} outside 1..{bank.M}; level 0 is not a patch queue")
    return bank.negatives(i)
