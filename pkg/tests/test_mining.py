import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from upreid.mining import (MiningStrategy, positive_indices, resolve_kind, select_negative_queue,
                           select_online_pair, select_online_pairs, select_positives)
from upreid.partition import PatchLayout
from upreid.queue_bank import new_bank

from conftest import unit_rows


def test_aliases():
    assert resolve_kind("symmetric") == "horizontally_symmetric"
    assert resolve_kind("random") == "random_positive"
    assert resolve_kind("online_hardest_positive") == "online_hardest_positive"
    with pytest.raises(ValueError, match="unknown"):
        resolve_kind("hardest")


def test_symmetric_positives(rng):
    feats = unit_rows(rng, 8, 4)
    layout = PatchLayout(8)
    s = MiningStrategy("symmetric")
    assert torch.equal(select_positives(s, 3, feats, layout), feats[[2, 3]])
    assert set(positive_indices(s, 4, layout)) == {3, 4} == set(positive_indices(s, 3, layout))


def test_symmetric_independent_of_rng(rng):
    feats = unit_rows(rng, 8, 4)
    a = select_positives(MiningStrategy("symmetric", np.random.default_rng(1)), 5, feats, PatchLayout(8))
    b = select_positives(MiningStrategy("symmetric", np.random.default_rng(99)), 5, feats, PatchLayout(8))
    assert torch.equal(a, b)


def test_random_positive_is_seeded_and_never_self(rng):
    feats = unit_rows(rng, 4, 4)
    layout = PatchLayout(4)
    draw = lambda seed: select_positives(MiningStrategy("random", np.random.default_rng(seed)), 1, feats, layout)
    assert torch.equal(draw(5), draw(5))
    picks = positive_indices(MiningStrategy("random", np.random.default_rng(0)), 1, layout, batch=2000)
    assert set(picks.tolist()) == {2, 3, 4}
    counts = np.bincount(picks, minlength=5)[2:]
    assert counts.min() > 550  # roughly uniform over the three others


@pytest.mark.parametrize("i", [0, 9])
def test_positive_index_range(i):
    with pytest.raises(IndexError):
        positive_indices(MiningStrategy("symmetric"), i, PatchLayout(8))


def test_batched_random_selection_per_image(rng):
    kp = unit_rows(rng, 3 * 4, 4).reshape(3, 4, 4)
    s = MiningStrategy("random", np.random.default_rng(2))
    out = select_positives(s, 2, kp, PatchLayout(4))
    assert out.shape == (3, 1, 4)
    idx = positive_indices(MiningStrategy("random", np.random.default_rng(2)), 2, PatchLayout(4), batch=3)
    for b in range(3):
        assert torch.equal(out[b, 0], kp[b, idx[b] - 1])


def test_online_pair_by_construction():
    q = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    k = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
    # q1.k2 = -1 is the smallest
    assert select_online_pair(q, k) == (1, 2)


def test_online_tie_break():
    v = torch.ones(4, 3, dtype=torch.float64) / 3 ** 0.5
    assert select_online_pair(v, v) == (1, 1)


@given(seed=st.integers(0, 2**32 - 1), M=st.sampled_from([2, 4, 6, 8]))
def test_online_pair_matches_exhaustive_scan(seed, M):
    rng = np.random.default_rng(seed)
    q, k = unit_rows(rng, M, 5), unit_rows(rng, M, 5)
    best, arg = None, None
    for i, p in itertools.product(range(M), range(M)):
        s = float(q[i] @ k[p])
        if best is None or s < best:
            best, arg = s, (i + 1, p + 1)
    assert select_online_pair(q, k) == arg


def test_batched_online_matches_single(rng):
    q, k = unit_rows(rng, 20, 4).reshape(5, 4, 4), unit_rows(rng, 20, 4).reshape(5, 4, 4)
    pairs = select_online_pairs(q, k)
    assert [tuple(p) for p in pairs.tolist()] == [select_online_pair(q[b], k[b]) for b in range(5)]


def test_negative_routing():
    bank = new_bank(8, 6, 4, rng=0)
    assert torch.equal(select_negative_queue(5, bank), bank.negatives(5))
    assert torch.equal(select_negative_queue(5, bank), select_negative_queue(5, bank))
    with pytest.raises(IndexError, match="level 0"):
        select_negative_queue(0, bank)
    with pytest.raises(IndexError):
        select_negative_queue(9, bank)
