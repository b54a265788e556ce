import numpy as np
import pytest
import torch

from upreid.queue_bank import QueueBank, enqueue, negatives, new_bank

from conftest import unit_rows


def test_construction():
    bank = new_bank(8, 16, 8, rng=0)
    assert bank.levels == 9
    for level in range(9):
        q = negatives(bank, level)
        assert q.shape == (16, 8)
        assert torch.allclose(q.norm(dim=1), torch.ones(16), atol=1e-6)


@pytest.mark.parametrize("args", [(0, 4, 4), (2, 0, 4), (2, 4, 0)])
def test_bad_sizes(args):
    with pytest.raises(ValueError):
        new_bank(*args)


def test_same_seed_same_contents():
    a, b = new_bank(2, 5, 3, rng=11), new_bank(2, 5, 3, rng=11)
    assert all(torch.equal(a.negatives(i), b.negatives(i)) for i in range(3))


def test_fifo_order(rng):
    bank = new_bank(1, 4, 3, rng=0, dtype=torch.float64)
    a, b, c, d, e = unit_rows(rng, 5, 3)
    enqueue(bank, 1, torch.stack([a, b, c, d]))
    enqueue(bank, 1, e[None])
    assert torch.equal(negatives(bank, 1), torch.stack([b, c, d, e]))


def test_full_replacement_and_wraparound(rng):
    bank = new_bank(1, 4, 3, rng=0, dtype=torch.float64)
    enqueue(bank, 0, unit_rows(rng, 3, 3))
    known = unit_rows(rng, 4, 3)
    enqueue(bank, 0, known)
    assert torch.equal(negatives(bank, 0), known)


def test_size_stays_constant_over_many_enqueues(rng):
    bank = new_bank(1, 7, 3, rng=0, dtype=torch.float64)
    history = [bank.negatives(0)]
    for b in [1, 3, 7, 2, 5, 6]:
        rows = unit_rows(rng, b, 3)
        bank.enqueue(0, rows)
        history.append(rows)
        assert bank.negatives(0).shape == (7, 3)
    # newest 7 rows overall, oldest first
    assert torch.equal(bank.negatives(0), torch.cat(history)[-7:])


def test_level_isolation(rng):
    bank = new_bank(4, 6, 3, rng=1, dtype=torch.float64)
    before = [bank.negatives(i) for i in range(5)]
    bank.enqueue(3, unit_rows(rng, 2, 3))
    for i in range(5):
        if i != 3:
            assert torch.equal(bank.negatives(i), before[i])
    assert not torch.equal(bank.negatives(3), before[3])


def test_snapshot_immutable(rng):
    bank = new_bank(1, 4, 3, rng=0, dtype=torch.float64)
    snap = bank.negatives(0)
    keep = snap.clone()
    bank.enqueue(0, unit_rows(rng, 2, 3))
    assert torch.equal(snap, keep)
    snap.zero_()
    assert not torch.equal(bank.negatives(0), snap)


def test_enqueue_errors(rng):
    bank = new_bank(2, 4, 3, rng=0, dtype=torch.float64)
    with pytest.raises(ValueError, match="capacity"):
        bank.enqueue(0, unit_rows(rng, 5, 3))
    with pytest.raises(ValueError):
        bank.enqueue(0, unit_rows(rng, 2, 4))
    with pytest.raises(ValueError, match="unit"):
        bank.enqueue(0, 2 * unit_rows(rng, 2, 3))
    with pytest.raises(IndexError):
        bank.enqueue(3, unit_rows(rng, 1, 3))
    with pytest.raises(IndexError):
        bank.negatives(-1)


def test_enqueue_detaches(rng):
    bank = new_bank(1, 4, 3, rng=0, dtype=torch.float64)
    rows = unit_rows(rng, 2, 3).requires_grad_(True)
    bank.enqueue(1, rows)
    assert not bank.negatives(1).requires_grad


def test_state_round_trip(rng):
    bank = new_bank(2, 5, 3, rng=0, dtype=torch.float64)
    bank.enqueue(1, unit_rows(rng, 3, 3))
    back = QueueBank.from_state(bank.state(), dtype=torch.float64)
    assert (back.M, back.N, back.D) == (2, 5, 3)
    for i in range(3):
        assert torch.equal(back.negatives(i), bank.negatives(i))
