"""Per-level FIFO queues of EMA-encoder features used as contrastive negatives.

Level 0 holds holistic-view keys; level ``i`` in ``1..M`` holds keys of patch
position ``i``. Every queue is a fixed-size ring buffer that is full from
construction on.
"""
import numpy as np
import torch

UNIT_TOL = 1e-4


class QueueBank:
    def __init__(self, M: int, N: int, D: int, rng=None, dtype=torch.float32):
        if M < 1:
            raise ValueError(f"need at least one patch level, got M={M}")
        if N < 1:
            raise ValueError(f"queue capacity must be >= 1, got N={N}")
        if D < 1:
            raise ValueError(f"feature dim must be >= 1, got D={D}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.M, self.N, self.D = M, N, D
        init = rng.standard_normal((M + 1, N, D))
        init /= np.linalg.norm(init, axis=2, keepdims=True)
        self._queues = torch.from_numpy(init).to(dtype)
        # index of the oldest entry == next slot to overwrite
        self._cursor = [0] * (M + 1)

    @property
    def levels(self) -> int:
        return self.M + 1

    @property
    def dtype(self):
        return self._queues.dtype

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.M:
            raise IndexError(f"queue level {level} outside 0..{self.M}")

    @torch.no_grad()
    def enqueue(self, level: int, feats) -> None:
        """Append ``b`` rows as the newest entries, evicting the ``b`` oldest."""
        self._check_level(level)
        feats = torch.as_tensor(feats).detach().to(self._queues.dtype)
        if feats.ndim != 2 or feats.shape[1] != self.D:
            raise ValueError(f"expected b x {self.D} features, got {tuple(feats.shape)}")
        b = feats.shape[0]
        if b > self.N:
            raise ValueError(f"cannot enqueue {b} rows into a queue of capacity {self.N}")
        norms = feats.norm(dim=1)
        if not torch.all((norms - 1).abs() <= UNIT_TOL):
            raise ValueError("enqueued features must be unit-norm rows")
        start = self._cursor[level]
        idx = (start + torch.arange(b)) % self.N
        self._queues[level, idx] = feats
        self._cursor[level] = (start + b) % self.N

    def negatives(self, level: int) -> torch.Tensor:
        """Copy of queue ``level`` ordered oldest to newest (``N x D``)."""
        self._check_level(level)
        return torch.roll(self._queues[level], shifts=-self._cursor[level], dims=0).clone()

    def state(self) -> dict[str, np.ndarray]:
        """Queue contents in age order, keyed for the checkpoint container."""
        return {f"bank.q{level}": self.negatives(level).numpy() for level in range(self.levels)}

    @classmethod
    def from_state(cls, tensors: dict[str, np.ndarray], dtype=torch.float32) -> "QueueBank":
        levels = sorted(int(k[len("bank.q"):]) for k in tensors if k.startswith("bank.q"))
        if not levels or levels != list(range(len(levels))):
            raise ValueError("checkpoint has no complete queue bank")
        first = tensors["bank.q0"]
        bank = cls.__new__(cls)
        bank.M, bank.N, bank.D = len(levels) - 1, first.shape[0], first.shape[1]
        bank._queues = torch.from_numpy(np.stack([tensors[f"bank.q{i}"] for i in levels])).to(dtype)
        bank._cursor = [0] * len(levels)
        return bank


def new_bank(M: int, N: int, D: int, rng=None, dtype=torch.float32) -> QueueBank:
    return QueueBank(M, N, D, rng=rng, dtype=dtype)


def enqueue(bank: QueueBank, level: int, feats) -> None:
    bank.enqueue(level, feats)


def negatives(bank: QueueBank, level: int) -> torch.Tensor:
    return bank.negatives(level)
