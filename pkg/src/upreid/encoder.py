"""Online/EMA encoder pair: small conv trunk + 2-layer projection head.

The trunk has no batch-coupled normalization, so an image's embedding never
depends on the rest of its batch. Global average pooling before the head lets
one set of weights embed both holistic views and patches.
"""
import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from upreid.errors import NonFiniteError


@dataclass(frozen=True)
class EncoderConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    embedding_dim: int = 128
    hidden_dim: int | None = None  # defaults to 2 * embedding_dim

    @property
    def head_hidden(self) -> int:
        return self.hidden_dim or 2 * self.embedding_dim


class Encoder(nn.Module):
    """Feature encoder followed by an MLP projection head.

    Smooth activations (SiLU) and average pooling keep the network
    differentiable everywhere, which finite-difference checks rely on.
    Pixels are shifted/scaled by fixed constants, weights use He-normal init
    and biases start at zero. With PyTorch's default init a fresh encoder
    maps every image to nearly the same direction, so the batch similarity
    distribution collapses to a spike and pre-normalisation norms are tiny.
    """

    PIXEL_MEAN = 0.5
    PIXEL_STD = 0.25

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = 3
        for i, c_out in enumerate(cfg.channels):
            layers += [
                (f"conv{i}", nn.Conv2d(c_in, c_out, 3, padding=1)),
                (f"act{i}", nn.SiLU()),
                (f"pool{i}", nn.AvgPool2d(2, ceil_mode=True)),
            ]
            c_in = c_out
        layers += [
            ("gap", nn.AdaptiveAvgPool2d(1)),
            ("flatten", nn.Flatten()),
            ("fc1", nn.Linear(c_in, cfg.head_hidden)),
            ("fc_act", nn.SiLU()),
            ("fc2", nn.Linear(cfg.head_hidden, cfg.embedding_dim)),
        ]
        self.layers = nn.ModuleDict(layers)
        for mod in self.modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                nn.init.zeros_(mod.bias)

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    def forward(self, x: torch.Tensor, check_finite: bool = True) -> torch.Tensor:
        x = (x - self.PIXEL_MEAN) / self.PIXEL_STD
        for name, layer in self.layers.items():
            x = layer(x)
            if check_finite and not torch.isfinite(x).all():
                raise NonFiniteError(f"encoder layer '{name}'")
        return F.normalize(x, dim=1)


@dataclass
class EmbeddingBatch:
    """``B x D`` unit-norm rows and whether gradients may flow through them."""

    values: torch.Tensor
    grad_enabled: bool

    def __len__(self):
        return self.values.shape[0]

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy()


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack ``H x W x 3`` arrays (or an ``N x H x W x 3`` array) into ``N x 3 x H x W``."""
    if isinstance(images, torch.Tensor):
        return images.to(dtype)
    arr = np.stack(images) if isinstance(images, (list, tuple)) else np.asarray(images)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def encode(params: Encoder, images, grad: bool) -> EmbeddingBatch:
    dtype = next(params.parameters()).dtype
    x = to_tensor(images, dtype)
    if grad:
        out = params(x)
    else:
        with torch.no_grad():
            out = params(x)
    return EmbeddingBatch(out, grad_enabled=grad)


def _pairs(theta_k: nn.Module, theta_q: nn.Module):
    named_k = dict(theta_k.named_parameters())
    named_q = dict(theta_q.named_parameters())
    if named_k.keys() != named_q.keys():
        raise ValueError("encoders have different parameter names")
    for name, pk in named_k.items():
        pq = named_q[name]
        if pk.shape != pq.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(pk.shape)} vs {tuple(pq.shape)}")
        yield pk, pq


@torch.no_grad()
def ema_update(theta_k: nn.Module, theta_q: nn.Module, m: float) -> nn.Module:
    """In place: ``theta_k <- m * theta_k + (1 - m) * theta_q``.

    ``lerp`` keeps both limits exact: ``m = 0`` copies ``theta_q`` and equal
    parameters stay bit-identical for any ``m``.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {m}")
    for pk, pq in list(_pairs(theta_k, theta_q)):
        pk.lerp_(pq, 1.0 - m)
    return theta_k


def init_key_from_online(theta_q: nn.Module) -> nn.Module:
    """Independent copy of the online encoder that never receives gradients."""
    theta_k = copy.deepcopy(theta_q)
    for p in theta_k.parameters():
        p.requires_grad_(False)
    return theta_k
