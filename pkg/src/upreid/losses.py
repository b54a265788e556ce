"""Training objectives: MMD similarity consistency and (multi-positive) InfoNCE.

All contrastive terms are evaluated in log-sum-exp form; with temperature 0.1
a similarity of 1 already gives ``exp(10)`` per logit, so naive exponentials
lose precision long before they overflow.
"""
from dataclasses import dataclass
import math

import numpy as np
import torch

from upreid import kernels
from upreid.encoder import EmbeddingBatch
from upreid.errors import ContractError, NonFiniteError


@dataclass(frozen=True)
class LossWeights:
    lambda_g: float = 0.8
    lambda_p: float = 0.2
    tau1: float = 0.1
    tau2: float = 0.1
    # weight on the consistency term; 0 disables it (ablation baseline)
    lambda_c: float = 1.0

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError(f"temperatures must be > 0, got tau1={self.tau1}, tau2={self.tau2}")
        for name in ("lambda_g", "lambda_p", "lambda_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossReport:
    consist: float
    global_nce: float
    patch_mean: float
    inc: float
    total: float

    FIELDS = ("consist", "global_nce", "patch_mean", "inc", "total")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def _values(x) -> torch.Tensor:
    return x.values if isinstance(x, EmbeddingBatch) else torch.as_tensor(x)


def similarity_matrix(q, k) -> torch.Tensor:
    """``A(q, k) = q @ k.T`` for two ``B x D`` batches of unit rows."""
    q, k = _values(q), _values(k)
    if q.ndim != 2 or q.shape != k.shape:
        raise ValueError(f"similarity needs matching B x D batches, got {tuple(q.shape)} and {tuple(k.shape)}")
    return q @ k.T


def _as_samples(x, name):
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def _as_bandwidths(bandwidths):
    bw = np.atleast_1d(np.asarray(bandwidths, dtype=np.float64))
    if bw.size == 0 or not np.all(bw > 0):
        raise ValueError(f"bandwidths must be positive, got {bw}")
    return bw


def mmd2(samples_a, samples_b, bandwidths) -> float:
    """Biased squared MMD between two sets of scalars, sum-of-Gaussians kernel."""
    a = _as_samples(samples_a, "samples_a")
    b = _as_samples(samples_b, "samples_b")
    value, _ = kernels.mmd2_grad(a, b, _as_bandwidths(bandwidths), want_grad=False)
    return float(value)


def median_bandwidths(pooled) -> np.ndarray:
    """``(sigma/2, sigma, 2*sigma)`` with sigma the median pairwise |difference|."""
    sigma = kernels.median_abs_diff(np.asarray(pooled, dtype=np.float64).ravel())
    if not sigma > 0:
        sigma = 1.0  # all samples identical: any bandwidth gives MMD 0
    return np.array([0.5 * sigma, sigma, 2.0 * sigma])


class _MMD2Fn(torch.autograd.Function):
    """MMD^2 with gradient w.r.t. the first sample set only."""

    @staticmethod
    def forward(ctx, a, b, bandwidths):
        value, grad = kernels.mmd2_grad(
            a.detach().cpu().numpy().astype(np.float64),
            b.detach().cpu().numpy().astype(np.float64),
            bandwidths,
            want_grad=ctx.needs_input_grad[0],
        )
        if grad is not None:
            ctx.save_for_backward(torch.from_numpy(grad).to(a.dtype))
        return a.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None


def mmd2_differentiable(a: torch.Tensor, b: torch.Tensor, bandwidths) -> torch.Tensor:
    """As :func:`mmd2` on flattened tensors, differentiable in ``a``; ``b`` is treated as constant."""
    a = a.reshape(-1)
    b = b.detach().reshape(-1)
    if a.numel() == 0 or b.numel() == 0:
        raise ValueError("MMD needs non-empty samples")
    return _MMD2Fn.apply(a, b, _as_bandwidths(bandwidths))


def consistency_loss(q, k, q_r: EmbeddingBatch, k_r: EmbeddingBatch, bandwidths=None) -> torch.Tensor:
    """MMD between augmented-view and original-image similarity distributions.

    Gradients reach only ``q``: ``k`` comes from the EMA encoder and the
    original-image similarities are a fixed target. ``bandwidths`` default to
    the median heuristic over the pooled similarities, held constant for the
    backward pass.
    """
    for name, batch in (("q_r", q_r), ("k_r", k_r)):
        if not isinstance(batch, EmbeddingBatch):
            raise ContractError(f"{name} must be an EmbeddingBatch carrying grad_enabled=False")
        if batch.grad_enabled:
            raise ContractError(f"{name} is grad-enabled; original-image features must be detached")
    qv, kv = _values(q), _values(k).detach()
    rq, rk = q_r.values.detach(), k_r.values.detach()
    if not qv.shape == kv.shape == rq.shape == rk.shape:
        raise ValueError("consistency loss needs four batches of identical shape")
    aug = similarity_matrix(qv, kv)
    orig = similarity_matrix(rq, rk)
    if bandwidths is None:
        bandwidths = median_bandwidths(torch.cat([aug.detach().reshape(-1), orig.reshape(-1)]).cpu().numpy())
    loss = mmd2_differentiable(aug, orig, bandwidths)
    if not torch.isfinite(loss):
        raise NonFiniteError("consistency loss")
    return loss


def _nce(q, pos, negs, tau, where):
    # q: B x D, pos: B x P x D, negs: N x D
    pos_logits = torch.einsum("bd,bpd->bp", q, pos) / tau
    neg_logits = (q @ negs.T) / tau
    if not (torch.isfinite(pos_logits).all() and torch.isfinite(neg_logits).all()):
        raise NonFiniteError(where, "similarity")
    # -log(P / (P + Q)) = softplus(log Q - log P)
    gap = torch.logsumexp(neg_logits, dim=1) - torch.logsumexp(pos_logits, dim=1)
    return gap.clamp(min=0) + torch.log1p(torch.exp(-gap.abs()))


def patch_loss(q_i, positives, negs, tau2: float, reduce: bool = True) -> torch.Tensor:
    """Contrastive loss with a set of positives sharing the numerator.

    ``q_i`` is ``D`` or ``B x D``; ``positives`` is ``P x D`` or ``B x P x D``;
    ``negs`` is the ``N x D`` negative queue. Batched input is averaged unless
    ``reduce`` is false.
    """
    q = _values(q_i)
    pos = _values(positives).detach()
    negs = _values(negs).detach()
    single = q.ndim == 1
    if single:
        q, pos = q[None], pos[None]
    if pos.ndim != 3 or pos.shape[1] < 1:
        raise ValueError("positive set is empty")
    if tau2 <= 0:
        raise ValueError("temperature must be > 0")
    losses = _nce(q, pos, negs, tau2, "patch loss")
    if single:
        return losses[0]
    return losses.mean() if reduce else losses


def info_nce_global(q0, k0_pos, negs, tau1: float) -> torch.Tensor:
    """Single-positive InfoNCE; ``q0``/``k0_pos`` are ``D`` or row-aligned ``B x D``."""
    pos = _values(k0_pos).detach()
    return patch_loss(q0, pos.unsqueeze(-2), negs, tau1)


def intrinsic_loss(global_term, per_patch_terms, weights: LossWeights):
    """``lambda_g * L_g + lambda_p * mean(L_p_i)``; works on floats or tensors."""
    terms = list(per_patch_terms)
    if not terms:
        raise ValueError("need at least one patch term")
    patch_mean = sum(terms[1:], terms[0]) / len(terms)
    return weights.lambda_g * global_term + weights.lambda_p * patch_mean


def total_loss(consist, inc, global_nce=math.nan, patch_mean=math.nan) -> LossReport:
    consist, inc = float(consist), float(inc)
    return LossReport(consist=consist, global_nce=float(global_nce), patch_mean=float(patch_mean),
                      inc=inc, total=consist + inc)
