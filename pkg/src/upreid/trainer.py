"""Pre-training loop: two encoders, queue bank, and the combined objective.

One step, in order:

1. two augmented views + the untouched original per image, views split into
   ``M`` patches;
2. online encoder on the query view and patches (with gradients); EMA encoder
   on the key view and patches, and both encoders on the originals (without);
3. consistency, global, and patch losses against the *current* queues;
4. SGD step on the online encoder;
5. EMA update of the key encoder;
6. key features pushed into their queues.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from upreid import losses
from upreid.augmentation import make_views
from upreid.checkpoint import load_checkpoint, save_checkpoint
from upreid.config import TrainConfig, tiny_config
from upreid.data import Dataset, SyntheticSpec, gen_synthetic
from upreid.encoder import EmbeddingBatch, Encoder, EncoderConfig, ema_update, init_key_from_online, to_tensor
from upreid.errors import NonFiniteError
from upreid.losses import LossReport
from upreid.mining import MiningStrategy, positive_indices, select_online_pairs
from upreid.partition import PatchLayout
from upreid.queue_bank import QueueBank

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step",) + LossReport.FIELDS
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainState:
    cfg: TrainConfig
    enc_q: Encoder
    enc_k: Encoder
    bank: QueueBank
    optimizer: torch.optim.Optimizer
    mining: MiningStrategy
    data_rng: np.random.Generator
    step: int = 0

    @property
    def layout(self) -> PatchLayout:
        return PatchLayout(self.cfg.M)

    @property
    def dtype(self):
        return DTYPES[self.cfg.dtype]


@dataclass
class Views:
    view_q: torch.Tensor      # B x 3 x H x W
    view_k: torch.Tensor
    original: torch.Tensor
    patches_q: torch.Tensor   # (B*M) x 3 x h x w, image-major
    patches_k: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.view_q.shape[0]


@dataclass
class Targets:
    """Everything the loss consumes that must not carry gradient."""

    k0: torch.Tensor              # B x D
    k_patches: torch.Tensor       # B x M x D
    q_r: EmbeddingBatch
    k_r: EmbeddingBatch
    negatives: list[torch.Tensor]  # level 0..M, each N x D


@dataclass
class Frozen:
    """Data-dependent choices made once per step and held fixed for the gradient."""

    bandwidths: np.ndarray | None = None
    positives: dict = field(default_factory=dict)  # patch index -> key indices
    online_pairs: np.ndarray | None = None        # B x 2, 1-based (i, p)


def _seeded(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def init_state(cfg: TrainConfig) -> TrainState:
    dtype = DTYPES[cfg.dtype]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        enc_q = Encoder(cfg.encoder).to(dtype)
    enc_k = init_key_from_online(enc_q)
    bank = QueueBank(cfg.M, cfg.N, cfg.D, rng=_seeded(cfg.seed, 2), dtype=dtype)
    optimizer = torch.optim.SGD(enc_q.parameters(), lr=cfg.learning_rate,
                                momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    return TrainState(cfg=cfg, enc_q=enc_q, enc_k=enc_k, bank=bank, optimizer=optimizer,
                      mining=MiningStrategy(cfg.mining, _seeded(cfg.seed, 3)),
                      data_rng=_seeded(cfg.seed, 4))


def prepare_views(images, cfg: TrainConfig, rng: np.random.Generator, dtype=torch.float32) -> Views:
    bundles = [make_views(img, cfg.aug, cfg.M, rng) for img in images]
    patches = lambda attr: to_tensor([p for b in bundles for p in getattr(b, attr)], dtype)
    return Views(
        view_q=to_tensor([b.view_q for b in bundles], dtype),
        view_k=to_tensor([b.view_k for b in bundles], dtype),
        original=to_tensor([b.original for b in bundles], dtype),
        patches_q=patches("patches_q"),
        patches_k=patches("patches_k"),
    )


def compute_targets(state: TrainState, views: Views) -> Targets:
    with torch.no_grad():
        return _targets(state, views)


def _targets(state: TrainState, views: Views) -> Targets:
    B, M = views.batch_size, state.cfg.M
    need_orig = state.cfg.lambda_c > 0
    enc_q, enc_k = state.enc_q, state.enc_k
    return Targets(
        k0=enc_k(views.view_k),
        k_patches=enc_k(views.patches_k).reshape(B, M, -1),
        q_r=EmbeddingBatch(enc_q(views.original) if need_orig else torch.empty(0), False),
        k_r=EmbeddingBatch(enc_k(views.original) if need_orig else torch.empty(0), False),
        negatives=[state.bank.negatives(level) for level in range(M + 1)],
    )


def objective(enc_q: Encoder, views: Views, targets: Targets, cfg: TrainConfig,
              mining: MiningStrategy, frozen: Frozen | None = None):
    """Forward the online branch and assemble every loss term.

    Returns ``(total, components, frozen)``; ``components`` maps ``consist``
    (already weighted), ``global_nce``, ``patch_terms``, ``inc`` to tensors.
    Passing back the returned ``frozen`` re-evaluates the same objective with
    bandwidths and positive choices held fixed.
    """
    w = cfg.weights
    layout = PatchLayout(cfg.M)
    B, M = views.batch_size, cfg.M
    fresh = frozen is None
    frozen = frozen or Frozen()

    q0 = enc_q(views.view_q)
    qp = enc_q(views.patches_q).reshape(B, M, -1)
    kp = targets.k_patches

    if w.lambda_c > 0:
        if fresh:
            aug = losses.similarity_matrix(q0.detach(), targets.k0)
            orig = losses.similarity_matrix(targets.q_r.values, targets.k_r.values)
            frozen.bandwidths = losses.median_bandwidths(torch.cat([aug.reshape(-1), orig.reshape(-1)]).detach().cpu().numpy())
        consist = w.lambda_c * losses.consistency_loss(q0, targets.k0, targets.q_r, targets.k_r, frozen.bandwidths)
    else:
        consist = q0.new_zeros(())

    global_nce = losses.info_nce_global(q0, targets.k0, targets.negatives[0], w.tau1)

    if mining.kind == "online_hardest_positive":
        if fresh:
            frozen.online_pairs = select_online_pairs(qp, kp)
        pairs = torch.as_tensor(frozen.online_pairs)
        per_sample = q0.new_zeros(B)
        for i in torch.unique(pairs[:, 0]).tolist():
            rows = (pairs[:, 0] == i).nonzero().reshape(-1)
            pos = kp[rows, pairs[rows, 1] - 1].unsqueeze(1)
            per_sample = per_sample.index_put(
                (rows,), losses.patch_loss(qp[rows, i - 1], pos, targets.negatives[i], w.tau2, reduce=False))
        patch_terms = [per_sample.mean()]
    else:
        patch_terms = []
        for i in range(1, M + 1):
            if fresh:
                frozen.positives[i] = positive_indices(mining, i, layout, batch=B)
            idx = frozen.positives[i]
            if isinstance(idx, tuple):
                pos = kp[:, [j - 1 for j in idx]]
            else:
                pos = kp[torch.arange(B), torch.as_tensor(idx) - 1].unsqueeze(1)
            patch_terms.append(losses.patch_loss(qp[:, i - 1], pos, targets.negatives[i], w.tau2))

    inc = losses.intrinsic_loss(global_nce, patch_terms, w)
    total = consist + inc
    components = {"consist": consist, "global_nce": global_nce, "patch_terms": patch_terms, "inc": inc}
    return total, components, frozen


def _report(components, cfg: TrainConfig) -> LossReport:
    w = cfg.weights
    g = float(components["global_nce"].detach())
    terms = [float(t.detach()) for t in components["patch_terms"]]
    inc = losses.intrinsic_loss(g, terms, w)
    return losses.total_loss(float(components["consist"].detach()), inc, g, sum(terms) / len(terms))


def _check_finite(components, total):
    for name in ("consist", "global_nce", "inc"):
        if not torch.isfinite(components[name]):
            raise NonFiniteError(f"loss component '{name}'")
    for i, t in enumerate(components["patch_terms"], 1):
        if not torch.isfinite(t):
            raise NonFiniteError(f"loss component 'patch[{i}]'")
    if not torch.isfinite(total):
        raise NonFiniteError("loss component 'total'")


def train_step(state: TrainState, batch, cfg: TrainConfig | None = None) -> tuple[TrainState, LossReport]:
    """One optimisation step on a batch of images (arrays or ImageSamples)."""
    cfg = cfg or state.cfg
    images = [getattr(s, "pixels", s) for s in batch]
    if len(images) != cfg.batch_size:
        raise ValueError(f"expected a batch of {cfg.batch_size} images, got {len(images)}")
    views = prepare_views(images, cfg, _seeded(cfg.seed, 1, state.step), state.dtype)
    targets = compute_targets(state, views)
    total, components, _ = objective(state.enc_q, views, targets, cfg, state.mining)
    _check_finite(components, total)

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    ema_update(state.enc_k, state.enc_q, cfg.m)

    # enqueue only after the loss consumed the previous queue contents
    state.bank.enqueue(0, targets.k0)
    for i in range(1, cfg.M + 1):
        state.bank.enqueue(i, targets.k_patches[:, i - 1])
    state.step += 1
    return state, _report(components, cfg)


def batches(state: TrainState, n_items: int, batch_size: int):
    """Endless stream of index batches over shuffled epochs."""
    if n_items < batch_size:
        raise ValueError(f"dataset of {n_items} images is smaller than batch_size {batch_size}")
    pending: list[int] = []
    while True:
        while len(pending) < batch_size:
            pending.extend(state.data_rng.permutation(n_items).tolist())
        yield pending[:batch_size]
        pending = pending[batch_size:]


def fit(cfg: TrainConfig, dataset: Dataset, on_step=None) -> tuple[TrainState, list[LossReport]]:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    state = init_state(cfg)
    reports = []
    stream = batches(state, len(dataset), cfg.batch_size)
    for _ in range(cfg.steps):
        idx = next(stream)
        state, report = train_step(state, [dataset[i] for i in idx], cfg)
        reports.append(report)
        if on_step is not None:
            on_step(state, report)
    return state, reports


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    out = {}
    for prefix, enc in (("q", state.enc_q), ("k", state.enc_k)):
        for name, p in enc.named_parameters():
            out[f"{prefix}.{name}"] = p.detach().cpu().numpy()
    out.update(state.bank.state())
    return out


def save_state(state: TrainState, path) -> Path:
    cfg = state.cfg
    meta = {
        "channels": ",".join(str(c) for c in cfg.channels),
        "embedding_dim": cfg.D,
        "hidden_dim": cfg.encoder.head_hidden,
        "M": cfg.M,
        "N": cfg.N,
        "step": state.step,
        "seed": cfg.seed,
    }
    return save_checkpoint(path, state_tensors(state), meta)


def load_encoder(path, which: str = "q", dtype=torch.float32) -> Encoder:
    """Rebuild the online (``q``) or EMA (``k``) encoder from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    try:
        enc_cfg = EncoderConfig(channels=tuple(int(c) for c in meta["channels"].split(",")),
                                embedding_dim=int(meta["embedding_dim"]),
                                hidden_dim=int(meta["hidden_dim"]))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: checkpoint lacks encoder metadata") from exc
    enc = Encoder(enc_cfg).to(dtype)
    prefix = which + "."
    state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith(prefix)}
    enc.load_state_dict(state)
    return enc


def dataset_for(cfg: TrainConfig) -> Dataset:
    """The configured training set: an image directory or the synthetic generator."""
    from upreid.data import load_image_dir, split_holdout

    if cfg.data_dir:
        data = load_image_dir(cfg.data_dir, cfg.data_layout)
        if data.split:
            keep = [i for i, s in enumerate(data.samples) if Path(s.source).name not in data.split]
            data = data.subset(keep)
        return data
    spec = SyntheticSpec(num_identities=cfg.synthetic_ids,
                         images_per_identity=cfg.synthetic_per_id + cfg.holdout,
                         image_size=tuple(cfg.aug.output_size),
                         symmetry_noise=cfg.symmetry_noise, seed=cfg.seed)
    data = gen_synthetic(spec)
    return split_holdout(data, cfg.holdout)[0] if cfg.holdout else data


def train(cfg: TrainConfig, dataset: Dataset, output_dir=None) -> tuple[Path, Path]:
    """Run ``cfg.steps`` steps; write ``checkpoint.bin`` and ``metrics.csv``."""
    out = Path(output_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fh = open(metrics_path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write run outputs under {out}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)

        def on_step(state, report):
            writer.writerow([state.step] + [repr(v) for v in report.as_row()])
            if state.step % 50 == 0:
                log.info("step %d total %.4f", state.step, report.total)

        state, _ = fit(cfg, dataset, on_step)
    ckpt = save_state(state, out / "checkpoint.bin")
    return ckpt, metrics_path


# ------------------------------------------------------------ verification

def _setup_check(cfg: TrainConfig, dataset: Dataset | None = None):
    state = init_state(cfg)
    if dataset is None:
        dataset = gen_synthetic(SyntheticSpec(num_identities=cfg.batch_size, images_per_identity=1,
                                              image_size=tuple(cfg.aug.output_size),
                                              seed=cfg.seed))
    images = [s.pixels for s in list(dataset)[:cfg.batch_size]]
    views = prepare_views(images, cfg, _seeded(cfg.seed, 1, 0), state.dtype)
    return state, views


def _select(components, which):
    if which == "total":
        return components["consist"] + components["inc"]
    if which == "consist":
        return components["consist"]
    if which == "global":
        return components["global_nce"]
    if which == "patch":
        terms = components["patch_terms"]
        return sum(terms[1:], terms[0]) / len(terms)
    raise ValueError(f"unknown loss component {which!r}")


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    loss: float


def grad_check_details(cfg: TrainConfig | None = None, component: str = "total", n_coords: int = 256,
                       eps: float = 1e-5, seed: int = 0, rel_floor: float = 1e-8) -> GradCheckResult:
    """Analytic vs central-difference gradient of a loss w.r.t. online-encoder parameters.

    Everything the loss treats as constant (EMA outputs, original-image
    features, queues, bandwidths, positive choices) is computed once at the
    unperturbed parameters and reused for every perturbed evaluation.
    Relative error is ``|a - n| / max(|a|, |n|, rel_floor)``.
    """
    cfg = cfg or tiny_config()
    state, views = _setup_check(cfg)
    targets = compute_targets(state, views)
    enc = state.enc_q
    total, components, frozen = objective(enc, views, targets, cfg, state.mining)
    loss = _select(components, component)
    params = [p for p in enc.parameters()]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    flat_grad = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1)
                           for g, p in zip(grads, params)]).numpy()

    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    total_n = int(offsets[-1])
    rng = np.random.default_rng(seed)
    coords = np.sort(rng.choice(total_n, size=min(n_coords, total_n), replace=False))

    def evaluate():
        with torch.no_grad():
            _, comps, _ = objective(enc, views, targets, cfg, state.mining, frozen)
            return float(_select(comps, component))

    numeric = np.empty(len(coords))
    with torch.no_grad():
        for n, c in enumerate(coords):
            pi = int(np.searchsorted(offsets, c, side="right") - 1)
            flat = params[pi].view(-1)
            j = int(c - offsets[pi])
            orig = flat[j].item()
            flat[j] = orig + eps
            plus = evaluate()
            flat[j] = orig - eps
            minus = evaluate()
            flat[j] = orig
            numeric[n] = (plus - minus) / (2 * eps)
    analytic = flat_grad[coords]
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
    return GradCheckResult(float(np.max(diff / denom)), float(np.max(diff)), analytic, numeric, float(loss.detach()))


def grad_check(cfg_tiny: TrainConfig | None = None, component: str = "total", **kwargs) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    return grad_check_details(cfg_tiny, component, **kwargs).max_rel_error


def stop_gradient_probe(cfg: TrainConfig | None = None) -> dict[str, float]:
    """Max |gradient| delivered by backprop of the total loss into each detached input.

    The key features, original-image features and queue snapshots are
    replaced by leaf tensors that *do* track gradients; any nonzero value
    reported here means a loss failed to cut the graph. ``theta_k`` reports
    the largest gradient found on the EMA encoder's parameters.
    """
    cfg = cfg or tiny_config()
    state, views = _setup_check(cfg)
    t = compute_targets(state, views)
    leaf = lambda x: x.detach().clone().requires_grad_(True)
    probes = {
        "k": leaf(t.k0),
        "k_i": leaf(t.k_patches),
        "q_r": leaf(t.q_r.values),
        "k_r": leaf(t.k_r.values),
        "queue": [leaf(n) for n in t.negatives],
    }
    targets = Targets(k0=probes["k"], k_patches=probes["k_i"],
                      q_r=EmbeddingBatch(probes["q_r"], False), k_r=EmbeddingBatch(probes["k_r"], False),
                      negatives=probes["queue"])
    total, _, _ = objective(state.enc_q, views, targets, cfg, state.mining)
    total.backward()
    for p in state.enc_k.parameters():
        p.requires_grad_(True)

    def worst(tensors):
        tensors = tensors if isinstance(tensors, list) else [tensors]
        return max(float(x.grad.abs().max()) if x.grad is not None else 0.0 for x in tensors)

    out = {name: worst(val) for name, val in probes.items()}

    # second pass: targets built with autograd live through the EMA encoder,
    # so only the losses' own detaches can keep gradient out of theta_k
    state.enc_q.zero_grad(set_to_none=True)
    live = _targets(state, views)
    live.q_r = EmbeddingBatch(live.q_r.values, False)
    live.k_r = EmbeddingBatch(live.k_r.values, False)
    total, _, _ = objective(state.enc_q, views, live, cfg, state.mining)
    total.backward()
    out["theta_k"] = worst(list(state.enc_k.parameters()))
    return out
