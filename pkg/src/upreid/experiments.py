"""Multi-run harnesses: positive-selection comparison and constraint ablation."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from upreid import trainer
from upreid.config import TrainConfig
from upreid.data import SyntheticSpec, gen_synthetic, query_gallery, split_holdout
from upreid.evaluation import RetrievalResult, evaluate_encoder
from upreid.mining import KINDS

log = logging.getLogger(__name__)

DEFAULT_HOLDOUT = 5

# name -> (lambda_c, lambda_p); lambda_g keeps its configured value
ABLATION_VARIANTS = {
    "baseline": (0.0, 0.0),
    "baseline+CC": (1.0, 0.0),
    "baseline+ICC": (0.0, None),
    "baseline+CC+ICC": (1.0, None),
}


def synthetic_split(cfg: TrainConfig, holdout: int = DEFAULT_HOLDOUT):
    """Training set and held-out retrieval set of the same synthetic identities."""
    holdout = cfg.holdout or holdout
    spec = SyntheticSpec(num_identities=cfg.synthetic_ids,
                         images_per_identity=cfg.synthetic_per_id + holdout,
                         image_size=tuple(cfg.aug.output_size),
                         symmetry_noise=cfg.symmetry_noise, seed=cfg.seed)
    return split_holdout(gen_synthetic(spec), holdout)


def retrieval(state_or_encoder, held) -> RetrievalResult:
    enc = getattr(state_or_encoder, "enc_q", state_or_encoder)
    qi, gi = query_gallery(held)
    return evaluate_encoder(enc, [held[i].pixels for i in qi], [held[i].identity for i in qi],
                            [held[i].pixels for i in gi], [held[i].identity for i in gi])


def step_variance(series) -> float:
    """Variance of step-to-step changes of a loss curve."""
    return float(np.var(np.diff(np.asarray(series, dtype=np.float64))))


@dataclass
class MiningSummary:
    strategy: str
    final_mean: float      # mean patch loss over the last ``window`` steps, averaged over seeds
    step_variance: float   # variance of successive differences, averaged over seeds


def compare_mining(cfg: TrainConfig, seeds, strategies=KINDS, window: int = 50):
    """Train once per (strategy, seed) on identical data; collect patch-loss curves.

    Returns ``(curves, summaries)`` where ``curves[(strategy, seed)]`` is the
    per-step mean patch loss.
    """
    curves = {}
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        train_set, _ = synthetic_split(run_cfg)
        for strategy in strategies:
            _, reports = trainer.fit(run_cfg.replace(mining=strategy), train_set)
            curves[(strategy, seed)] = [r.patch_mean for r in reports]
            log.info("compare-mining seed=%s %s done", seed, strategy)
    summaries = []
    for strategy in strategies:
        runs = [curves[(strategy, s)] for s in seeds]
        summaries.append(MiningSummary(
            strategy=strategy,
            final_mean=float(np.mean([np.mean(r[-window:]) for r in runs])),
            step_variance=float(np.mean([step_variance(r) for r in runs])),
        ))
    return curves, summaries


def write_curves(curves: dict, path) -> Path:
    """Long-format CSV: ``step,seed,strategy,patch_loss``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "seed", "strategy", "patch_loss"])
        for (strategy, seed), series in curves.items():
            for step, value in enumerate(series, 1):
                w.writerow([step, seed, strategy, repr(value)])
    return path


def plot_curves(curves: dict, path, title="patch-wise contrastive loss") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    colors = {}
    for (strategy, seed), series in curves.items():
        color = colors.setdefault(strategy, f"C{len(colors)}")
        label = strategy if seed == min(s for (st, s) in curves if st == strategy) else None
        ax.plot(np.arange(1, len(series) + 1), series, color=color, alpha=0.8, lw=1, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


@dataclass
class AblationRow:
    variant: str
    seed: int
    lambda_c: float
    lambda_p: float
    map: float
    rank1: float


def ablate(cfg: TrainConfig, seeds, variants=ABLATION_VARIANTS) -> list[AblationRow]:
    rows = []
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        train_set, held = synthetic_split(run_cfg)
        for name, (lambda_c, lambda_p) in variants.items():
            lambda_p = cfg.lambda_p if lambda_p is None else lambda_p
            state, _ = trainer.fit(run_cfg.replace(lambda_c=lambda_c, lambda_p=lambda_p), train_set)
            res = retrieval(state, held)
            rows.append(AblationRow(name, seed, lambda_c, lambda_p, res.map, res.rank(1)))
            log.info("ablate seed=%s %s mAP=%.4f", seed, name, res.map)
    return rows


def ablation_violations(rows: list[AblationRow], full="baseline+CC+ICC",
                        singles=("baseline+CC", "baseline+ICC")) -> dict[int, list[str]]:
    """Seeds where the full model's mAP falls below a single-constraint variant."""
    by_seed: dict = {}
    for r in rows:
        by_seed.setdefault(r.seed, {})[r.variant] = r.map
    out = {}
    for seed, maps in by_seed.items():
        worse = [s for s in singles if maps[full] < maps[s]]
        if worse:
            out[seed] = worse
    return out


def write_ablation(rows: list[AblationRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "lambda_c", "lambda_p", "map", "rank1"])
        for r in rows:
            w.writerow([r.variant, r.seed, r.lambda_c, r.lambda_p, repr(r.map), repr(r.rank1)])
    return path
