"""Command-line entry point.

Subcommands: gen-data, pretrain, evaluate, gradcheck, compare-mining, ablate,
plot. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
import argparse
import csv
import datetime as dt
import json
import logging
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from upreid import __version__
from upreid.checkpoint import CheckpointError
from upreid.config import ConfigError, TrainConfig, build_config, load_config_file, render_config, tiny_config
from upreid.errors import NonFiniteError
from upreid.evaluation import MissingIdentityError

log = logging.getLogger("upreid")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4


class DataError(Exception):
    pass


# ----------------------------------------------------------------- manifest

def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    options: dict = field(default_factory=dict)
    code_version: str = field(default_factory=code_version)
    started: str = field(default_factory=_now)
    finished: str | None = None
    artifacts: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cfg = {k: list(v) if isinstance(v, tuple) else v for k, v in self.config.items()}
        body = dict(self.__dict__, config=cfg)
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    def finish(self, path, **artifacts) -> Path:
        self.artifacts.update({k: str(v) for k, v in artifacts.items()})
        self.finished = _now()
        return self.write(path)

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            body = json.loads(Path(path).read_text())
            return cls(**body)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


# ----------------------------------------------------------------- helpers

def _resolve_config(args, overrides: dict) -> tuple[TrainConfig, dict]:
    """Config from ``--manifest`` or ``--config``, then flag overrides."""
    options = {}
    if getattr(args, "manifest", None):
        manifest = RunManifest.read(args.manifest)
        file_values, options = dict(manifest.config), manifest.options
    elif getattr(args, "config", None):
        file_values = load_config_file(args.config)
    else:
        file_values = {}
    cfg = build_config(file_values, overrides, log=lambda msg: log.warning(msg))
    return cfg, options


def _seeds(text, fallback) -> list[int]:
    if text is None:
        return list(fallback)
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def _load_training_data(cfg: TrainConfig):
    from upreid.trainer import dataset_for

    if cfg.data_dir and not Path(cfg.data_dir).is_dir():
        raise DataError(f"data directory not found: {cfg.data_dir}")
    try:
        return dataset_for(cfg)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


# ----------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from upreid.data import SyntheticSpec, gen_synthetic, write_dataset

    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
        spec = SyntheticSpec(num_identities=args.ids, images_per_identity=args.per_id, image_size=(h, w),
                             symmetry_noise=args.symmetry_noise, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = write_dataset(gen_synthetic(spec), args.out, fmt=args.format, holdout=args.holdout)
    print(f"wrote {args.ids * args.per_id} images to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from upreid.trainer import train

    cfg, _ = _resolve_config(args, {"mining": args.mining, "steps": args.steps, "seed": args.seed,
                                    "output_dir": args.output_dir, "data_dir": args.data_dir})
    out = Path(cfg.output_dir)
    dataset = _load_training_data(cfg)
    manifest = RunManifest("pretrain", cfg.flat(), cfg.seed)
    manifest_path = manifest.write(out / "manifest.json")
    (out / "config.txt").write_text(render_config(cfg))
    ckpt, metrics = train(cfg, dataset, out)
    manifest.finish(manifest_path, checkpoint=ckpt, metrics=metrics, config=out / "config.txt")
    print(f"checkpoint: {ckpt}\nmetrics:    {metrics}\nmanifest:   {manifest_path}")
    return EXIT_OK


def _split_data(data_dir, split_file, layout):
    from upreid.data import load_image_dir

    try:
        data = load_image_dir(data_dir, layout)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    root = Path(data_dir)
    split = {}
    if split_file:
        try:
            with open(split_file, newline="") as fh:
                split = {r[0]: r[1] for r in csv.reader(fh) if len(r) >= 2 and r[0] != "filename"}
        except OSError as exc:
            raise DataError(f"cannot read split file {split_file}: {exc}") from exc
    else:
        split = data.split
    if not split:
        raise DataError("no query/gallery split: pass --split or provide split.csv in the data dir")
    query, gallery = [], []
    for s in data.samples:
        rel = Path(s.source).relative_to(root).as_posix()
        role = split.get(rel, split.get(Path(s.source).name))
        if role == "query":
            query.append(s)
        elif role == "gallery":
            gallery.append(s)
    if not query or not gallery:
        raise DataError(f"split selects {len(query)} queries and {len(gallery)} gallery images")
    if any(s.identity is None for s in query + gallery):
        raise DataError("evaluation images need identity labels (labels.csv or per-identity folders)")
    return query, gallery


def cmd_evaluate(args) -> int:
    from upreid.evaluation import evaluate_encoder
    from upreid.trainer import load_encoder

    try:
        enc = load_encoder(args.checkpoint, which=args.encoder)
    except (CheckpointError, ValueError, RuntimeError) as exc:
        raise DataError(f"bad checkpoint {args.checkpoint}: {exc}") from exc
    query, gallery = _split_data(args.data, args.split, args.layout)
    try:
        res = evaluate_encoder(enc, [s.pixels for s in query], [str(s.identity) for s in query],
                               [s.pixels for s in gallery], [str(s.identity) for s in gallery])
    except MissingIdentityError as exc:
        raise DataError(str(exc)) from exc
    ranks = (1, 5, 10)
    print(f"{'checkpoint':<40} {'mAP':>7} " + " ".join(f"{'Rank' + str(k):>7}" for k in ranks))
    print(f"{str(args.checkpoint)[-40:]:<40} {res.map:7.4f} " + " ".join(f"{res.rank(k):7.4f}" for k in ranks))
    results = Path(args.results or Path(args.checkpoint).with_name("results.csv"))
    new = not results.exists()
    with open(results, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["timestamp", "checkpoint", "data", "queries", "gallery", "map"] + [f"rank{k}" for k in ranks])
        w.writerow([_now(), args.checkpoint, args.data, len(query), len(gallery), repr(res.map)]
                   + [repr(res.rank(k)) for k in ranks])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from upreid.trainer import grad_check

    values = load_config_file(args.config) if args.config else {}
    overrides = {"mining": args.mining, "seed": args.seed}
    try:
        cfg = tiny_config(**{k: v for k, v in {**values, **overrides}.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    components = ["total", "consist", "global", "patch"] if args.component == "all" else [args.component]
    worst = 0.0
    for comp in components:
        err = grad_check(cfg, comp, n_coords=args.coords, seed=cfg.seed)
        worst = max(worst, err)
        print(f"{comp:<8} max relative error {err:.3e}  {'ok' if err < GRADCHECK_TOL else 'FAIL'}")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_NUMERIC


def cmd_compare_mining(args) -> int:
    from upreid.experiments import compare_mining, plot_curves, write_curves

    cfg, options = _resolve_config(args, {"steps": args.steps})
    seeds = _seeds(args.seeds or options.get("seeds"), [cfg.seed])
    out = Path(args.out)
    manifest = RunManifest("compare-mining", cfg.flat(), cfg.seed, options={"seeds": ",".join(map(str, seeds))})
    manifest_path = manifest.write(out / "manifest.json")
    curves, summaries = compare_mining(cfg, seeds)
    csv_path = write_curves(curves, out / "patch_loss_curves.csv")
    png_path = plot_curves(curves, out / "patch_loss_curves.png")
    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "final_mean", "step_variance"])
        for s in summaries:
            w.writerow([s.strategy, repr(s.final_mean), repr(s.step_variance)])
    print(f"{'strategy':<26} {'final-50 mean':>14} {'step variance':>14}")
    for s in summaries:
        print(f"{s.strategy:<26} {s.final_mean:14.4f} {s.step_variance:14.5f}")
    manifest.finish(manifest_path, curves=csv_path, plot=png_path, summary=summary_path)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from upreid.experiments import ablate, ablation_violations, write_ablation

    cfg, options = _resolve_config(args, {"steps": args.steps})
    seeds = _seeds(args.seeds or options.get("seeds"), [cfg.seed])
    out = Path(args.out)
    manifest = RunManifest("ablate", cfg.flat(), cfg.seed, options={"seeds": ",".join(map(str, seeds))})
    manifest_path = manifest.write(out / "manifest.json")
    rows = ablate(cfg, seeds)
    path = write_ablation(rows, out / "ablation.csv")
    print(f"{'variant':<18} {'seed':>4} {'mAP':>7} {'Rank1':>7}")
    for r in rows:
        print(f"{r.variant:<18} {r.seed:>4} {r.map:7.4f} {r.rank1:7.4f}")
    for seed, worse in ablation_violations(rows).items():
        log.warning("seed %s: full model mAP below %s", seed, ", ".join(worse))
    manifest.finish(manifest_path, results=path)
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    try:
        with open(args.csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {args.csv}: {exc}") from exc
    if not rows:
        raise DataError(f"{args.csv} has no rows")
    fig, ax = plt.subplots(figsize=(7, 4))
    if "strategy" in rows[0]:
        from upreid.experiments import plot_curves

        plt.close(fig)
        curves: dict = {}
        for r in rows:
            curves.setdefault((r["strategy"], int(r["seed"])), []).append(float(r["patch_loss"]))
        plot_curves(curves, args.out)
    else:
        columns = args.columns.split(",") if args.columns else ["total", "consist", "global_nce", "patch_mean"]
        steps = np.array([int(r["step"]) for r in rows])
        for col in columns:
            if col not in rows[0]:
                raise ConfigError(f"column '{col}' not in {args.csv}")
            ax.plot(steps, [float(r[col]) for r in rows], label=col)
        ax.set_xlabel("step")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.out, dpi=100)
        plt.close(fig)
    print(f"wrote {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="upreid", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=int(os.environ.get("UPREID_THREADS", 1)),
                   help="torch intra-op threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic pedestrian dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--ids", type=int, default=20)
    g.add_argument("--per-id", type=int, default=10)
    g.add_argument("--seed", type=int, default=int(os.environ.get("UPREID_SEED", 0)))
    g.add_argument("--size", default="64x32", help="HEIGHTxWIDTH")
    g.add_argument("--symmetry-noise", type=float, default=0.0)
    g.add_argument("--holdout", type=int, default=0, help="per-identity images listed in split.csv")
    g.add_argument("--format", choices=("png", "ppm"), default="png")
    g.set_defaults(func=cmd_gen_data)

    def config_args(sp, steps=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--manifest", help="re-run from a manifest.json")
        if steps:
            sp.add_argument("--steps", type=int)

    t = sub.add_parser("pretrain", help="run pre-training")
    config_args(t)
    t.add_argument("--mining", choices=("symmetric", "random", "online"))
    t.add_argument("--seed", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--data-dir")
    t.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("evaluate", help="mAP / CMC of a checkpoint on a labelled split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", help="CSV of filename,role (query|gallery)")
    e.add_argument("--layout", choices=("flat", "per-identity"), default="flat")
    e.add_argument("--encoder", choices=("q", "k"), default="q")
    e.add_argument("--results", help="results CSV to append to (default: next to the checkpoint)")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    c.add_argument("--config")
    c.add_argument("--component", choices=("total", "consist", "global", "patch", "all"), default="all")
    c.add_argument("--mining", choices=("symmetric", "random", "online"))
    c.add_argument("--seed", type=int)
    c.add_argument("--coords", type=int, default=256)
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("compare-mining", help="patch-loss curves under the three positive strategies")
    config_args(m)
    m.add_argument("--seeds", help="comma-separated seeds")
    m.add_argument("--out", default="runs/compare-mining")
    m.set_defaults(func=cmd_compare_mining)

    a = sub.add_parser("ablate", help="baseline / +CC / +ICC / both retrieval comparison")
    config_args(a)
    a.add_argument("--seeds", help="comma-separated seeds")
    a.add_argument("--out", default="runs/ablate")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="plot a metrics.csv or patch_loss_curves.csv")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--columns", help="metrics columns to plot (comma-separated)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, MissingIdentityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
