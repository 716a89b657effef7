"""Command-line interface.

Subcommands cover the full workflow: generate synthetic crowds, train
the two model phases, evaluate with and without pruning, dump scores,
run the leave-one-out oracle, sweep analytic compute cost, and run the
variance-loss ablation. Report commands write fixed-name CSV files plus
a rendered figure into the output directory; nothing embeds timestamps,
so rerunning with one seed reproduces every byte.

Failures exit nonzero after a single machine-parsable stderr line of
the form ``error: <ExceptionName>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .config import RunConfig, apply_overrides, load_config
from .errors import TrajsieveError
from .estimator import save_estimator
from .experiments import (
    ablate_variance,
    aggregate,
    dump_scores,
    evaluate,
    load_pipeline,
    oracle,
    score_statistics,
    sweep,
)
from .predictor import save_predictor
from .scenes import generate_synthetic, load_scenes, save_scenes
from .training import train_estimator, train_predictor

log = logging.getLogger(__name__)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _ensure_outdir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_data(args, config: RunConfig):
    return load_scenes(args.data, config.window)


def cmd_gen_data(args, config: RunConfig) -> None:
    scenes = generate_synthetic(config.gen, seed=args.seed if args.seed is not None else 0)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")


def cmd_train_tp(args, config: RunConfig) -> None:
    scenes = _load_data(args, config)
    store, history = train_predictor(scenes, config.train_tp, config.predictor)
    save_predictor(args.out, store, config.predictor)
    print(f"predictor trained for {config.train_tp.epochs} epochs, "
          f"final loss {history.epoch_losses[-1]:.6f}, saved to {args.out}")


def cmd_train_ie(args, config: RunConfig) -> None:
    scenes = _load_data(args, config)
    store, history, est_config = train_estimator(
        scenes, config.train_ie, args.tp, config.estimator)
    save_estimator(args.out, store, est_config)
    print(f"estimator trained for {config.train_ie.epochs} epochs, "
          f"final loss {history.epoch_losses[-1]:.6f}, "
          f"final keep rate {history.keep_rates[-1]:.3f}, saved to {args.out}")


def cmd_eval(args, config: RunConfig) -> None:
    from .plots import plot_metrics

    scenes = _load_data(args, config)
    pipeline = load_pipeline(args.tp, args.ie)
    rows = evaluate(scenes, pipeline, config.gumbel)
    outdir = _ensure_outdir(args.out)
    _write_csv(
        os.path.join(outdir, "metrics.csv"),
        ["scene_id", "ade", "fde", "n_in", "n_kept", "flops_ratio"],
        [[r.scene_id, _fmt(r.ade), _fmt(r.fde), r.n_in, r.n_kept,
          _fmt(r.flops_ratio)] for r in rows],
    )
    summary = aggregate(rows, pipeline.window)
    _write_csv(
        os.path.join(outdir, "aggregates.csv"),
        ["metric", "value"],
        [[key, str(value) if isinstance(value, int) else _fmt(value)]
         for key, value in summary.items()],
    )
    plot_metrics(rows, os.path.join(outdir, "metrics.png"))
    print(f"evaluated {len(rows)} scenes: ade {summary['ade_scene_mean']:.4f}, "
          f"kept {summary['keep_fraction_mean']:.3f} of neighbors, "
          f"cost ratio {summary['flops_ratio_mean']:.4f}; report in {outdir}")


def cmd_dump_scores(args, config: RunConfig) -> None:
    from .plots import plot_scores

    scenes = _load_data(args, config)
    pipeline = load_pipeline(args.tp, args.ie)
    rows = dump_scores(scenes, pipeline)
    outdir = _ensure_outdir(args.out)
    _write_csv(
        os.path.join(outdir, "scores.csv"),
        ["scene_id", "person_id", "score"],
        [[r.scene_id, r.person_id, _fmt(r.score)] for r in rows],
    )
    plot_scores(rows, os.path.join(outdir, "scores.png"))
    stats = score_statistics(scenes, pipeline, config.gumbel.threshold)
    print(f"dumped {len(rows)} scores: mean per-scene std {stats.mean_std:.4f}, "
          f"keep rate at {config.gumbel.threshold:g}: {stats.mean_keep:.3f}; "
          f"report in {outdir}")


def cmd_oracle(args, config: RunConfig) -> None:
    from .plots import plot_oracle

    scenes = _load_data(args, config)
    pipeline = load_pipeline(args.tp)
    rows = oracle(scenes, pipeline)
    outdir = _ensure_outdir(args.out)
    _write_csv(
        os.path.join(outdir, "oracle.csv"),
        ["scene_id", "ade_baseline", "ade_oracle", "fde_oracle",
         "removed_id", "n_in"],
        [[r.scene_id, _fmt(r.ade_baseline), _fmt(r.ade_oracle),
          _fmt(r.fde_oracle), r.removed_id, r.n_in] for r in rows],
    )
    plot_oracle(rows, os.path.join(outdir, "oracle.png"))
    base = sum(r.ade_baseline for r in rows) / len(rows)
    best = sum(r.ade_oracle for r in rows) / len(rows)
    print(f"oracle over {len(rows)} scenes: baseline ade {base:.4f}, "
          f"oracle ade {best:.4f}; report in {outdir}")


def cmd_flops_sweep(args, config: RunConfig) -> None:
    from .plots import plot_sweep

    rows = sweep(config.predictor, config.estimator, config.sweep)
    outdir = _ensure_outdir(args.out)
    _write_csv(
        os.path.join(outdir, "flops.csv"),
        ["n_in", "keep_fraction", "n_kept", "flops_with", "flops_baseline",
         "ratio"],
        [[r.n_in, _fmt(r.keep_fraction), r.n_kept, r.flops_with,
          r.flops_baseline, _fmt(r.ratio)] for r in rows],
    )
    plot_sweep(rows, os.path.join(outdir, "flops.png"))
    crossover = next((r.n_in for r in rows
                      if r.keep_fraction == min(config.sweep.keep_fractions)
                      and r.ratio < 1.0), None)
    note = f"first ratio < 1 at n = {crossover}" if crossover else "no crossover in range"
    print(f"swept n in [{config.sweep.n_min}, {config.sweep.n_max}]; {note}; "
          f"report in {outdir}")


def cmd_ablate_vl(args, config: RunConfig) -> None:
    from .plots import plot_ablate

    scenes = _load_data(args, config)
    eval_scenes = None
    if args.eval_data:
        eval_scenes = load_scenes(args.eval_data, config.window)
    result = ablate_variance(scenes, config, eval_scenes)
    outdir = _ensure_outdir(args.out)
    _write_csv(
        os.path.join(outdir, "ablate.csv"),
        ["alpha", "score_std", "keep_rate", "first_batch_traj_loss",
         "final_traj_loss", "final_total_loss"],
        [[_fmt(r.alpha), _fmt(r.score_std), _fmt(r.keep_rate),
          _fmt(r.first_batch_traj_loss), _fmt(r.final_traj_loss),
          _fmt(r.final_total_loss)] for r in result.rows],
    )
    plot_ablate(result.score_sets, os.path.join(outdir, "ablate.png"))
    lines = ", ".join(
        f"alpha={r.alpha:g}: std {r.score_std:.4f} keep {r.keep_rate:.3f}"
        for r in result.rows)
    print(f"ablation done ({lines}); report in {outdir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajsieve",
        description="crowd trajectory prediction with learned neighbor pruning",
    )
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", default=None, help="JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's seed")
        p.add_argument("--threshold", type=float, default=None,
                       help="override the keep threshold")
        p.add_argument("--alpha", type=float, default=None,
                       help="override the variance loss weight")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("gen-data", help="generate a synthetic scene file")
    common(p, "output scene file (JSON lines)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-tp", help="train the trajectory predictor")
    common(p, "output predictor checkpoint")
    p.add_argument("--data", required=True, help="training scene file")
    p.set_defaults(func=cmd_train_tp)

    p = sub.add_parser("train-ie", help="train the importance estimator")
    common(p, "output estimator checkpoint")
    p.add_argument("--data", required=True, help="training scene file")
    p.add_argument("--tp", required=True, help="frozen predictor checkpoint")
    p.set_defaults(func=cmd_train_ie)

    p = sub.add_parser("eval", help="evaluate prediction error and cost")
    common(p, "output report directory")
    p.add_argument("--data", required=True, help="evaluation scene file")
    p.add_argument("--tp", required=True, help="predictor checkpoint")
    p.add_argument("--ie", default=None,
                   help="estimator checkpoint; omit for the unpruned baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-scores", help="write per-neighbor relevance scores")
    common(p, "output report directory")
    p.add_argument("--data", required=True, help="scene file to score")
    p.add_argument("--tp", required=True, help="predictor checkpoint")
    p.add_argument("--ie", required=True, help="estimator checkpoint")
    p.set_defaults(func=cmd_dump_scores)

    p = sub.add_parser("oracle", help="leave-one-out removal search")
    common(p, "output report directory")
    p.add_argument("--data", required=True, help="scene file to search")
    p.add_argument("--tp", required=True, help="predictor checkpoint")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("flops-sweep", help="analytic compute cost sweep")
    common(p, "output report directory")
    p.set_defaults(func=cmd_flops_sweep)

    p = sub.add_parser("ablate-vl", help="paired runs with and without the variance loss")
    common(p, "output report directory")
    p.add_argument("--data", required=True, help="training scene file")
    p.add_argument("--eval-data", default=None,
                   help="held-out scenes for score statistics (default: training file)")
    p.set_defaults(func=cmd_ablate_vl)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config)
        config = apply_overrides(config, seed=args.seed,
                                 threshold=args.threshold, alpha=args.alpha)
        args.func(args, config)
    except TrajsieveError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
