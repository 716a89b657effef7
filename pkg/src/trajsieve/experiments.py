"""Evaluation harness: pruned and unpruned scoring, the leave-one-out
oracle, the analytic cost sweep, score dumps, and the variance-loss
ablation.

Neighbor omission here is physical: feature rows for dropped people are
sliced away before the social encoder runs, so the pruned pass never
touches them. Metrics are computed in the normalized frame, which is a
pure translation of the original and therefore leaves displacement
errors untouched.
"""

from __future__ import annotations

import contextlib
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import AblateSettings, RunConfig, SweepSettings
from .errors import ConfigError
from .estimator import EstimatorConfig, estimate_scores, load_estimator
from .flops import pipeline_flops
from .losses import ade, fde
from .params import ParameterStore
from .predictor import (
    PredictorConfig,
    extract_individual_features,
    frozen_params,
    load_predictor_frozen,
    predict,
    save_predictor,
)
from .scenes import Scene, WindowConfig, normalize_scene
from .selection import GumbelConfig, threshold_select
from .training import TrainConfig, TrainHistory, train_estimator, train_predictor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRow:
    """One evaluated scene in the delimited report."""

    scene_id: str
    ade: float
    fde: float
    n_in: int
    n_kept: int
    flops_ratio: float


@dataclass(frozen=True)
class OracleRow:
    """Leave-one-out search result for one scene. ``removed_id`` is the
    person id whose removal minimized ADE, or -1 when keeping everyone
    was already best."""

    scene_id: str
    ade_baseline: float
    ade_oracle: float
    fde_oracle: float
    removed_id: int
    n_in: int


@dataclass(frozen=True)
class SweepRow:
    n_in: int
    keep_fraction: float
    n_kept: int
    flops_with: int
    flops_baseline: int
    ratio: float


@dataclass(frozen=True)
class ScoreRow:
    scene_id: str
    person_id: int
    score: float


@dataclass(frozen=True)
class AblateRow:
    """Summary of one arm of the paired variance-loss ablation."""

    alpha: float
    score_std: float
    keep_rate: float
    first_batch_traj_loss: float
    final_traj_loss: float
    final_total_loss: float


class Pipeline:
    """A frozen predictor plus an optional frozen estimator."""

    def __init__(self, tp_params, pred_config: PredictorConfig,
                 est_store: ParameterStore | None = None,
                 est_config: EstimatorConfig | None = None):
        if (est_store is None) != (est_config is None):
            raise ConfigError("pipeline: estimator store and config go together")
        if est_config is not None and est_config.d_model_in != pred_config.d_model:
            raise ConfigError(
                f"pipeline: estimator expects width {est_config.d_model_in}, "
                f"predictor provides {pred_config.d_model}"
            )
        self.tp_params = tp_params
        self.pred_config = pred_config
        self.est_store = est_store
        self.est_config = est_config
        self.window = WindowConfig(t_obs=pred_config.t_obs, t_pred=pred_config.t_pred)

    @property
    def has_estimator(self) -> bool:
        return self.est_store is not None

    def features(self, normalized: Scene) -> np.ndarray:
        feats = extract_individual_features(normalized, self.tp_params, self.pred_config)
        return feats.data

    def scores(self, features: np.ndarray) -> np.ndarray:
        if not self.has_estimator:
            raise ConfigError("pipeline: no estimator loaded, cannot score")
        out = estimate_scores(ad.constant(features), self.est_store, self.est_config)
        return out.data

    def predict_subset(self, features: np.ndarray, kept: np.ndarray) -> np.ndarray:
        """Run the predictor over the kept rows only (row 0 must be kept)."""
        sub = features[kept]
        mask = np.ones(len(kept), dtype=np.int64)
        return predict(ad.constant(sub), mask, self.tp_params, self.pred_config).data


def load_pipeline(tp_path, ie_path=None) -> Pipeline:
    frozen, pred_config = load_predictor_frozen(tp_path)
    if ie_path is None:
        return Pipeline(frozen, pred_config)
    est_store, est_config = load_estimator(ie_path)
    return Pipeline(frozen, pred_config, est_store, est_config)


def evaluate(scenes: list[Scene], pipeline: Pipeline,
             gumbel: GumbelConfig | None = None) -> list[EvalRow]:
    """Score every scene; with an estimator present, neighbors below the
    threshold are omitted before prediction and the cost ratio accounts
    for the estimator pass over the full crowd."""
    gumbel = gumbel or GumbelConfig()
    window = pipeline.window
    rows = []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, window)
        truth = normalized.primary.positions[window.t_obs:]
        feats = pipeline.features(normalized)
        n_in = len(normalized.tracks)
        if pipeline.has_estimator:
            scores = pipeline.scores(feats)
            mask = threshold_select(scores, gumbel)
            kept = mask.kept_indices()
            report = pipeline_flops(pipeline.pred_config, pipeline.est_config,
                                    n_in, len(kept), use_estimator=True)
        else:
            kept = np.arange(n_in)
            report = pipeline_flops(pipeline.pred_config, None,
                                    n_in, n_in, use_estimator=False)
        pred = pipeline.predict_subset(feats, kept)
        rows.append(EvalRow(
            scene_id=scene.scene_id,
            ade=ade(pred, truth),
            fde=fde(pred, truth),
            n_in=n_in,
            n_kept=len(kept),
            flops_ratio=report.baseline_ratio,
        ))
    return rows


def aggregate(rows: list[EvalRow], window: WindowConfig) -> dict[str, float]:
    """Both ADE aggregations plus summary means.

    ``ade_scene_mean`` averages per-scene ADEs; ``ade_step_mean`` pools
    every predicted step with equal weight. They coincide when all scenes
    share one horizon but are kept separate so mixed-horizon inputs stay
    honest.
    """
    if not rows:
        raise ConfigError("aggregate: no rows")
    steps = window.n_future
    total_steps = steps * len(rows)
    keep_neighbors = [
        1.0 if r.n_in <= 1 else (r.n_kept - 1) / (r.n_in - 1) for r in rows
    ]
    return {
        "n_scenes": len(rows),
        "ade_scene_mean": float(np.mean([r.ade for r in rows])),
        "ade_step_mean": float(sum(r.ade * steps for r in rows) / total_steps),
        "fde_mean": float(np.mean([r.fde for r in rows])),
        "keep_fraction_mean": float(np.mean(keep_neighbors)),
        "flops_ratio_mean": float(np.mean([r.flops_ratio for r in rows])),
    }


def constant_velocity(scene: Scene, window: WindowConfig) -> np.ndarray:
    """Extrapolate the primary's mean observed velocity; the standard
    no-learning reference."""
    obs = scene.primary.positions[:window.t_obs]
    v = (obs[-1] - obs[0]) / max(window.t_obs - 1, 1)
    horizon = np.arange(1, window.n_future + 1, dtype=np.float64)
    return obs[-1][None, :] + horizon[:, None] * v[None, :]


def oracle(scenes: list[Scene], pipeline: Pipeline) -> list[OracleRow]:
    """Leave-one-out search: keeping everyone is always a candidate, so
    the oracle can never lose to the baseline."""
    window = pipeline.window
    rows = []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, window)
        truth = normalized.primary.positions[window.t_obs:]
        feats = pipeline.features(normalized)
        n = len(normalized.tracks)
        full = pipeline.predict_subset(feats, np.arange(n))
        best_ade = ade(full, truth)
        base_ade = best_ade
        best_fde = fde(full, truth)
        removed = -1
        for j in range(1, n):
            kept = np.concatenate([np.arange(j), np.arange(j + 1, n)])
            pred = pipeline.predict_subset(feats, kept)
            cand = ade(pred, truth)
            if cand < best_ade:
                best_ade = cand
                best_fde = fde(pred, truth)
                removed = normalized.tracks[j].person_id
        rows.append(OracleRow(
            scene_id=scene.scene_id,
            ade_baseline=base_ade,
            ade_oracle=best_ade,
            fde_oracle=best_fde,
            removed_id=removed,
            n_in=n,
        ))
    return rows


def sweep(pred_config: PredictorConfig, est_config: EstimatorConfig,
          settings: SweepSettings) -> list[SweepRow]:
    """Analytic cost grid over crowd size and kept fraction."""
    rows = []
    for n in range(settings.n_min, settings.n_max + 1):
        for frac in settings.keep_fractions:
            n_kept = 1 + int(round(frac * (n - 1)))
            n_kept = min(max(n_kept, 1), n)
            report = pipeline_flops(pred_config, est_config, n, n_kept,
                                    use_estimator=True)
            rows.append(SweepRow(
                n_in=n,
                keep_fraction=frac,
                n_kept=n_kept,
                flops_with=report.total,
                flops_baseline=int(round(report.total / report.baseline_ratio))
                if report.baseline_ratio else 0,
                ratio=report.baseline_ratio,
            ))
    return rows


def dump_scores(scenes: list[Scene], pipeline: Pipeline) -> list[ScoreRow]:
    """Per-neighbor relevance scores, one row per (scene, neighbor)."""
    rows = []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, pipeline.window)
        feats = pipeline.features(normalized)
        scores = pipeline.scores(feats)
        for track, value in zip(normalized.tracks[1:], scores):
            rows.append(ScoreRow(scene.scene_id, track.person_id, float(value)))
    return rows


@dataclass(frozen=True)
class ScoreStats:
    mean_std: float
    mean_keep: float


def score_statistics(scenes: list[Scene], pipeline: Pipeline,
                     threshold: float) -> ScoreStats:
    """Mean per-scene score spread and thresholded keep rate; scenes with
    fewer than two neighbors contribute keep only."""
    stds, keeps = [], []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, pipeline.window)
        feats = pipeline.features(normalized)
        scores = pipeline.scores(feats)
        if scores.size == 0:
            continue
        if scores.size >= 2:
            stds.append(float(scores.std()))
        keeps.append(float(np.mean(scores >= threshold)))
    if not keeps:
        raise ConfigError("score_statistics: no scenes with neighbors")
    return ScoreStats(
        mean_std=float(np.mean(stds)) if stds else 0.0,
        mean_keep=float(np.mean(keeps)),
    )


@dataclass
class AblateResult:
    rows: list[AblateRow]
    histories: dict[float, TrainHistory]
    score_sets: dict[float, np.ndarray]


def ablate_variance(train_scenes: list[Scene], run: RunConfig,
                    eval_scenes: list[Scene] | None = None) -> AblateResult:
    """Paired runs differing only in the variance-loss weight.

    Trains one predictor without neighbor dropout, then two estimators
    from identical seeds at alpha of one and zero, and reports the score
    spread and keep rate of each. Matching first-batch trajectory losses
    confirm the pairing: alpha only reweights the variance term, so step
    zero must coincide.
    """
    settings: AblateSettings = run.ablate
    measure = eval_scenes if eval_scenes is not None else train_scenes
    tp_cfg = TrainConfig(phase="tp", seed=settings.tp_seed,
                         epochs=settings.tp_epochs,
                         learning_rate=settings.tp_learning_rate,
                         neighbor_dropout=0.0)
    log.info("ablate: training reference predictor (%d epochs)", tp_cfg.epochs)
    tp_store, _ = train_predictor(train_scenes, tp_cfg, run.predictor)
    frozen = frozen_params(tp_store.state_arrays())
    with tempfile.NamedTemporaryFile(suffix=".ckpt", delete=False) as handle:
        tp_path = handle.name
    try:
        save_predictor(tp_path, tp_store, run.predictor)
        rows, histories, score_sets = [], {}, {}
        for alpha in (1.0, 0.0):
            ie_cfg = TrainConfig(phase="ie", seed=settings.ie_seed,
                                 epochs=settings.ie_epochs,
                                 learning_rate=settings.ie_learning_rate,
                                 alpha=alpha, gumbel=run.gumbel)
            log.info("ablate: training estimator at alpha=%g", alpha)
            est_store, history, est_cfg = train_estimator(
                train_scenes, ie_cfg, tp_path, run.estimator)
            pipeline = Pipeline(frozen, run.predictor, est_store, est_cfg)
            stats = score_statistics(measure, pipeline, run.gumbel.threshold)
            rows.append(AblateRow(
                alpha=alpha,
                score_std=stats.mean_std,
                keep_rate=stats.mean_keep,
                first_batch_traj_loss=history.first_batch_traj_loss,
                final_traj_loss=history.epoch_traj_losses[-1],
                final_total_loss=history.epoch_losses[-1],
            ))
            histories[alpha] = history
            score_sets[alpha] = _all_scores(measure, pipeline)
    finally:
        with contextlib.suppress(OSError):
            os.unlink(tp_path)
    return AblateResult(rows=rows, histories=histories, score_sets=score_sets)


def _all_scores(scenes: list[Scene], pipeline: Pipeline) -> np.ndarray:
    chunks = []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, pipeline.window)
        feats = pipeline.features(normalized)
        chunks.append(pipeline.scores(feats))
    return np.concatenate(chunks) if chunks else np.zeros(0)
