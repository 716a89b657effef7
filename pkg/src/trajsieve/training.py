"""Two-phase training: the trajectory predictor first, then the importance
estimator against the frozen predictor.

Optimization is plain gradient descent with a global gradient-norm clip.
Scene order is shuffled with a generator seeded from the config, gradients
within a batch are averaged in a fixed order, and every random draw flows
from that one seed, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, TrainingDiverged
from .estimator import EstimatorConfig, estimate_scores, init_estimator
from .losses import VARIANCE_EPSILON, total_loss, trajectory_loss, variance_loss
from .params import ParameterStore
from .predictor import (
    PredictorConfig,
    extract_individual_features,
    init_predictor,
    load_predictor_frozen,
    predict,
    predict_gated,
)
from .scenes import Scene, WindowConfig, normalize_scene
from .selection import GumbelConfig, gumbel_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    phase: str
    seed: int
    epochs: int = 30
    batch_size: int = 1
    learning_rate: float = 1e-3
    alpha: float = 1.0
    grad_clip: float = 1.0
    neighbor_dropout: float = 0.0
    gumbel: GumbelConfig = GumbelConfig()

    def __post_init__(self):
        if self.phase not in ("tp", "ie"):
            raise ConfigError(f"train: phase must be 'tp' or 'ie', got {self.phase!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train: epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise ConfigError("train: learning_rate and grad_clip must be positive")
        if self.alpha < 0:
            raise ConfigError(f"train: alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.neighbor_dropout < 1.0:
            raise ConfigError(
                f"train: neighbor_dropout must be in [0, 1), got {self.neighbor_dropout}"
            )
        if self.phase == "ie" and self.neighbor_dropout > 0.0:
            raise ConfigError("train: neighbor_dropout only applies to the 'tp' phase")


@dataclass
class TrainHistory:
    """Per-epoch training statistics; score fields stay empty for the
    predictor phase."""

    epoch_losses: list[float] = field(default_factory=list)
    epoch_traj_losses: list[float] = field(default_factory=list)
    epoch_var_losses: list[float] = field(default_factory=list)
    score_means: list[float] = field(default_factory=list)
    score_stds: list[float] = field(default_factory=list)
    keep_rates: list[float] = field(default_factory=list)
    first_batch_traj_loss: float = math.nan


def _sgd_step(store: ParameterStore, lr: float, clip: float) -> None:
    norm = store.grad_norm()
    factor = lr if norm <= clip else lr * clip / norm
    for _, tensor in store.items():
        tensor.data -= factor * tensor.grad
    store.zero_grads()


def _prepared(scenes: list[Scene], config: PredictorConfig):
    """Normalize once up front; returns (scene, future truth) pairs."""
    window = WindowConfig(t_obs=config.t_obs, t_pred=config.t_pred)
    out = []
    for scene in scenes:
        normalized, _ = normalize_scene(scene, window)
        truth = normalized.primary.positions[window.t_obs:]
        out.append((normalized, truth))
    return out


def train_predictor(scenes: list[Scene], train_cfg: TrainConfig,
                    pred_config: PredictorConfig | None = None
                    ) -> tuple[ParameterStore, TrainHistory]:
    """Fit the predictor on the primary person's future; returns the
    parameter store and per-epoch loss history. With ``neighbor_dropout``
    set, each step hides a random neighbor subset so the model tolerates
    omission later."""
    if train_cfg.phase != "tp":
        raise ConfigError(f"train_predictor: config phase is {train_cfg.phase!r}, expected 'tp'")
    if not scenes:
        raise ConfigError("train_predictor: no scenes to train on")
    pred_config = pred_config or PredictorConfig()
    data = _prepared(scenes, pred_config)
    store = init_predictor(pred_config, train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    history = TrainHistory()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            batch_losses = []
            for idx in batch:
                scene, truth = data[idx]
                feats = extract_individual_features(scene, store, pred_config)
                mask = np.ones(scene.n_people, dtype=np.int64)
                if train_cfg.neighbor_dropout > 0.0 and scene.n_people > 1:
                    # Hide a random neighbor subset so the predictor stays
                    # calibrated when people are omitted at inference.
                    keep = rng.random(scene.n_people - 1) >= train_cfg.neighbor_dropout
                    mask[1:] = keep
                out = predict(feats, mask, store, pred_config)
                loss = trajectory_loss(out, truth)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(
                        f"trajectory loss became {value} at epoch {epoch}, "
                        f"scene {scene.scene_id}"
                    )
                batch_losses.append(value)
                ad.scale(loss, 1.0 / len(batch)).backward()
            if epoch == 0 and start == 0:
                history.first_batch_traj_loss = float(np.mean(batch_losses))
            _sgd_step(store, train_cfg.learning_rate, train_cfg.grad_clip)
            epoch_loss += float(np.sum(batch_losses))
        mean_loss = epoch_loss / len(data)
        history.epoch_losses.append(mean_loss)
        history.epoch_traj_losses.append(mean_loss)
        log.info("tp epoch %d/%d: loss %.6f", epoch + 1, train_cfg.epochs, mean_loss)
    return store, history


def train_estimator(scenes: list[Scene], train_cfg: TrainConfig, tp_checkpoint,
                    est_config: EstimatorConfig | None = None
                    ) -> tuple[ParameterStore, TrainHistory, EstimatorConfig]:
    """Fit the estimator against the frozen predictor loaded from
    ``tp_checkpoint``. Per scene: score, sample a straight-through mask,
    predict through the gated attention, and minimize trajectory loss plus
    alpha times the variance loss."""
    if train_cfg.phase != "ie":
        raise ConfigError(f"train_estimator: config phase is {train_cfg.phase!r}, expected 'ie'")
    if not scenes:
        raise ConfigError("train_estimator: no scenes to train on")
    frozen, pred_config = load_predictor_frozen(tp_checkpoint)
    est_config = est_config or EstimatorConfig(d_model_in=pred_config.d_model)
    if est_config.d_model_in != pred_config.d_model:
        raise ConfigError(
            f"train_estimator: estimator expects width {est_config.d_model_in}, "
            f"predictor provides {pred_config.d_model}"
        )
    cached = []
    for scene, truth in _prepared(scenes, pred_config):
        feats = extract_individual_features(scene, frozen, pred_config)
        cached.append((ad.constant(feats.data), truth, scene.scene_id))
    store = init_estimator(est_config, train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    history = TrainHistory()
    for epoch in range(train_cfg.epochs):
        temperature = train_cfg.gumbel.temperature
        if train_cfg.gumbel.anneal is not None:
            temperature *= train_cfg.gumbel.anneal ** epoch
        order = rng.permutation(len(cached))
        totals, trajs, variances = [], [], []
        epoch_scores: list[np.ndarray] = []
        kept_fractions = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            batch_traj = []
            for idx in batch:
                feats, truth, scene_id = cached[idx]
                scores = estimate_scores(feats, store, est_config)
                mask = gumbel_sample(scores, train_cfg.gumbel, rng, temperature=temperature)
                out = predict_gated(feats, mask.gates, frozen, pred_config)
                traj = trajectory_loss(out, truth)
                var = variance_loss(scores, VARIANCE_EPSILON)
                loss, breakdown = total_loss(traj, var, train_cfg.alpha)
                if not math.isfinite(breakdown.total):
                    raise TrainingDiverged(
                        f"total loss became {breakdown.total} at epoch {epoch}, "
                        f"scene {scene_id}"
                    )
                totals.append(breakdown.total)
                trajs.append(breakdown.trajectory)
                batch_traj.append(breakdown.trajectory)
                if breakdown.variance_term is not None:
                    variances.append(breakdown.variance_term)
                epoch_scores.append(scores.data.copy())
                kept_fractions.append(mask.keep_fraction)
                if loss.requires_grad:
                    ad.scale(loss, 1.0 / len(batch)).backward()
            if epoch == 0 and start == 0:
                history.first_batch_traj_loss = float(np.mean(batch_traj))
            _sgd_step(store, train_cfg.learning_rate, train_cfg.grad_clip)
        all_scores = np.concatenate(epoch_scores) if epoch_scores else np.zeros(0)
        history.epoch_losses.append(float(np.mean(totals)))
        history.epoch_traj_losses.append(float(np.mean(trajs)))
        history.epoch_var_losses.append(float(np.mean(variances)) if variances else math.nan)
        history.score_means.append(float(all_scores.mean()) if all_scores.size else math.nan)
        history.score_stds.append(float(all_scores.std()) if all_scores.size else math.nan)
        history.keep_rates.append(float(np.mean(kept_fractions)))
        log.info(
            "ie epoch %d/%d: loss %.6f, score mean %.3f, score std %.3f, keep %.3f",
            epoch + 1, train_cfg.epochs, history.epoch_losses[-1],
            history.score_means[-1], history.score_stds[-1], history.keep_rates[-1],
        )
    return store, history, est_config
