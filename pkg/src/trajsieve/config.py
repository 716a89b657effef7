"""Declarative run configuration.

A run is described by one JSON file with optional sections; anything
omitted falls back to the dataclass defaults, and unknown sections or
keys raise ConfigError so typos fail loudly instead of silently running
the defaults. Shared fields are wired across sections in one place:
the window feeds both the generator and the predictor, the predictor
width feeds the estimator input, and the gumbel section feeds the
estimator training loop.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError, ParseError
from .estimator import EstimatorConfig
from .predictor import PredictorConfig
from .scenes import GenConfig, WindowConfig
from .selection import GumbelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class AblateSettings:
    """Paired-run settings for the variance-loss ablation.

    The ablation trains its own predictor without neighbor dropout: the
    score collapse it demonstrates is a property of the plain two-phase
    recipe, and dropout would soften exactly the effect under study.
    """

    tp_epochs: int = 60
    tp_learning_rate: float = 5e-3
    tp_seed: int = 0
    ie_epochs: int = 10
    ie_learning_rate: float = 5e-3
    ie_seed: int = 7

    def __post_init__(self):
        if self.tp_epochs < 1 or self.ie_epochs < 1:
            raise ConfigError("ablate: epochs must be >= 1")
        if self.tp_learning_rate <= 0 or self.ie_learning_rate <= 0:
            raise ConfigError("ablate: learning rates must be positive")


@dataclass(frozen=True)
class SweepSettings:
    """Grid for the analytic cost sweep."""

    n_min: int = 2
    n_max: int = 48
    keep_fractions: tuple = (1.0, 0.8, 0.6, 0.4, 0.2)

    def __post_init__(self):
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ConfigError("sweep: need 1 <= n_min <= n_max")
        if not self.keep_fractions:
            raise ConfigError("sweep: keep_fractions must be non-empty")
        for f in self.keep_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"sweep: keep fraction {f} outside (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    window: WindowConfig = WindowConfig()
    gen: GenConfig = GenConfig()
    predictor: PredictorConfig = PredictorConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    gumbel: GumbelConfig = GumbelConfig()
    train_tp: TrainConfig = TrainConfig(phase="tp", seed=0)
    train_ie: TrainConfig = TrainConfig(phase="ie", seed=7)
    ablate: AblateSettings = AblateSettings()
    sweep: SweepSettings = SweepSettings()


_SECTION_TYPES = {
    "window": WindowConfig,
    "gen": GenConfig,
    "predictor": PredictorConfig,
    "estimator": EstimatorConfig,
    "gumbel": GumbelConfig,
    "ablate": AblateSettings,
    "sweep": SweepSettings,
}
_TRAIN_SECTIONS = ("train_tp", "train_ie")
_TRAIN_KEYS = ("seed", "epochs", "batch_size", "learning_rate", "alpha",
               "grad_clip", "neighbor_dropout")


def _build_section(name: str, cls, raw: dict):
    allowed = {f.name for f in dataclasses.fields(cls)}
    if name == "gen":
        allowed.discard("window")
    if name == "predictor":
        allowed.discard("t_obs")
        allowed.discard("t_pred")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(
            f"config section {name!r}: unknown key(s) {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}"
        )
    if name == "sweep" and "keep_fractions" in raw:
        raw = dict(raw, keep_fractions=tuple(raw["keep_fractions"]))
    return raw


def _train_config(phase: str, raw: dict, gumbel: GumbelConfig) -> TrainConfig:
    unknown = set(raw) - set(_TRAIN_KEYS)
    if unknown:
        raise ConfigError(
            f"config section train_{phase!r}: unknown key(s) {sorted(unknown)}; "
            f"allowed: {sorted(_TRAIN_KEYS)}"
        )
    defaults = {"seed": 0 if phase == "tp" else 7}
    defaults.update(raw)
    return TrainConfig(phase=phase, gumbel=gumbel, **defaults)


def config_from_dict(data: dict) -> RunConfig:
    """Assemble a RunConfig from parsed JSON, wiring shared fields."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    unknown = set(data) - set(_SECTION_TYPES) - set(_TRAIN_SECTIONS)
    if unknown:
        raise ConfigError(
            f"config: unknown section(s) {sorted(unknown)}; allowed: "
            f"{sorted(set(_SECTION_TYPES) | set(_TRAIN_SECTIONS))}"
        )
    for key, raw in data.items():
        if not isinstance(raw, dict):
            raise ConfigError(f"config section {key!r} must be an object")

    try:
        window = WindowConfig(**_build_section("window", WindowConfig, data.get("window", {})))
        gen = GenConfig(window=window,
                        **_build_section("gen", GenConfig, data.get("gen", {})))
        predictor = PredictorConfig(
            t_obs=window.t_obs, t_pred=window.t_pred,
            **_build_section("predictor", PredictorConfig, data.get("predictor", {})))
        est_raw = _build_section("estimator", EstimatorConfig, data.get("estimator", {}))
        est_raw.setdefault("d_model_in", predictor.d_model)
        estimator = EstimatorConfig(**est_raw)
        gumbel = GumbelConfig(**_build_section("gumbel", GumbelConfig, data.get("gumbel", {})))
        train_tp = _train_config("tp", data.get("train_tp", {}), GumbelConfig())
        train_ie = _train_config("ie", data.get("train_ie", {}), gumbel)
        ablate = AblateSettings(**_build_section("ablate", AblateSettings, data.get("ablate", {})))
        sweep = SweepSettings(**_build_section("sweep", SweepSettings, data.get("sweep", {})))
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return RunConfig(window=window, gen=gen, predictor=predictor,
                     estimator=estimator, gumbel=gumbel, train_tp=train_tp,
                     train_ie=train_ie, ablate=ablate, sweep=sweep)


def load_config(path: str | None) -> RunConfig:
    """Read a JSON run config; None means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(config: RunConfig, seed: int | None = None,
                    threshold: float | None = None,
                    alpha: float | None = None) -> RunConfig:
    """Fold command-line overrides into a loaded config.

    ``seed`` retargets both training phases (the data generator takes its
    seed straight from the command line), while ``threshold`` and
    ``alpha`` update selection and estimator training respectively.
    """
    if threshold is not None:
        config = dataclasses.replace(
            config, gumbel=dataclasses.replace(config.gumbel, threshold=threshold))
        config = dataclasses.replace(
            config, train_ie=dataclasses.replace(config.train_ie, gumbel=config.gumbel))
    if alpha is not None:
        config = dataclasses.replace(
            config, train_ie=dataclasses.replace(config.train_ie, alpha=alpha))
    if seed is not None:
        config = dataclasses.replace(
            config,
            train_tp=dataclasses.replace(config.train_tp, seed=seed),
            train_ie=dataclasses.replace(config.train_ie, seed=seed),
        )
    return config
