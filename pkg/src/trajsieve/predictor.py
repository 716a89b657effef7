"""Transformer trajectory predictor.

Each person's observed window is encoded independently (per-step
displacement plus offset from the primary, embedded and run through a
temporal transformer, mean-pooled to one vector). A social transformer
then mixes person tokens, and a two-layer head decodes the primary token
into 12 future displacements whose cumulative sum gives positions.

Masking contract: neighbors excluded by a binary mask contribute zero
attention weight in every social layer, so predicting with a mask equals
predicting on the physically reduced input; an all-ones mask takes the
exact unmasked code path. All linear maps here are bias-free, which keeps
the analytic FLOP formulas exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ContractError
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .scenes import Scene, WindowConfig, normalize_scene

CHECKPOINT_KIND = "predictor"


@dataclass(frozen=True)
class PredictorConfig:
    d_model: int = 64
    n_heads: int = 4
    n_temporal_layers: int = 2
    n_social_layers: int = 2
    d_ff: int = 128
    t_obs: int = 9
    t_pred: int = 21

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"predictor: d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_heads", "n_temporal_layers", "n_social_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"predictor: {name} must be >= 1")
        if not (0 < self.t_obs < self.t_pred):
            raise ConfigError(f"predictor: need 0 < t_obs < t_pred, got {self.t_obs}, {self.t_pred}")

    @classmethod
    def from_window(cls, window: WindowConfig, **kwargs) -> "PredictorConfig":
        return cls(t_obs=window.t_obs, t_pred=window.t_pred, **kwargs)

    @property
    def n_future(self) -> int:
        return self.t_pred - self.t_obs

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def _xavier(rng, d_in: int, d_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def init_predictor(config: PredictorConfig, seed: int) -> ParameterStore:
    """Seeded parameter initialization; array order is fixed so identical
    seeds give identical stores."""
    rng = np.random.default_rng(seed)
    d, d_ff = config.d_model, config.d_ff
    store = ParameterStore()
    store.add("embed.w", _xavier(rng, 4, d))
    store.add("pos", rng.normal(0.0, 0.1, size=(config.t_obs, d)))
    for kind, count in (("tmp", config.n_temporal_layers), ("soc", config.n_social_layers)):
        for i in range(count):
            for name in ("wq", "wk", "wv", "wo"):
                store.add(f"{kind}{i}.{name}", _xavier(rng, d, d))
            store.add(f"{kind}{i}.ff1", _xavier(rng, d, d_ff))
            store.add(f"{kind}{i}.ff2", _xavier(rng, d_ff, d))
    store.add("dec.w1", _xavier(rng, d, d_ff))
    store.add("dec.w2", _xavier(rng, d_ff, 2 * config.n_future))
    return store


def frozen_params(arrays: dict[str, np.ndarray]) -> dict[str, ad.Tensor]:
    """Wrap checkpoint arrays as constants so no gradients ever reach them."""
    return {name: ad.constant(arr) for name, arr in arrays.items()}


def _split_heads(x: ad.Tensor, n_heads: int) -> ad.Tensor:
    """(n, d) -> (h, n, d_head) or (B, n, d) -> (B, h, n, d_head)."""
    if x.data.ndim == 2:
        n, d = x.shape
        return ad.swap_axes(ad.reshape(x, (n, n_heads, d // n_heads)), 0, 1)
    b, n, d = x.shape
    return ad.swap_axes(ad.reshape(x, (b, n, n_heads, d // n_heads)), 1, 2)


def _merge_heads(x: ad.Tensor) -> ad.Tensor:
    """Inverse of _split_heads."""
    if x.data.ndim == 3:
        h, n, dh = x.shape
        return ad.reshape(ad.swap_axes(x, 0, 1), (n, h * dh))
    b, h, n, dh = x.shape
    return ad.reshape(ad.swap_axes(x, 1, 2), (b, n, h * dh))


def _attention(x, p, prefix: str, config, key_mask=None, gates=None) -> ad.Tensor:
    """Multi-head self-attention over the last two axes of ``x``.

    ``key_mask`` (bool, True = excluded) removes columns before the
    softmax via a large negative fill; ``gates`` (a length-n tensor of
    0/1 values) multiplies the attention rows and renormalizes, which is
    the differentiable form of the same exclusion used in training.
    """
    q = _split_heads(ad.matmul(x, p[f"{prefix}.wq"]), config.n_heads)
    k = _split_heads(ad.matmul(x, p[f"{prefix}.wk"]), config.n_heads)
    v = _split_heads(ad.matmul(x, p[f"{prefix}.wv"]), config.n_heads)
    scores = ad.scale(ad.matmul(q, ad.swap_last_axes(k)), 1.0 / math.sqrt(config.d_head))
    if key_mask is not None:
        scores = ad.masked_fill(scores, key_mask)
    probs = ad.row_softmax(scores)
    if gates is not None:
        shape = (1,) * (probs.data.ndim - 1) + (gates.data.shape[0],)
        g = ad.reshape(gates, shape)
        gated = ad.mul(probs, g)
        probs = ad.div(gated, ad.sum_last(gated))
    out = _merge_heads(ad.matmul(probs, v))
    return ad.matmul(out, p[f"{prefix}.wo"])


def _encoder_layer(x, p, prefix: str, config, key_mask=None, gates=None) -> ad.Tensor:
    attended = _attention(ad.layer_norm(x), p, prefix, config, key_mask, gates)
    x = ad.add(x, attended)
    hidden = ad.relu(ad.matmul(ad.layer_norm(x), p[f"{prefix}.ff1"]))
    return ad.add(x, ad.matmul(hidden, p[f"{prefix}.ff2"]))


def scene_inputs(scene: Scene, window: WindowConfig) -> np.ndarray:
    """Per-step input features over the observed window: displacement and
    offset from the primary, shape (N, t_obs, 4)."""
    pos = scene.positions_array()
    obs = pos[:, : window.t_obs]
    disp = np.zeros_like(obs)
    disp[:, 1:] = obs[:, 1:] - obs[:, :-1]
    offset = obs - obs[0:1]
    return np.concatenate([disp, offset], axis=-1)


def extract_individual_features(scene: Scene, params, config: PredictorConfig) -> ad.Tensor:
    """Encode every person's observed track independently to one d_model
    vector; row i depends only on track i (and the shared primary anchor)."""
    if len(scene.tracks[0]) != config.t_pred:
        raise ContractError(
            f"features: scene window {len(scene.tracks[0])} does not match t_pred {config.t_pred}"
        )
    window = WindowConfig(t_obs=config.t_obs, t_pred=config.t_pred, frame_rate=scene.frame_rate)
    x = ad.constant(scene_inputs(scene, window))
    h = ad.add(ad.matmul(x, params["embed.w"]), params["pos"])
    for i in range(config.n_temporal_layers):
        h = _encoder_layer(h, params, f"tmp{i}", config)
    return ad.mean_axis(h, axis=1)


def _decode(social_out: ad.Tensor, params, config: PredictorConfig) -> ad.Tensor:
    primary = ad.take(social_out, 0, 1, axis=0)
    hidden = ad.relu(ad.matmul(primary, params["dec.w1"]))
    disp = ad.reshape(ad.matmul(hidden, params["dec.w2"]), (config.n_future, 2))
    tri = ad.constant(np.tril(np.ones((config.n_future, config.n_future))))
    return ad.matmul(tri, disp)


def _check_features(features: ad.Tensor, config: PredictorConfig) -> None:
    if features.data.ndim != 2 or features.data.shape[1] != config.d_model:
        raise ContractError(
            f"predict: features must be (N, {config.d_model}), got {features.data.shape}"
        )


def predict(features: ad.Tensor, neighbor_mask, params, config: PredictorConfig) -> ad.Tensor:
    """Primary person's future positions (n_future, 2) in the feature frame.

    ``neighbor_mask`` is a binary length-N vector; entry 0 must be 1.
    Masked people are excluded from attention in every social layer. An
    all-ones mask runs the identical code path as no masking at all.
    """
    _check_features(features, config)
    mask = np.asarray(neighbor_mask)
    if mask.shape != (features.data.shape[0],):
        raise ContractError(
            f"predict: mask shape {mask.shape} does not match {features.data.shape[0]} people"
        )
    if mask[0] != 1:
        raise ContractError("predict: the primary person (entry 0) must always be kept")
    key_mask = None if bool(np.all(mask == 1)) else (mask == 0)
    h = features
    for i in range(config.n_social_layers):
        h = _encoder_layer(h, params, f"soc{i}", config, key_mask=key_mask)
    return _decode(h, params, config)


def predict_gated(features: ad.Tensor, gates: ad.Tensor, params,
                  config: PredictorConfig) -> ad.Tensor:
    """Training-time variant: ``gates`` is a length-N tensor of straight
    through 0/1 values (entry 0 fixed at 1) carrying gradients back to the
    scores that produced it."""
    _check_features(features, config)
    if gates.data.shape != (features.data.shape[0],):
        raise ContractError(
            f"predict: gates shape {gates.data.shape} does not match {features.data.shape[0]} people"
        )
    if gates.data[0] != 1.0:
        raise ContractError("predict: the primary person's gate must be 1")
    h = features
    for i in range(config.n_social_layers):
        h = _encoder_layer(h, params, f"soc{i}", config, gates=gates)
    return _decode(h, params, config)


def predict_scene(scene: Scene, params, config: PredictorConfig,
                  neighbor_mask=None) -> np.ndarray:
    """Convenience wrapper: normalize, encode, predict, and return the
    future positions in the scene's original coordinates."""
    window = WindowConfig(t_obs=config.t_obs, t_pred=config.t_pred, frame_rate=scene.frame_rate)
    normalized, record = normalize_scene(scene, window)
    features = extract_individual_features(normalized, params, config)
    if neighbor_mask is None:
        neighbor_mask = np.ones(scene.n_people, dtype=np.int64)
    out = predict(features, neighbor_mask, params, config)
    return record.to_original(out.data)


def save_predictor(path, store: ParameterStore, config: PredictorConfig) -> None:
    save_checkpoint(path, CHECKPOINT_KIND, asdict(config), store)


def load_predictor(path) -> tuple[ParameterStore, PredictorConfig]:
    kind, config_dict, arrays = load_checkpoint(path)
    if kind != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: expected a {CHECKPOINT_KIND} checkpoint, got {kind!r}")
    try:
        config = PredictorConfig(**config_dict)
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad predictor config in manifest: {exc}") from exc
    store = init_predictor(config, seed=0)
    store.load_arrays(arrays)
    return store, config


def load_predictor_frozen(path) -> tuple[dict[str, ad.Tensor], PredictorConfig]:
    kind, config_dict, arrays = load_checkpoint(path)
    if kind != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: expected a {CHECKPOINT_KIND} checkpoint, got {kind!r}")
    try:
        config = PredictorConfig(**config_dict)
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad predictor config in manifest: {exc}") from exc
    return frozen_params(arrays), config
