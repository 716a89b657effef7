"""Importance estimator: maps per-person features to a scalar in (0, 1)
per neighbor, measuring how much that neighbor matters for the primary
person's future.

Architecture: a biased input projection to the embedding width, one or
more compact attention blocks, and a two-layer score head ending in a
sigmoid. By default the block uses the primary token as the sole query;
each token's value vector is modulated by the primary's attention to it,
which keeps the cost linear in the number of people. Full self-attention
is available behind a config flag.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ContractError
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .predictor import _merge_heads, _split_heads, _xavier

CHECKPOINT_KIND = "estimator"


@dataclass(frozen=True)
class EstimatorConfig:
    d_embed: int = 64
    n_heads: int = 2
    n_layers: int = 1
    full_self_attention: bool = False
    d_model_in: int = 64

    def __post_init__(self):
        if self.d_embed % self.n_heads != 0:
            raise ConfigError(
                f"estimator: d_embed {self.d_embed} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_embed", "n_heads", "n_layers", "d_model_in"):
            if getattr(self, name) < 1:
                raise ConfigError(f"estimator: {name} must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_embed // self.n_heads


def init_estimator(config: EstimatorConfig, seed: int) -> ParameterStore:
    """Seeded initialization; the three biased linears are the input
    projection and the two head layers."""
    rng = np.random.default_rng(seed)
    d = config.d_embed
    store = ParameterStore()
    store.add("proj.w", _xavier(rng, config.d_model_in, d))
    store.add("proj.b", np.zeros(d))
    for i in range(config.n_layers):
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"blk{i}.{name}", _xavier(rng, d, d))
    store.add("head1.w", _xavier(rng, d, d))
    store.add("head1.b", np.zeros(d))
    store.add("head2.w", _xavier(rng, d, 1))
    store.add("head2.b", np.zeros(1))
    return store


def _primary_query_block(x: ad.Tensor, params, prefix: str,
                         config: EstimatorConfig) -> ad.Tensor:
    """Attention with the primary token as sole query: token j's value is
    scaled by the primary's attention weight to j, then projected back."""
    normed = ad.layer_norm(x)
    q = _split_heads(ad.matmul(ad.take(normed, 0, 1, axis=0), params[f"{prefix}.wq"]),
                     config.n_heads)
    k = _split_heads(ad.matmul(normed, params[f"{prefix}.wk"]), config.n_heads)
    v = _split_heads(ad.matmul(normed, params[f"{prefix}.wv"]), config.n_heads)
    scores = ad.scale(ad.matmul(q, ad.swap_last_axes(k)), 1.0 / math.sqrt(config.d_head))
    probs = ad.row_softmax(scores)
    weighted = ad.mul(ad.swap_last_axes(probs), v)
    out = ad.matmul(_merge_heads(weighted), params[f"{prefix}.wo"])
    return ad.add(x, out)


def _self_attention_block(x: ad.Tensor, params, prefix: str,
                          config: EstimatorConfig) -> ad.Tensor:
    normed = ad.layer_norm(x)
    q = _split_heads(ad.matmul(normed, params[f"{prefix}.wq"]), config.n_heads)
    k = _split_heads(ad.matmul(normed, params[f"{prefix}.wk"]), config.n_heads)
    v = _split_heads(ad.matmul(normed, params[f"{prefix}.wv"]), config.n_heads)
    scores = ad.scale(ad.matmul(q, ad.swap_last_axes(k)), 1.0 / math.sqrt(config.d_head))
    probs = ad.row_softmax(scores)
    out = ad.matmul(_merge_heads(ad.matmul(probs, v)), params[f"{prefix}.wo"])
    return ad.add(x, out)


def estimate_scores(features: ad.Tensor, params, config: EstimatorConfig) -> ad.Tensor:
    """Scores for the N-1 neighbors, shape (N-1,), each strictly in (0, 1);
    a single-person scene yields an empty score vector."""
    if features.data.ndim != 2 or features.data.shape[1] != config.d_model_in:
        raise ContractError(
            f"scores: features must be (N, {config.d_model_in}), got {features.data.shape}"
        )
    n = features.data.shape[0]
    h = ad.add(ad.matmul(features, params["proj.w"]), params["proj.b"])
    block = _self_attention_block if config.full_self_attention else _primary_query_block
    for i in range(config.n_layers):
        h = block(h, params, f"blk{i}", config)
    h = ad.layer_norm(h)
    neighbors = ad.take(h, 1, n, axis=0)
    hidden = ad.relu(ad.add(ad.matmul(neighbors, params["head1.w"]), params["head1.b"]))
    logits = ad.add(ad.matmul(hidden, params["head2.w"]), params["head2.b"])
    return ad.reshape(ad.sigmoid(logits), (n - 1,))


def save_estimator(path, store: ParameterStore, config: EstimatorConfig) -> None:
    save_checkpoint(path, CHECKPOINT_KIND, asdict(config), store)


def load_estimator(path) -> tuple[ParameterStore, EstimatorConfig]:
    kind, config_dict, arrays = load_checkpoint(path)
    if kind != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: expected an {CHECKPOINT_KIND} checkpoint, got {kind!r}")
    try:
        config = EstimatorConfig(**config_dict)
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad estimator config in manifest: {exc}") from exc
    store = init_estimator(config, seed=0)
    store.load_arrays(arrays)
    return store, config
