"""Analytic FLOP counts for the predictor, the estimator, and the pruned
pipeline.

Counting rules: a linear layer over n tokens costs 2*n*d_in*d_out (plus
n*d_out with bias); an attention layer costs 8*n*d^2 for the Q/K/V/output
projections, 4*n^2*d for score and value aggregation, and 3*h*n^2 for the
row softmaxes. On top of those core terms every formula mirrors the small
auxiliary ops the forward pass actually executes (layer norms at 7 per
element, residual adds, score scaling, relu), so the analytic totals agree
with an instrumented forward pass that tallies each primitive.

Config arguments are duck-typed: anything with the predictor/estimator
config attributes works, which keeps this module free of model imports.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError

LN_COST_PER_ELT = 7
SOFTMAX_COST_PER_ELT = 3
SIGMOID_COST_PER_ELT = 4


@dataclass(frozen=True)
class FlopsReport:
    """Per-submodule operation counts for one forward pass."""

    temporal_encoder: int
    social_encoder: int
    decoder: int
    estimator: int
    total: int
    n_people_in: int
    n_people_kept: int
    baseline_ratio: float = 1.0

    def __post_init__(self):
        parts = self.temporal_encoder + self.social_encoder + self.decoder + self.estimator
        if self.total != parts:
            raise ContractError(f"flops report: total {self.total} != sum of parts {parts}")
        if any(v < 0 for v in (self.temporal_encoder, self.social_encoder,
                               self.decoder, self.estimator)):
            raise ContractError("flops report: negative count")
        if self.n_people_kept > self.n_people_in:
            raise ContractError(
                f"flops report: kept {self.n_people_kept} exceeds input {self.n_people_in}"
            )


def linear_flops(n: int, d_in: int, d_out: int, bias: bool = False) -> int:
    """2*n*d_in*d_out multiply-adds, plus n*d_out if a bias is added."""
    total = 2 * n * d_in * d_out
    if bias:
        total += n * d_out
    return total


def attention_flops(n: int, d: int, h: int) -> int:
    """Core self-attention cost over n tokens of width d with h heads."""
    return 8 * n * d * d + 4 * n * n * d + SOFTMAX_COST_PER_ELT * h * n * n


def encoder_layer_flops(n: int, d: int, h: int, d_ff: int) -> int:
    """One pre-LN transformer encoder layer, auxiliary ops included."""
    total = attention_flops(n, d, h)
    total += linear_flops(n, d, d_ff) + linear_flops(n, d_ff, d)
    total += 2 * LN_COST_PER_ELT * n * d  # the two layer norms
    total += h * n * n                    # score scaling by 1/sqrt(d_head)
    total += n * d_ff                     # relu
    total += 2 * n * d                    # the two residual adds
    return total


def temporal_encoder_flops(config, n_people: int) -> int:
    """Per-person temporal encoding cost: embed, positional add, encoder
    layers over t_obs steps, mean pooling; times n_people."""
    t, d = config.t_obs, config.d_model
    per_person = linear_flops(t, 4, d)
    per_person += t * d  # positional encoding add
    per_person += config.n_temporal_layers * encoder_layer_flops(t, d, config.n_heads, config.d_ff)
    per_person += t * d  # mean pooling over time
    return n_people * per_person


def social_encoder_flops(config, n_people: int) -> int:
    return config.n_social_layers * encoder_layer_flops(
        n_people, config.d_model, config.n_heads, config.d_ff
    )


def decoder_flops(config) -> int:
    """Two-layer head on the primary token plus the cumulative-sum matmul."""
    d, d_ff = config.d_model, config.d_ff
    n_future = config.t_pred - config.t_obs
    total = linear_flops(1, d, d_ff)
    total += d_ff  # relu
    total += linear_flops(1, d_ff, 2 * n_future)
    total += 2 * n_future * n_future * 2  # lower-triangular cumulative sum
    return total


def predictor_flops(config, n_people: int) -> FlopsReport:
    """Full predictor cost at a given scene size; estimator not included."""
    if n_people < 1:
        raise ContractError(f"predictor_flops: n_people must be >= 1, got {n_people}")
    temporal = temporal_encoder_flops(config, n_people)
    social = social_encoder_flops(config, n_people)
    dec = decoder_flops(config)
    return FlopsReport(
        temporal_encoder=temporal,
        social_encoder=social,
        decoder=dec,
        estimator=0,
        total=temporal + social + dec,
        n_people_in=n_people,
        n_people_kept=n_people,
    )


def _estimator_block_flops(n: int, d: int, h: int, full_self_attention: bool) -> int:
    if full_self_attention:
        total = attention_flops(n, d, h)
        total += LN_COST_PER_ELT * n * d  # pre-LN
        total += h * n * n                # score scaling
        total += n * d                    # residual add
        return total
    # primary-as-query: one query row, keys/values over all n tokens,
    # each token's value modulated by the primary's attention to it
    total = LN_COST_PER_ELT * n * d          # pre-LN
    total += linear_flops(1, d, d)           # q projection (primary row)
    total += 2 * linear_flops(n, d, d)       # k and v projections
    total += 2 * n * d                       # scores q . k_j over heads
    total += h * n                           # score scaling
    total += SOFTMAX_COST_PER_ELT * h * n    # softmax over n keys
    total += n * d                           # per-token value modulation
    total += linear_flops(n, d, d)           # output projection
    total += n * d                           # residual add
    return total


def estimator_flops(config, n_people: int, d_model_in: int = 64) -> int:
    """Importance-estimator cost at scene size n_people (scores for the
    n_people - 1 neighbors)."""
    if n_people < 1:
        raise ContractError(f"estimator_flops: n_people must be >= 1, got {n_people}")
    n, d, h = n_people, config.d_embed, config.n_heads
    total = linear_flops(n, d_model_in, d, bias=True)
    total += config.n_layers * _estimator_block_flops(n, d, h, config.full_self_attention)
    total += LN_COST_PER_ELT * n * d  # final layer norm before the head
    m = n - 1
    total += linear_flops(m, d, d, bias=True)
    total += m * d  # relu
    total += linear_flops(m, d, 1, bias=True)
    total += SIGMOID_COST_PER_ELT * m
    return total


def pipeline_flops(pred_config, est_config, n_in: int, n_kept: int,
                   use_estimator: bool = True) -> FlopsReport:
    """End-to-end inference cost: estimator over the full scene plus the
    predictor over the kept people; baseline_ratio compares against the
    unpruned predictor-only cost."""
    if not (1 <= n_kept <= n_in):
        raise ContractError(f"pipeline_flops: need 1 <= n_kept <= n_in, got {n_kept}, {n_in}")
    baseline = predictor_flops(pred_config, n_in)
    if not use_estimator:
        return baseline
    pruned = predictor_flops(pred_config, n_kept)
    est = estimator_flops(est_config, n_in, d_model_in=pred_config.d_model)
    total = pruned.total + est
    return FlopsReport(
        temporal_encoder=pruned.temporal_encoder,
        social_encoder=pruned.social_encoder,
        decoder=pruned.decoder,
        estimator=est,
        total=total,
        n_people_in=n_in,
        n_people_kept=n_kept,
        baseline_ratio=total / baseline.total,
    )
