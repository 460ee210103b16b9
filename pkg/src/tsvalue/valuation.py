"""Block, point, and sample scores from one-step finetuning.

A block's value is the drop in mean context loss after a single optimizer
step on that block's forecast instance:

    v(block) = L(context; theta) - L(context; theta - lr * grad L(block; theta))

Positive means the block helped the context. Block values are averaged into
per-time-point values over all covering blocks, and point values are
averaged into per-sample values. Scoring is organized in k folds: each
block is scored against context instances drawn from the other folds, and
every block starts from the same parameters -- finetuning never accumulates
across blocks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EmptyContext, HorizonTooLong, ShapeMismatch, WhollyUnscoredSample
from .forecaster import (
    ForecastInstance,
    Forecaster,
    OptimizerConfig,
    OptimizerState,
    optimizer_step,
)
from .series import (
    Block,
    SampleWindow,
    TimeSeries,
    enumerate_samples,
    make_folds,
    segment_blocks,
)


@dataclass(frozen=True)
class ValuationConfig:
    block_length: int = 100
    stride: int = 1
    learning_rate: float = 1e-5
    optimizer_kind: str = "sgd"  # plain SGD keeps the first-order analysis exact
    k_folds: int = 5
    context_cap: int | None = None  # max context instances per fold
    sample_length: int | None = None  # selection-unit length; defaults to block_length
    seed: int = 0

    def __post_init__(self):
        # zero is allowed: the degenerate no-step case scores every block 0
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.block_length < 2:
            raise ValueError("block_length must be >= 2")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    @property
    def effective_sample_length(self) -> int:
        return self.sample_length if self.sample_length is not None else self.block_length

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig.default_for(self.optimizer_kind, self.learning_rate)


@dataclass(frozen=True)
class FinetuneResult:
    params_after: np.ndarray
    delta_norm: float


@dataclass(frozen=True)
class BlockScore:
    block: Block
    value: float
    fold_id: int


@dataclass(frozen=True)
class PointScores:
    """Per-time-index values; indices with coverage 0 hold NaN, never 0."""

    values: np.ndarray
    coverage: np.ndarray

    def scored_mask(self) -> np.ndarray:
        return self.coverage > 0


@dataclass(frozen=True)
class SampleScores:
    windows: tuple[SampleWindow, ...]
    values: np.ndarray
    coverage_fraction: np.ndarray | None = None


def block_to_instance(series: TimeSeries, block: Block, horizon: int) -> ForecastInstance:
    """Split a block into (first L-H steps -> last H steps)."""
    if horizon >= block.length:
        raise HorizonTooLong(f"horizon {horizon} must be < block length {block.length}")
    window = series.values[block.start:block.stop]
    return ForecastInstance(window[:-horizon], window[-horizon:])


def finetune_one_step(model: Forecaster, params: np.ndarray,
                      instance: ForecastInstance,
                      config: ValuationConfig) -> FinetuneResult:
    """Exactly one optimizer step on the instance loss; caller keeps the originals."""
    g = model.grad(params, instance).grad
    state = OptimizerState.fresh(config.optimizer(), model.spec.n_params)
    params_after, _ = optimizer_step(params, g, state)
    return FinetuneResult(params_after=params_after,
                          delta_norm=float(np.linalg.norm(params_after - params)))


def block_value(model: Forecaster, params: np.ndarray,
                block_instance: ForecastInstance,
                context: list[ForecastInstance], config: ValuationConfig,
                context_loss_before: float | None = None) -> float:
    """Context loss drop after one finetune step on the block instance.

    ``context_loss_before`` can be passed in when many blocks share one
    context set; it must equal ``batch_loss(params, context)``.
    """
    if not context:
        raise EmptyContext("block_value needs at least one context instance")
    if context_loss_before is None:
        context_loss_before = model.batch_loss(params, context)
    tuned = finetune_one_step(model, params, block_instance, config)
    return context_loss_before - model.batch_loss(tuned.params_after, context)


def grad_inner_influence(model: Forecaster, params: np.ndarray,
                         block_instance: ForecastInstance,
                         context: list[ForecastInstance] | ForecastInstance,
                         learning_rate: float) -> float:
    """First-order prediction of the context loss drop: lr * <g_context, g_block>.

    Sign convention matches :func:`block_value`: positive = beneficial.
    """
    if isinstance(context, ForecastInstance):
        g_ctx = model.grad(params, context).grad
    else:
        if not context:
            raise EmptyContext("grad_inner_influence needs at least one context instance")
        g_ctx = model.batch_grad(params, context).grad
    g_blk = model.grad(params, block_instance).grad
    return float(learning_rate * np.dot(g_ctx, g_blk))


def value_all_blocks(series: TimeSeries, model: Forecaster, params: np.ndarray,
                     config: ValuationConfig, n_workers: int = 1) -> list[BlockScore]:
    """Score every block of the (target-split) series under the fold protocol.

    Samples are folded with the config seed; a block belongs to the fold of
    the sample containing its start index (blocks past the last full sample
    adopt the last sample's fold). Context for a fold is the block instances
    of all other folds, optionally subsampled to ``context_cap``. Every block
    is scored from the same starting params; output is ordered by block start
    for any worker count.
    """
    horizon = model.spec.horizon
    if model.spec.lookback + horizon != config.block_length:
        raise ShapeMismatch(
            f"model lookback {model.spec.lookback} + horizon {horizon} "
            f"must equal block length {config.block_length}"
        )
    t = series.length
    blocks = segment_blocks((0, t), config.block_length, config.stride)
    sample_len = config.effective_sample_length
    samples = enumerate_samples((0, t), sample_len)
    folds = make_folds(len(samples), config.k_folds, config.seed)

    instances = [block_to_instance(series, b, horizon) for b in blocks]
    block_folds = np.array([
        folds.assignment[min(b.start // sample_len, len(samples) - 1)] for b in blocks
    ])

    # per-fold context instance index lists (seeded subsampling when capped)
    fold_context: dict[int, list[int]] = {}
    fold_loss_before: dict[int, float] = {}
    for fold_id in range(config.k_folds):
        ctx_idx = np.flatnonzero(block_folds != fold_id)
        if ctx_idx.size == 0:
            raise EmptyContext(f"fold {fold_id} has no out-of-fold context blocks")
        if config.context_cap is not None and ctx_idx.size > config.context_cap:
            rng = np.random.default_rng([config.seed, fold_id])
            ctx_idx = np.sort(rng.choice(ctx_idx, size=config.context_cap, replace=False))
        fold_context[fold_id] = ctx_idx.tolist()
        fold_loss_before[fold_id] = model.batch_loss(
            params, [instances[i] for i in ctx_idx])

    def score_one(i: int) -> BlockScore:
        fold_id = int(block_folds[i])
        ctx = [instances[j] for j in fold_context[fold_id]]
        v = block_value(model, params, instances[i], ctx, config,
                        context_loss_before=fold_loss_before[fold_id])
        return BlockScore(block=blocks[i], value=v, fold_id=fold_id)

    if n_workers <= 1:
        return [score_one(i) for i in range(len(blocks))]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(score_one, range(len(blocks))))


def score_blocks_batch(model: Forecaster, params: np.ndarray,
                       block_instances: list[ForecastInstance],
                       context: list[ForecastInstance],
                       config: ValuationConfig, chunk: int = 16) -> np.ndarray:
    """Vectorized block values: same math as :func:`block_value` with SGD,
    computed for all blocks in batched array ops.

    Exists so wall-clock scaling measurements reflect arithmetic cost rather
    than per-block Python overhead; agreement with the reference path is
    covered by tests.
    """
    if not context:
        raise EmptyContext("score_blocks_batch needs at least one context instance")
    if config.optimizer_kind != "sgd":
        raise ValueError("vectorized scoring supports plain SGD only")
    grads = model.grad_per_instance(params, block_instances)
    tuned = params[None, :] - config.learning_rate * grads
    loss_before = model.batch_loss(params, context)
    loss_after = model.loss_many_params(tuned, context, chunk=chunk)
    return loss_before - loss_after


def aggregate_points(block_scores: list[BlockScore], t_target: int) -> PointScores:
    """Per-index mean of the values of all covering blocks."""
    total = np.zeros(t_target)
    coverage = np.zeros(t_target, dtype=np.int64)
    for bs in block_scores:
        total[bs.block.start:bs.block.stop] += bs.value
        coverage[bs.block.start:bs.block.stop] += 1
    values = np.full(t_target, np.nan)
    scored = coverage > 0
    values[scored] = total[scored] / coverage[scored]
    return PointScores(values=values, coverage=coverage)


def aggregate_samples(point_scores: PointScores,
                      samples: list[SampleWindow]) -> SampleScores:
    """Mean point value per sample window; unscored points drop out of the mean."""
    values = np.empty(len(samples))
    covered = np.empty(len(samples))
    for i, s in enumerate(samples):
        window = point_scores.values[s.start:s.stop]
        mask = point_scores.coverage[s.start:s.stop] > 0
        if not mask.any():
            raise WhollyUnscoredSample(f"sample [{s.start}, {s.stop}) has no scored points")
        values[i] = float(np.mean(window[mask]))
        covered[i] = float(np.mean(mask))
    return SampleScores(windows=tuple(samples), values=values, coverage_fraction=covered)
