"""Experiment harnesses: block-length ablation, runtime scaling, cross-model runs.

Each harness is a deterministic grid of independent cells ordered by cell
key; the CLI serializes the grids to CSV and JSON.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla

from .forecaster import ForecastInstance, Forecaster, ModelSpec
from .oracles import build_hessian
from .pipeline import (
    TrainSettings,
    fit_value_model,
    run_valuation,
    spec_for_block_length,
)
from .selection import EvalReport, finetune_and_eval, select
from .series import HoldoutSplit, TimeSeries
from .valuation import ValuationConfig, score_blocks_batch


@dataclass(frozen=True)
class AblationCell:
    block_length: int
    strategy: str
    report: EvalReport


def ablate_block_length(series: TimeSeries, split: HoldoutSplit,
                        block_lengths: list[int], model_template: ModelSpec,
                        config: ValuationConfig, pretrain: TrainSettings,
                        finetune: TrainSettings, ratio: float = 0.2,
                        strategies: tuple[str, ...] = ("top", "bottom", "random"),
                        seed: int = 0, n_workers: int = 1) -> list[AblationCell]:
    """Full valuation + selection + evaluation for each block length."""
    if max(block_lengths) > split.target_end:
        raise ValueError("largest block length exceeds the target split")
    target = series.slice(0, split.target_end)
    cells = []
    for length in block_lengths:
        cfg = replace(config, block_length=length, seed=seed)
        spec = spec_for_block_length(model_template, length)
        model, params = fit_value_model(target, spec, pretrain, seed)
        run = run_valuation(target, cfg, model, params, n_workers=n_workers)
        for strategy in strategies:
            sel = select(run.sample_scores, strategy, ratio, seed=seed)
            report = finetune_and_eval(model, params, sel, list(run.samples),
                                       series, split, finetune, seed=seed)
            cells.append(AblationCell(block_length=length, strategy=strategy,
                                      report=report))
    return cells


@dataclass(frozen=True)
class GeneralizationCell:
    ratio: float
    strategy: str
    report: EvalReport


def cross_model_generalization(series: TimeSeries, split: HoldoutSplit,
                               value_spec: ModelSpec, downstream_spec: ModelSpec,
                               ratios: list[float], config: ValuationConfig,
                               pretrain: TrainSettings, finetune: TrainSettings,
                               strategies: tuple[str, ...] = ("top", "bottom", "random"),
                               seed: int = 0, n_workers: int = 1,
                               downstream_base: np.ndarray | None = None
                               ) -> list[GeneralizationCell]:
    """Score with one model, train another on the selections.

    The downstream model starts from ``downstream_base`` when given,
    otherwise it is pretrained on the full target split first, so every
    selection strategy finetunes the same starting point; with identical
    specs this reduces to the single-model pipeline.
    """
    target = series.slice(0, split.target_end)
    value_model, value_params = fit_value_model(target, value_spec, pretrain, seed)
    run = run_valuation(target, config, value_model, value_params, n_workers=n_workers)
    if downstream_base is None:
        downstream, base = fit_value_model(target, downstream_spec, pretrain, seed)
    else:
        downstream = Forecaster(downstream_spec)
        base = downstream_base
    cells = []
    for ratio in ratios:
        for strategy in strategies:
            sel = select(run.sample_scores, strategy, ratio, seed=seed)
            report = finetune_and_eval(downstream, base, sel, list(run.samples),
                                       series, split, finetune, seed=seed)
            cells.append(GeneralizationCell(ratio=ratio, strategy=strategy,
                                            report=report))
    return cells


# --- runtime scaling ----------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    method: str
    p_target: int
    p_actual: int
    times: tuple[float, ...]

    @property
    def median_seconds(self) -> float:
        return float(np.median(self.times))


@dataclass(frozen=True)
class BenchReport:
    rows: list[BenchRow]
    slopes: dict[str, float]


def mlp_spec_for_params(p_target: int, lookback: int = 16,
                        horizon: int = 1, channels: int = 1,
                        init_seed: int = 0) -> ModelSpec:
    """MLP spec whose parameter count is as close as possible to p_target."""
    in_dim = lookback * channels + 1
    out = horizon * channels
    hidden = max(1, round((p_target - out) / (in_dim + out + 1)))
    return ModelSpec(architecture="mlp", lookback=lookback, horizon=horizon,
                     channels=channels, hidden=hidden, init_seed=init_seed)


def _bench_instances(model: Forecaster, params: np.ndarray, n: int,
                     rng: np.random.Generator, jitter: float = 0.05):
    """Random inputs with targets near the model's own predictions.

    Small residuals keep the empirical Hessian close to its positive
    semidefinite Gauss-Newton part, so the dense oracle factorizes under
    default damping; the arithmetic being timed is unchanged.
    """
    spec = model.spec
    out = []
    for _ in range(n):
        x = rng.normal(size=(spec.lookback, spec.channels))
        y = model.predict(params, x) + jitter * rng.normal(size=(spec.horizon, spec.channels))
        out.append(ForecastInstance(x, y))
    return out


def bench_scaling(p_list: list[int], methods: tuple[str, ...] = ("one_step", "exact_influence"),
                  n_blocks: int = 256, repeats: int = 3, n_context: int = 64,
                  seed: int = 0, exact_limit: int = 3000) -> BenchReport:
    """Median wall time per method per model size, plus log-log slopes.

    Both methods run vectorized kernels so the measured time reflects the
    arithmetic each algorithm performs, not per-block interpreter overhead.
    ``exact_influence`` rows are skipped above ``exact_limit`` parameters
    (the dense build is quadratic; the hard guard sits at 5000).
    """
    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    config = ValuationConfig(block_length=32, learning_rate=1e-4)
    for p_target in sorted(p_list):
        spec = mlp_spec_for_params(p_target, init_seed=seed)
        model = Forecaster(spec)
        params = model.init_params()
        blocks = _bench_instances(model, params, n_blocks, rng)
        context = _bench_instances(model, params, n_context, rng)
        if "one_step" in methods:
            times = _time_repeats(
                lambda: score_blocks_batch(model, params, blocks, context, config),
                repeats)
            rows.append(BenchRow("one_step", p_target, spec.n_params, times))
        if "exact_influence" in methods and spec.n_params <= exact_limit:
            def run_exact():
                # unit damping: cost is what matters here, and an untrained
                # network's Hessian can dip below the trace-based default.
                # The inverse is materialized once so its cost amortizes over
                # arbitrarily many scored blocks, as a dense influence
                # pipeline would do at scale.
                hess = build_hessian(model, params, context, mode="finite_diff",
                                     damping=1.0)
                h_inv = sla.cho_solve(hess.cho, np.eye(spec.n_params))
                g_blocks = model.grad_per_instance(params, blocks)
                g_ctx = model.batch_grad(params, context).grad
                return g_ctx @ (h_inv @ g_blocks.T)
            rows.append(BenchRow("exact_influence", p_target, spec.n_params,
                                 _time_repeats(run_exact, repeats)))
    slopes = {}
    for method in methods:
        sub = [r for r in rows if r.method == method]
        if len(sub) >= 2:
            logs_p = np.log([r.p_actual for r in sub])
            logs_t = np.log([r.median_seconds for r in sub])
            slopes[method] = float(np.polyfit(logs_p, logs_t, 1)[0])
    return BenchReport(rows=rows, slopes=slopes)


def _time_repeats(fn, repeats: int) -> tuple[float, ...]:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return tuple(times)
