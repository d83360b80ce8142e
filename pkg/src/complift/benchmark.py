"""Benchmark harness: model store, method runs, ablations, aggregation.

Every method produces a 2D sample cloud for a scenario; rows carry
accuracy against the composed ground truth, Chamfer distance to a
reference cloud, the acceptance ratio where filtering happened, and
wall-clock time. Rejection methods share one generated cohort per
scenario so their verdicts are comparable sample by sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import algebra
from .energynet import EnergyNet, TrainConfig, load_checkpoint, save_checkpoint, train
from .lift import LiftBatchResult, LiftConfig, lift_cached, lift_naive
from .mcmc import KINDS as MCMC_KINDS
from .mcmc import McmcConfig, annealed_sample
from .metrics import accuracy, chamfer
from .sampler import BatchedCache, ComposedScoreSpec, generate
from .scenarios import COMPONENTS, SCENARIOS, ScenarioSpec, sample_dataset
from .schedule import DiffusionSchedule, make_linear

METHODS = ("baseline", "cached", "naive-T50", "naive-T1000",
           "ula", "uhmc", "mala", "hmc")

# seed namespaces so lift trials and chains never replay generation noise
_LIFT_SEED_OFFSET = 100_000
_MCMC_SEED_OFFSET = 200_000

DEFAULT_TIMESTEPS = 50


def default_schedule() -> DiffusionSchedule:
    return make_linear(DEFAULT_TIMESTEPS)


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    method: str
    n: int
    accepted: int | None
    accuracy: float | None
    chamfer: float | None
    ratio: float | None
    wall_ms: float
    seed: int


def checkpoint_path(ckpt_dir: str | Path, condition: str) -> Path:
    return Path(ckpt_dir) / f"{condition}.energy"


def ensure_models(conditions: Sequence[str], ckpt_dir: str | Path,
                  schedule: DiffusionSchedule | None = None,
                  config: TrainConfig | None = None,
                  dataset_size: int = 8000,
                  log=None) -> dict[str, EnergyNet]:
    """Load per-condition models, training and saving any that are missing.

    Seeds derive from the condition's position in the component registry,
    so a store rebuilt from scratch is bit-identical.
    """
    schedule = schedule or default_schedule()
    config = config or TrainConfig()
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    names = sorted(COMPONENTS)
    models: dict[str, EnergyNet] = {}
    for cond in conditions:
        path = checkpoint_path(ckpt_dir, cond)
        if path.exists():
            models[cond] = load_checkpoint(path)
            continue
        if cond not in COMPONENTS:
            raise KeyError(f"unknown component {cond!r}")
        idx = names.index(cond)
        if log:
            log(f"training {cond} ({config.steps} steps)")
        data = sample_dataset(COMPONENTS[cond], dataset_size, seed=1000 + idx)
        net = train(data, schedule, cond,
                    cfg=replace(config, seed=config.seed + idx))
        save_checkpoint(net, path)
        models[cond] = net
    return models


def scenario_models(scenario: ScenarioSpec, ckpt_dir: str | Path,
                    **kwargs) -> dict[str, EnergyNet]:
    return ensure_models(scenario.conditions, ckpt_dir, **kwargs)


def _filtered_row(scenario: ScenarioSpec, method: str, samples: np.ndarray,
                  result: LiftBatchResult, reference: np.ndarray,
                  wall_ms: float, seed: int) -> tuple[BenchRow, np.ndarray]:
    kept = samples[result.accepts]
    acc = accuracy(kept, scenario)
    cham = None
    if kept.shape[0] and reference.shape[0]:
        cham = chamfer(kept, reference)
    row = BenchRow(scenario.scenario_id, method, samples.shape[0],
                   int(kept.shape[0]), acc, cham,
                   result.acceptance_ratio, wall_ms, seed)
    return row, kept


def _plain_row(scenario: ScenarioSpec, method: str, points: np.ndarray,
               reference: np.ndarray, wall_ms: float, seed: int) -> BenchRow:
    cham = None
    if points.shape[0] and reference.shape[0]:
        cham = chamfer(points, reference)
    return BenchRow(scenario.scenario_id, method, points.shape[0], None,
                    accuracy(points, scenario), cham, None, wall_ms, seed)


@dataclass(frozen=True)
class ScenarioResult:
    rows: tuple[BenchRow, ...]
    samples: np.ndarray            # shared generated cohort
    scores: np.ndarray | None      # composed lift margins for the cohort
    member: np.ndarray             # ground-truth membership of the cohort
    clouds: dict[str, np.ndarray]  # method -> final sample cloud


def run_scenario(scenario: ScenarioSpec, models: Mapping[str, EnergyNet],
                 methods: Sequence[str] = METHODS, n: int = 8000,
                 seed: int = 0, mcmc_config: McmcConfig | None = None,
                 log=None) -> ScenarioResult:
    """Run the requested methods on one scenario against shared models."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}")
    spec = ComposedScoreSpec.from_expression(scenario.expression)
    cnf = algebra.to_cnf(scenario.expr)
    reference = scenario.sample_ground_truth(scenario.dataset_size, seed=90 + seed)

    rows: list[BenchRow] = []
    clouds: dict[str, np.ndarray] = {}
    needs_cohort = any(m in ("baseline", "cached", "naive-T50", "naive-T1000")
                       for m in methods)
    samples = np.zeros((0, 2), dtype=np.float32)
    cache: BatchedCache | None = None
    gen_ms = 0.0
    scores: np.ndarray | None = None

    if needs_cohort:
        record = "cached" in methods
        t0 = time.perf_counter()
        samples, cache = generate(models, spec, n, seed, record=record)
        gen_ms = (time.perf_counter() - t0) * 1e3

    for method in methods:
        if log:
            log(f"{scenario.scenario_id}: {method}")
        if method == "baseline":
            rows.append(_plain_row(scenario, method, samples, reference,
                                   gen_ms, seed))
            clouds[method] = samples
        elif method == "cached":
            t0 = time.perf_counter()
            res = lift_cached(cache, cnf)
            ms = gen_ms + (time.perf_counter() - t0) * 1e3
            row, kept = _filtered_row(scenario, method, samples, res,
                                      reference, ms, seed)
            rows.append(row)
            clouds[method] = kept
            if scores is None:
                scores = res.scores
        elif method.startswith("naive-T"):
            trials = int(method.split("naive-T")[1])
            cfg = LiftConfig(trials=trials)
            t0 = time.perf_counter()
            res = lift_naive(samples, models, cnf, cfg,
                             seed=seed + _LIFT_SEED_OFFSET)
            ms = gen_ms + (time.perf_counter() - t0) * 1e3
            row, kept = _filtered_row(scenario, method, samples, res,
                                      reference, ms, seed)
            rows.append(row)
            clouds[method] = kept
            if method == "naive-T1000" or scores is None:
                scores = res.scores
        else:
            base = mcmc_config or McmcConfig()
            kind_seed = seed + _MCMC_SEED_OFFSET + MCMC_KINDS.index(method)
            cfg = replace(base, kind=method, seed=kind_seed)
            t0 = time.perf_counter()
            pts = annealed_sample(models, spec, n, cfg)
            ms = (time.perf_counter() - t0) * 1e3
            rows.append(_plain_row(scenario, method, pts, reference, ms, seed))
            clouds[method] = pts

    member = scenario.member(samples) if samples.shape[0] else np.zeros(0, bool)
    return ScenarioResult(tuple(rows), samples, scores, member, clouds)


def run_benchmark(scenario_ids: Sequence[str], ckpt_dir: str | Path,
                  methods: Sequence[str] = METHODS, n: int = 8000,
                  seed: int = 0, train_config: TrainConfig | None = None,
                  mcmc_config: McmcConfig | None = None,
                  log=None) -> dict[str, ScenarioResult]:
    out: dict[str, ScenarioResult] = {}
    for sid in scenario_ids:
        scenario = SCENARIOS[sid]
        models = scenario_models(scenario, ckpt_dir, config=train_config,
                                 log=log)
        out[sid] = run_scenario(scenario, models, methods, n=n, seed=seed,
                                mcmc_config=mcmc_config, log=log)
    return out


def histogram_table(scores: np.ndarray, member: np.ndarray,
                    bins: int = 40) -> dict[str, np.ndarray]:
    """Shared-bin histograms of lift margins, split by membership."""
    finite = np.isfinite(scores)
    if not finite.any():
        edges = np.linspace(0.0, 1.0, bins + 1)
    else:
        lo, hi = scores[finite].min(), scores[finite].max()
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
    mem, _ = np.histogram(scores[member & finite], bins=edges)
    non, _ = np.histogram(scores[~member & finite], bins=edges)
    return {"bin_lo": edges[:-1], "bin_hi": edges[1:],
            "member": mem, "non_member": non}


def mean_separation(scores: np.ndarray, member: np.ndarray
                    ) -> tuple[float, float] | None:
    """(mean margin over members, over non-members); None if a side is empty."""
    finite = np.isfinite(scores)
    m = member & finite
    nm = ~member & finite
    if not m.any() or not nm.any():
        return None
    return float(scores[m].mean()), float(scores[nm].mean())


def aggregate_deltas(results: Mapping[str, ScenarioResult],
                     filtered_method: str = "naive-T1000") -> dict[str, float]:
    """Mean accuracy improvement of the filter over the baseline, in points.

    Unsatisfiable scenarios have no members, so the filter is scored on
    what it can do: reject. Its quality there is the rejected fraction,
    against a baseline of zero.
    """
    deltas: dict[str, list[float]] = {}
    for sid, res in results.items():
        scenario = SCENARIOS[sid]
        by_method = {r.method: r for r in res.rows}
        if "baseline" not in by_method or filtered_method not in by_method:
            continue
        base = by_method["baseline"].accuracy or 0.0
        filt_row = by_method[filtered_method]
        if scenario.is_empty:
            filt = 1.0 - (filt_row.ratio or 0.0)
        else:
            filt = filt_row.accuracy or 0.0
        deltas.setdefault(scenario.kind, []).append(100.0 * (filt - base))
    return {kind: float(np.mean(v)) for kind, v in deltas.items()}


TRIALS_GRID = (5, 10, 50, 200, 1000)


@dataclass(frozen=True)
class AblationRow:
    scenario: str
    mode: str       # "noise" | "timestep"
    strategy: str
    trials: int
    accuracy: float | None
    ratio: float
    seed: int


def ablate(scenario: ScenarioSpec, models: Mapping[str, EnergyNet],
           mode: str, trials_grid: Sequence[int] = TRIALS_GRID,
           n: int = 2000, seed: int = 0, log=None) -> list[AblationRow]:
    """Sweep lift configurations over a trial-count grid on one scenario.

    mode "noise" varies the noise-sharing strategy; mode "timestep" varies
    how trial timesteps are chosen (importance weights come from a uniform
    warm-up pass; fixed variants pin every trial to one timestep).
    """
    spec = ComposedScoreSpec.from_expression(scenario.expression)
    cnf = algebra.to_cnf(scenario.expr)
    samples, _ = generate(models, spec, n, seed)
    sched = next(iter(models.values())).schedule
    member = scenario.member(samples)

    configs: list[tuple[str, LiftConfig, np.ndarray | None]] = []
    if mode == "noise":
        for strategy in ("shared-per-trial", "independent", "shared-all"):
            for trials in trials_grid:
                configs.append((strategy,
                                LiftConfig(trials=trials, noise=strategy),
                                None))
    elif mode == "timestep":
        from .lift import LossHistory
        history = LossHistory(sched.timesteps)
        lift_naive(samples, models, cnf, LiftConfig(trials=200),
                   seed=seed + _LIFT_SEED_OFFSET, history=history)
        weights = history.weights()
        for trials in trials_grid:
            configs.append(("uniform", LiftConfig(trials=trials), None))
            configs.append(("importance",
                            LiftConfig(trials=trials, tstrategy="importance"),
                            weights))
        for t_fixed in (1, sched.timesteps // 2, sched.timesteps):
            configs.append((f"fixed-t{t_fixed}",
                            LiftConfig(trials=100, tstrategy="fixed",
                                       t_fixed=t_fixed),
                            None))
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")

    rows = []
    for strategy, cfg, weights in configs:
        if log:
            log(f"ablate {mode}: {strategy} T={cfg.trials}")
        res = lift_naive(samples, models, cnf, cfg,
                         seed=seed + _LIFT_SEED_OFFSET, weights=weights)
        kept = samples[res.accepts]
        acc = accuracy(kept, scenario) if not scenario.is_empty else None
        rows.append(AblationRow(scenario.scenario_id, mode, strategy,
                                cfg.trials, acc, res.acceptance_ratio, seed))
    return rows
