"""Lift estimation: how much evidence a finished sample carries for a condition.

The lift of x0 under condition c is the expected gap between the
unconditional and conditional denoising losses, estimated over random
(timestep, noise) trials:

    lift(x0 | c) ~ mean_k [ ||eps_k - eps_null(x_tk)||^2 - ||eps_k - eps_c(x_tk)||^2 ]

Positive lift means the conditional model explains the sample better than
the unconditional surrogate. A sample is kept when the algebra over its
per-condition lifts says so.

Every sample is evaluated as its own fixed-shape batch of trials, so
results are bit-identical no matter how samples are grouped or split
across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .algebra import CnfForm, cnf_variables, compose_score, compose_verdict
from .energynet import EnergyNet
from .sampler import BatchedCache, PredictionCache
from .streams import sample_stream

NOISE_STRATEGIES = ("shared-per-trial", "independent", "shared-all")
TIMESTEP_STRATEGIES = ("uniform", "fixed", "importance")
UNCONDITIONAL_SOURCES = ("alpha-surrogate", "model-null")


@dataclass(frozen=True)
class LiftConfig:
    trials: int = 1000
    noise: str = "shared-per-trial"
    tstrategy: str = "uniform"
    t_fixed: int | None = None
    unconditional: str = "alpha-surrogate"
    alpha: float = 0.9

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.noise not in NOISE_STRATEGIES:
            raise ValueError(f"unknown noise strategy {self.noise!r}")
        if self.tstrategy not in TIMESTEP_STRATEGIES:
            raise ValueError(f"unknown timestep strategy {self.tstrategy!r}")
        if self.tstrategy == "fixed" and self.t_fixed is None:
            raise ValueError("fixed timestep strategy needs t_fixed")
        if self.unconditional not in UNCONDITIONAL_SOURCES:
            raise ValueError(f"unknown unconditional source {self.unconditional!r}")


class LossHistory:
    """Ring buffer of recent denoising losses per timestep.

    Feeds the importance timestep strategy: weights are the RMS of the last
    `window` losses at each t, available only once every t has a full
    window. Weights are read once per run and stay frozen during it, which
    keeps results independent of sample order.
    """

    def __init__(self, timesteps: int, window: int = 10):
        self.window = window
        self.vals = np.zeros((timesteps, window))
        self.pos = np.zeros(timesteps, dtype=np.int64)
        self.count = np.zeros(timesteps, dtype=np.int64)

    def record(self, t: np.ndarray, losses: np.ndarray) -> None:
        t = np.asarray(t).reshape(-1)
        losses = np.asarray(losses, dtype=np.float64).reshape(-1)
        order = np.argsort(t, kind="stable")
        t, losses = t[order], losses[order]
        starts = np.searchsorted(t, np.unique(t))
        bounds = list(starts) + [t.size]
        for lo, hi in zip(bounds, bounds[1:]):
            ti = t[lo] - 1
            tail = losses[max(lo, hi - self.window):hi]
            for v in tail:  # at most `window` entries per timestep
                self.vals[ti, self.pos[ti]] = v
                self.pos[ti] = (self.pos[ti] + 1) % self.window
            self.count[ti] += hi - lo

    def weights(self) -> np.ndarray | None:
        if np.any(self.count < self.window):
            return None
        w = np.sqrt(np.mean(self.vals**2, axis=1))
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            return None
        return w / total


def sample_timesteps(rng: np.random.Generator, config: LiftConfig, timesteps: int,
                     weights: np.ndarray | None = None) -> np.ndarray:
    """Trial timesteps in [1, T] under the configured strategy."""
    k = config.trials
    if config.tstrategy == "fixed":
        if not 1 <= config.t_fixed <= timesteps:
            raise ValueError(f"t_fixed {config.t_fixed} outside [1, {timesteps}]")
        return np.full(k, config.t_fixed, dtype=np.int64)
    if config.tstrategy == "importance" and weights is not None:
        if weights.shape != (timesteps,):
            raise ValueError("importance weights must have one entry per timestep")
        return rng.choice(timesteps, size=k, p=weights) + 1
    # uniform, and the importance fallback before any weights exist
    return rng.integers(1, timesteps + 1, size=k)


def draw_trials(rng: np.random.Generator, config: LiftConfig, timesteps: int,
                weights: np.ndarray | None = None):
    """Canonical draw order for one sample: timesteps, noise, second noise."""
    t = sample_timesteps(rng, config, timesteps, weights)
    k = config.trials
    if config.noise == "shared-all":
        eps = np.broadcast_to(rng.standard_normal(2, dtype=np.float32), (k, 2))
        return t, eps, None
    eps = rng.standard_normal((k, 2), dtype=np.float32)
    if config.noise == "independent":
        return t, eps, rng.standard_normal((k, 2), dtype=np.float32)
    return t, eps, None


@dataclass
class LiftReport:
    """Per-sample outcome: lifts by condition, composed margin, verdict."""

    lifts: dict[str, float]
    score: float
    accept: bool
    trials: int
    trial_t: np.ndarray | None = None
    trial_diffs: dict[str, np.ndarray] | None = None


@dataclass
class LiftBatchResult:
    conditions: tuple[str, ...]
    lifts: np.ndarray   # (n, len(conditions)) float64
    scores: np.ndarray  # (n,) composed margins
    accepts: np.ndarray  # (n,) bool
    config: LiftConfig

    def __len__(self) -> int:
        return self.lifts.shape[0]

    def lift_map(self, i: int) -> dict[str, float]:
        return {c: float(v) for c, v in zip(self.conditions, self.lifts[i])}

    def report(self, i: int) -> LiftReport:
        return LiftReport(self.lift_map(i), float(self.scores[i]),
                          bool(self.accepts[i]), self.config.trials)

    @property
    def acceptance_ratio(self) -> float:
        return float(np.mean(self.accepts))


def lift_naive_one(x0: np.ndarray, models: Mapping[str, EnergyNet], cnf: CnfForm,
                   config: LiftConfig, rng: np.random.Generator,
                   weights: np.ndarray | None = None,
                   null_model: EnergyNet | None = None,
                   history: LossHistory | None = None,
                   keep_trials: bool = False) -> LiftReport:
    """Reference single-sample estimator; the batch path repeats exactly this."""
    conditions = cnf_variables(cnf)
    sched = models[conditions[0]].schedule
    t, eps, eps2 = draw_trials(rng, config, sched.timesteps, weights)

    x0 = np.asarray(x0, dtype=np.float32).reshape(2)
    x0b = np.broadcast_to(x0, (config.trials, 2))
    x_t = sched.add_noise(x0b, t, eps)
    x_t2 = sched.add_noise(x0b, t, eps2) if eps2 is not None else None

    null_pred_shared = None
    if config.unconditional == "model-null":
        if null_model is None:
            raise ValueError("unconditional='model-null' needs a null model")
        null_pred_shared = null_model.score(x_t2 if x_t2 is not None else x_t, t)

    lifts: dict[str, float] = {}
    diffs: dict[str, np.ndarray] = {}
    for c in conditions:
        pred = models[c].score(x_t, t)
        cond_loss = np.sum((eps - pred) ** 2, axis=1)
        if config.unconditional == "alpha-surrogate":
            alpha = np.float32(config.alpha)
            if x_t2 is None:
                null_res = eps - alpha * pred
            else:
                null_res = eps2 - alpha * models[c].score(x_t2, t)
        else:
            null_res = (eps2 if eps2 is not None else eps) - null_pred_shared
        null_loss = np.sum(null_res**2, axis=1)
        diff = null_loss.astype(np.float64) - cond_loss.astype(np.float64)
        lifts[c] = float(np.mean(diff))
        if history is not None:
            history.record(t, cond_loss)
        if keep_trials:
            diffs[c] = diff
    return LiftReport(
        lifts=lifts,
        score=compose_score(lifts, cnf),
        accept=compose_verdict(lifts, cnf),
        trials=config.trials,
        trial_t=t if keep_trials else None,
        trial_diffs=diffs if keep_trials else None,
    )


def lift_naive(samples: np.ndarray, models: Mapping[str, EnergyNet], cnf: CnfForm,
               config: LiftConfig = LiftConfig(), seed: int = 0,
               start_index: int = 0,
               weights: np.ndarray | None = None,
               null_model: EnergyNet | None = None,
               history: LossHistory | None = None) -> LiftBatchResult:
    """Estimate lifts for a batch of samples.

    Sample i uses the stream (seed, start_index + i); a worker given a slice
    of the samples and the matching start_index reproduces the full run's
    rows bit-exactly. When the timestep strategy is importance and a history
    is supplied, its weights are frozen before the first sample.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float32))
    conditions = cnf_variables(cnf)
    missing = [c for c in conditions if c not in models]
    if missing:
        raise KeyError(f"no model for conditions {missing}")
    if config.tstrategy == "importance" and weights is None and history is not None:
        weights = history.weights()

    n = samples.shape[0]
    lifts = np.empty((n, len(conditions)))
    scores = np.empty(n)
    accepts = np.empty(n, dtype=bool)
    for i in range(n):
        rng = sample_stream(seed, start_index + i)
        rep = lift_naive_one(samples[i], models, cnf, config, rng,
                             weights=weights, null_model=null_model,
                             history=history)
        lifts[i] = [rep.lifts[c] for c in conditions]
        scores[i] = rep.score
        accepts[i] = rep.accept
    return LiftBatchResult(conditions, lifts, scores, accepts, config)


def lift_cached(cache: BatchedCache | PredictionCache, cnf: CnfForm,
                config: LiftConfig = LiftConfig()):
    """Lift from a recorded trajectory: no model evaluations at all.

    Each visited timestep is one trial; the trial noise is recovered from
    the recorded latent and the final sample through the forward kernel.
    The unconditional prediction is the alpha surrogate of the recorded
    conditional prediction, so noise and timestep strategies do not apply
    here and config.trials is ignored in favor of the trajectory length.
    """
    if config.unconditional != "alpha-surrogate":
        raise ValueError("cached lift supports only the alpha surrogate")
    single = isinstance(cache, PredictionCache)
    conditions = cnf_variables(cnf)
    preds = cache.cond_preds
    missing = [c for c in conditions if c not in preds]
    if missing:
        raise KeyError(f"cache has no predictions for conditions {missing}")

    xs = cache.xs if not single else cache.xs[:, None]
    x0 = cache.x0 if not single else cache.x0[None]
    steps = cache.timesteps.shape[0]

    # float64 throughout: these lifts sit near the accept boundary and the
    # noise recovery divides by small quantities at low t
    xs = xs.astype(np.float64)
    x0 = x0.astype(np.float64)
    ab = cache.schedule.alpha_bars[cache.timesteps - 1]
    c0 = np.sqrt(ab)[:, None, None]
    c1 = np.sqrt(1.0 - ab)[:, None, None]
    eps_rec = (xs - c0 * x0[None]) / c1  # (steps, n, 2)

    alpha = config.alpha
    n = x0.shape[0]
    lifts = np.empty((n, len(conditions)))
    for j, c in enumerate(conditions):
        pred = preds[c] if not single else preds[c][:, None]
        pred = pred.astype(np.float64)
        cond_loss = np.sum((eps_rec - pred) ** 2, axis=2)
        null_loss = np.sum((eps_rec - alpha * pred) ** 2, axis=2)
        lifts[:, j] = np.mean(null_loss - cond_loss, axis=0)

    scores = np.empty(n)
    accepts = np.empty(n, dtype=bool)
    for i in range(n):
        row = {c: float(lifts[i, j]) for j, c in enumerate(conditions)}
        scores[i] = compose_score(row, cnf)
        accepts[i] = compose_verdict(row, cnf)
    result_config = replace(config, trials=steps)
    result = LiftBatchResult(conditions, lifts, scores, accepts, result_config)
    return result.report(0) if single else result
