"""Reverse-diffusion sampling from composed energy models.

Composition happens in noise-prediction space: product adds component
predictions, negation subtracts a weighted term, mixture reweights by a
softmax over component energies. Generation can record every visited
latent and per-component prediction so lift estimation can run later
without extra model evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import algebra
from .algebra import CnfForm, Expr
from .energynet import EnergyNet
from .schedule import DiffusionSchedule
from .streams import sample_stream


class UnsupportedCompositionError(ValueError):
    """The CNF does not reduce to product, mixture, or pure negation."""


@dataclass(frozen=True)
class ComposedScoreSpec:
    """How to combine component models into one noise prediction.

    temperature tempers the mixture weights: softmax(-E_i / temperature).
    Raw model energies carry arbitrary per-model offsets that the training
    loss never constrains, so a small temperature lets those offsets pick
    a winner; the default leans toward the plain average of component
    predictions, the conventional mixture baseline.
    """

    kind: str  # "product" | "mixture" | "negation"
    positive: tuple[str, ...]
    negated: tuple[str, ...] = ()
    gamma: float = 1.0
    temperature: float = 4.0

    def __post_init__(self):
        if self.kind not in ("product", "mixture", "negation"):
            raise ValueError(f"unknown composition kind {self.kind!r}")
        if not self.positive:
            raise ValueError("at least one positive condition is required")
        if self.kind == "negation" and not self.negated:
            raise ValueError("negation requires a negated condition")
        if self.kind != "negation" and self.negated:
            raise ValueError(f"{self.kind} composition cannot negate conditions")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def conditions(self) -> tuple[str, ...]:
        return self.positive + self.negated

    @classmethod
    def from_cnf(cls, cnf: CnfForm, gamma: float = 1.0,
                 temperature: float = 4.0) -> "ComposedScoreSpec":
        if all(len(cl) == 1 for cl in cnf.clauses):
            pos = tuple(cl[0].name for cl in cnf.clauses if cl[0].positive)
            neg = tuple(cl[0].name for cl in cnf.clauses if not cl[0].positive)
            if neg and not pos:
                raise UnsupportedCompositionError(
                    "purely negated formulas have no sampler"
                )
            kind = "negation" if neg else "product"
            return cls(kind, pos, neg, gamma=gamma, temperature=temperature)
        if len(cnf.clauses) == 1 and all(l.positive for l in cnf.clauses[0]):
            pos = tuple(l.name for l in cnf.clauses[0])
            return cls("mixture", pos, gamma=gamma, temperature=temperature)
        raise UnsupportedCompositionError(
            f"cannot sample from CNF {cnf}: not a product, mixture, or negation"
        )

    @classmethod
    def from_expression(cls, text: str, gamma: float = 1.0,
                        temperature: float = 4.0) -> "ComposedScoreSpec":
        return cls.from_cnf(algebra.to_cnf(algebra.parse(text)),
                            gamma=gamma, temperature=temperature)

    def expression(self) -> Expr:
        pos = [algebra.lit(c) for c in self.positive]
        if self.kind == "mixture":
            return algebra.or_(*pos) if len(pos) > 1 else pos[0]
        terms = pos + [algebra.not_(algebra.lit(c)) for c in self.negated]
        return algebra.and_(*terms) if len(terms) > 1 else terms[0]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=0, keepdims=True)


def composed_eps(models: Mapping[str, EnergyNet], spec: ComposedScoreSpec,
                 x: np.ndarray, t) -> np.ndarray:
    """Composite noise prediction at (x, t); x is (N, 2)."""
    preds, _ = composed_eps_with_parts(models, spec, x, t)
    return preds


def composed_eps_with_parts(models, spec, x, t):
    """Composite prediction plus each component's own prediction."""
    parts: dict[str, np.ndarray] = {}
    if spec.kind == "mixture":
        energies = []
        scores = []
        for c in spec.positive:
            e, s = models[c].energy_and_score(x, t)
            parts[c] = s
            energies.append(e)
            scores.append(s)
        w = _softmax_rows(np.stack(energies) / -spec.temperature)
        combined = np.einsum("kn,knd->nd", w, np.stack(scores))
        return combined.astype(x.dtype), parts
    total = np.zeros_like(np.atleast_2d(x))
    for c in spec.positive:
        parts[c] = models[c].score(x, t)
        total = total + parts[c]
    for c in spec.negated:
        parts[c] = models[c].score(x, t)
        total = total - spec.gamma * parts[c]
    return total.astype(x.dtype), parts


def composed_energy(models: Mapping[str, EnergyNet], spec: ComposedScoreSpec,
                    x: np.ndarray, t) -> np.ndarray:
    """Energy of the composition, consistent with composed_eps's gradient."""
    if spec.kind == "mixture":
        e = np.stack([models[c].energy(x, t) for c in spec.positive])
        logits = e / -spec.temperature
        m = logits.max(axis=0)
        lse = m + np.log(np.sum(np.exp(logits - m), axis=0))
        return (-spec.temperature * lse).astype(e.dtype)
    total = sum(models[c].energy(x, t) for c in spec.positive)
    for c in spec.negated:
        total = total - spec.gamma * models[c].energy(x, t)
    return total


def composed_energy_and_grad(models: Mapping[str, EnergyNet],
                             spec: ComposedScoreSpec, x: np.ndarray, t
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Composed energy and its gradient in one pass over the models."""
    if spec.kind == "mixture":
        energies, scores = [], []
        for c in spec.positive:
            e, s = models[c].energy_and_score(x, t)
            energies.append(e)
            scores.append(s)
        e = np.stack(energies)
        logits = e / -spec.temperature
        m = logits.max(axis=0)
        w = np.exp(logits - m)
        z = w.sum(axis=0)
        lse = m + np.log(z)
        grad = np.einsum("kn,knd->nd", w / z, np.stack(scores))
        return (-spec.temperature * lse).astype(e.dtype), grad.astype(x.dtype)
    total_e = 0.0
    total_g = 0.0
    for c in spec.positive:
        e, s = models[c].energy_and_score(x, t)
        total_e = total_e + e
        total_g = total_g + s
    for c in spec.negated:
        e, s = models[c].energy_and_score(x, t)
        total_e = total_e - spec.gamma * e
        total_g = total_g - spec.gamma * s
    return total_e, total_g


def reverse_step(x: np.ndarray, t: int, eps_hat: np.ndarray,
                 schedule: DiffusionSchedule, noise: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """One ancestral step from level t to t-1. The last step (t=1) adds no noise."""
    beta = schedule.betas[t - 1]
    ab = schedule.alpha_bars[t - 1]
    dt = x.dtype
    mean = (x - (beta / np.sqrt(1.0 - ab)).astype(dt) * eps_hat) / np.sqrt(
        np.float64(1.0 - beta)
    ).astype(dt)
    if t == 1:
        return mean
    if noise is None:
        if rng is None:
            raise ValueError("reverse_step at t > 1 needs noise or an rng")
        noise = rng.standard_normal(x.shape).astype(dt)
    return mean + np.sqrt(beta).astype(dt) * noise


@dataclass
class PredictionCache:
    """Everything one sample's reverse trajectory touched, most noisy first."""

    timesteps: np.ndarray        # (T,) descending
    xs: np.ndarray               # (T, 2) latent at each level, pre-step
    cond_preds: dict[str, np.ndarray]   # condition -> (T, 2)
    composed_preds: np.ndarray   # (T, 2) prediction used for stepping
    x0: np.ndarray               # (2,) final sample
    schedule: DiffusionSchedule


@dataclass
class BatchedCache:
    """Recorded trajectories for a whole batch; per-sample views on demand."""

    timesteps: np.ndarray        # (T,) descending
    xs: np.ndarray               # (T, n, 2)
    cond_preds: dict[str, np.ndarray]   # condition -> (T, n, 2)
    composed_preds: np.ndarray   # (T, n, 2)
    x0: np.ndarray               # (n, 2)
    schedule: DiffusionSchedule
    seed: int

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def conditions(self) -> tuple[str, ...]:
        return tuple(self.cond_preds)

    def sample(self, i: int) -> PredictionCache:
        return PredictionCache(
            timesteps=self.timesteps,
            xs=self.xs[:, i],
            cond_preds={c: p[:, i] for c, p in self.cond_preds.items()},
            composed_preds=self.composed_preds[:, i],
            x0=self.x0[i],
            schedule=self.schedule,
        )

    def __iter__(self) -> Iterator[PredictionCache]:
        return (self.sample(i) for i in range(len(self)))


def _common_schedule(models: Mapping[str, EnergyNet],
                     conditions: tuple[str, ...]) -> DiffusionSchedule:
    sched = models[conditions[0]].schedule
    for c in conditions[1:]:
        if not np.array_equal(models[c].schedule.betas, sched.betas):
            raise ValueError(f"model {c!r} uses a different noise schedule")
    return sched


def generate(models: Mapping[str, EnergyNet], spec: ComposedScoreSpec,
             n: int, seed: int, record: bool = False
             ) -> tuple[np.ndarray, BatchedCache | None]:
    """Draw n samples by ancestral sampling from the composed prediction.

    Sample i's noise comes from its own generator stream, so the draws never
    depend on n; a run is bit-reproducible for a fixed (seed, n). Model
    evaluations are batched, and wide matmuls are not row-stable across
    batch sizes, so changing n can still move sample i by rounding noise.
    """
    sched = _common_schedule(models, spec.conditions)
    T = sched.timesteps
    draws = np.empty((n, T + 1, 2), dtype=np.float32)
    for i in range(n):
        draws[i] = sample_stream(seed, i).standard_normal((T + 1, 2), dtype=np.float32)

    x = draws[:, 0].copy()
    cache = None
    if record:
        cache = BatchedCache(
            timesteps=np.arange(T, 0, -1),
            xs=np.empty((T, n, 2), dtype=np.float32),
            cond_preds={c: np.empty((T, n, 2), dtype=np.float32)
                        for c in spec.conditions},
            composed_preds=np.empty((T, n, 2), dtype=np.float32),
            x0=np.empty((n, 2), dtype=np.float32),
            schedule=sched,
            seed=seed,
        )

    for j, t in enumerate(range(T, 0, -1)):
        eps_hat, parts = composed_eps_with_parts(models, spec, x, t)
        if cache is not None:
            cache.xs[j] = x
            for c, p in parts.items():
                cache.cond_preds[c][j] = p
            cache.composed_preds[j] = eps_hat
        noise = draws[:, j + 1] if t > 1 else None
        x = reverse_step(x, t, eps_hat, sched, noise=noise)

    if cache is not None:
        cache.x0[:] = x
    return x, cache


def cache_to_disk(cache: BatchedCache, path, alpha: float = 0.9,
                  metadata: Mapping[str, object] | None = None) -> None:
    """Persist a recorded batch in the shared binary cache layout.

    Each (timestep, tag) tensor is the whole batch, shape (n, 2). The
    format requires an unconditional prediction per step; for these
    models that role is played by the scaled composed prediction, so
    alpha is stored in the metadata alongside the generation seed.
    """
    from . import pixellift

    conditions = cache.conditions
    shape = (len(cache), 2)
    latents = {}
    preds = {}
    for j, t in enumerate(int(t) for t in cache.timesteps):
        latents[t] = cache.xs[j]
        preds[("composed", t)] = cache.composed_preds[j]
        preds[("null", t)] = alpha * cache.composed_preds[j]
        for k, c in enumerate(conditions):
            preds[(f"cond{k}", t)] = cache.cond_preds[c][j]
    meta = {"kind": "points2d-batch", "alpha": alpha, "seed": cache.seed}
    if metadata:
        meta.update(metadata)
    pixellift.write_cache(
        pixellift.LatentCache(
            betas=cache.schedule.betas,
            timesteps=tuple(int(t) for t in cache.timesteps),
            conditions=tuple(conditions),
            shape=shape,
            z0=cache.x0,
            latents=latents,
            preds=preds,
            metadata=meta,
        ),
        path,
    )


def cache_from_disk(path) -> BatchedCache:
    """Rebuild a recorded batch from the on-disk cache layout."""
    from . import pixellift

    lc = pixellift.read_cache(path)
    if lc.metadata.get("kind") != "points2d-batch":
        raise pixellift.CacheFormatError(
            f"not a recorded 2D batch: kind={lc.metadata.get('kind')!r}")
    ts = lc.timesteps
    xs = np.stack([lc.latents[t] for t in ts])
    composed = np.stack([lc.preds[("composed", t)] for t in ts])
    cond_preds = {
        c: np.stack([lc.preds[(f"cond{k}", t)] for t in ts])
        for k, c in enumerate(lc.conditions)
    }
    return BatchedCache(
        timesteps=np.asarray(ts, dtype=np.int64),
        xs=xs,
        cond_preds=cond_preds,
        composed_preds=composed,
        x0=lc.z0,
        schedule=DiffusionSchedule(lc.betas),
        seed=int(lc.metadata.get("seed", -1)),
    )
