"""Annealed MCMC baselines over composed energies.

Chains run in lockstep as one (n, 2) array, sweeping the noise levels from
most to least smoothed. The Langevin step size eta and the leapfrog step
sqrt(eta) are tied so that ULA coincides with a single uncorrected leapfrog
step; each level scales eta by (1 - abar_t), which vanishes as the energy
landscape sharpens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .energynet import EnergyNet
from .sampler import ComposedScoreSpec, _common_schedule, composed_energy_and_grad

# x (n, 2) -> (energy (n,), gradient (n, 2))
EnergyGrad = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

KINDS = ("ula", "mala", "uhmc", "hmc")


@dataclass(frozen=True)
class McmcConfig:
    kind: str = "hmc"
    steps_per_level: int = 10
    eta: float = 0.05
    leapfrog: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown MCMC kind {self.kind!r}")
        if self.eta <= 0 or self.steps_per_level < 1 or self.leapfrog < 1:
            raise ValueError("eta, steps_per_level, and leapfrog must be positive")


def ula_step(x: np.ndarray, energy_grad: EnergyGrad, eta: float,
             rng: np.random.Generator) -> np.ndarray:
    """Unadjusted Langevin: drift down the gradient, add sqrt(eta) noise."""
    _, g = energy_grad(x)
    noise = rng.standard_normal(x.shape).astype(x.dtype)
    return x - np.asarray(0.5 * eta, dtype=x.dtype) * g + np.asarray(
        np.sqrt(eta), dtype=x.dtype) * noise


def mala_step(x: np.ndarray, energy_grad: EnergyGrad, eta: float,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Langevin proposal with the Metropolis-Hastings correction."""
    e0, g0 = energy_grad(x)
    noise = rng.standard_normal(x.shape).astype(x.dtype)
    half = np.asarray(0.5 * eta, dtype=x.dtype)
    root = np.asarray(np.sqrt(eta), dtype=x.dtype)
    prop = x - half * g0 + root * noise
    e1, g1 = energy_grad(prop)

    # q(prop | x) puts the forward noise in the exponent directly
    fwd = np.sum(noise.astype(np.float64) ** 2, axis=1) / 2.0
    back_res = (x - (prop - half * g1)).astype(np.float64)
    back = np.sum(back_res**2, axis=1) / (2.0 * eta)
    with np.errstate(invalid="ignore"):  # non-finite energies become rejects
        log_acc = e0.astype(np.float64) - e1.astype(np.float64) + fwd - back

    logu = np.log(rng.random(x.shape[0]))
    accept = np.isfinite(log_acc) & (logu < log_acc)
    out = np.where(accept[:, None], prop, x)
    return out, accept


def leapfrog(q: np.ndarray, p: np.ndarray, energy_grad: EnergyGrad, step,
             steps: int, grad0: np.ndarray | None = None
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate Hamilton's equations; returns final (q, p) and energy at q."""
    step = np.asarray(step, dtype=q.dtype)
    g = energy_grad(q)[1] if grad0 is None else grad0
    p = p - 0.5 * step * g
    for l in range(steps):
        q = q + step * p
        e, g = energy_grad(q)
        if l < steps - 1:
            p = p - step * g
    p = p - 0.5 * step * g
    return q, p, e


def hmc_step(x: np.ndarray, energy_grad: EnergyGrad, eta: float,
             rng: np.random.Generator, leapfrog_steps: int = 5,
             metropolis: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Hamiltonian proposal with unit mass; leapfrog step size sqrt(eta).

    metropolis=False gives the uncorrected variant: proposals are always
    taken unless the trajectory produced a non-finite Hamiltonian.
    """
    p0 = rng.standard_normal(x.shape).astype(x.dtype)
    e0, g0 = energy_grad(x)
    h0 = e0.astype(np.float64) + 0.5 * np.sum(p0.astype(np.float64) ** 2, axis=1)

    q, p1, e1 = leapfrog(x, p0, energy_grad, np.sqrt(eta), leapfrog_steps, grad0=g0)

    h1 = e1.astype(np.float64) + 0.5 * np.sum(p1.astype(np.float64) ** 2, axis=1)
    delta = h1 - h0
    if metropolis:
        logu = np.log(rng.random(x.shape[0]))
        accept = np.isfinite(delta) & (logu < -delta)
    else:
        accept = np.isfinite(delta)
    out = np.where(accept[:, None], q, x)
    return out, accept


def annealed_sample(models: Mapping[str, EnergyNet], spec: ComposedScoreSpec,
                    n: int, config: McmcConfig = McmcConfig()) -> np.ndarray:
    """Draw n samples by annealing the composed energy over all noise levels."""
    sched = _common_schedule(models, spec.conditions)
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal((n, 2)).astype(np.float32)
    for t in range(sched.timesteps, 0, -1):
        level = float(1.0 - sched.alpha_bars[t - 1])
        eta = config.eta * level
        # grad E approximates the noise eps = -sigma_t * grad log p_t, so
        # exp(-E) is p_t^sigma_t; temper by 1/sigma_t so each level targets
        # the actual noise-level marginal p_t.
        inv_sigma = 1.0 / float(np.sqrt(level))

        def fn(pts: np.ndarray, t: int = t, s: float = inv_sigma):
            e, g = composed_energy_and_grad(models, spec, pts, t)
            return e * s, g * s

        for _ in range(config.steps_per_level):
            if config.kind == "ula":
                x = ula_step(x, fn, eta, rng)
            elif config.kind == "mala":
                x, _ = mala_step(x, fn, eta, rng)
            elif config.kind == "uhmc":
                x, _ = hmc_step(x, fn, eta, rng, config.leapfrog, metropolis=False)
            else:
                x, _ = hmc_step(x, fn, eta, rng, config.leapfrog, metropolis=True)
    return x
