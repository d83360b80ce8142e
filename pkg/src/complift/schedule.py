"""DDPM-style noise schedule with 1-based timesteps.

Timestep t runs from 1 (least noisy) to T. All derived arrays are indexed
with t-1; the forward kernel is x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-d array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for name, arr in (
            ("betas", betas),
            ("alphas", alphas),
            ("alpha_bars", alpha_bars),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def timesteps(self) -> int:
        return self.betas.size

    def _tidx(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.timesteps):
            raise ValueError(f"timestep out of range [1, {self.timesteps}]")
        return t - 1

    def alpha_bar(self, t):
        return self.alpha_bars[self._tidx(t)]

    def _coeffs(self, t, like: np.ndarray):
        idx = self._tidx(t)
        ab = self.alpha_bars[idx].astype(like.dtype)
        c0 = np.sqrt(ab)
        c1 = np.sqrt(1.0 - ab).astype(like.dtype)
        if like.ndim > c0.ndim:
            c0, c1 = c0[..., None], c1[..., None]
        return c0, c1

    def add_noise(self, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Forward kernel: noise clean points x0 to level t with the given eps."""
        x0 = np.asarray(x0)
        c0, c1 = self._coeffs(t, x0)
        return c0 * x0 + c1 * eps

    def recover_eps(self, x_t: np.ndarray, x0: np.ndarray, t) -> np.ndarray:
        """Invert add_noise for the eps that produced x_t from x0 at level t."""
        x_t = np.asarray(x_t)
        c0, c1 = self._coeffs(t, x_t)
        return (x_t - c0 * x0) / c1


def make_linear(timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    return DiffusionSchedule(np.linspace(beta_start, beta_end, timesteps))


REFERENCE_TIMESTEPS = 1000


def scaled_linear(timesteps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02,
                  reference: int = REFERENCE_TIMESTEPS) -> DiffusionSchedule:
    """Linear schedule with endpoints rescaled from a reference length.

    Scaling the betas by reference/T keeps the total noise budget of the
    reference schedule whatever T is, so the terminal marginal stays near
    standard normal and generation can honestly start from pure noise.
    With the convention endpoints this needs T > reference * beta_end,
    else a beta would reach 1.
    """
    scale = reference / timesteps
    return make_linear(timesteps, beta_start * scale, beta_end * scale)
