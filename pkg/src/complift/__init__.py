"""Compositional diffusion toolkit: lift-score rejection sampling on 2D
energy models, MCMC baselines, and pixel-level lift for latent image caches."""

__version__ = "0.1.0"
