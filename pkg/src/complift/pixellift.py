"""Per-pixel lift maps over latent tensors, plus the on-disk cache format.

A latent is a (channels, h, w) float32 tensor. The per-pixel lift compares
the composed prediction against the unconditional and the per-condition
predictions, summing squared differences over channels so each spatial
location gets one dimensionless value; pixels with positive lift are
"activated" and counted against a threshold.

Predictions come either from a live denoiser oracle (anything with a
``predict(z_t, t, tag) -> tensor`` method) or from a cache directory
recorded during generation. The directory layout is normative for
interop: ``manifest.json`` plus raw little-endian float32 C-order tensors
named ``{tag}_t{timestep}.bin`` (tags: ``latent``, ``null``, ``composed``,
``cond0``..``cond{K-1}``) and the final latent ``z0.bin``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .algebra import CnfForm, cnf_variables, compose_verdict
from .schedule import DiffusionSchedule

CACHE_FORMAT = "complift-latent-cache"
CACHE_VERSION = 1
DEFAULT_TAU = 250

LIFT_MODES = ("composed", "raw")


class CacheFormatError(ValueError):
    """The on-disk cache violates the manifest contract."""


class DenoiserOracle(Protocol):
    def predict(self, z_t: np.ndarray, t: int, tag: str) -> np.ndarray: ...


def _cond_tag(conditions: Sequence[str], name: str) -> str:
    return f"cond{list(conditions).index(name)}"


@dataclass(frozen=True)
class LatentCache:
    """In-memory image of one recorded generation run."""

    betas: np.ndarray
    timesteps: tuple[int, ...]          # visited reverse steps, descending
    conditions: tuple[str, ...]
    shape: tuple[int, ...]              # (channels, h, w)
    z0: np.ndarray
    latents: Mapping[int, np.ndarray]   # t -> z_t
    preds: Mapping[tuple[str, int], np.ndarray]  # (tag, t) -> prediction
    metadata: Mapping[str, object] = field(default_factory=dict)

    @property
    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(self.betas)

    def pred_for(self, name: str, t: int) -> np.ndarray:
        """Prediction by condition name, file tag, or null/composed."""
        if name in ("null", "composed"):
            tag = name
        elif name in self.conditions:
            tag = _cond_tag(self.conditions, name)
        else:
            # fall back to the raw file tag: condition strings are often
            # not valid algebra identifiers, their cond{k} aliases are
            tag = name
        try:
            return self.preds[(tag, t)]
        except KeyError:
            raise KeyError(f"no prediction for {name!r} at t={t}") from None


class ReplayOracle:
    """Oracle that answers from a cache, ignoring the query latent."""

    def __init__(self, cache: LatentCache):
        self.cache = cache

    def predict(self, z_t: np.ndarray, t: int, tag: str) -> np.ndarray:
        return self.cache.pred_for(tag, int(t))


def write_cache(cache: LatentCache, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "betas": [float(b) for b in np.asarray(cache.betas, dtype=np.float64)],
        "timesteps": [int(t) for t in cache.timesteps],
        "conditions": list(cache.conditions),
        "shape": list(cache.shape),
        "dtype": "<f4",
        "byte_order": "little",
        "z0": "z0.bin",
        "metadata": dict(cache.metadata),
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    def dump(name: str, arr: np.ndarray) -> None:
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        if arr.shape != cache.shape:
            raise CacheFormatError(f"{name}: shape {arr.shape} != {cache.shape}")
        (path / name).write_bytes(arr.tobytes())

    dump("z0.bin", cache.z0)
    tags = ["null", "composed"] + [f"cond{k}" for k in range(len(cache.conditions))]
    for t in cache.timesteps:
        dump(f"latent_t{t}.bin", cache.latents[t])
        for tag in tags:
            dump(f"{tag}_t{t}.bin", cache.preds[(tag, t)])


def read_cache(path: str | os.PathLike) -> LatentCache:
    """Validate every declared file's size, then load the whole cache."""
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise CacheFormatError(f"missing manifest: {mf}")
    manifest = json.loads(mf.read_text())
    if manifest.get("format") != CACHE_FORMAT:
        raise CacheFormatError(f"unknown format {manifest.get('format')!r}")
    if manifest.get("version") != CACHE_VERSION:
        raise CacheFormatError(f"unsupported version {manifest.get('version')!r}")
    if manifest.get("dtype") != "<f4" or manifest.get("byte_order") != "little":
        raise CacheFormatError("cache tensors must be little-endian float32")

    shape = tuple(int(s) for s in manifest["shape"])
    timesteps = tuple(int(t) for t in manifest["timesteps"])
    conditions = tuple(manifest["conditions"])
    nbytes = int(np.prod(shape)) * 4

    tags = ["latent", "null", "composed"]
    tags += [f"cond{k}" for k in range(len(conditions))]
    names = [manifest.get("z0", "z0.bin")]
    names += [f"{tag}_t{t}.bin" for t in timesteps for tag in tags]
    for name in names:
        f = path / name
        if not f.exists():
            raise CacheFormatError(f"missing tensor file: {f}")
        size = f.stat().st_size
        if size != nbytes:
            raise CacheFormatError(
                f"{f}: {size} bytes, expected {nbytes} for shape {shape}")

    def load(name: str) -> np.ndarray:
        arr = np.frombuffer((path / name).read_bytes(), dtype="<f4")
        return arr.reshape(shape)

    latents = {t: load(f"latent_t{t}.bin") for t in timesteps}
    preds = {}
    for t in timesteps:
        for tag in tags[1:]:
            preds[(tag, t)] = load(f"{tag}_t{t}.bin")
    return LatentCache(
        betas=np.asarray(manifest["betas"], dtype=np.float64),
        timesteps=timesteps,
        conditions=conditions,
        shape=shape,
        z0=load(manifest.get("z0", "z0.bin")),
        latents=latents,
        preds=preds,
        metadata=manifest.get("metadata", {}),
    )


def _pixel_diff(null: np.ndarray, cond: np.ndarray,
                target: np.ndarray) -> np.ndarray:
    """One trial's per-pixel differential loss, channels summed."""
    a = np.sum((target - null) ** 2, axis=0)
    b = np.sum((target - cond) ** 2, axis=0)
    return a - b


def per_pixel_lift(z0: np.ndarray | None, cond: str, source,
                   schedule: DiffusionSchedule | None = None,
                   trials: int = 100,
                   timesteps: Sequence[int] | None = None,
                   rng: np.random.Generator | None = None,
                   mode: str = "composed") -> np.ndarray:
    """Spatial lift map for one condition, averaged over trials.

    ``source`` is a LatentCache (trials are its visited timesteps; zero
    oracle calls) or a denoiser oracle (fresh noised latents per trial).
    ``mode`` picks the trial target: the composed prediction (default,
    variance-reduced) or the raw noise ("raw": drawn fresh on the oracle
    path, recovered from the recorded latent on the cache path).
    """
    if mode not in LIFT_MODES:
        raise ValueError(f"mode must be one of {LIFT_MODES}")

    if isinstance(source, LatentCache):
        sched = source.schedule
        steps = source.timesteps if timesteps is None else tuple(timesteps)
        z0 = source.z0 if z0 is None else np.asarray(z0)
        total = None
        for t in steps:
            comp = source.pred_for("composed", t).astype(np.float64)
            null = source.pred_for("null", t).astype(np.float64)
            cpred = source.pred_for(cond, t).astype(np.float64)
            if mode == "raw":
                z_t = source.latents[t].astype(np.float64)
                target = sched.recover_eps(z_t, z0.astype(np.float64), t)
            else:
                target = comp
            d = _pixel_diff(null, cpred, target)
            total = d if total is None else total + d
        return total / len(steps)

    if schedule is None:
        raise ValueError("oracle path needs a schedule")
    if z0 is None:
        raise ValueError("oracle path needs the final latent")
    if rng is None:
        raise ValueError("oracle path needs an rng for trial noise")
    z0 = np.asarray(z0, dtype=np.float64)
    if timesteps is not None:
        steps = np.asarray(tuple(timesteps), dtype=np.int64)
    else:
        steps = rng.integers(1, schedule.timesteps + 1, size=trials)
    total = None
    for t in steps:
        t = int(t)
        eps = rng.standard_normal(z0.shape)
        z_t = schedule.add_noise(z0, t, eps).astype(np.float32)
        comp = np.asarray(source.predict(z_t, t, "composed"), dtype=np.float64)
        null = np.asarray(source.predict(z_t, t, "null"), dtype=np.float64)
        cpred = np.asarray(source.predict(z_t, t, cond), dtype=np.float64)
        target = eps if mode == "raw" else comp
        d = _pixel_diff(null, cpred, target)
        total = d if total is None else total + d
    return total / len(steps)


def count_verdict(lift_map: np.ndarray, tau: int = DEFAULT_TAU
                  ) -> tuple[int, bool]:
    """Activated-pixel count and the strict accept decision.

    A pixel activates when its lift is strictly positive; the map passes
    only when the count strictly exceeds tau.
    """
    lift_map = np.asarray(lift_map)
    if not np.isfinite(lift_map).all():
        raise ValueError("lift map contains non-finite values")
    count = int(np.sum(lift_map > 0))
    return count, count - tau > 0


@dataclass(frozen=True)
class PixelVerdict:
    counts: dict[str, int]
    lifts: dict[str, float]     # count - tau, fed to the algebra
    accept: bool
    maps: dict[str, np.ndarray]
    tau: int


def verdict_for_prompt(source, cnf: CnfForm,
                       conditions: Sequence[str] | None = None,
                       tau: int = DEFAULT_TAU, **lift_kwargs) -> PixelVerdict:
    """Per-condition pixel counts combined through the composition algebra."""
    if conditions is None:
        conditions = cnf_variables(cnf)
    z0 = lift_kwargs.pop("z0", None)
    counts: dict[str, int] = {}
    maps: dict[str, np.ndarray] = {}
    for name in conditions:
        m = per_pixel_lift(z0, name, source, **lift_kwargs)
        counts[name], _ = count_verdict(m, tau)
        maps[name] = m
    lifts = {name: float(counts[name] - tau) for name in conditions}
    return PixelVerdict(counts, lifts, compose_verdict(lifts, cnf), maps, tau)
