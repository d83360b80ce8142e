"""Energy-parameterized denoiser for 2D points.

The network maps (x, t) to a scalar energy E through a SiLU MLP; the noise
prediction is the input gradient dE/dx, computed by an explicit backward
pass rather than autodiff. Training minimizes ||dE/dx - eps||^2, so its
gradient has to differentiate through that backward pass; the update rules
below propagate through the (energy, score) composite graph by hand.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .schedule import DiffusionSchedule

INPUT_DIM = 2
_BLOCK = 16384  # rows per evaluation chunk, keeps intermediates ~100MB

_LAYER_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")

CHECKPOINT_FORMAT = "complift-energy"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at step {step}")
        self.step = step


def _sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _silu(z, sig):
    return z * sig


def _silu_d(z, sig):
    # d/dz [z * sig(z)] = sig + z sig (1 - sig)
    return sig * (1.0 + z * (1.0 - sig))


def _silu_dd(z, sig):
    # second derivative, needed when the training loss reaches through dE/dx
    return sig * (1.0 - sig) * (2.0 + z * (1.0 - 2.0 * sig))


def time_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    ang = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


@dataclass
class TrainConfig:
    steps: int = 10000
    batch: int = 256
    lr: float = 1e-3
    hidden: int = 128
    embed_dim: int = 32
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


def init_params(hidden: int, embed_dim: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    din = INPUT_DIM + embed_dim
    scale = lambda fan_in: 1.0 / np.sqrt(fan_in)
    params = {
        "w1": rng.standard_normal((din, hidden)) * scale(din),
        "b1": np.zeros(hidden),
        "w2": rng.standard_normal((hidden, hidden)) * scale(hidden),
        "b2": np.zeros(hidden),
        "w3": rng.standard_normal((hidden, hidden)) * scale(hidden),
        "b3": np.zeros(hidden),
        "w4": rng.standard_normal(hidden) * scale(hidden),
        "b4": np.zeros(()),
    }
    return {k: v.astype(np.float32) for k, v in params.items()}


class EnergyNet:
    """One trained component: scalar energy over noisy 2D points."""

    def __init__(self, condition: str, schedule: DiffusionSchedule,
                 params: dict[str, np.ndarray], embed_dim: int = 32, seed: int = 0):
        self.condition = condition
        self.schedule = schedule
        self.params = params
        self.embed_dim = embed_dim
        self.seed = seed
        self.hidden = params["w2"].shape[0]
        dtype = params["w1"].dtype
        self._emb = time_embedding(
            np.arange(1, schedule.timesteps + 1), embed_dim, dtype=dtype
        )

    @property
    def dtype(self):
        return self.params["w1"].dtype

    def astype(self, dtype) -> "EnergyNet":
        """Clone with recast parameters (float64 helps finite-difference tests)."""
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return EnergyNet(self.condition, self.schedule, params, self.embed_dim, self.seed)

    def _inputs(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        tt = np.asarray(t)
        if tt.ndim == 0:
            tt = np.full(x.shape[0], int(tt))
        emb = self._emb[tt - 1]
        return np.concatenate([x, emb], axis=1)

    def _eval(self, x, t, want_energy: bool, want_score: bool):
        p = self.params
        u = self._inputs(x, t)
        z1 = u @ p["w1"] + p["b1"]
        sg1 = _sigmoid(z1)
        h1 = _silu(z1, sg1)
        z2 = h1 @ p["w2"] + p["b2"]
        sg2 = _sigmoid(z2)
        h2 = _silu(z2, sg2)
        z3 = h2 @ p["w3"] + p["b3"]
        sg3 = _sigmoid(z3)
        energy = None
        if want_energy:
            h3 = _silu(z3, sg3)
            energy = h3 @ p["w4"] + p["b4"]
        score = None
        if want_score:
            a3 = _silu_d(z3, sg3) * p["w4"]
            a2 = (a3 @ p["w3"].T) * _silu_d(z2, sg2)
            a1 = (a2 @ p["w2"].T) * _silu_d(z1, sg1)
            score = (a1 @ p["w1"].T)[:, :INPUT_DIM]
        return energy, score

    def _chunked(self, x, t, want_energy, want_score):
        x = np.atleast_2d(np.asarray(x))
        n = x.shape[0]
        t_arr = np.asarray(t)
        if n <= _BLOCK:
            return self._eval(x, t, want_energy, want_score)
        energies, scores = [], []
        for lo in range(0, n, _BLOCK):
            hi = min(lo + _BLOCK, n)
            tb = t_arr if t_arr.ndim == 0 else t_arr[lo:hi]
            e, s = self._eval(x[lo:hi], tb, want_energy, want_score)
            if want_energy:
                energies.append(e)
            if want_score:
                scores.append(s)
        e = np.concatenate(energies) if want_energy else None
        s = np.concatenate(scores) if want_score else None
        return e, s

    def energy(self, x, t) -> np.ndarray:
        """E(x, t); x is (N, 2) or (2,), t an int or (N,) ints."""
        single = np.asarray(x).ndim == 1
        e, _ = self._chunked(x, t, True, False)
        return e[0] if single else e

    def score(self, x, t) -> np.ndarray:
        """dE/dx, the noise prediction; shaped like x."""
        single = np.asarray(x).ndim == 1
        _, s = self._chunked(x, t, False, True)
        return s[0] if single else s

    def energy_and_score(self, x, t) -> tuple[np.ndarray, np.ndarray]:
        single = np.asarray(x).ndim == 1
        e, s = self._chunked(x, t, True, True)
        return (e[0], s[0]) if single else (e, s)


def _loss_and_grads(params, u, eps):
    """Mean squared error between dE/dx and eps, plus its parameter gradients.

    Two backward sweeps share accumulators: the loss depends on the score,
    which is itself a backward pass, so every weight picks up one term from
    the score graph and one from the energy graph it reaches through.
    """
    w1, b1 = params["w1"], params["b1"]
    w2, b2 = params["w2"], params["b2"]
    w3, b3 = params["w3"], params["b3"]
    w4 = params["w4"]
    n = u.shape[0]

    z1 = u @ w1 + b1
    sg1 = _sigmoid(z1)
    h1 = _silu(z1, sg1)
    z2 = h1 @ w2 + b2
    sg2 = _sigmoid(z2)
    h2 = _silu(z2, sg2)
    z3 = h2 @ w3 + b3
    sg3 = _sigmoid(z3)

    s1p, s2p, s3p = _silu_d(z1, sg1), _silu_d(z2, sg2), _silu_d(z3, sg3)
    a3 = s3p * w4
    t2 = a3 @ w3.T
    a2 = t2 * s2p
    t1 = a2 @ w2.T
    a1 = t1 * s1p
    g = a1 @ w1.T
    score = g[:, :INPUT_DIM]

    diff = score - eps
    loss = float(np.mean(np.sum(diff.astype(np.float64) ** 2, axis=1)))

    gbar = np.zeros_like(g)
    gbar[:, :INPUT_DIM] = (2.0 / n) * diff

    # backward through the score graph
    a1bar = gbar @ w1
    dw1 = gbar.T @ a1
    t1bar = a1bar * s1p
    z1acc = a1bar * t1 * _silu_dd(z1, sg1)
    a2bar = t1bar @ w2
    dw2 = t1bar.T @ a2
    t2bar = a2bar * s2p
    z2acc = a2bar * t2 * _silu_dd(z2, sg2)
    a3bar = t2bar @ w3
    dw3 = t2bar.T @ a3
    dw4 = np.sum(a3bar * s3p, axis=0)
    z3bar = a3bar * w4 * _silu_dd(z3, sg3)

    # backward through the energy graph the score reached into
    dw3 += h2.T @ z3bar
    db3 = np.sum(z3bar, axis=0)
    h2bar = z3bar @ w3.T
    z2bar = z2acc + h2bar * s2p
    dw2 += h1.T @ z2bar
    db2 = np.sum(z2bar, axis=0)
    h1bar = z2bar @ w2.T
    z1bar = z1acc + h1bar * s1p
    dw1 += u.T @ z1bar
    db1 = np.sum(z1bar, axis=0)

    grads = {
        "w1": dw1, "b1": db1,
        "w2": dw2, "b2": db2,
        "w3": dw3, "b3": db3,
        "w4": dw4, "b4": np.zeros_like(params["b4"]),
    }
    return loss, grads


def train(dataset: np.ndarray, schedule: DiffusionSchedule, condition: str,
          cfg: TrainConfig | None = None, log_every: int = 0) -> EnergyNet:
    """Fit an EnergyNet to 2D points by denoising score matching."""
    cfg = cfg or TrainConfig()
    data = np.asarray(dataset, dtype=np.float32)
    if data.ndim != 2 or data.shape[1] != INPUT_DIM:
        raise ValueError("dataset must be (n, 2)")
    params = init_params(cfg.hidden, cfg.embed_dim, cfg.seed)
    model = EnergyNet(condition, schedule, params, cfg.embed_dim, cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    T = schedule.timesteps

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, data.shape[0], size=cfg.batch)
        t = rng.integers(1, T + 1, size=cfg.batch)
        eps = rng.standard_normal((cfg.batch, INPUT_DIM), dtype=np.float32)
        x_t = schedule.add_noise(data[idx], t, eps)
        u = model._inputs(x_t, t)
        loss, grads = _loss_and_grads(params, u, eps)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        c1 = 1.0 - b1 ** step
        c2 = 1.0 - b2 ** step
        for k in _LAYER_NAMES:
            g = grads[k]
            m[k] = b1 * m[k] + (1.0 - b1) * g
            v[k] = b2 * v[k] + (1.0 - b2) * g * g
            params[k] -= (cfg.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.adam_eps)).astype(np.float32)
        if log_every and step % log_every == 0:
            print(f"[{condition}] step {step}/{cfg.steps} loss {loss:.4f}")
    return model


def save_checkpoint(model: EnergyNet, path: str | os.PathLike) -> None:
    """Single file: one JSON header line, then raw little-endian float32."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "condition": model.condition,
        "seed": model.seed,
        "embed_dim": model.embed_dim,
        "hidden": model.hidden,
        "betas": model.schedule.betas.tolist(),
        "layers": [[k, list(model.params[k].shape)] for k in _LAYER_NAMES],
        "dtype": "float32",
        "byte_order": "little",
    }
    blob = b"".join(
        np.ascontiguousarray(model.params[k], dtype="<f4").tobytes()
        for k in _LAYER_NAMES
    )
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode())
        f.write(b"\n")
        f.write(blob)


def load_checkpoint(path: str | os.PathLike) -> EnergyNet:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    header = json.loads(header_line)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not an energy checkpoint: {path}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    layers = [(name, tuple(shape)) for name, shape in header["layers"]]
    expect = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layers) * 4
    if len(blob) != expect:
        raise ValueError(f"checkpoint blob is {len(blob)} bytes, expected {expect}")
    params = {}
    off = 0
    for name, shape in layers:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        params[name] = arr.reshape(shape).astype(np.float32)
        off += count * 4
    sched = DiffusionSchedule(np.array(header["betas"]))
    return EnergyNet(header["condition"], sched, params,
                     embed_dim=header["embed_dim"], seed=header["seed"])
