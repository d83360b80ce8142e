"""The 2D benchmark scenarios: component distributions, algebra, ground truth.

Nine scenarios, three per composition kind. Components are shared across
scenarios by name, so a model trained for "rect_l" serves both the product
and mixture scenarios that mention it. Two scenarios are deliberately
unsatisfiable; their ground-truth set is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import algebra
from .algebra import Expr


@dataclass(frozen=True)
class GaussianMixture:
    centers: tuple[tuple[float, float], ...]
    sigma: float
    within: float = 3.0  # membership radius, in sigmas

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        centers = np.asarray(self.centers)
        idx = rng.integers(0, len(centers), size=n)
        return centers[idx] + rng.normal(scale=self.sigma, size=(n, 2))

    def member(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d2 = _sq_dists(pts, np.asarray(self.centers))
        return d2.min(axis=1) <= (self.within * self.sigma) ** 2


@dataclass(frozen=True)
class UniformRects:
    """Uniform over a union of axis-aligned rectangles (xmin, xmax, ymin, ymax)."""

    rects: tuple[tuple[float, float, float, float], ...]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        rects = np.asarray(self.rects)
        areas = (rects[:, 1] - rects[:, 0]) * (rects[:, 3] - rects[:, 2])
        idx = rng.choice(len(rects), size=n, p=areas / areas.sum())
        u = rng.random((n, 2))
        lo = rects[idx][:, [0, 2]]
        hi = rects[idx][:, [1, 3]]
        return lo + u * (hi - lo)

    def member(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        hit = np.zeros(pts.shape[0], dtype=bool)
        for xmin, xmax, ymin, ymax in self.rects:
            hit |= ((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
                    & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax))
        return hit


@dataclass(frozen=True)
class CircleBand:
    """Points on circles; membership is a radial band around any of them."""

    centers: tuple[tuple[float, float], ...]
    radius: float = 1.0
    band: tuple[float, float] = (0.9, 1.1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        centers = np.asarray(self.centers)
        idx = rng.integers(0, len(centers), size=n)
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        ring = self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return centers[idx] + ring

    def member(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = np.sqrt(_sq_dists(pts, np.asarray(self.centers)))
        lo, hi = self.band
        return np.any((d >= lo) & (d <= hi), axis=1)


@dataclass(frozen=True)
class PointSet:
    points: tuple[tuple[float, float], ...]
    tol: float = 0.1

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pts = np.asarray(self.points)
        return pts[rng.integers(0, len(pts), size=n)].astype(float)

    def member(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d2 = _sq_dists(pts, np.asarray(self.points))
        return d2.min(axis=1) <= self.tol**2


def _sq_dists(pts: np.ndarray, refs: np.ndarray) -> np.ndarray:
    diff = pts[:, None, :] - refs[None, :, :]
    return np.sum(diff**2, axis=2)


def sample_dataset(spec, n: int, seed: int) -> np.ndarray:
    return spec.sample(n, np.random.default_rng(seed)).astype(np.float32)


_RING8 = tuple(
    (0.5 * math.cos(2 * math.pi * k / 8), 0.5 * math.sin(2 * math.pi * k / 8))
    for k in range(8)
)
_ROOT3_2 = math.sqrt(3.0) / 2.0

COMPONENTS: dict[str, object] = {
    "ring8": GaussianMixture(_RING8, sigma=0.3),
    "strip": UniformRects(((-0.1, 0.1, -1.0, 1.0),)),
    "circle_l": CircleBand(((-0.5, 0.0),)),
    "circle_r": CircleBand(((0.5, 0.0),)),
    "rect_l": UniformRects(((-1.0, -0.5, -1.0, 1.0),)),
    "rect_r": UniformRects(((0.5, 1.0, -1.0, 1.0),)),
    "gauss3_l": GaussianMixture(((-0.25, 0.5), (-0.25, 0.0), (-0.25, -0.5)), sigma=0.3),
    "gauss3_r": GaussianMixture(((0.25, 0.5), (0.25, 0.0), (0.25, -0.5)), sigma=0.3),
    "square": UniformRects(((-1.0, 1.0, -1.0, 1.0),)),
    "square_half": UniformRects(((-0.5, 0.5, -0.5, 0.5),)),
    "strip_wide": UniformRects(((-0.5, 0.5, -2.0, 2.0),)),
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    kind: str            # product | mixture | negation
    expression: str
    composed: object | None   # reference distribution; None when unsatisfiable
    dataset_size: int = 8000

    @property
    def expr(self) -> Expr:
        return algebra.parse(self.expression)

    @property
    def conditions(self) -> tuple[str, ...]:
        return algebra.variables(self.expr)

    @property
    def is_empty(self) -> bool:
        return self.composed is None

    def member(self, pts: np.ndarray) -> np.ndarray:
        """Boolean combination of component memberships per the algebra."""
        pts = np.atleast_2d(pts)
        if self.is_empty:
            return np.zeros(pts.shape[0], dtype=bool)
        env = {c: COMPONENTS[c].member(pts) for c in self.conditions}
        return _eval_bool(self.expr, env)

    def sample_ground_truth(self, n: int, seed: int) -> np.ndarray:
        """Reference cloud: the composed proposal, rejected against member().

        The proposal describes where the composed mass lives; rejection
        trims it to the exact support so every reference point satisfies
        the algebra (a product proposal overlaps but is not contained in
        the intersection).
        """
        if self.is_empty:
            return np.zeros((0, 2), dtype=np.float32)
        rng = np.random.default_rng(seed)
        kept: list[np.ndarray] = []
        have = 0
        for _ in range(200):
            pts = self.composed.sample(max(n, 256), rng)
            pts = pts[self.member(pts)]
            if pts.shape[0]:
                kept.append(pts)
                have += pts.shape[0]
            if have >= n:
                break
        else:
            raise RuntimeError(
                f"{self.scenario_id}: proposal barely intersects the support")
        return np.concatenate(kept)[:n].astype(np.float32)


def _eval_bool(e: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if e.kind == "lit":
        return env[e.name]
    if e.kind == "not":
        return ~_eval_bool(e.children[0], env)
    out = _eval_bool(e.children[0], env)
    for child in e.children[1:]:
        if e.kind == "and":
            out = out & _eval_bool(child, env)
        else:
            out = out | _eval_bool(child, env)
    return out


_FRAME_RECTS = (
    (-1.0, -0.5, -1.0, 1.0),
    (0.5, 1.0, -1.0, 1.0),
    (-0.5, 0.5, 0.5, 1.0),
    (-0.5, 0.5, -1.0, -0.5),
)
_SLAB_RECTS = ((-1.0, -0.5, -1.0, 1.0), (0.5, 1.0, -1.0, 1.0))

SCENARIOS: dict[str, ScenarioSpec] = {
    "product_a": ScenarioSpec(
        "product_a", "product", "ring8 & strip",
        GaussianMixture(((0.0, 0.5), (0.0, -0.5)), sigma=0.3),
    ),
    "product_b": ScenarioSpec(
        "product_b", "product", "circle_l & circle_r",
        PointSet(((0.0, _ROOT3_2), (0.0, -_ROOT3_2))),
    ),
    "product_c": ScenarioSpec("product_c", "product", "rect_l & rect_r", None),
    "mixture_a": ScenarioSpec(
        "mixture_a", "mixture", "gauss3_l | gauss3_r",
        GaussianMixture(
            tuple((sx, y) for sx in (-0.25, 0.25) for y in (0.5, 0.0, -0.5)),
            sigma=0.3,
        ),
    ),
    "mixture_b": ScenarioSpec(
        "mixture_b", "mixture", "rect_l | rect_r", UniformRects(_SLAB_RECTS),
    ),
    "mixture_c": ScenarioSpec(
        "mixture_c", "mixture", "circle_l | circle_r",
        CircleBand(((-0.5, 0.0), (0.5, 0.0))),
    ),
    "negation_a": ScenarioSpec(
        "negation_a", "negation", "square & !square_half",
        UniformRects(_FRAME_RECTS),
    ),
    "negation_b": ScenarioSpec(
        "negation_b", "negation", "square & !strip_wide",
        UniformRects(_SLAB_RECTS),
    ),
    "negation_c": ScenarioSpec(
        "negation_c", "negation", "square_half & !square", None,
    ),
}
