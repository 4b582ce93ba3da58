"""Weights on the grid, ball measures and semilocal doubling estimates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import GridDomain


class EmptyBallError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Weight:
    domain: GridDomain
    values: np.ndarray
    tag: str = "custom"
    beta: float | None = None

    def __post_init__(self):
        if self.values.shape != self.domain.shape:
            raise ValueError("weight shape does not match the grid")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("weight values must be finite and nonnegative")
        if np.any(self.values[self.domain.inside] <= 0):
            raise ValueError("weight must be positive on inside cells")

    def total(self) -> float:
        return float(self.values.sum()) * self.domain.cell_volume

    def of_mask(self, mask: np.ndarray) -> float:
        """w(E) for a cell set given as a boolean mask."""
        return float(self.values[mask].sum()) * self.domain.cell_volume


def distance_power_weight(domain: GridDomain, beta: float) -> Weight:
    if beta < 0:
        raise ValueError("negative beta is not supported")
    if beta == 0:
        values = np.ones(domain.shape)
    else:
        values = domain.dist**beta
    return Weight(domain, values, tag="distance-power", beta=float(beta))


def constant_weight(domain: GridDomain, value: float = 1.0) -> Weight:
    return Weight(domain, np.full(domain.shape, float(value)), tag="constant")


def ball_mask(domain: GridDomain, x: Sequence[float], r: float) -> np.ndarray:
    """Cells whose centers lie in the open ball B(x, r)."""
    d2 = np.sum((domain.centers - np.asarray(x, float)) ** 2, axis=-1)
    return d2 < r * r


def measure(w: Weight, x: Sequence[float], r: float) -> float:
    """w(B(x, r)) by midpoint cell sums; complement cells count with their weight."""
    if r <= 0:
        raise ValueError("radius must be positive")
    mask = ball_mask(w.domain, x, r)
    if not mask.any():
        raise EmptyBallError("empty ball")
    return w.of_mask(mask)


@dataclass
class DoublingReport:
    kappa: float
    d_hat: float
    samples: list[dict] = field(default_factory=list)
    zero_half_ball: bool = False

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "d_hat": self.d_hat,
            "zero_half_ball": self.zero_half_ball,
            "samples": self.samples,
        }


def _sample_balls(domain: GridDomain, kappa: float, sample_count: int, rng: np.random.Generator):
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    cells = domain.inside_cells()
    rmax = kappa * domain.dist[tuple(cells.T)]
    ok = rmax > 2 * domain.h
    if not ok.any():
        raise SamplingError("no valid sample radii: grid too coarse for kappa * dist")
    cells, rmax = cells[ok], rmax[ok]
    for _ in range(sample_count):
        k = int(rng.integers(len(cells)))
        r = float(rng.uniform(2 * domain.h, rmax[k]))
        # uniform draws the half-open [a, b); flip to (a, b]
        r = float(rmax[k]) - (r - 2 * domain.h)
        yield cells[k], r


def doubling_constant(w: Weight, kappa: float, sample_count: int,
                      rng: np.random.Generator | None = None) -> DoublingReport:
    """Sampled max of w(B(x,r)) / w(B(x,r/2)) over x inside, 2h < r <= kappa*dist(x)."""
    rng = rng or np.random.default_rng(0)
    dom = w.domain
    report = DoublingReport(kappa=float(kappa), d_hat=1.0)
    for cell, r in _sample_balls(dom, kappa, sample_count, rng):
        x = dom.center(cell)
        wb = measure(w, x, r)
        wh = w.of_mask(ball_mask(dom, x, r / 2))
        if wh <= 0 or wb <= 0:
            report.zero_half_ball = True
            continue
        report.d_hat = max(report.d_hat, wb / wh)
        report.samples.append({"x": x.tolist(), "r": r, "wB": wb, "wBhalf": wh})
    return report


@dataclass
class ComparabilityReport:
    beta: float
    kappa: float
    min_ratio: float
    max_ratio: float
    count: int

    def to_json(self) -> dict:
        return self.__dict__.copy()


def comparability_check(domain: GridDomain, beta: float, kappa: float, sample_count: int,
                        rng: np.random.Generator | None = None, r_min: float | None = None) -> ComparabilityReport:
    """Range of w(B(x,r)) / (r^n dist(x)^beta) for the distance-power weight."""
    rng = rng or np.random.default_rng(0)
    w = distance_power_weight(domain, beta)
    lo, hi, count = np.inf, 0.0, 0
    for cell, r in _sample_balls(domain, kappa, sample_count, rng):
        if r_min is not None and r < r_min:
            continue
        x = domain.center(cell)
        ratio = measure(w, x, r) / (r**domain.n * domain.dist[tuple(cell)] ** beta)
        lo, hi, count = min(lo, ratio), max(hi, ratio), count + 1
    if count == 0:
        raise SamplingError("no admissible samples")
    return ComparabilityReport(float(beta), float(kappa), float(lo), float(hi), count)
