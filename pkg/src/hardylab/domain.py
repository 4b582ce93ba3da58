"""Uniform-grid open sets with exact distance to the complement.

A cell belongs to a region iff its center does. The complement of the
domain is the union of complement cell centers, puncture points and the
exterior of the bounding box (minus sides declared free).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

SQRT2 = math.sqrt(2.0)
SQRT5 = math.sqrt(5.0)

# Worst-case ratio of 16-neighbor path length to Euclidean length: the widest
# angular gap between stencil directions is atan(1/2).
STENCIL_METRIC_FACTOR = 1.0 / math.cos(math.atan(0.5) / 2.0)

SIDE_NAMES = ("xmin", "xmax", "ymin", "ymax")
BRUTE_FORCE_LIMIT = 64 * 64


class DomainError(ValueError):
    """Raised for malformed or degenerate domain specifications."""


@dataclass(frozen=True)
class DomainSpec:
    n: int
    h: float
    box: tuple[tuple[float, ...], tuple[float, ...]]
    shapes: tuple[dict, ...]
    free_sides: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        try:
            n = int(data["n"])
            box = tuple(tuple(float(v) for v in corner) for corner in data["box"])
            return cls(
                n=n,
                h=float(data["h"]),
                box=box,  # type: ignore[arg-type]
                shapes=tuple(dict(s) for s in data.get("shapes", [])),
                free_sides=tuple(data.get("free_sides", [])),
            )
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed domain spec: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "DomainSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "h": self.h,
            "box": [list(c) for c in self.box],
            "shapes": [dict(s) for s in self.shapes],
            "free_sides": list(self.free_sides),
        }


@dataclass(frozen=True)
class ExperimentParams:
    """Scalar parameters shared by the experiments; unset fields are None."""

    p: float | None = None
    p0: float | None = None
    q: float | None = None
    kappa: float | None = None
    nu: float | None = None
    lam: float | None = None
    tau: float | None = None
    Lambda: float | None = None
    R: float | None = None
    beta: float | None = None

    def __post_init__(self):
        for name in ("p", "p0", "q"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if None not in (self.p0, self.q, self.p) and not (self.p0 < self.q < self.p):
            raise ValueError("need p0 < q < p")
        for name in ("tau", "Lambda", "beta"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be > 0")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.lam is not None and self.lam < 1:
            raise ValueError("lambda must be >= 1")


@dataclass(frozen=True, eq=False)
class GridDomain:
    n: int
    origin: np.ndarray
    extent: np.ndarray
    h: float
    inside: np.ndarray
    dist: np.ndarray
    punctures: tuple[tuple[float, ...], ...] = ()
    free_sides: tuple[str, ...] = ()
    qc_factor: float = 1.0
    spec: DomainSpec | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.inside.shape

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @cached_property
    def centers(self) -> np.ndarray:
        """Array of shape (*grid, n) with cell-center coordinates."""
        axes = [self.origin[k] + (np.arange(self.shape[k]) + 0.5) * self.h for k in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def center(self, cell: Sequence[int]) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.h

    def inside_cells(self) -> np.ndarray:
        return np.argwhere(self.inside)

    def locate(self, point: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell whose closed square contains ``point``."""
        idx = np.floor((np.asarray(point, float) - self.origin) / self.h).astype(int)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return tuple(int(i) for i in idx)

    def box_side_distance(self) -> np.ndarray:
        """Distance from each center to the non-free sides of the bounding box."""
        d = np.full(self.shape, np.inf)
        for k in range(self.n):
            idx = np.arange(self.shape[k])
            lo = (idx + 0.5) * self.h
            hi = (self.shape[k] - idx - 0.5) * self.h
            bshape = [1] * self.n
            bshape[k] = -1
            if SIDE_NAMES[2 * k] not in self.free_sides:
                d = np.minimum(d, lo.reshape(bshape))
            if SIDE_NAMES[2 * k + 1] not in self.free_sides:
                d = np.minimum(d, hi.reshape(bshape))
        return d

    def with_qc(self, qc: float) -> "GridDomain":
        return GridDomain(
            n=self.n, origin=self.origin, extent=self.extent, h=self.h, inside=self.inside,
            dist=self.dist, punctures=self.punctures, free_sides=self.free_sides,
            qc_factor=qc, spec=self.spec,
        )

    def export_dist_csv(self, path: str | Path) -> None:
        coords = ["x", "y"][: self.n]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*coords, "dist"])
            for cell in np.ndindex(*self.shape):
                c = self.center(cell)
                writer.writerow([*(repr(float(v)) for v in c), repr(float(self.dist[cell]))])


def _shape_mask(centers: np.ndarray, shape: dict, h: float) -> tuple[np.ndarray, bool]:
    kind = shape.get("type")
    subtract = bool(shape.get("subtract", False))
    if kind == "rect":
        lo = np.asarray(shape["min"], float)
        hi = np.asarray(shape["max"], float)
        mask = np.all((centers > lo) & (centers < hi), axis=-1)
    elif kind == "disk":
        c = np.asarray(shape["center"], float)
        mask = np.sum((centers - c) ** 2, axis=-1) < float(shape["radius"]) ** 2
    elif kind == "strip":
        axis = int(shape.get("axis", 1))
        v = centers[..., axis]
        mask = (v > float(shape.get("min", -np.inf))) & (v < float(shape.get("max", np.inf)))
    elif kind == "segment":
        a = np.asarray(shape["a"], float)
        b = np.asarray(shape["b"], float)
        ab = b - a
        denom = float(ab @ ab)
        t = np.clip(((centers - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(centers.shape[:-1])
        nearest = a + t[..., None] * ab
        mask = np.sum((centers - nearest) ** 2, axis=-1) <= 0.5 * h * h
        subtract = True
    else:
        raise DomainError(f"unknown shape type {kind!r}")
    return mask, subtract


def _cell_distance_transform(inside: np.ndarray) -> np.ndarray:
    """Distance in cell units from every cell to the nearest complement cell."""
    if inside.all():
        return np.full(inside.shape, np.inf)
    feat = ndimage.distance_transform_edt(inside, return_distances=False, return_indices=True)
    grid = np.indices(inside.shape)
    sq = np.sum((grid - feat) ** 2, axis=0)
    return np.sqrt(sq.astype(float))


def brute_force_cell_distance(inside: np.ndarray) -> np.ndarray:
    """O(N^2) reference for :func:`_cell_distance_transform`."""
    comp = np.argwhere(~inside)
    out = np.full(inside.shape, np.inf)
    if len(comp) == 0:
        return out
    for cell in np.ndindex(*inside.shape):
        sq = np.sum((comp - np.array(cell)) ** 2, axis=1)
        out[cell] = math.sqrt(float(sq.min()))
    return out


def build_domain(spec: DomainSpec | dict) -> GridDomain:
    if isinstance(spec, dict):
        spec = DomainSpec.from_dict(spec)
    n = spec.n
    if n not in (1, 2):
        raise DomainError(f"dimension must be 1 or 2, got {n}")
    if not spec.h > 0:
        raise DomainError("nonpositive spacing")
    lo = np.asarray(spec.box[0], float)
    hi = np.asarray(spec.box[1], float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise DomainError("box corners must have length n")
    extent = hi - lo
    counts = np.rint(extent / spec.h).astype(int)
    if np.any(np.abs(counts * spec.h - extent) > 1e-9 * np.maximum(1.0, extent)):
        raise DomainError("box extent is not a multiple of h")
    if np.any(counts < 8):
        raise DomainError("resolution must be at least 8 cells per axis")
    bad_sides = [s for s in spec.free_sides if s not in SIDE_NAMES[: 2 * n]]
    if bad_sides:
        raise DomainError(f"unknown free sides {bad_sides}")

    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * spec.h for k in range(n)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    inside = np.zeros(tuple(counts), dtype=bool)
    punctures: list[tuple[float, ...]] = []
    for shape in spec.shapes:
        if shape.get("type") == "puncture":
            at = np.asarray(shape["at"], float)
            punctures.append(tuple(float(v) for v in at))
            continue
        mask, subtract = _shape_mask(centers, shape, spec.h)
        inside = inside & ~mask if subtract else inside | mask
    for at in punctures:
        # a puncture that hits a center removes that cell
        inside &= ~np.all(centers == np.asarray(at), axis=-1)

    if not inside.any():
        raise DomainError("empty domain")

    cell_d = _cell_distance_transform(inside)
    if inside.size <= BRUTE_FORCE_LIMIT and not np.array_equal(cell_d, brute_force_cell_distance(inside)):
        raise AssertionError("distance transform disagrees with brute force")
    dist = cell_d * spec.h

    dom = GridDomain(
        n=n, origin=lo, extent=extent, h=spec.h, inside=inside, dist=dist,
        punctures=tuple(punctures), free_sides=tuple(spec.free_sides), spec=spec,
    )
    dist = np.minimum(dist, dom.box_side_distance())
    for at in punctures:
        dist = np.minimum(dist, np.sqrt(np.sum((centers - np.asarray(at)) ** 2, axis=-1)))
    if not np.isfinite(dist).all():
        raise DomainError("empty complement")
    dist = np.where(inside, dist, 0.0)
    object.__setattr__(dom, "dist", dist)
    return dom


# 16-neighbor stencil: axis, diagonal and knight moves. Each entry is the
# offset plus the cells the straight segment passes through on its way.
def _stencil(n: int) -> list[tuple[tuple[int, ...], int, tuple[tuple[int, ...], ...]]]:
    if n == 1:
        return [((1,), 0, ()), ((-1,), 0, ())]
    out = []
    for di in range(-2, 3):
        for dj in range(-2, 3):
            a, b = abs(di), abs(dj)
            if (a, b) in ((1, 0), (0, 1)):
                out.append(((di, dj), 0, ()))
            elif (a, b) == (1, 1):
                out.append(((di, dj), 1, ((di, 0), (0, dj))))
            elif (a, b) in ((1, 2), (2, 1)):
                si, sj = int(np.sign(di)), int(np.sign(dj))
                if a == 2:
                    mids = ((si, 0), (si, sj))
                else:
                    mids = ((0, sj), (si, sj))
                out.append(((di, dj), 2, mids))
    return out


EDGE_CLASS_LENGTH = (1.0, SQRT2, SQRT5)


def stencil(n: int):
    """Offsets, edge class (0 axis, 1 diagonal, 2 knight) and crossed cells."""
    return _stencil(n)


def neighbors(shape: tuple[int, ...], traversable: np.ndarray, cell: tuple[int, ...]):
    """Yield (neighbor, edge_class) for 16-neighbor moves whose crossed cells are traversable."""
    for off, cls, mids in _stencil(len(shape)):
        nb = tuple(c + o for c, o in zip(cell, off))
        if any(v < 0 or v >= s for v, s in zip(nb, shape)):
            continue
        ok = True
        for m in mids:
            mc = tuple(c + o for c, o in zip(cell, m))
            if not traversable[mc]:
                ok = False
                break
        if ok:
            yield nb, cls


def length_graph(domain: GridDomain, traversable: np.ndarray) -> csr_matrix:
    """Sparse edge-length graph over cells where both endpoints are traversable."""
    shape = domain.shape
    rows, cols, vals = [], [], []
    flat = np.ravel_multi_index
    for cell in map(tuple, np.argwhere(traversable)):
        a = flat(cell, shape)
        for nb, cls in neighbors(shape, traversable, cell):
            if traversable[nb]:
                rows.append(a)
                cols.append(flat(nb, shape))
                vals.append(domain.h * EDGE_CLASS_LENGTH[cls])
    size = int(np.prod(shape))
    return csr_matrix((vals, (rows, cols)), shape=(size, size))


def chamfer_distance(delta: Sequence[int]) -> float:
    """Exact 16-neighbor path length (in cells) for an unobstructed displacement."""
    a = sorted(abs(int(v)) for v in delta)
    if len(a) == 1:
        return float(a[0])
    dy, dx = a
    if 2 * dy <= dx:
        return dy * SQRT5 + (dx - 2 * dy)
    return (dx - dy) * SQRT5 + (2 * dy - dx) * SQRT2


def quasiconvexity_estimate(domain: GridDomain, sample_count: int, rng: np.random.Generator | None = None,
                            pairs: Sequence[tuple[Sequence[int], Sequence[int]]] | None = None) -> float:
    """Max over sampled inside-cell pairs of graph path length / Euclidean distance.

    Paths move through inside cells only. Pairs in different components are
    skipped, as are coincident pairs. The result is never below 1.
    """
    if sample_count < 1 and pairs is None:
        raise ValueError("sample_count must be >= 1")
    rng = rng or np.random.default_rng(0)
    cells = domain.inside_cells()
    if pairs is None:
        ia = rng.integers(0, len(cells), size=sample_count)
        ib = rng.integers(0, len(cells), size=sample_count)
        pairs = [(cells[i], cells[j]) for i, j in zip(ia, ib)]
    graph = length_graph(domain, domain.inside)
    shape = domain.shape
    sources = sorted({int(np.ravel_multi_index(tuple(a), shape)) for a, _ in pairs})
    if not sources:
        return 1.0
    table = dijkstra(graph, directed=True, indices=sources)
    row = {s: k for k, s in enumerate(sources)}
    ratio = 1.0
    for a, b in pairs:
        a, b = np.asarray(a), np.asarray(b)
        if np.array_equal(a, b):
            continue
        path = table[row[int(np.ravel_multi_index(tuple(a), shape))], np.ravel_multi_index(tuple(b), shape)]
        if not np.isfinite(path):
            continue
        euclid = domain.h * math.sqrt(float(np.sum((a - b) ** 2)))
        ratio = max(ratio, float(path) / euclid)
    return ratio


def load_domain(path: str | Path) -> GridDomain:
    return build_domain(DomainSpec.load(path))


def domain_summary(domain: GridDomain) -> dict[str, Any]:
    return {
        "n": domain.n,
        "h": domain.h,
        "shape": list(domain.shape),
        "inside_cells": int(domain.inside.sum()),
        "complement_cells": int((~domain.inside).sum()),
        "max_dist": float(domain.dist.max()),
        "qc_factor": domain.qc_factor,
    }
