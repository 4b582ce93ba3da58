"""Length-constrained curve infima on the 16-neighbor grid graph.

Curves are grid polylines. Costs are trapezoid line integrals of g. For
exact cross-checking, every path is summarized by its edge-class counts
(axis, diagonal, knight) and the per-class sums of g(a)+g(b); the length
and integral are then evaluated by one canonical formula. Paths with the
same true cost share these summaries whenever g takes dyadic values, since
1, sqrt(2) and sqrt(5) are linearly independent over the rationals.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .domain import SQRT2, SQRT5, STENCIL_METRIC_FACTOR, SIDE_NAMES, GridDomain, neighbors

EPS_DOMINANCE = 1e-12
GRID_BIAS_BOUND = STENCIL_METRIC_FACTOR - 1.0


class CurveError(ValueError):
    pass


def canonical_length(h: float, counts: Sequence[int], exit_len: float = 0.0) -> float:
    a, b, c = counts
    return h * (a + SQRT2 * b + SQRT5 * c) + exit_len


def canonical_integral(h: float, sums: Sequence[float], exit_cost: float = 0.0) -> float:
    A, B, C = sums
    return 0.5 * h * (A + SQRT2 * B + SQRT5 * C) + exit_cost


@dataclass
class CurveResult:
    x: tuple[int, ...]
    target: str | tuple[int, ...]
    budget: float
    length: float
    integral: float
    feasible: bool
    lower_bound: float
    polyline: list[list[float]] = field(default_factory=list)
    cells: list[tuple[int, ...]] = field(default_factory=list)
    grid_bias_bound: float = GRID_BIAS_BOUND

    def to_json(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "x": list(self.x),
            "target": self.target if isinstance(self.target, str) else list(self.target),
            "budget": self.budget,
            "length": num(self.length),
            "integral": num(self.integral),
            "lower_bound": num(self.lower_bound),
            "feasible": self.feasible,
            "grid_bias_bound": self.grid_bias_bound,
            "polyline": self.polyline,
        }


@dataclass(frozen=True, eq=False)
class CurveGraph:
    """Adjacency of the grid graph for one query type.

    Nodes are flat cell indices. ``targets`` are absorbing. ``exits`` maps a
    cell to straight-segment exits into non-lattice parts of the complement
    (box sides and punctures) as (length, endpoint) pairs.
    """

    domain: GridDomain
    adj: tuple[tuple[tuple[int, int], ...], ...]
    targets: frozenset
    exits: dict

    @property
    def size(self) -> int:
        return len(self.adj)


@lru_cache(maxsize=32)
def complement_graph(domain: GridDomain) -> CurveGraph:
    """Graph for curves from inside cells to the complement."""
    shape = domain.shape
    inside = domain.inside
    adj: list[tuple] = []
    for cell in np.ndindex(*shape):
        if not inside[cell]:
            adj.append(())
            continue
        adj.append(tuple((int(np.ravel_multi_index(nb, shape)), cls) for nb, cls in neighbors(shape, inside, cell)))
    targets = frozenset(int(k) for k in np.flatnonzero(~inside.ravel()))
    exits: dict[int, list] = {}
    h = domain.h
    for cell in map(tuple, np.argwhere(inside)):
        c = domain.center(cell)
        out = []
        for k in range(domain.n):
            if cell[k] == 0 and SIDE_NAMES[2 * k] not in domain.free_sides:
                end = c.copy()
                end[k] = domain.origin[k]
                out.append((0.5 * h, tuple(end)))
            if cell[k] == shape[k] - 1 and SIDE_NAMES[2 * k + 1] not in domain.free_sides:
                end = c.copy()
                end[k] = domain.origin[k] + domain.extent[k]
                out.append((0.5 * h, tuple(end)))
        for at in domain.punctures:
            d = float(np.sqrt(np.sum((c - np.asarray(at)) ** 2)))
            if d <= h:
                out.append((d, tuple(at)))
        if out:
            exits[int(np.ravel_multi_index(cell, shape))] = out
    return CurveGraph(domain, tuple(adj), targets, exits)


@lru_cache(maxsize=32)
def _pair_graph(domain: GridDomain) -> CurveGraph:
    shape = domain.shape
    full = np.ones(shape, dtype=bool)
    adj = tuple(
        tuple((int(np.ravel_multi_index(nb, shape)), cls) for nb, cls in neighbors(shape, full, cell))
        for cell in np.ndindex(*shape)
    )
    return CurveGraph(domain, adj, frozenset(), {})


def pair_graph(domain: GridDomain, y: Sequence[int]) -> CurveGraph:
    """Graph for curves from x to the single cell y through the whole grid."""
    base = _pair_graph(domain)
    tgt = int(np.ravel_multi_index(tuple(y), domain.shape))
    return CurveGraph(domain, base.adj, frozenset({tgt}), {})


@lru_cache(maxsize=64)
def _remaining_length(graph: CurveGraph) -> np.ndarray:
    """Graph distance from every node to the target set (exits included)."""
    h = graph.domain.h
    lens = (h, h * SQRT2, h * SQRT5)
    n = graph.size
    rows, cols, vals = [], [], []
    for u, nbrs in enumerate(graph.adj):
        for v, cls in nbrs:
            # reversed edges so one run from the sink gives distances to it
            rows.append(v)
            cols.append(u)
            vals.append(lens[cls])
    sink = n
    for t in graph.targets:
        rows.append(sink)
        cols.append(t)
        vals.append(0.0)
    for u, ex in graph.exits.items():
        rows.append(sink)
        cols.append(u)
        vals.append(min(e[0] for e in ex))
    # explicit zero-weight edges vanish in csr; nudge them
    vals = [v if v > 0 else 1e-300 for v in vals]
    mat = csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
    return dijkstra(mat, directed=True, indices=sink)[:n]


def _check_start(domain: GridDomain, x: Sequence[int]) -> tuple[int, ...]:
    x = tuple(int(v) for v in x)
    if len(x) != domain.n or any(v < 0 or v >= s for v, s in zip(x, domain.shape)) or not domain.inside[x]:
        raise CurveError("x must be an inside cell")
    return x


def _polyline(domain: GridDomain, cells: list[int], end: tuple | None) -> tuple[list, list]:
    idx = [tuple(int(v) for v in np.unravel_index(c, domain.shape)) for c in cells]
    pts = [domain.center(c).tolist() for c in idx]
    if end is not None:
        pts.append([float(v) for v in end])
    return pts, idx


def _label_setting(graph: CurveGraph, g: np.ndarray, source: int, budget: float):
    """Exact constrained minimum via label-setting with length dominance.

    Returns (integral, length, winning label id, label list) or None if
    no curve fits the budget. Labels are unwound with :func:`_unwind`.
    """
    h = graph.domain.h
    gf = np.asarray(g, dtype=float).ravel()
    rem = _remaining_length(graph)
    slack = budget * (1 + 1e-9)
    if rem[source] > slack:
        return None
    # label: (counts, sums, node, parent, exit)
    labels: list = [((0, 0, 0), (0.0, 0.0, 0.0), source, -1, None)]
    heap = [(0.0, 0.0, 0)]
    best_len = np.full(graph.size, np.inf)
    while heap:
        cost, length, lid = heapq.heappop(heap)
        counts, sums, node, _, ex = labels[lid]
        if ex is not None or node in graph.targets:
            return cost, length, lid, labels
        if best_len[node] <= length * (1 + EPS_DOMINANCE):
            continue
        best_len[node] = length
        gu = gf[node]
        for nb, cls in graph.adj[node]:
            nc = list(counts)
            nc[cls] += 1
            nl = canonical_length(h, nc)
            if nl > budget or nl + rem[nb] > slack:
                continue
            if best_len[nb] <= nl * (1 + EPS_DOMINANCE):
                continue
            ns = list(sums)
            ns[cls] += gu + gf[nb]
            labels.append((tuple(nc), tuple(ns), nb, lid, None))
            heapq.heappush(heap, (canonical_integral(h, ns), nl, len(labels) - 1))
        for t, end in graph.exits.get(node, ()):
            nl = canonical_length(h, counts, t)
            if nl > budget:
                continue
            labels.append((counts, sums, node, lid, (t, end, gu * t)))
            heapq.heappush(heap, (canonical_integral(h, sums, gu * t), nl, len(labels) - 1))
    return None


def _unwind(labels, lid):
    nodes = []
    ex = labels[lid][4]
    if ex is not None:
        lid = labels[lid][3]
    while lid >= 0:
        nodes.append(labels[lid][2])
        lid = labels[lid][3]
    return nodes[::-1], ex


def _solve(graph: CurveGraph, g: np.ndarray, x: tuple[int, ...], budget: float, target) -> CurveResult:
    dom = graph.domain
    g = np.asarray(g, dtype=float)
    if g.shape != dom.shape:
        raise CurveError("g shape does not match the grid")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise CurveError("g must be finite and nonnegative")
    source = int(np.ravel_multi_index(x, dom.shape))
    found = _label_setting(graph, g, source, budget)
    if found is None:
        lb = _lagrangian(graph, g, source, budget, [0.0])
        return CurveResult(x, target, budget, math.inf, math.inf, False, lb["lower_bound"])
    cost, length, lid, labels = found
    nodes, ex = _unwind(labels, lid)
    pts, cells = _polyline(dom, nodes, ex[1] if ex else None)
    return CurveResult(x, target, budget, length, cost, True, cost, pts, cells)


def curve_infimum(domain: GridDomain, g: np.ndarray, x: Sequence[int], nu: float) -> CurveResult:
    """inf of the line integral of g over grid curves from x to the complement
    with length at most nu*dist(x)."""
    x = _check_start(domain, x)
    return _solve(complement_graph(domain), g, x, nu * float(domain.dist[x]), "complement")


def connect_pair(domain: GridDomain, g: np.ndarray, x: Sequence[int], y: Sequence[int], nu: float) -> CurveResult:
    """Same problem with target the single cell y and budget nu*|x-y|."""
    x = _check_start(domain, x)
    y = _check_start(domain, y)
    if x == y:
        c = domain.center(x).tolist()
        return CurveResult(x, y, 0.0, 0.0, 0.0, True, 0.0, [c], [x])
    budget = nu * float(np.linalg.norm(domain.center(x) - domain.center(y)))
    return _solve(pair_graph(domain, y), g, x, budget, y)


def _path_summary(graph: CurveGraph, g: np.ndarray, nodes: list[int], exit_info):
    h = graph.domain.h
    counts = [0, 0, 0]
    sums = [0.0, 0.0, 0.0]
    gf = g.ravel()
    for u, v in zip(nodes, nodes[1:]):
        cls = next(c for nb, c in graph.adj[u] if nb == v)
        counts[cls] += 1
        sums[cls] += gf[u] + gf[v]
    t = exit_info[0] if exit_info else 0.0
    tc = gf[nodes[-1]] * t if exit_info else 0.0
    return canonical_length(h, counts, t), canonical_integral(h, sums, tc)


def _lagrangian(graph: CurveGraph, g: np.ndarray, source: int, budget: float, lambdas: Sequence[float]) -> dict:
    h = graph.domain.h
    lens = (h, h * SQRT2, h * SQRT5)
    gf = np.asarray(g, dtype=float).ravel()
    best = {"integral": math.inf, "length": math.inf, "nodes": None, "exit": None}
    lower = 0.0
    for lam in lambdas:
        if lam < 0:
            raise CurveError("lambda must be nonnegative")
        dist = {source: 0.0}
        pred: dict[int, int] = {}
        heap = [(0.0, source)]
        done = set()
        goal = None
        exit_at: dict[int, tuple] = {}
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            if u == -1:
                goal = u
                break
            if u in graph.targets:
                goal = u
                break
            for nb, cls in graph.adj[u]:
                nd = d + 0.5 * (gf[u] + gf[nb]) * lens[cls] + lam * lens[cls]
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    pred[nb] = u
                    heapq.heappush(heap, (nd, nb))
            for t, end in graph.exits.get(u, ()):
                nd = d + gf[u] * t + lam * t
                if nd < dist.get(-1, math.inf):
                    dist[-1] = nd
                    pred[-1] = u
                    exit_at[u] = (t, end)
                    heapq.heappush(heap, (nd, -1))
        if goal is None:
            continue
        ex = None
        if goal == -1:
            last = pred[-1]
            ex = exit_at[last]
            node = last
        else:
            node = goal
        nodes = [node]
        while node != source:
            node = pred[node]
            nodes.append(node)
        nodes.reverse()
        length, integral = _path_summary(graph, g, nodes, ex)
        lower = max(lower, integral + lam * (length - budget))
        if length <= budget and integral < best["integral"]:
            best = {"integral": integral, "length": length, "nodes": nodes, "exit": ex}
    best["lower_bound"] = lower
    return best


def default_lambda_grid(g: np.ndarray) -> list[float]:
    gmax = float(np.max(g)) if np.size(g) else 0.0
    scale = gmax if gmax > 0 else 1.0
    return [0.0] + [scale * 2.0**k for k in range(-8, 9)]


def curve_infimum_lagrangian(domain: GridDomain, g: np.ndarray, x: Sequence[int], nu: float,
                             lambdas: Sequence[float] | None = None) -> CurveResult:
    """Best feasible path over a sweep of length penalties, plus the dual bound
    max_lambda [min_path (integral + lambda*length) - lambda*budget]."""
    x = _check_start(domain, x)
    g = np.asarray(g, dtype=float)
    lambdas = default_lambda_grid(g) if lambdas is None else list(lambdas)
    if not lambdas:
        raise CurveError("lambda grid must be nonempty")
    graph = complement_graph(domain)
    budget = nu * float(domain.dist[x])
    source = int(np.ravel_multi_index(x, domain.shape))
    res = _lagrangian(graph, g, source, budget, lambdas)
    if res["nodes"] is None:
        return CurveResult(x, "complement", budget, math.inf, math.inf, False, res["lower_bound"])
    pts, cells = _polyline(domain, res["nodes"], res["exit"][1] if res["exit"] else None)
    return CurveResult(x, "complement", budget, res["length"], res["integral"], True,
                       res["lower_bound"], pts, cells)
