"""Empirical Hardy, Poincare and alpha-function constants on grid domains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .curves import GRID_BIAS_BOUND, curve_infimum
from .domain import GridDomain
from .maximal import maximal, power, root
from .weights import Weight, constant_weight, distance_power_weight, doubling_constant


class DegenerateCorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# test functions


@dataclass
class CorpusEntry:
    u: np.ndarray
    g: np.ndarray
    label: str
    recipe: dict = field(default_factory=dict)


def numeric_gradient(domain: GridDomain, u: np.ndarray) -> np.ndarray:
    """|grad u| by central differences, one-sided at the grid edge."""
    grads = np.gradient(u, domain.h)
    if domain.n == 1:
        grads = [grads]
    return np.sqrt(sum(gk * gk for gk in grads))


def gradient_tolerance(domain: GridDomain, u: np.ndarray) -> float:
    """2h times a Lipschitz estimate of grad u over axis-neighbor pairs."""
    grads = np.gradient(u, domain.h)
    if domain.n == 1:
        grads = [grads]
    G = np.stack(grads, axis=-1)
    lip = 0.0
    for k in range(domain.n):
        diff = np.diff(G, axis=k)
        lip = max(lip, float(np.max(np.sqrt(np.sum(diff * diff, axis=-1)))) / domain.h)
    return 2 * domain.h * lip


def pair_violation(domain: GridDomain, u: np.ndarray, g: np.ndarray, tol: float) -> float:
    """Largest excess of |u(a)-u(b)| over ((g(a)+g(b))/2 + tol)|a-b| on neighbor pairs."""
    worst = -np.inf
    offsets = [(1,)] if domain.n == 1 else [(1, 0), (0, 1), (1, 1), (1, -1)]
    for off in offsets:
        sa, sb = [], []
        for o, s in zip(off, domain.shape):
            if o >= 0:
                sa.append(slice(0, s - o))
                sb.append(slice(o, s))
            else:
                sa.append(slice(-o, s))
                sb.append(slice(0, s + o))
        sa, sb = tuple(sa), tuple(sb)
        step = domain.h * math.sqrt(sum(o * o for o in off))
        lhs = np.abs(u[sa] - u[sb])
        rhs = (0.5 * (g[sa] + g[sb]) + tol) * step
        worst = max(worst, float(np.max(lhs - rhs)))
    return worst


def _box_distance(domain: GridDomain) -> np.ndarray:
    c = domain.centers
    lo = domain.origin
    hi = domain.origin + domain.extent
    return np.min(np.minimum(c - lo, hi - c), axis=-1)


def make_entry(domain: GridDomain, recipe: dict) -> CorpusEntry:
    kind = recipe.get("recipe")
    d = domain.dist
    inside = domain.inside
    if kind == "dist":
        u, g = d.copy(), np.ones(domain.shape)
    elif kind == "cutoff":
        eps = float(recipe.get("eps", 0.1))
        u = np.minimum(d / eps, 1.0)
        g = np.where(d < eps, 1.0 / eps, 0.0)
    elif kind == "power":
        s = float(recipe.get("s", 2.0))
        cap = float(recipe.get("cap", np.max(d)))
        u = np.minimum(d, cap) ** s
        g = numeric_gradient(domain, u)
    elif kind == "bump":
        eps = float(recipe.get("eps", 4 * domain.h))
        c = domain.centers
        lo = domain.origin
        span = domain.extent
        phi = np.prod(np.sin(np.pi * (c - lo) / span) ** 2, axis=-1)
        u = phi * np.minimum(d / eps, 1.0)
        g = numeric_gradient(domain, u)
    elif kind == "log_puncture":
        at = np.asarray(recipe.get("at", domain.punctures[0] if domain.punctures else None), float)
        rho = float(recipe.get("rho", 2 * domain.h))
        # by default the profile only saturates past the farthest box corner, so
        # there is no plateau where u = 1 and g = 0
        corners = np.stack(np.meshgrid(*zip(domain.origin, domain.origin + domain.extent), indexing="ij"), -1)
        far = float(np.max(np.sqrt(np.sum((corners.reshape(-1, domain.n) - at) ** 2, axis=-1))))
        R0 = float(recipe.get("R0", far + domain.h))
        eta = float(recipe.get("eta", 0.1 * float(np.min(domain.extent))))
        r = np.sqrt(np.sum((domain.centers - at) ** 2, axis=-1))
        logf = np.clip(np.log(np.maximum(r, rho) / rho) / math.log(R0 / rho), 0.0, 1.0)
        grad_log = np.where((r > rho) & (r < R0), 1.0 / (np.maximum(r, rho) * math.log(R0 / rho)), 0.0)
        db = _box_distance(domain)
        u = np.minimum(logf, db / eta)
        g = np.maximum(grad_log, np.where(db < eta, 1.0 / eta, 0.0))
    elif kind == "near_extremal":
        if domain.n != 1:
            raise ValueError("near_extremal is one-dimensional")
        a = 0.5 + float(recipe.get("delta", 0.01))
        lo = domain.origin[0]
        L = domain.extent[0]
        t = (domain.centers[..., 0] - lo) / L
        u = (t * (1 - t)) ** a
        g = np.abs(a * (t * (1 - t)) ** (a - 1) * (1 - 2 * t)) / L
    else:
        raise ValueError(f"unknown corpus recipe {kind!r}")
    u = np.where(inside, u, 0.0)
    label = recipe.get("label") or kind + "".join(f",{k}={v}" for k, v in sorted(recipe.items()) if k not in ("recipe", "label"))
    return CorpusEntry(u, np.abs(g), label, dict(recipe))


@dataclass
class TestFunctionCorpus:
    __test__ = False  # not a pytest class

    entries: list[CorpusEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def validate(self, domain: GridDomain) -> list[dict]:
        out = []
        for e in self.entries:
            tol = gradient_tolerance(domain, e.u)
            out.append({
                "label": e.label,
                "vanishes_on_complement": bool(np.all(e.u[~domain.inside] == 0)),
                "tolerance": tol,
                "pair_violation": pair_violation(domain, e.u, e.g, tol),
            })
        return out


def make_corpus(domain: GridDomain, recipes: Iterable[dict], validate: bool = True) -> TestFunctionCorpus:
    corpus = TestFunctionCorpus([make_entry(domain, r) for r in recipes])
    if validate:
        for rep in corpus.validate(domain):
            if not rep["vanishes_on_complement"] or rep["pair_violation"] > 1e-12:
                raise ValueError(f"corpus entry {rep['label']} fails validation: {rep}")
    return corpus


# ---------------------------------------------------------------------------
# candidate families for the curve form and the alpha function


@dataclass
class CandidateFamily:
    """Finite generator set standing in for the class of admissible g.

    Every emitted field takes values in [0, 1]. Admissibility at level tau
    is enforced by the scaling g -> g * min(1, tau / M g(x)), so the family
    is closed under multiplication by scalars in (0, 1].
    """

    fields: list[np.ndarray]
    labels: list[str]
    closed_under_division: bool = True

    def __len__(self) -> int:
        return len(self.fields)

    @staticmethod
    def scale(m: float, tau: float) -> float:
        return 1.0 if m <= tau else tau / m


def make_family(domain: GridDomain, generators: Iterable[dict], rng: np.random.Generator | None = None) -> CandidateFamily:
    rng = rng or np.random.default_rng(0)
    d = domain.dist
    fields, labels = [], []
    for gen in generators:
        kind = gen.get("kind")
        if kind == "constant":
            c = float(gen.get("c", 1.0))
            g = np.full(domain.shape, c)
            label = f"constant,c={c}"
        elif kind == "collar":
            c, t = float(gen.get("c", 1.0)), float(gen["t"])
            g = np.where(d < t, c, 0.0)
            label = f"collar,c={c},t={t}"
        elif kind == "max_collar":
            parts = [(float(c), float(t)) for c, t in gen["parts"]]
            g = np.zeros(domain.shape)
            for c, t in parts:
                g = np.maximum(g, np.where(d < t, c, 0.0))
            label = "max_collar," + ";".join(f"{c}@{t}" for c, t in parts)
        elif kind == "random_step":
            block = int(gen.get("block", 4))
            levels = int(gen.get("levels", 8))
            coarse = tuple(-(-s // block) for s in domain.shape)
            vals = rng.integers(0, levels + 1, size=coarse) / levels
            g = vals
            for k in range(domain.n):
                g = np.repeat(g, block, axis=k)
            g = g[tuple(slice(0, s) for s in domain.shape)]
            label = f"random_step,block={block}"
        else:
            raise ValueError(f"unknown candidate kind {kind!r}")
        g = np.clip(g, 0.0, 1.0)
        fields.append(g)
        labels.append(label)
    return CandidateFamily(fields, labels)


def default_family(domain: GridDomain, rng: np.random.Generator | None = None) -> CandidateFamily:
    dmax = float(np.max(domain.dist))
    gens = [{"kind": "constant", "c": 1.0}]
    for frac in (0.125, 0.25, 0.5):
        gens.append({"kind": "collar", "t": frac * dmax})
    gens.append({"kind": "max_collar", "parts": [[1.0, 0.125 * dmax], [0.5, 0.5 * dmax]]})
    gens.append({"kind": "random_step", "block": 4})
    return make_family(domain, gens, rng)


def sample_points(domain: GridDomain, count: int, rng: np.random.Generator | None = None,
                  min_dist: float = 0.0) -> np.ndarray:
    rng = rng or np.random.default_rng(0)
    cells = domain.inside_cells()
    cells = cells[domain.dist[tuple(cells.T)] >= min_dist]
    if len(cells) == 0:
        raise ValueError("no admissible sample points")
    if count >= len(cells):
        return cells
    pick = np.sort(rng.choice(len(cells), size=count, replace=False))
    return cells[pick]


# ---------------------------------------------------------------------------
# reports


@dataclass
class ConstantReport:
    constant: float
    p: float
    kappa: float | None
    skipped_cells: int
    per_entry: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "constant": self.constant,
            "p": self.p,
            "kappa": self.kappa,
            "skipped_cells": self.skipped_cells,
            "per_entry": self.per_entry,
        }
        out.update(self.extra)
        return out


def hardy_quotient_field(domain: GridDomain, u: np.ndarray, mg: np.ndarray,
                         scale: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """|u| / (scale * mg) on inside cells; returns (quotient, skipped mask)."""
    scale = domain.dist if scale is None else scale
    den = scale * mg
    skip = domain.inside & (den == 0)
    ok = domain.inside & ~skip
    q = np.zeros(domain.shape)
    q[ok] = np.abs(u[ok]) / den[ok]
    return q, skip


def pointwise_hardy_constant(domain: GridDomain, w: Weight, p: float, kappa: float,
                             corpus: TestFunctionCorpus) -> ConstantReport:
    """sup |u(x)| / (dist(x) M_{p,w,kappa} g(x)) over corpus entries and inside cells."""
    if len(corpus) == 0:
        raise DegenerateCorpusError("empty corpus")
    best, skipped, per = -math.inf, 0, []
    for e in corpus:
        mg = maximal(e.g, p, w, kappa)
        q, skip = hardy_quotient_field(domain, e.u, mg)
        ok = domain.inside & ~skip
        skipped += int(skip.sum())
        if not ok.any():
            per.append({"label": e.label, "constant": None, "skipped_cells": int(skip.sum())})
            continue
        k = np.unravel_index(np.argmax(np.where(ok, q, -np.inf)), domain.shape)
        c = float(q[k])
        per.append({"label": e.label, "constant": c, "argmax": [int(v) for v in k],
                    "skipped_cells": int(skip.sum())})
        best = max(best, c)
    if best == -math.inf:
        raise DegenerateCorpusError("degenerate corpus")
    return ConstantReport(best, p, kappa, skipped, per)


def hardy_p_curve(domain: GridDomain, w: Weight, ps: Sequence[float], kappa: float,
                  corpus: TestFunctionCorpus) -> list[tuple[float, float]]:
    return [(float(p), pointwise_hardy_constant(domain, w, p, kappa, corpus).constant) for p in ps]


def hardy_weight_constant(domain: GridDomain, w: Weight, p: float, kappa: float, nu: float,
                          family: CandidateFamily, points: np.ndarray) -> ConstantReport:
    """Lower bound for C_Gamma: sup of curve infimum / (dist(x) M_{p,w,kappa} g(x))."""
    if len(family) == 0:
        raise DegenerateCorpusError("empty family")
    if nu < domain.qc_factor:
        raise ValueError("nu must be at least the quasiconvexity factor")
    best, skipped, infeasible, per = -math.inf, 0, 0, []
    for g, label in zip(family.fields, family.labels):
        mg = maximal(g, p, w, kappa, points=points)
        entry_best = -math.inf
        for x, m in zip(points, mg):
            x = tuple(int(v) for v in x)
            if m == 0:
                skipped += 1
                continue
            res = curve_infimum(domain, g, x, nu)
            if not res.feasible:
                infeasible += 1
                continue
            entry_best = max(entry_best, res.integral / (domain.dist[x] * m))
        per.append({"label": label, "constant": entry_best if entry_best > -math.inf else None})
        best = max(best, entry_best)
    if best == -math.inf:
        raise DegenerateCorpusError("degenerate corpus")
    return ConstantReport(best, p, kappa, skipped, per,
                          {"nu": nu, "infeasible": infeasible, "grid_bias_bound": GRID_BIAS_BOUND,
                           "lower_bound_only": True})


# ---------------------------------------------------------------------------
# alpha function


@dataclass
class AlphaTable:
    """Per (point, candidate) maximal value m and curve infimum I.

    The estimate at level tau is max over pairs of min(1, tau/m) * I / dist(x),
    using positive homogeneity of the constrained curve infimum in g.
    """

    p: float
    nu: float
    kappa: float
    points: np.ndarray
    dist: np.ndarray
    m: np.ndarray
    integral: np.ndarray
    labels: list[str]

    def estimate(self, tau: float) -> float:
        if tau < 0:
            raise ValueError("tau must be >= 0")
        best = 0.0
        for i in range(self.m.shape[0]):
            for j in range(self.m.shape[1]):
                I = self.integral[i, j]
                if not math.isfinite(I):
                    continue
                c = CandidateFamily.scale(self.m[i, j], tau)
                best = max(best, c * I / self.dist[j])
        return best

    @property
    def feasible_pairs(self) -> int:
        return int(np.isfinite(self.integral).sum())


def alpha_table(domain: GridDomain, w: Weight, p: float, nu: float, kappa: float,
                family: CandidateFamily, points: np.ndarray) -> AlphaTable:
    points = np.atleast_2d(np.asarray(points, dtype=int))
    m = np.empty((len(family), len(points)))
    integral = np.empty_like(m)
    for i, g in enumerate(family.fields):
        m[i] = maximal(g, p, w, kappa, points=points)
        for j, x in enumerate(points):
            res = curve_infimum(domain, g, tuple(x), nu)
            integral[i, j] = res.integral if res.feasible else math.inf
    dist = domain.dist[tuple(points.T)]
    return AlphaTable(p, nu, kappa, points, dist, m, integral, list(family.labels))


@dataclass
class AlphaReport:
    estimate: float
    tau: float
    p: float
    nu: float
    kappa: float
    feasible_pairs: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__, lower_bound_only=True, grid_bias_bound=GRID_BIAS_BOUND)


def alpha_estimate(domain: GridDomain, w: Weight, p: float, nu: float, kappa: float, tau: float,
                   family: CandidateFamily, points: np.ndarray, table: AlphaTable | None = None) -> AlphaReport:
    """Lower bound for the alpha function at level tau over a finite family."""
    table = table or alpha_table(domain, w, p, nu, kappa, family, points)
    warnings = []
    if table.feasible_pairs == 0:
        warnings.append("no feasible curve for any candidate")
        return AlphaReport(0.0, tau, p, nu, kappa, 0, warnings)
    return AlphaReport(table.estimate(tau), tau, p, nu, kappa, table.feasible_pairs, warnings)


# ---------------------------------------------------------------------------
# Poincare


def _ball_cells(domain: GridDomain, x: tuple[int, ...], r: float) -> np.ndarray:
    d2 = np.sum((domain.centers - domain.center(x)) ** 2, axis=-1)
    return d2 < r * r


def _wmean(values: np.ndarray, w: Weight, mask: np.ndarray) -> float:
    ww = w.values[mask]
    return float(np.sum(values[mask] * ww) / np.sum(ww))


def poincare_quotient(domain: GridDomain, w: Weight, p: float, lam: float, u: np.ndarray, g: np.ndarray,
                      x: tuple[int, ...], r: float) -> float:
    B = _ball_cells(domain, x, r)
    ub = _wmean(u, w, B)
    osc = _wmean(np.abs(u - ub), w, B)
    grad = root(_wmean(power(g, p), w, _ball_cells(domain, x, lam * r)), p)
    if grad == 0:
        return 0.0 if osc == 0 else math.inf
    return osc / (r * grad)


def poincare_ball_constant(domain: GridDomain, w: Weight, p: float, lam: float, corpus: TestFunctionCorpus,
                           sample_count: int = 50, rng: np.random.Generator | None = None,
                           min_cells: int = 2) -> ConstantReport:
    """Measured C_1: sup of the ball oscillation quotient over balls with 2*lam*B inside."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    rng = rng or np.random.default_rng(0)
    h = domain.h
    cells = domain.inside_cells()
    jmax = np.floor(domain.dist[tuple(cells.T)] / (2 * lam * h)).astype(int)
    ok = jmax >= min_cells
    if not ok.any():
        raise ValueError("no admissible ball: domain too thin for lambda")
    cells, jmax = cells[ok], jmax[ok]
    balls = []
    for _ in range(sample_count):
        k = int(rng.integers(len(cells)))
        balls.append((tuple(int(v) for v in cells[k]), int(rng.integers(min_cells, jmax[k] + 1)) * h))
    best, per = 0.0, []
    for e in corpus:
        eb = max(poincare_quotient(domain, w, p, lam, e.u, e.g, x, r) for x, r in balls)
        per.append({"label": e.label, "constant": eb})
        best = max(best, eb)
    return ConstantReport(best, p, None, 0, per, {"lambda": lam, "balls": len(balls)})


def pointwise_poincare_check(domain: GridDomain, w: Weight, p: float, lam: float, u: np.ndarray,
                             g: np.ndarray, C_1: float, d_half: float | None = None, sample_count: int = 50,
                             rng: np.random.Generator | None = None) -> dict:
    """Check |u(x)-u(y)| <= C_2 |x-y| (M^R g(x) + M^R g(y)) + slack on sampled close pairs.

    kappa = 3*lam, R = kappa*|x-y|, C_2 = 6 C_1 D(w,1/2)^2, pairs with
    |x-y| < dist(x)/(9 lam). The slack h*(g(x)+g(y)) absorbs cell-scale effects.
    """
    rng = rng or np.random.default_rng(0)
    kappa = 3 * lam
    h = domain.h
    if d_half is None:
        d_half = doubling_constant(w, 0.5, 200, rng).d_hat
    C_2 = 6 * C_1 * d_half**2
    cells = domain.inside_cells()
    cells = cells[domain.dist[tuple(cells.T)] / (9 * lam) > h]
    if len(cells) == 0:
        raise ValueError("no admissible pairs")
    worst, fails, count = -math.inf, 0, 0
    for _ in range(sample_count):
        x = tuple(int(v) for v in cells[int(rng.integers(len(cells)))])
        rmax = domain.dist[x] / (9 * lam)
        jm = int(math.ceil(rmax / h))
        offs = [o for o in np.ndindex(*(2 * jm + 1,) * domain.n)]
        offs = [tuple(v - jm for v in o) for o in offs]
        offs = [o for o in offs if any(o) and h * math.sqrt(sum(v * v for v in o)) < rmax]
        o = offs[int(rng.integers(len(offs)))]
        y = tuple(a + b for a, b in zip(x, o))
        if not all(0 <= v < s for v, s in zip(y, domain.shape)) or not domain.inside[y]:
            continue
        r = h * math.sqrt(sum(v * v for v in o))
        M = maximal(g, p, w, kappa, R=kappa * r, points=np.array([x, y]))
        lhs = abs(float(u[x] - u[y]))
        rhs = C_2 * r * float(M[0] + M[1]) + h * float(g[x] + g[y])
        worst = max(worst, lhs - rhs)
        fails += lhs > rhs
        count += 1
    if count == 0:
        raise ValueError("no admissible pairs")
    return {"check": "pointwise_poincare", "pass": fails == 0, "failures": fails, "pairs": count,
            "C_1": C_1, "C_2": C_2, "d_half": d_half, "kappa": kappa, "worst_margin": worst}


# ---------------------------------------------------------------------------
# integral forms


def integral_hardy_ratio(domain: GridDomain, w: Weight, p: float, u: np.ndarray, g: np.ndarray) -> float:
    ins = domain.inside
    num = float(np.sum(power(np.abs(u[ins]), p) * domain.dist[ins] ** (-p) * w.values[ins]))
    den = float(np.sum(power(np.abs(g[ins]), p) * w.values[ins]))
    if num == 0:
        return 0.0
    if den == 0:
        return math.inf
    return num / den


def beta_hardy_experiment(domain: GridDomain, beta: float, p: float, corpus: TestFunctionCorpus,
                          kappa: float = 2.0) -> dict:
    """Pointwise (p,beta) constant with the unweighted M_{2 dist}, integral
    (p,beta) ratio, and the pointwise (p,w) constant for w = dist^beta."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if p <= 1:
        raise ValueError("p must exceed 1")
    w = distance_power_weight(domain, beta)
    one = constant_weight(domain)
    scale = domain.dist ** (1 - beta / p)
    per, pw_best, int_best, skipped = [], -math.inf, 0.0, 0
    for e in corpus:
        # (M_{1,1,2}(g^p d^beta))^{1/p} = M_{p,1,2}(g d^{beta/p})
        mg = maximal(e.g * domain.dist ** (beta / p), p, one, kappa)
        q, skip = hardy_quotient_field(domain, e.u, mg, scale)
        ok = domain.inside & ~skip
        skipped += int(skip.sum())
        c = float(np.max(q[ok])) if ok.any() else None
        ratio = integral_hardy_ratio(domain, w, p, e.u, e.g)
        per.append({"label": e.label, "pointwise_beta": c, "integral_ratio": ratio})
        if c is not None:
            pw_best = max(pw_best, c)
        int_best = max(int_best, ratio)
    if pw_best == -math.inf:
        raise DegenerateCorpusError("degenerate corpus")
    pw_w = pointwise_hardy_constant(domain, w, p, kappa, corpus).constant
    return {
        "beta": beta,
        "p": p,
        "kappa": kappa,
        "pointwise_beta_constant": pw_best,
        "integral_ratio": int_best,
        "pointwise_w_constant": pw_w,
        "equivalence_gap": pw_best / pw_w if pw_w > 0 else math.inf,
        "skipped_cells": skipped,
        "per_entry": per,
    }
