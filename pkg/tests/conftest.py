import math
from fractions import Fraction

import numpy as np
import pytest

from hardylab.domain import build_domain


def square(n: int, extra: list | None = None, free_sides=()):
    return build_domain({
        "n": 2, "h": 1.0 / n, "box": [[0, 0], [1, 1]],
        "shapes": [{"type": "rect", "min": [0, 0], "max": [1, 1]}] + (extra or []),
        "free_sides": list(free_sides),
    })


def interval(cells: int, lo: float = 0.0, hi: float = 1.0, shapes=None, free_sides=()):
    return build_domain({
        "n": 1, "h": (hi - lo) / cells, "box": [[lo], [hi]],
        "shapes": shapes if shapes is not None else [{"type": "rect", "min": [lo], "max": [hi]}],
        "free_sides": list(free_sides),
    })


@pytest.fixture(scope="session")
def sq32():
    return square(32)


@pytest.fixture(scope="session")
def sq16():
    return square(16)


@pytest.fixture(scope="session")
def punctured32():
    return square(32, [{"type": "puncture", "at": [0.5, 0.5]}])


def brute_radius_count(dist: float, h: float, kappa: float, R: float | None = None) -> int:
    lim = kappa * dist if R is None else min(kappa * dist, R)
    j = 0
    while (j + 1) * h < lim:
        j += 1
    return j


def brute_maximal(f, p, w, kappa, R=None):
    """Maximal function by direct enumeration of every (x, r_j) pair.

    Cells of each ball are listed by sorting all grid cells on (squared
    offset, offset lexicographic), then summed sequentially.
    """
    dom = w.domain
    a = np.abs(np.asarray(f, float))
    wv = w.values
    pw = a if p == 1 else (a * a if p == 2 else np.vectorize(lambda v: math.pow(v, p))(a))
    out = np.zeros(dom.shape)
    idx = np.indices(dom.shape).reshape(dom.n, -1).T
    for x in map(tuple, dom.inside_cells()):
        J = brute_radius_count(float(dom.dist[x]), dom.h, kappa, R)
        if J == 0:
            out[x] = a[x]
            continue
        off = idx - np.asarray(x)
        sq = np.sum(off**2, axis=1)
        keys = tuple(off[:, k] for k in reversed(range(dom.n))) + (sq,)
        order = np.lexsort(keys)
        off, sq = off[order], sq[order]
        cells = tuple((off + np.asarray(x)).T)
        num = np.cumsum(pw[cells] * wv[cells])
        den = np.cumsum(wv[cells])
        pos = wv[cells] > 0
        hi = np.maximum.accumulate(np.where(pos, a[cells], -np.inf))
        lo = np.maximum.accumulate(np.where(pos, -a[cells], -np.inf))
        best = -math.inf
        for j in range(1, J + 1):
            k = int(np.searchsorted(sq, j * j, side="left")) - 1
            if hi[k] == -lo[k]:
                val = hi[k]
            else:
                ratio = num[k] / den[k]
                val = ratio if p == 1 else (np.sqrt(ratio) if p == 2 else ratio ** (1.0 / p))
            best = max(best, val)
        out[x] = best
    return out


def dyadic_field(rng, shape, bits: int = 20):
    """Uniform values on (-1, 1) rounded to multiples of 2**-bits, so sums of two are exact."""
    return np.round(rng.uniform(-1, 1, shape) * 2**bits) / 2**bits


def _exact_power_means(f, p, w, kappa, x):
    """Exact weighted means of |f|^p over every admissible ball at x (p in {1, 2})."""
    dom = w.domain
    J = brute_radius_count(float(dom.dist[x]), dom.h, kappa)
    if J == 0:
        return [Fraction(abs(float(f[x]))) ** p]
    d2 = np.sum((np.indices(dom.shape).T - np.asarray(x)).T ** 2, axis=0)
    out = []
    for j in range(1, J + 1):
        ball = d2 < j * j
        num = sum((Fraction(abs(float(v))) ** p * Fraction(float(c)) for v, c in zip(f[ball], w.values[ball])),
                  Fraction(0))
        out.append(num / sum((Fraction(float(c)) for c in w.values[ball]), Fraction(0)))
    return out


def exact_sublinearity_sign(f, g, p, w, kappa, x) -> int:
    """Sign of M(f+g)(x) - M f(x) - M g(x) in exact arithmetic (p in {1, 2})."""
    a = max(_exact_power_means(f + g, p, w, kappa, x))
    b = max(_exact_power_means(f, p, w, kappa, x))
    c = max(_exact_power_means(g, p, w, kappa, x))
    if p == 1:
        d = a - b - c
        return (d > 0) - (d < 0)
    # sqrt(a) vs sqrt(b) + sqrt(c): square both sides twice
    e = a - b - c
    if e < 0:
        return -1
    lhs, rhs = e * e, 4 * b * c
    return (lhs > rhs) - (lhs < rhs)


def sublinearity_violations(f, g, p, w, kappa):
    """Cells where the float check fails, with the exact-arithmetic sign at each."""
    from hardylab.maximal import maximal
    lhs = maximal(f + g, p, w, kappa)
    rhs = maximal(f, p, w, kappa) + maximal(g, p, w, kappa)
    bad = [tuple(int(v) for v in c) for c in np.argwhere(lhs > rhs)]
    return [(c, exact_sublinearity_sign(f, g, p, w, kappa, c)) for c in bad]


def crossed_cells(di: int, dj: int) -> set:
    """Cells (relative offsets) the open segment to (di, dj) passes through, endpoints excluded."""
    out = set()
    for t in np.linspace(0, 1, 81)[1:-1]:
        px, py = t * di, t * dj
        for e in (-1e-9, 1e-9):
            for f in (-1e-9, 1e-9):
                out.add((math.floor(px + 0.5 + e), math.floor(py + 0.5 + f)))
    out.discard((0, 0))
    out.discard((di, dj))
    return out


MOVES = [(di, dj) for di in range(-2, 3) for dj in range(-2, 3)
         if (abs(di), abs(dj)) in ((1, 0), (0, 1), (1, 1), (1, 2), (2, 1))]
MOVE_CLASS = {m: {1: 0, 2: 1, 5: 2}[m[0] ** 2 + m[1] ** 2] for m in MOVES}
MOVE_CROSSED = {m: crossed_cells(*m) for m in MOVES}


def oracle_curve_infimum(dom, g, x, budget):
    """Exhaustive dynamic program over (cell, axis/diagonal/knight counts).

    Every state keeps the cheapest per-class sums of g(a)+g(b); the cost of a
    path depends only on those sums, so this enumerates all curves exactly.
    Returns the cheapest cost over curves of length <= budget, or inf.
    """
    h = dom.h
    s2, s5 = math.sqrt(2.0), math.sqrt(5.0)

    def length(c, t=0.0):
        return h * (c[0] + s2 * c[1] + s5 * c[2]) + t

    def cost(s, extra=0.0):
        return 0.5 * h * (s[0] + s2 * s[1] + s5 * s[2]) + extra

    def exits(cell):
        c = dom.center(cell)
        out = []
        sides = ("xmin", "xmax", "ymin", "ymax")
        for k in range(2):
            if cell[k] == 0 and sides[2 * k] not in dom.free_sides:
                out.append(0.5 * h)
            if cell[k] == dom.shape[k] - 1 and sides[2 * k + 1] not in dom.free_sides:
                out.append(0.5 * h)
        for at in dom.punctures:
            d = float(np.sqrt(np.sum((c - np.asarray(at)) ** 2)))
            if d <= h:
                out.append(d)
        return out

    best = math.inf
    layer = {(x, (0, 0, 0)): (0.0, 0.0, 0.0)}
    while layer:
        nxt = {}
        for (cell, cnt), sums in layer.items():
            gu = float(g[cell])
            for t in exits(cell):
                if length(cnt, t) <= budget:
                    best = min(best, cost(sums, gu * t))
            for m in MOVES:
                nb = (cell[0] + m[0], cell[1] + m[1])
                if not (0 <= nb[0] < dom.shape[0] and 0 <= nb[1] < dom.shape[1]):
                    continue
                if any(not dom.inside[cell[0] + a, cell[1] + b] for a, b in MOVE_CROSSED[m]):
                    continue
                k = MOVE_CLASS[m]
                nc = tuple(v + (i == k) for i, v in enumerate(cnt))
                if length(nc) > budget:
                    continue
                ns = tuple(v + (gu + float(g[nb])) * (i == k) for i, v in enumerate(sums))
                if not dom.inside[nb]:
                    best = min(best, cost(ns))
                    continue
                old = nxt.get((nb, nc))
                if old is None or cost(ns) < cost(old):
                    nxt[(nb, nc)] = ns
        layer = nxt
    return best


CONFIGS = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"
SUBCOMMANDS = ["make-domain", "doubling", "maxfn", "curve", "hardy-scan", "alpha", "poincare", "improve",
               "beta-experiment"]


def cli_digests(command: str, out, *extra: str) -> tuple[int, dict]:
    """Run one subcommand with its shipped config; return the exit code and sha256 of every output file."""
    import hashlib
    from hardylab.cli import main
    config = CONFIGS / (command.replace("-", "_") + ".json")
    code = main([command, "--config", str(config), "--out", str(out), *extra])
    digests = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())}
    return code, digests


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
