import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import dijkstra

from hardylab.domain import (
    STENCIL_METRIC_FACTOR, DomainError, DomainSpec, ExperimentParams, brute_force_cell_distance,
    build_domain, chamfer_distance, length_graph, quasiconvexity_estimate,
)

from conftest import interval, square


def test_unit_square_center_distance():
    dom = square(64)
    c = dom.locate((0.5, 0.5))
    assert abs(dom.dist[c] - 0.5) <= dom.h


def test_punctured_square_distance_near_puncture(punctured32):
    dom = punctured32
    near = dom.inside & (np.sum((dom.centers - 0.5) ** 2, axis=-1) < 0.1**2)
    exact = np.sqrt(np.sum((dom.centers - 0.5) ** 2, axis=-1))
    assert np.array_equal(dom.dist[near], exact[near])


def test_random_obstacles_match_brute_force():
    rng = np.random.default_rng(3)
    shapes = [{"type": "rect", "min": [0, 0], "max": [1, 1]}]
    for _ in range(6):
        c = rng.uniform(0.1, 0.9, 2)
        shapes.append({"type": "disk", "center": c.tolist(), "radius": float(rng.uniform(0.03, 0.1)), "subtract": True})
    dom = build_domain({"n": 2, "h": 1 / 32, "box": [[0, 0], [1, 1]], "shapes": shapes,
                        "free_sides": ["xmin", "xmax", "ymin", "ymax"]})
    brute = brute_force_cell_distance(dom.inside) * dom.h
    assert np.array_equal(dom.dist[dom.inside], brute[dom.inside])


def test_distance_is_one_lipschitz(punctured32):
    dom = punctured32
    cells = dom.inside_cells()
    rng = np.random.default_rng(0)
    a = cells[rng.integers(len(cells), size=400)]
    b = cells[rng.integers(len(cells), size=400)]
    lhs = np.abs(dom.dist[tuple(a.T)] - dom.dist[tuple(b.T)])
    rhs = np.sqrt(np.sum((dom.centers[tuple(a.T)] - dom.centers[tuple(b.T)]) ** 2, axis=-1))
    assert np.all(lhs <= rhs + 1e-15)


def test_brute_force_distance_self_check():
    inside = np.ones((9, 9), bool)
    inside[4, 4] = False
    d = brute_force_cell_distance(inside)
    assert d[4, 7] == 3.0 and d[0, 0] == math.sqrt(32)


@pytest.mark.parametrize("spec, msg", [
    ({"n": 3, "h": 0.1, "box": [[0] * 3, [1] * 3]}, "dimension"),
    ({"n": 2, "h": 0.0, "box": [[0, 0], [1, 1]]}, "spacing"),
    ({"n": 2, "h": 0.3, "box": [[0, 0], [1, 1]]}, "multiple"),
    ({"n": 2, "h": 0.25, "box": [[0, 0], [1, 1]]}, "resolution"),
    ({"n": 2, "h": 0.125, "box": [[0, 0], [1, 1]], "shapes": []}, "empty domain"),
])
def test_build_domain_errors(spec, msg):
    with pytest.raises(DomainError, match=msg):
        build_domain(spec)


def test_empty_complement_rejected():
    with pytest.raises(DomainError, match="complement"):
        square(8, free_sides=("xmin", "xmax", "ymin", "ymax"))


def test_free_side_half_line():
    dom = interval(64, 0.0, 4.0, free_sides=("xmax",))
    assert np.allclose(dom.dist, dom.centers[..., 0])


def test_spec_round_trip(tmp_path):
    spec = DomainSpec.from_dict({"n": 2, "h": 0.125, "box": [[0, 0], [1, 1]],
                                 "shapes": [{"type": "rect", "min": [0, 0], "max": [1, 1]}]})
    path = tmp_path / "d.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert DomainSpec.load(path) == spec


def test_experiment_params_validation():
    with pytest.raises(ValueError):
        ExperimentParams(p=0.5)
    with pytest.raises(ValueError):
        ExperimentParams(kappa=0.0)


def test_segment_cuts_square():
    dom = square(32, [{"type": "segment", "a": [0.5, 0.0], "b": [0.5, 0.6]}])
    col = [i for i in range(32) if abs(dom.centers[i, 0, 0] - 0.5) <= dom.h / math.sqrt(2)]
    assert col and not dom.inside[col[0], :16].any()


def test_qc_axis_pair_is_one(sq16):
    assert quasiconvexity_estimate(sq16, 1, pairs=[((2, 3), (2, 12))]) == 1.0


@given(st.integers(-12, 12), st.integers(-12, 12))
@settings(max_examples=60, deadline=None)
def test_chamfer_formula_matches_grid_dijkstra(di, dj):
    dom = square(32)
    graph = length_graph(dom, dom.inside)
    a = (15, 15)
    b = (15 + di, 15 + dj)
    d = dijkstra(graph, indices=np.ravel_multi_index(a, dom.shape))[np.ravel_multi_index(b, dom.shape)]
    assert d == pytest.approx(dom.h * chamfer_distance((di, dj)), rel=1e-12, abs=1e-15)


def test_qc_on_convex_square_respects_stencil_factor(sq32):
    qc = quasiconvexity_estimate(sq32, 300, np.random.default_rng(1))
    assert 1.0 <= qc <= STENCIL_METRIC_FACTOR + 1e-12


def test_qc_l_shape_matches_exhaustive_oracle():
    dom = square(16, [{"type": "rect", "min": [0.5, 0.5], "max": [1, 1], "subtract": True}])
    a, b = (12, 2), (2, 12)
    qc = quasiconvexity_estimate(dom, 1, pairs=[(a, b)])
    # independent Bellman-Ford style relaxation over the 16-neighbor moves
    h = dom.h
    best = {a: 0.0}
    frontier = [a]
    moves = [(di, dj) for di in range(-2, 3) for dj in range(-2, 3) if (abs(di), abs(dj)) in
             ((1, 0), (0, 1), (1, 1), (1, 2), (2, 1))]
    while frontier:
        nxt = []
        for c in frontier:
            for di, dj in moves:
                nb = (c[0] + di, c[1] + dj)
                if not (0 <= nb[0] < 16 and 0 <= nb[1] < 16) or not dom.inside[nb]:
                    continue
                # every cell the open segment passes through must be inside
                crossed = set()
                for t in np.linspace(0, 1, 41)[1:-1]:
                    p = (c[0] + t * di, c[1] + t * dj)
                    for q in ((math.floor(p[0] + 0.5 - 1e-9), math.floor(p[1] + 0.5 - 1e-9)),
                              (math.floor(p[0] + 0.5 + 1e-9), math.floor(p[1] + 0.5 + 1e-9))):
                        crossed.add(q)
                if any(not dom.inside[q] for q in crossed if q not in (c, nb)):
                    continue
                d = best[c] + h * math.hypot(di, dj)
                if d < best.get(nb, math.inf) - 1e-15:
                    best[nb] = d
                    nxt.append(nb)
        frontier = nxt
    euclid = h * math.hypot(a[0] - b[0], a[1] - b[1])
    assert qc == pytest.approx(best[b] / euclid, rel=1e-12)


def test_export_dist_csv(tmp_path, sq16):
    path = tmp_path / "dist.csv"
    sq16.export_dist_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,dist" and len(lines) == 1 + 256
