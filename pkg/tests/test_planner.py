import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bruteforce import edge, min_cost
from feasplan import planner
from feasplan.planner import FusedField, NoPath
from feasplan.tensorizer import OFFSETS, FeasibilityTensor


def field(values, mask=None, res=0.05):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.ones(values.shape[:2], bool)
    return FusedField(values, np.zeros(values.shape, int), np.asarray(mask, bool), res)


def tensor(values, pid, mask=None):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.ones(values.shape[:2], bool)
    return FeasibilityTensor(values, mask, pid)


def random_grid(rng, max_side=6, p_low=0.2, p_masked=0.1):
    h, w = rng.integers(1, max_side + 1, size=2)
    if h * w < 2:
        w = 2
    vals = rng.random((h, w, 8))
    vals[rng.random((h, w, 8)) < p_low] *= 0.06  # many below f_min
    mask = rng.random((h, w)) >= p_masked
    cells = np.argwhere(mask)
    if len(cells) < 2:
        mask[:] = True
        cells = np.argwhere(mask)
    i, j = rng.choice(len(cells), size=2, replace=False)
    start = (int(cells[i][1]), int(cells[i][0]))
    goal = (int(cells[j][1]), int(cells[j][0]))
    return vals, mask, start, goal


# -- fusion -----------------------------------------------------------------------


def test_fuse_single():
    t = tensor(np.random.default_rng(0).random((3, 4, 8)), 4)
    f = planner.fuse([t])
    assert np.array_equal(f.values, t.values) and np.all(f.provenance == 4)


def test_fuse_max_and_tie():
    a = np.zeros((1, 1, 8))
    b = np.zeros((1, 1, 8))
    a[0, 0, 0], b[0, 0, 0] = 0.3, 0.8
    a[0, 0, 1], b[0, 0, 1] = 0.5, 0.5
    f = planner.fuse([tensor(a, 0), tensor(b, 1)])
    assert f.values[0, 0, 0] == 0.8 and f.provenance[0, 0, 0] == 1
    assert f.values[0, 0, 1] == 0.5 and f.provenance[0, 0, 1] == 0


def test_fuse_tie_lowest_id_not_list_order():
    v = np.full((1, 1, 8), 0.5)
    f = planner.fuse([tensor(v, 3), tensor(v, 1), tensor(v * 0.5, 0)])
    assert np.all(f.provenance == 1)


def test_fuse_errors():
    with pytest.raises(ValueError):
        planner.fuse([])
    with pytest.raises(ValueError, match="shapes"):
        planner.fuse([tensor(np.zeros((2, 2, 8)), 0), tensor(np.zeros((2, 3, 8)), 1)])
    m = np.ones((2, 2), bool)
    m2 = m.copy()
    m2[0, 0] = False
    with pytest.raises(ValueError, match="masks"):
        planner.fuse([tensor(np.zeros((2, 2, 8)), 0, m), tensor(np.zeros((2, 2, 8)), 1, m2)])
    with pytest.raises(ValueError, match="unique"):
        planner.fuse([tensor(np.zeros((2, 2, 8)), 2), tensor(np.zeros((2, 2, 8)), 2)])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 5))
def test_fusion_dominance_and_provenance(seed, n):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)), 8)
    ts = [tensor(np.round(rng.random(shape), 1), i) for i in range(n)]
    f = planner.fuse(ts)
    stack = np.stack([t.values for t in ts])
    assert np.all(f.values >= stack)
    picked = np.take_along_axis(stack, f.provenance[None], axis=0)[0]
    assert np.array_equal(picked, f.values)
    # lowest index among the maximal tensors
    first = np.argmax(stack == f.values[None], axis=0)
    assert np.array_equal(f.provenance, first)


# -- edge costs -------------------------------------------------------------------


def test_edge_cost_examples():
    v = np.ones((3, 3, 8))
    assert planner.edge_cost(field(v), (1, 1), 0) == pytest.approx(0.05)
    v[1, 1, 0] = 0.04
    assert planner.edge_cost(field(v), (1, 1), 0) == planner.INFEASIBLE
    v[1, 1, 1] = 0.5
    assert planner.edge_cost(field(v), (1, 1), 1) == pytest.approx(0.05 * math.sqrt(2) / 0.5)
    assert planner.edge_cost(field(v), (2, 2), 0) == planner.INFEASIBLE  # off the grid
    mask = np.ones((3, 3), bool)
    mask[1, 2] = False
    assert planner.edge_cost(field(np.ones((3, 3, 8)), mask), (1, 1), 0) == planner.INFEASIBLE


def test_cost_grid_matches_edge_cost():
    rng = np.random.default_rng(1)
    vals, mask, _, _ = random_grid(rng, 5)
    f = field(vals, mask)
    grid = planner.cost_grid(vals, mask, planner.step_lengths(0.05))
    for y in range(f.height):
        for x in range(f.width):
            for k in range(8):
                assert grid[y, x, k] == planner.edge_cost(f, (x, y), k)


# -- planning ---------------------------------------------------------------------


def test_straight_path():
    p = planner.plan(field(np.ones((5, 5, 8))), (0, 0), (0, 4))
    assert p.waypoints == [(0, y) for y in range(5)]
    assert [e.direction for e in p.edges] == [2] * 4
    assert p.total_cost == pytest.approx(0.20)
    assert p.total_length == pytest.approx(0.20)


def test_detour_around_blocked_column():
    v = np.ones((3, 3, 8))
    # every edge out of the center column is unusable, and so is every edge into it
    v[:, 1, :] = 0.0
    for y in range(3):
        for x in (0, 2):
            for k, (dx, dy) in enumerate(OFFSETS):
                if x + dx == 1:
                    v[y, x, k] = 0.0
    with pytest.raises(NoPath):
        planner.plan(field(v), (0, 1), (2, 1))
    v[0, :, :] = 1.0  # reopen the top row
    p = planner.plan(field(v), (0, 1), (2, 1))
    assert p.total_cost == pytest.approx(min_cost(v, np.ones((3, 3), bool), (0, 1), (2, 1)), abs=0)
    assert any(y == 0 for _, y in p.waypoints)


def test_enclosed_goal():
    v = np.ones((5, 5, 8))
    mask = np.ones((5, 5), bool)
    for x, y in [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)]:
        mask[y, x] = False
    with pytest.raises(NoPath):
        planner.plan(field(v, mask), (0, 0), (2, 2))


def test_trivial_and_invalid_endpoints():
    f = field(np.ones((3, 3, 8)), np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], bool))
    p = planner.plan(f, (2, 2), (2, 2))
    assert p.waypoints == [(2, 2)] and p.edges == [] and p.total_cost == 0.0
    with pytest.raises(ValueError, match="not a valid cell"):
        planner.plan(f, (1, 1), (0, 0))
    with pytest.raises(ValueError, match="outside"):
        planner.plan(f, (0, 0), (5, 0))


def test_provenance_per_edge():
    a = np.full((1, 4, 8), 0.5)
    b = np.full((1, 4, 8), 0.5)
    b[0, 1, 0] = 0.9
    p, f = planner.plan_multi([tensor(a, 0), tensor(b, 3)], (0, 0), (3, 0))
    assert p.policies() == [0, 3, 0] and p.switches() == 2
    assert [e.feasibility for e in p.edges] == [0.5, 0.9, 0.5]


def assert_valid_path(p, f, f_min=planner.F_MIN):
    assert p.total_cost == pytest.approx(sum(e.cost for e in p.edges), abs=0)
    for (a, b), e in zip(zip(p.waypoints, p.waypoints[1:]), p.edges):
        assert (b[0] - a[0], b[1] - a[1]) == OFFSETS[e.direction]
        assert f.values[a[1], a[0], e.direction] >= f_min
        assert f.valid_mask[a[1], a[0]] and f.valid_mask[b[1], b[0]]
        assert e.policy == f.provenance[a[1], a[0], e.direction]


def test_optimal_against_bruteforce_small():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(60):
        vals, mask, s, g = random_grid(rng, 5)
        ref = min_cost(vals, mask, s, g)
        f = field(vals, mask)
        if ref is None:
            with pytest.raises(NoPath):
                planner.plan(f, s, g)
            continue
        p = planner.plan(f, s, g)
        assert p.total_cost == ref
        assert_valid_path(p, f)
        checked += 1
    assert checked > 20


def _nx_cost(vals, mask, s, g):
    G = nx.DiGraph()
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            for k in range(8):
                e = edge(vals, mask, x, y, k, 0.05, 0.05)
                if e is not None:
                    G.add_edge((x, y), e[0], weight=e[1])
    try:
        return nx.dijkstra_path_length(G, s, g)
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        return None


def test_optimal_against_networkx_12x12():
    rng = np.random.default_rng(7)
    for _ in range(40):
        vals, mask, s, g = random_grid(rng, 12, p_low=0.35, p_masked=0.15)
        ref = _nx_cost(vals, mask, s, g)
        if ref is None:
            with pytest.raises(NoPath):
                planner.plan(field(vals, mask), s, g)
        else:
            assert planner.plan(field(vals, mask), s, g).total_cost == pytest.approx(ref, rel=1e-12)


def test_sparse_12x12_bruteforce():
    rng = np.random.default_rng(99)
    for _ in range(5):
        vals, mask, s, g = random_grid(rng, 12, p_low=0.8, p_masked=0.3)
        ref = min_cost(vals, mask, s, g)
        f = field(vals, mask)
        if ref is None:
            with pytest.raises(NoPath):
                planner.plan(f, s, g)
        else:
            assert planner.plan(f, s, g).total_cost == ref


def test_ties_deterministic():
    f = field(np.ones((6, 6, 8)))
    plans = [planner.plan(f, (0, 0), (5, 3)) for _ in range(3)]
    assert all(p.waypoints == plans[0].waypoints for p in plans)
    assert planner.format_plan(plans[0]) == planner.format_plan(plans[1])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_adding_tensors_never_raises_cost(seed):
    rng = np.random.default_rng(seed)
    shape = (5, 5, 8)
    ts = [tensor(rng.random(shape) * (rng.random(shape) > 0.3), i) for i in range(4)]
    costs = []
    for n in range(1, 5):
        try:
            costs.append(planner.plan_multi(ts[:n], (0, 0), (4, 4))[0].total_cost)
        except NoPath:
            costs.append(math.inf)
    assert all(b <= a for a, b in zip(costs, costs[1:]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_dominated_tensor_keeps_plan(seed):
    rng = np.random.default_rng(seed)
    base = [tensor(rng.random((4, 5, 8)), i) for i in range(2)]
    top = planner.fuse(base).values
    extra = tensor(top * rng.random(top.shape), 2)
    try:
        p1 = planner.plan_multi(base, (0, 0), (4, 3))[0]
    except NoPath:
        with pytest.raises(NoPath):
            planner.plan_multi(base + [extra], (0, 0), (4, 3))
        return
    p2 = planner.plan_multi(base + [extra], (0, 0), (4, 3))[0]
    assert p1 == p2


def test_plan_multi_is_fuse_then_plan():
    rng = np.random.default_rng(3)
    ts = [tensor(rng.random((4, 4, 8)), i) for i in range(3)]
    p, f = planner.plan_multi(ts, (0, 0), (3, 3))
    assert p == planner.plan(planner.fuse(ts), (0, 0), (3, 3))
    one = planner.plan_multi(ts[:1], (0, 0), (3, 3))[0]
    assert one == planner.plan(planner.as_field(ts[0]), (0, 0), (3, 3))


# -- export -----------------------------------------------------------------------


def test_plan_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    ts = [tensor(rng.random((4, 6, 8)), i) for i in range(2)]
    p, f = planner.plan_multi(ts, (0, 0), (5, 3))
    path = tmp_path / "p.txt"
    planner.save_plan(p, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# x y policy_id direction_k edge_cost"
    assert lines[-1].endswith("-1 -1 0.0")
    back = planner.load_plan(path, f)
    assert back == p


def test_overlay_marks_path():
    p = planner.plan(field(np.ones((3, 4, 8))), (0, 0), (3, 0))
    img = planner.plan_overlay(np.zeros((3, 4)), p)
    assert np.all(img[0] >= 0.6) and np.all(img[1:] == 0.0)
    assert img[0, 3] == 1.0
