"""Max-fusion of policy tensors and Dijkstra over the 8-connected grid."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorizer import DIRECTIONS, OFFSETS, FeasibilityTensor

F_MIN = 0.05
INFEASIBLE = math.inf


class NoPath(RuntimeError):
    """Goal unreachable through feasible edges."""


@dataclass(frozen=True, eq=False)
class FusedField:
    values: np.ndarray  # (height, width, 8)
    provenance: np.ndarray  # (height, width, 8) policy ids
    valid_mask: np.ndarray
    resolution: float = 0.05

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class PlanEdge:
    direction: int
    policy: int
    cost: float
    feasibility: float


@dataclass
class Plan:
    waypoints: list
    edges: list = field(default_factory=list)
    total_cost: float = 0.0
    total_length: float = 0.0

    def policies(self):
        return [e.policy for e in self.edges]

    def switches(self):
        p = self.policies()
        return sum(1 for a, b in zip(p, p[1:]) if a != b)


def step_lengths(resolution):
    return np.array([resolution * (math.sqrt(2.0) if dx and dy else 1.0) for dx, dy in OFFSETS])


def fuse(tensors) -> FusedField:
    """Element-wise max over policies; ties go to the lowest policy id."""
    tensors = sorted(tensors, key=lambda t: t.policy_id)
    if not tensors:
        raise ValueError("need at least one tensor to fuse")
    ids = [t.policy_id for t in tensors]
    if len(set(ids)) != len(ids):
        raise ValueError(f"policy ids must be unique, got {ids}")
    first = tensors[0]
    for t in tensors[1:]:
        if t.values.shape != first.values.shape:
            raise ValueError(f"tensor shapes differ: {t.values.shape} vs {first.values.shape}")
        if not np.array_equal(t.valid_mask, first.valid_mask):
            raise ValueError(f"valid masks of policies {first.policy_id} and {t.policy_id} differ")
    stack = np.stack([t.values for t in tensors])
    idx = np.argmax(stack, axis=0)
    ids = np.array([t.policy_id for t in tensors])
    values = np.take_along_axis(stack, idx[None], axis=0)[0]
    return FusedField(values, ids[idx], first.valid_mask.copy(), first.resolution)


def as_field(tensor: FeasibilityTensor) -> FusedField:
    return fuse([tensor])


def edge_cost(fld: FusedField, frm, k: int, f_min: float = F_MIN) -> float:
    """Cost of leaving cell ``frm = (x, y)`` along direction ``k``.

    Returns :data:`INFEASIBLE` when the feasibility is below ``f_min`` or
    either endpoint is outside the valid region.
    """
    x, y = frm
    dx, dy = OFFSETS[k]
    nx, ny = x + dx, y + dy
    if not (0 <= x < fld.width and 0 <= y < fld.height and 0 <= nx < fld.width and 0 <= ny < fld.height):
        return INFEASIBLE
    if not (fld.valid_mask[y, x] and fld.valid_mask[ny, nx]):
        return INFEASIBLE
    f = fld.values[y, x, k]
    if f < f_min:
        return INFEASIBLE
    return step_lengths(fld.resolution)[k] / f


def cost_grid(values, valid, lengths, f_min=F_MIN):
    """``(height, width, 8)`` edge costs with inf for unusable edges."""
    h, w, _ = values.shape
    with np.errstate(divide="ignore"):
        cost = np.where(values >= f_min, lengths / np.where(values > 0, values, 1.0), np.inf)
    cost = np.where(valid[:, :, None], cost, np.inf)
    padded = np.pad(valid, 1, constant_values=False)
    for k, (dx, dy) in enumerate(OFFSETS):
        ok = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        cost[:, :, k] = np.where(ok, cost[:, :, k], np.inf)
    return cost


def dijkstra(cost: np.ndarray, start, goal):
    """Shortest path on a precomputed ``(h, w, 8)`` cost grid.

    Heap ties resolve by (distance, row-major cell index). Returns the list of
    ``(x, y, k)`` hops and the path cost, or ``None`` when unreachable.
    """
    h, w, _ = cost.shape
    s = start[1] * w + start[0]
    g = goal[1] * w + goal[0]
    flat = cost.reshape(-1).tolist()
    shift = [dy * w + dx for dx, dy in OFFSETS]
    dist = {s: 0.0}
    prev = {}
    done = set()
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == g:
            break
        base = u * DIRECTIONS
        for k in range(DIRECTIONS):
            c = flat[base + k]
            if c == INFEASIBLE:
                continue
            v = u + shift[k]
            nd = d + c
            if nd < dist.get(v, INFEASIBLE):
                dist[v] = nd
                prev[v] = (u, k)
                heapq.heappush(heap, (nd, v))
    if g not in done:
        return None
    hops = []
    v = g
    while v != s:
        u, k = prev[v]
        hops.append((u % w, u // w, k))
        v = u
    hops.reverse()
    return hops, dist[g]


def _check_cell(fld, cell, what):
    x, y = cell
    if not (0 <= x < fld.width and 0 <= y < fld.height):
        raise ValueError(f"{what} {cell} lies outside the {fld.width}x{fld.height} grid")
    if not fld.valid_mask[y, x]:
        raise ValueError(f"{what} {cell} is not a valid cell")


def plan(fld: FusedField, start, goal, f_min: float = F_MIN) -> Plan:
    """Minimum-cost 8-connected path from ``start`` to ``goal`` (cells as ``(x, y)``).

    Each edge carries the policy that supplied the fused value it was costed
    with. Raises :class:`NoPath` when the goal is unreachable.
    """
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    _check_cell(fld, start, "start")
    _check_cell(fld, goal, "goal")
    if start == goal:
        return Plan([start])
    lengths = step_lengths(fld.resolution)
    cost = cost_grid(fld.values, fld.valid_mask, lengths, f_min)
    found = dijkstra(cost, start, goal)
    if found is None:
        raise NoPath(f"no feasible path from {start} to {goal}")
    hops, _ = found
    waypoints = [start]
    edges = []
    total = 0.0
    length = 0.0
    for x, y, k in hops:
        c = float(cost[y, x, k])
        edges.append(PlanEdge(k, int(fld.provenance[y, x, k]), c, float(fld.values[y, x, k])))
        total += c
        length += float(lengths[k])
        dx, dy = OFFSETS[k]
        waypoints.append((x + dx, y + dy))
    return Plan(waypoints, edges, total, length)


def plan_multi(tensors, start, goal, f_min: float = F_MIN):
    fld = fuse(tensors)
    return plan(fld, start, goal, f_min), fld


# -- export ---------------------------------------------------------------------


def format_plan(p: Plan) -> str:
    lines = [
        "# x y policy_id direction_k edge_cost",
        f"# waypoints {len(p.waypoints)} total_cost {p.total_cost!r} total_length {p.total_length!r}",
    ]
    for i, (x, y) in enumerate(p.waypoints):
        if i < len(p.edges):
            e = p.edges[i]
            lines.append(f"{x} {y} {e.policy} {e.direction} {e.cost!r}")
        else:
            lines.append(f"{x} {y} -1 -1 0.0")
    return "\n".join(lines) + "\n"


def save_plan(p: Plan, path) -> None:
    Path(path).write_text(format_plan(p))


def load_plan(path, fld: FusedField | None = None) -> Plan:
    waypoints, edges = [], []
    total = length = 0.0
    for line in Path(path).read_text().splitlines():
        if line.startswith("# waypoints"):
            parts = line.split()
            total, length = float(parts[4]), float(parts[6])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        x, y, pol, k, c = line.split()
        waypoints.append((int(x), int(y)))
        if int(k) >= 0:
            f = float(fld.values[int(y), int(x), int(k)]) if fld is not None else math.nan
            edges.append(PlanEdge(int(k), int(pol), float(c), f))
    return Plan(waypoints, edges, total, length)


def plan_overlay(base: np.ndarray, p: Plan, policy_ids=None) -> np.ndarray:
    """Grayscale image of ``base`` with the path drawn in per-policy shades."""
    img = np.asarray(base, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    img = (img - lo) / (hi - lo) * 0.5 if hi > lo else np.zeros_like(img)
    ids = sorted(set(policy_ids or []) | set(p.policies())) or [0]
    shade = {pid: 0.6 + 0.4 * i / max(1, len(ids) - 1) for i, pid in enumerate(ids)}
    for (x, y), e in zip(p.waypoints, p.edges):
        img[y, x] = shade[e.policy]
    if p.waypoints:
        gx, gy = p.waypoints[-1]
        img[gy, gx] = 1.0
    return img
