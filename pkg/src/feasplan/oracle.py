"""Rule-based stand-in for trained locomotion policies.

Each archetype has hard capability limits. ``traverse_scores`` reads a
center-normalized patch (travel along +u, i.e. along patch columns) and
returns the fraction of the commanded speed the policy would achieve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .terrain import PATCH_SIDE, TerrainSpec, generate, sample_patches, valid_mask

SIGMA_REWARD = 0.25
SIGMA_NOISE = 0.02
SPEED_CLAMP = 1.5
FORWARD_TASK = (0.5, 0.0, 0.0)

GAP_DROP = 0.3  # m below the travel line that counts as "no ground"
DECAY_BAND = 0.5  # score reaches 0 at 50 % over a cap
CORRIDOR = 2  # lateral half-width (cells) of the body corridor
LOOKAHEAD = 7  # forward cells inspected beyond the center
SLOPE_BASELINE = 4  # lateral cells used for the slope estimate
STEP_WINDOW = 4  # ground samples ahead compared against for steps
GRID_DIRECTIONS = 8  # headings of the planning grid

ARCHETYPE_NAMES = ("StepsExpert", "GapsExpert", "BridgeExpert", "ValleyExpert", "General")
CAP_KEYS = ("max_step_up", "max_step_down", "max_gap", "min_support_width", "max_lateral_slope")


@dataclass(frozen=True)
class TaskVector:
    vx: float = FORWARD_TASK[0]
    vy: float = FORWARD_TASK[1]
    yaw_rate: float = FORWARD_TASK[2]

    def __post_init__(self):
        vals = (self.vx, self.vy, self.yaw_rate)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("task vector components must be finite")
        if math.hypot(self.vx, self.vy) > SPEED_CLAMP + 1e-12:
            raise ValueError(f"commanded speed exceeds {SPEED_CLAMP} m/s")

    def as_array(self):
        return np.array([self.vx, self.vy, self.yaw_rate])


@dataclass(frozen=True)
class PolicyArchetype:
    id: int
    name: str
    max_step_up: float
    max_step_down: float
    max_gap: float
    min_support_width: float
    max_lateral_slope: float  # radians
    skill_level: float = 1.0

    def __post_init__(self):
        if self.name not in ARCHETYPE_NAMES:
            raise ValueError(f"unknown archetype {self.name!r}")
        if any(getattr(self, k) < 0 for k in CAP_KEYS):
            raise ValueError("capability limits must be non-negative")
        if not 0.0 <= self.skill_level <= 1.0:
            raise ValueError("skill_level must lie in [0, 1]")

    def at_skill(self, skill: float) -> "PolicyArchetype":
        return replace(self, skill_level=skill)

    def effective_caps(self):
        """Caps after skill scaling. The support requirement is not scaled."""
        s = self.skill_level
        return (
            self.max_step_up * s,
            self.max_step_down * s,
            self.max_gap * s,
            self.min_support_width,
            self.max_lateral_slope * s,
        )


_EXPERT_CAPS = {
    "StepsExpert": (0.15, 0.15, 0.05, 0.6, math.radians(25)),
    "GapsExpert": (0.02, 0.02, 0.15, 0.45, math.radians(20)),
    "BridgeExpert": (0.02, 0.02, 0.05, 0.35, math.radians(20)),
    "ValleyExpert": (0.06, 0.06, 0.05, 0.6, math.radians(50)),
}


def _general_caps(frac=0.6):
    caps = np.array(list(_EXPERT_CAPS.values()))
    best = caps.max(axis=0)
    best[3] = caps[:, 3].min() / frac
    best[[0, 1, 2, 4]] *= frac
    return tuple(float(c) for c in best)


def default_archetypes() -> list[PolicyArchetype]:
    out = [PolicyArchetype(i, name, *caps) for i, (name, caps) in enumerate(_EXPERT_CAPS.items())]
    out.append(PolicyArchetype(len(out), "General", *_general_caps()))
    return out


def archetype(name: str, skill: float = 1.0, id: int | None = None) -> PolicyArchetype:
    for a in default_archetypes():
        if a.name == name:
            return replace(a, skill_level=skill, id=a.id if id is None else id)
    raise ValueError(f"unknown archetype {name!r}")


def load_archetypes(path) -> list[PolicyArchetype]:
    """Read archetypes from a JSON list of ``{name, id?, skill_level?, caps...}``.

    Missing caps fall back to the shipped defaults for that name; slopes are
    given in degrees under ``max_lateral_slope_deg``.
    """
    return archetypes_from_list(json.loads(Path(path).read_text()))


def archetypes_from_list(entries) -> list[PolicyArchetype]:
    """Archetypes from already parsed ``{name, id?, skill_level?, caps...}`` entries."""
    out = []
    for i, entry in enumerate(entries):
        entry = dict(entry)
        name = entry.pop("name")
        base = archetype(name)
        kw = {"id": entry.pop("id", i), "skill_level": entry.pop("skill_level", 1.0)}
        if "max_lateral_slope_deg" in entry:
            kw["max_lateral_slope"] = math.radians(entry.pop("max_lateral_slope_deg"))
        for k in CAP_KEYS:
            if k in entry:
                kw[k] = float(entry.pop(k))
        if entry:
            raise ValueError(f"archetype {name}: unknown keys {sorted(entry)}")
        out.append(replace(base, **kw))
    if len({a.id for a in out}) != len(out):
        raise ValueError("archetype ids must be unique")
    return out


# -- feature extraction -------------------------------------------------------


def patch_features(patches: np.ndarray, resolution: float = 0.05) -> np.ndarray:
    """Terrain features of a batch of ``(n, side, side)`` patches.

    Columns: step up (m), step down (m), widest gap (m), narrowest lateral
    support (m), lateral slope (rad).
    """
    patches = np.asarray(patches, dtype=float)
    if patches.ndim == 2:
        patches = patches[None]
    n, side, _ = patches.shape
    c0 = side // 2
    fwd = slice(c0, min(side, c0 + LOOKAHEAD + 1))
    block = patches[:, c0 - CORRIDOR : c0 + CORRIDOR + 1, fwd]
    prof = block.mean(axis=1)
    ref = np.median(block.reshape(n, -1), axis=1)
    floor = (ref - GAP_DROP)[:, None]
    ground = prof >= floor

    # steps and gaps per corridor row, worst row wins
    rows = block.reshape(n * block.shape[1], -1)
    row_gap = rows < np.repeat(floor, block.shape[1], axis=0)
    row_ground = ~row_gap
    m = rows.shape[1]

    # longest run of gap samples
    run = np.zeros(len(rows))
    best = np.zeros(len(rows))
    for j in range(m):
        run = np.where(row_gap[:, j], run + 1, 0)
        best = np.maximum(best, run)

    # height changes between a ground sample and the next few ground samples
    up = np.zeros(len(rows))
    down = np.zeros(len(rows))
    for i in range(m):
        between = np.zeros(len(rows))
        for j in range(i + 1, m):
            ok = row_ground[:, i] & row_ground[:, j] & (between < STEP_WINDOW)
            d = rows[:, j] - rows[:, i]
            up = np.where(ok, np.maximum(up, d), up)
            down = np.where(ok, np.maximum(down, -d), down)
            between = between + row_ground[:, j]
    up = up.reshape(n, -1).max(axis=1)
    down = down.reshape(n, -1).max(axis=1)
    gap_width = best.reshape(n, -1).max(axis=1) * resolution

    # lateral run of ground containing the center row, at each ground column
    cols = patches[:, :, fwd]
    solid = cols >= floor[:, :, None]
    above = np.cumprod(solid[:, c0:, :], axis=1).sum(axis=1)
    below = np.cumprod(solid[:, c0 - 1 :: -1, :], axis=1).sum(axis=1)
    width = (above + below) * resolution
    width = np.where(ground, width, np.inf)
    support = width.min(axis=1)
    support = np.where(np.isfinite(support), support, side * resolution)

    # mean lateral gradient on each side of the center row
    center = cols[:, c0, :]
    slopes = []
    for row in (c0 - SLOPE_BASELINE, c0 + SLOPE_BASELINE):
        side_h = cols[:, row, :]
        ok = ground & solid[:, row, :] & solid[:, c0, :]
        g = np.abs(side_h - center) / (SLOPE_BASELINE * resolution)
        cnt = ok.sum(axis=1)
        slopes.append(np.where(cnt > 0, (g * ok).sum(axis=1) / np.maximum(cnt, 1), 0.0))
    slope = np.arctan(np.maximum(*slopes))

    return np.stack([up, down, gap_width, support, slope], axis=1)


def _excess(feature, cap, minimum=False):
    """Relative amount by which ``feature`` violates ``cap`` (0 when within).

    A violation of at most 1e-9 (absolute) counts as none, so features
    sitting exactly on a cap are not penalized by rounding. The same rule
    holds for a zero cap, which keeps scores monotone in skill.
    """
    tol = 1e-9
    over = (cap - feature) if minimum else (feature - cap)
    if cap <= 0:
        return np.where(over > tol, np.inf, 0.0)
    with np.errstate(over="ignore"):
        return np.where(over > tol, over / cap, 0.0)


def scores_from_features(arch: PolicyArchetype, feats: np.ndarray) -> np.ndarray:
    caps = arch.effective_caps()
    rho = np.ones(feats.shape[0])
    for k, cap in enumerate(caps):
        ex = _excess(feats[:, k], cap, minimum=(k == 3))
        rho = np.minimum(rho, np.clip(1.0 - ex / DECAY_BAND, 0.0, 1.0))
    return np.where(rho < 1e-9, 0.0, rho)


def traverse_scores(arch: PolicyArchetype, patches: np.ndarray, resolution: float = 0.05) -> np.ndarray:
    """Vectorized :func:`traverse_score` over ``(n, side, side)`` patches."""
    return scores_from_features(arch, patch_features(patches, resolution))


def traverse_score(arch: PolicyArchetype, patch, task: TaskVector | None = None) -> float:
    """Achieved-speed fraction in [0, 1] for walking forward over ``patch``.

    The task vector does not enter the rule: patches are already rotated into
    the command direction.
    """
    values = getattr(patch, "values", patch)
    res = getattr(patch, "resolution", 0.05)
    return float(traverse_scores(arch, np.asarray(values)[None], res)[0])


def reward_from_score(rho, task=FORWARD_TASK, noise=0.0, sigma=SIGMA_REWARD):
    """Velocity-tracking reward for achieving ``rho`` of the command speed.

    ``noise`` (m/s) perturbs the achieved speed along the command direction.
    """
    cmd = np.asarray(task[:2] if not isinstance(task, TaskVector) else task.as_array()[:2], dtype=float)
    speed = np.linalg.norm(cmd)
    rho = np.asarray(rho, dtype=float)
    achieved = np.maximum(0.0, rho * speed + noise)
    err = np.abs(achieved - speed)
    return np.exp(-err / sigma)


def label_reward(arch, patch, task: TaskVector | None = None, rng=None, sigma_noise=SIGMA_NOISE) -> float:
    """Velocity-tracking reward label; ``rng=None`` disables tracking noise."""
    task = task or TaskVector()
    rho = traverse_score(arch, patch, task)
    noise = 0.0 if rng is None else draw_noise(rng, 1, sigma_noise)[0]
    return float(reward_from_score(rho, task, noise))


def draw_noise(rng, n, sigma_noise=SIGMA_NOISE):
    """Gaussian speed noise truncated at three standard deviations."""
    return np.clip(rng.normal(0.0, sigma_noise, size=n), -3 * sigma_noise, 3 * sigma_noise)


@dataclass
class Dataset:
    patches: np.ndarray  # (n, side, side)
    tasks: np.ndarray  # (n, 3)
    labels: np.ndarray  # (n,)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.patches[idx], self.tasks[idx], self.labels[idx], dict(self.meta))


def sample_dataset(
    arch: PolicyArchetype,
    specs: list[TerrainSpec],
    n: int,
    seed: int,
    sigma_noise: float = SIGMA_NOISE,
    side: int = PATCH_SIDE,
    headings: str = "grid",
    sigma: float = SIGMA_REWARD,
) -> Dataset:
    """Draw ``n`` labeled (patch, task, reward) samples from maps built from ``specs``.

    Each sample picks a spec uniformly, then a uniformly random valid cell and
    heading. ``headings="grid"`` draws from the planner's 8 directions,
    ``"uniform"`` from the full circle. ``sigma_noise=0`` gives noise-free labels.
    """
    if headings not in ("grid", "uniform"):
        raise ValueError(f"headings must be 'grid' or 'uniform', got {headings!r}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not specs:
        raise ValueError("need at least one terrain spec")
    rng = np.random.default_rng(seed)
    maps = [generate(s) for s in specs]
    cells = []
    for m in maps:
        ys, xs = np.nonzero(valid_mask(m.width, m.height, side))
        cells.append((xs, ys))
    if all(len(xs) == 0 for xs, _ in cells):
        raise ValueError("no map in the spec list has a cell with an in-bounds patch")
    usable = [i for i, (xs, _) in enumerate(cells) if len(xs)]
    which = rng.choice(usable, size=n)
    picks = rng.random(n)
    if headings == "grid":
        angles = rng.integers(0, GRID_DIRECTIONS, size=n) * (2 * math.pi / GRID_DIRECTIONS)
    else:
        angles = rng.uniform(0.0, 2 * math.pi, size=n)
    noise = draw_noise(rng, n, sigma_noise) if sigma_noise > 0 else np.zeros(n)
    patches = np.empty((n, side, side))
    for i in usable:
        sel = np.nonzero(which == i)[0]
        if not len(sel):
            continue
        xs, ys = cells[i]
        k = np.minimum((picks[sel] * len(xs)).astype(int), len(xs) - 1)
        patches[sel] = sample_patches(maps[i].data, xs[k], ys[k], angles[sel], side)
    rho = traverse_scores(arch, patches, maps[0].resolution)
    labels = reward_from_score(rho, FORWARD_TASK, noise, sigma)
    tasks = np.tile(np.array(FORWARD_TASK), (n, 1))
    return Dataset(patches, tasks, labels, {"archetype": arch.name, "seed": seed, "rho": rho})
