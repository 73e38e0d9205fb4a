"""Plan execution against the capability oracle, SPL, and the two experiments.

Execution walks a plan edge by edge. Each edge is judged by the oracle for
the archetype the planner assigned to it, so a feasibility net that is too
optimistic shows up as a traversal failure.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import feasnet, oracle, planner, terrain
from .tensorizer import HEADINGS, TAU_HIGH, TAU_LOW, PolicyBundle, tensorize_all

EDGE_MARGIN = 0.02
BUDGET_FACTOR = 4
REFERENCE_RHO = 0.5
FAILURE_CAUSES = (None, "NoPath", "TraversalFailure", "Timeout")


@dataclass(frozen=True)
class TrialResult:
    success: bool
    path_length: float
    shortest_length: float
    failure_cause: str | None = None
    policy_switches: int = 0

    def __post_init__(self):
        if self.failure_cause not in FAILURE_CAUSES:
            raise ValueError(f"unknown failure cause {self.failure_cause!r}")
        if self.success and self.failure_cause is not None:
            raise ValueError("a successful trial cannot carry a failure cause")
        if not self.success and self.failure_cause is None:
            raise ValueError("a failed trial needs a failure cause")
        if self.path_length < 0:
            raise ValueError("path_length must be non-negative")


def _archetypes_by_id(policies):
    """Map policy id -> archetype from bundles, archetypes or a ready dict."""
    if isinstance(policies, dict):
        return dict(policies)
    out = {}
    for p in policies:
        arch = p.archetype if isinstance(p, PolicyBundle) else p
        out[arch.id] = arch
    return out


# -- ground truth ---------------------------------------------------------------


def oracle_rho(emap: terrain.ElevationMap, arch: oracle.PolicyArchetype, chunk: int = 4096) -> np.ndarray:
    """Oracle score for every valid cell and direction, ``(height, width, 8)``.

    Cells without a full footprint hold 0.
    """
    mask = terrain.valid_mask(emap.width, emap.height)
    ys, xs = np.nonzero(mask)
    rho = np.zeros((emap.height, emap.width, len(HEADINGS)))
    for lo in range(0, len(xs), chunk):
        cx, cy = xs[lo : lo + chunk], ys[lo : lo + chunk]
        for k, heading in enumerate(HEADINGS):
            patches = terrain.sample_patches(emap.data, cx, cy, np.full(len(cx), heading))
            rho[cy, cx, k] = oracle.traverse_scores(arch, patches, emap.resolution)
    return rho


def reference_field(emap, archetypes) -> np.ndarray:
    """Union of oracle scores over ``archetypes`` (max per edge)."""
    archs = list(_archetypes_by_id(archetypes).values())
    if not archs:
        raise ValueError("need at least one reference archetype")
    return np.max([oracle_rho(emap, a) for a in archs], axis=0)


def shortest_length(emap, archetypes, start, goal, threshold=REFERENCE_RHO, rho=None) -> float:
    """Geometric length of the shortest path over oracle-traversable edges.

    An edge is traversable when some reference archetype scores it at least
    ``threshold``. ``rho`` may carry a precomputed :func:`reference_field`.
    """
    if tuple(start) == tuple(goal):
        return 0.0
    if rho is None:
        rho = reference_field(emap, archetypes)
    mask = terrain.valid_mask(emap.width, emap.height)
    lengths = planner.step_lengths(emap.resolution)
    ok = np.where(rho >= threshold, 1.0, 0.0)
    cost = planner.cost_grid(ok, mask, lengths, f_min=0.5)
    found = planner.dijkstra(cost, tuple(start), tuple(goal))
    if found is None:
        raise planner.NoPath(f"no oracle-traversable path from {tuple(start)} to {tuple(goal)}")
    return sum(float(lengths[k]) for _, _, k in found[0])


def edge_scores(plan: planner.Plan, emap, policies) -> list[float]:
    """Oracle score of each plan edge under the archetype assigned to it."""
    archs = _archetypes_by_id(policies)
    out = []
    for (x, y), e in zip(plan.waypoints, plan.edges):
        if e.policy not in archs:
            raise KeyError(f"plan edge at {(x, y)} uses policy {e.policy}, which is not among {sorted(archs)}")
        patch = terrain.extract_patch(emap, x, y, HEADINGS[e.direction])
        out.append(oracle.traverse_score(archs[e.policy], patch))
    return out


def _walk(plan, rhos, rng, shortest, margin, budget_factor, resolution):
    lengths = planner.step_lengths(resolution)
    budget = budget_factor * len(plan.waypoints)
    walked = 0.0
    for steps, (e, rho) in enumerate(zip(plan.edges, rhos), start=1):
        if steps > budget:
            return TrialResult(False, walked, shortest, "Timeout", plan.switches())
        if rng.random() >= min(1.0, rho + margin):
            return TrialResult(False, walked, shortest, "TraversalFailure", plan.switches())
        walked += float(lengths[e.direction])
    return TrialResult(True, walked, shortest, None, plan.switches())


def execute(plan, emap, policies, seed, shortest=None, margin=EDGE_MARGIN, budget_factor=BUDGET_FACTOR) -> TrialResult:
    """Walk ``plan`` on ``emap`` once.

    Each edge succeeds with probability ``min(1, rho + margin)`` where rho
    is the oracle score of the assigned archetype on the patch at the edge's
    source cell and heading. ``shortest`` defaults to the oracle shortest path
    over the same archetypes.
    """
    if shortest is None:
        shortest = shortest_length(emap, policies, plan.waypoints[0], plan.waypoints[-1])
    rng = np.random.default_rng(seed)
    return _walk(plan, edge_scores(plan, emap, policies), rng, shortest, margin, budget_factor, emap.resolution)


def run_trials(plan, emap, policies, seeds, shortest, margin=EDGE_MARGIN, budget_factor=BUDGET_FACTOR):
    """``execute`` over many seeds, scoring the plan's edges only once."""
    rhos = edge_scores(plan, emap, policies)
    return [
        _walk(plan, rhos, np.random.default_rng(s), shortest, margin, budget_factor, emap.resolution)
        for s in seeds
    ]


def no_path_results(n, shortest) -> list[TrialResult]:
    return [TrialResult(False, 0.0, shortest, "NoPath", 0) for _ in range(n)]


def success_rate(results) -> float:
    if not results:
        raise ValueError("no trials to aggregate")
    return sum(r.success for r in results) / len(results)


def spl(results) -> float:
    """Success weighted by path length, averaged over trials."""
    if not results:
        raise ValueError("no trials to aggregate")
    total = 0.0
    for i, r in enumerate(results):
        if not r.success:
            continue
        if r.shortest_length <= 0:
            raise ValueError(f"trial {i}: shortest_length must be positive, got {r.shortest_length}")
        if r.path_length < r.shortest_length - 1e-9:
            raise ValueError(
                f"trial {i}: executed path {r.path_length:.4f} m is shorter than the "
                f"reference {r.shortest_length:.4f} m; oracle and reference disagree"
            )
        total += r.shortest_length / max(r.path_length, r.shortest_length)
    return total / len(results)


# -- training -------------------------------------------------------------------


def train_bundle(
    arch, specs, n_samples, cfg: feasnet.TrainConfig, seed=0, sigma_noise=oracle.SIGMA_NOISE, sigma=oracle.SIGMA_REWARD
):
    """Label ``n_samples`` patches from ``specs`` with ``arch`` and fit a net."""
    data = oracle.sample_dataset(arch, specs, n_samples, seed=seed, sigma_noise=sigma_noise, sigma=sigma)
    params, history = feasnet.train(feasnet.init_params(seed), data, cfg)
    return PolicyBundle(arch, params), history


# Training terrains. Each family gets a few jittered variants plus flat
# ground so the nets see both the obstacle and its approach.
TRAIN_EXTENT = (4.0, 3.0)
NARROW_EXTENT = (4.0, 1.5)
TRAIN_JITTER = 0.01
# (extent, params) per family. Narrow maps keep every valid cell near the
# lateral center, where the bridge deck and the valley floor are.
_VARIANTS = {
    "Steps": [(TRAIN_EXTENT, {"step_height": h}) for h in (0.06, 0.08, 0.10, 0.12, 0.15)],
    "Gaps": [(TRAIN_EXTENT, {"gap_width": g}) for g in (0.05, 0.10, 0.15)] + [(TRAIN_EXTENT, {"platform": 0.3})],
    "Bridge": [(TRAIN_EXTENT, {"bridge_width": b}) for b in (0.35, 0.5, 0.7)]
    + [(NARROW_EXTENT, {"bridge_width": b}) for b in (0.3, 0.35, 0.45)],
    "Valley": [(TRAIN_EXTENT, {"incline_deg": a}) for a in (30.0, 40.0, 50.0)]
    + [(NARROW_EXTENT, {"incline_deg": a}) for a in (40.0, 50.0, 60.0)],
}
HOME = {"StepsExpert": "Steps", "GapsExpert": "Gaps", "BridgeExpert": "Bridge", "ValleyExpert": "Valley"}


def training_specs(families, seed=0):
    specs = []
    for fam in families:
        for extent, extra in _VARIANTS[fam]:
            params = {"lead": 1.0, "jitter": TRAIN_JITTER, **extra}
            specs.append(terrain.TerrainSpec(fam, extent, params, seed + len(specs) + 1))
    specs.append(terrain.TerrainSpec("Flat", (2.0, 2.0), {"jitter": TRAIN_JITTER}, seed + 999))
    return specs


def specs_for(arch, seed=0):
    """Shared training terrain: every family, labeled by the archetype itself."""
    return training_specs(list(_VARIANTS), seed)


# -- experiments ----------------------------------------------------------------


@dataclass(frozen=True)
class Settings:
    """Knobs shared by both experiments; defaults are the module constants."""

    margin: float = EDGE_MARGIN
    tau_low: float = TAU_LOW
    tau_high: float = TAU_HIGH
    f_min: float = planner.F_MIN
    sigma_noise: float = oracle.SIGMA_NOISE
    sigma_reward: float = oracle.SIGMA_REWARD

    def tensorize(self, emap, bundles):
        return tensorize_all(emap, bundles, tau_low=self.tau_low, tau_high=self.tau_high)

    def train(self, arch, specs, n_samples, cfg, seed):
        return train_bundle(arch, specs, n_samples, cfg, seed, self.sigma_noise, self.sigma_reward)


def adaptation_map():
    return terrain.TerrainSpec("Steps", (4.0, 4.0), {"layout": "barrier"}, 0)


def adaptation_training_specs(seed=0):
    specs = [
        terrain.TerrainSpec("Steps", (4.0, 4.0), {"layout": "barrier", "jitter": TRAIN_JITTER}, seed + i)
        for i in range(1, 4)
    ]
    specs.append(terrain.TerrainSpec("Flat", (2.0, 2.0), {"jitter": TRAIN_JITTER}, seed + 9))
    return specs


def default_endpoints(emap):
    """Fixed start/goal on the lateral center line, just inside the valid region."""
    margin = int(math.ceil(terrain.footprint_radius()))
    y = emap.height // 2
    return (margin + 4, y), (emap.width - 1 - margin - 4, y)


def _log(progress, msg):
    if progress is not None:
        progress(msg)


def _trial_seeds(seed, task, trials):
    return [seed * 1_000_003 + 1000 * task + i for i in range(trials)]


def run_adaptation_experiment(
    skill_levels=(0.4, 0.7, 1.0),
    trials=100,
    n_samples=30000,
    epochs=50,
    seed=0,
    map_spec=None,
    settings: Settings = Settings(),
    train_cfg: feasnet.TrainConfig | None = None,
    progress=None,
):
    """Capability-adaptation trend: one StepsExpert net per skill level.

    Every level plans the same start/goal on a barrier of three step heights;
    less skilled experts have to walk around to lower segments. The SPL
    reference is the shortest path a fully skilled StepsExpert can walk.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    emap = terrain.generate(map_spec or adaptation_map())
    start, goal = default_endpoints(emap)
    ref = shortest_length(emap, [oracle.archetype("StepsExpert", 1.0)], start, goal)
    specs = adaptation_training_specs(seed)
    cfg = train_cfg or feasnet.TrainConfig(epochs=epochs, seed=seed)
    rows, bundles, plans = [], [], []
    for level in skill_levels:
        arch = oracle.archetype("StepsExpert", level)
        t0 = time.perf_counter()
        bundle, _ = settings.train(arch, specs, n_samples, cfg, seed)
        train_s = time.perf_counter() - t0
        (tensor,) = settings.tensorize(emap, [bundle])
        try:
            p = planner.plan(planner.as_field(tensor), start, goal, settings.f_min)
            results = run_trials(p, emap, [arch], _trial_seeds(seed, 0, trials), ref, settings.margin)
            length = p.total_length
        except planner.NoPath:
            p = None
            results = no_path_results(trials, ref)
            length = math.nan
        bundles.append(bundle)
        plans.append(p)
        rows.append(
            {
                "skill": level,
                "path_length": length,
                "success_rate": success_rate(results),
                "spl": spl(results),
                "train_seconds": train_s,
            }
        )
        _log(progress, f"skill {level}: path {length:.3f} m, success {rows[-1]['success_rate']:.3f}")
    return {
        "map": emap,
        "start": start,
        "goal": goal,
        "shortest_length": ref,
        "rows": rows,
        "bundles": bundles,
        "plans": plans,
    }


MIXED_FAMILIES = ("Steps", "Gaps", "Bridge", "Valley")
FAMILY_EXTENT = (6.0, 3.0)
FAMILY_LEAD = 2.0
TASK_COLUMNS = 5
# 0.12 m steps sit well past the General's 0.09 m cap, so it never rivals
# StepsExpert there; at 0.10 m the two are within net error of each other.
STEP_HEIGHT = 0.12


def mixed_maps():
    extra = {"Steps": {"step_height": STEP_HEIGHT}}
    maps = {
        fam: terrain.TerrainSpec(fam, FAMILY_EXTENT, {"lead": FAMILY_LEAD, **extra.get(fam, {})}, 0)
        for fam in MIXED_FAMILIES
    }
    maps["Mixed"] = terrain.TerrainSpec("Mixed", (11.4, 3.0), {"step_height": STEP_HEIGHT}, 0)
    return maps


def train_mixed_bundles(
    n_samples=40000,
    epochs=60,
    seed=0,
    archetypes=None,
    specs=None,
    settings: Settings = Settings(),
    train_cfg: feasnet.TrainConfig | None = None,
    progress=None,
):
    """One net per archetype, all trained on the same terrain set."""
    cfg = train_cfg or feasnet.TrainConfig(epochs=epochs, seed=seed)
    bundles = []
    for arch in archetypes or oracle.default_archetypes():
        bundle, _ = settings.train(arch, specs or specs_for(arch, seed), n_samples, cfg, seed)
        bundles.append(bundle)
        _log(progress, f"trained {arch.name}")
    return bundles


def random_tasks(emap, ref_rho, n, rng, columns=TASK_COLUMNS):
    """Start/goal pairs drawn from the outermost valid columns at either end.

    Any row is allowed; pairs without an oracle-traversable connection are
    redrawn.
    """
    margin = int(math.ceil(terrain.footprint_radius()))
    lo_y, hi_y = margin, emap.height - 1 - margin
    right = emap.width - 1 - margin
    tasks = []
    for _ in range(100 * n):
        if len(tasks) == n:
            break
        s = (int(rng.integers(margin, margin + columns)), int(rng.integers(lo_y, hi_y + 1)))
        g = (int(rng.integers(right - columns + 1, right + 1)), int(rng.integers(lo_y, hi_y + 1)))
        try:
            ell = shortest_length(emap, None, s, g, rho=ref_rho)
        except planner.NoPath:
            continue
        tasks.append((s, g, ell))
    if len(tasks) < n:
        raise RuntimeError(f"found only {len(tasks)} of {n} reachable tasks")
    return tasks


def run_mixed_experiment(
    bundles=None,
    tasks=10,
    trials=50,
    seed=0,
    maps=None,
    n_samples=40000,
    epochs=60,
    settings: Settings = Settings(),
    archetypes=None,
    specs=None,
    train_cfg: feasnet.TrainConfig | None = None,
    progress=None,
):
    """Success rate and SPL of every single policy and of the fused planner.

    Single-family maps draw random start/goal pairs near their two ends; the
    Mixed map uses the same fixed endpoints for every task. Returns
    ``{terrain: {policy: (success_rate, spl)}}`` with one policy column per
    bundle plus ``"Fused"``.
    """
    if tasks < 1 or trials < 1:
        raise ValueError("tasks and trials must be at least 1")
    if bundles is None:
        bundles = train_mixed_bundles(n_samples, epochs, seed, archetypes, specs, settings, train_cfg, progress)
    maps = maps or mixed_maps()
    archs = _archetypes_by_id(bundles)
    names = [b.archetype.name for b in bundles]
    rng = np.random.default_rng(seed)
    table = {}
    for name, spec in maps.items():
        emap = terrain.generate(spec)
        ref_rho = reference_field(emap, archs)
        if spec.family == "Mixed":
            s, g = default_endpoints(emap)
            ell = shortest_length(emap, None, s, g, rho=ref_rho)
            task_list = [(s, g, ell)] * tasks
        else:
            task_list = random_tasks(emap, ref_rho, tasks, rng)
        tensors = settings.tensorize(emap, bundles)
        fields = {n: planner.as_field(t) for n, t in zip(names, tensors)}
        fields["Fused"] = planner.fuse(tensors)
        row = {}
        for policy, fld in fields.items():
            results = []
            for t, (s, g, ell) in enumerate(task_list):
                try:
                    p = planner.plan(fld, s, g, settings.f_min)
                except planner.NoPath:
                    results += no_path_results(trials, ell)
                    continue
                results += run_trials(p, emap, archs, _trial_seeds(seed, t, trials), ell, settings.margin)
            row[policy] = (success_rate(results), spl(results))
        table[name] = row
        _log(progress, f"{name}: " + ", ".join(f"{k} {v[0]:.2f}" for k, v in row.items()))
    return table


# -- reporting ------------------------------------------------------------------


def format_adaptation(result, delimiter="\t") -> str:
    lines = [delimiter.join(["skill", "path_length_m", "success_rate", "spl"])]
    for r in result["rows"]:
        lines.append(
            delimiter.join([f"{r['skill']:g}", f"{r['path_length']:.3f}", f"{100 * r['success_rate']:.2f}", f"{r['spl']:.4f}"])
        )
    return "\n".join(lines) + "\n"


def format_mixed(table, delimiter="\t") -> str:
    policies = list(next(iter(table.values())))
    lines = [delimiter.join(["terrain"] + [f"{p}_success" for p in policies] + [f"{p}_spl" for p in policies])]
    for name, row in table.items():
        cells = [f"{100 * row[p][0]:.2f}" for p in policies] + [f"{row[p][1]:.4f}" for p in policies]
        lines.append(delimiter.join([name] + cells))
    return "\n".join(lines) + "\n"


def content_hash(*chunks: bytes) -> str:
    """Git blob-style sha1 of the concatenated inputs."""
    body = b"".join(chunks)
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def manifest(config: dict, seeds, inputs) -> dict:
    """Machine-readable run record; ``inputs`` are raw bytes that determine the run."""
    return {
        "config": config,
        "seeds": list(seeds),
        "input_hash": content_hash(*inputs),
        "created_by": "feasplan",
    }


def manifest_json(m: dict) -> str:
    return json.dumps(m, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
