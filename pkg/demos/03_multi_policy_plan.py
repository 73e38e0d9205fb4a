"""Why fusion matters: no single policy crosses the mixed course.

Trains the five default policies on the shared terrain set (reduced sample
count), tensorizes the Mixed map, then plans with each tensor alone and with
the max-fused field.
"""

from pathlib import Path

from feasplan import evaluator, planner, tensorizer, terrain
from feasplan.planner import NoPath

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

bundles = evaluator.train_mixed_bundles(n_samples=20000, epochs=40, progress=print)
m = terrain.generate(evaluator.mixed_maps()["Mixed"])
start, goal = evaluator.default_endpoints(m)
tensors = tensorizer.tensorize_all(m, bundles)
names = {b.policy_id: b.archetype.name for b in bundles}

archs = [b.archetype for b in bundles]
shortest = evaluator.shortest_length(m, archs, start, goal)
seeds = range(20)


def walk(p):
    res = evaluator.run_trials(p, m, archs, seeds, shortest)
    return evaluator.success_rate(res)


# a single tensor may still yield a plan; the oracle then decides whether it holds
for b, t in zip(bundles, tensors):
    try:
        p = planner.plan(planner.as_field(t), start, goal)
        print(f"{b.archetype.name:13s} plan of {p.total_length:.2f} m, success {walk(p):.0%}")
    except NoPath:
        print(f"{b.archetype.name:13s} NoPath")

p, fld = planner.plan_multi(tensors, start, goal)
print(f"fused         plan of {p.total_length:.2f} m, success {walk(p):.0%}, {p.switches()} policy switches")

# on flat buffer strips every policy is near 1 and the argmax flickers,
# so only list the stretches where one policy holds for 0.3 m or more
seg = []
for (x, _), e in zip(p.waypoints, p.edges):
    if not seg or seg[-1][0] != e.policy:
        seg.append([e.policy, x, x])
    seg[-1][2] = x
print("long segments:")
for pid, x0, x1 in seg:
    if (x1 + 1 - x0) * m.resolution >= 0.3:
        print(f"  x {x0 * m.resolution:5.2f}-{(x1 + 1) * m.resolution:5.2f} m  {names[pid]}")

planner.save_plan(p, OUT / "mixed_plan.txt")
terrain.write_pgm(OUT / "mixed_plan.pgm", planner.plan_overlay(m.data, p, list(names)), 0.0, 1.0)
print(f"plan and overlay in {OUT}")
