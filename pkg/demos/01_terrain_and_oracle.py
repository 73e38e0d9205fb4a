"""Terrain families and what each archetype makes of them.

Generates one map per family, writes PGM previews, then asks the capability
oracle how well every archetype tracks a forward command at the map center.
"""

from pathlib import Path

import numpy as np

from feasplan import oracle, terrain

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

archs = oracle.default_archetypes()
print("caps (step up/down m, gap m, min support m, slope deg):")
for a in archs:
    print(f"  {a.name:13s} {a.max_step_up:.3f}/{a.max_step_down:.3f} {a.max_gap:.3f} "
          f"{a.min_support_width:.2f} {np.degrees(a.max_lateral_slope):.0f}")

print("\nforward-command score rho at the obstacle, per family:")
print("  " + " " * 8 + "".join(f"{a.name:>14s}" for a in archs))
for fam in ("Flat", "Steps", "Gaps", "Bridge", "Valley"):
    m = terrain.generate(terrain.TerrainSpec(fam, (4.0, 3.0), {"lead": 1.0}, 0))
    terrain.write_pgm(OUT / f"{fam.lower()}.pgm", m.data)
    # walk the center row and keep the worst score: that is the obstacle
    y = m.height // 2
    xs = np.arange(12, m.width - 12)
    patches = terrain.sample_patches(m.data, xs, np.full(len(xs), y), np.zeros(len(xs)))
    worst = [oracle.traverse_scores(a, patches).min() for a in archs]
    print(f"  {fam:8s}" + "".join(f"{v:14.2f}" for v in worst))

# reward labels: rho maps to a velocity-tracking reward in [0, 1]
print("\nreward for rho = 1, 0.5, 0:", oracle.reward_from_score(np.array([1.0, 0.5, 0.0])).round(4))
print(f"previews in {OUT}")
