"""One terrain, three skill levels: weaker policies take longer detours.

A StepsExpert at skill 0.4, 0.7 and 1.0 plans across the barrier map. Lower
skill shrinks the step caps, so only the lower barrier segments stay
passable and the route bends toward them. Reduced trial count and training.
"""

from feasplan import evaluator

out = evaluator.run_adaptation_experiment(trials=20, n_samples=15000, epochs=40, progress=print)
print()
print(evaluator.format_adaptation(out))
print(f"reference shortest path {out['shortest_length']:.2f} m")
