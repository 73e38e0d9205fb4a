"""Train one feasibility net and look at its two heads.

The MLP head predicts the reward label; the VAE head says how familiar a
patch looks. Their product is the tensor the planner consumes.
"""

import time

import numpy as np

from feasplan import evaluator, feasnet, oracle, tensorizer, terrain

arch = oracle.archetype("StepsExpert")
specs = evaluator.training_specs(["Steps"], seed=0)
t0 = time.time()
data = oracle.sample_dataset(arch, specs, 5000, seed=0)
params, history = feasnet.train(feasnet.init_params(0), data, feasnet.TrainConfig(epochs=40))
print(f"trained on {len(data.labels)} samples in {time.time() - t0:.0f} s")
for h in history[::10] + history[-1:]:
    print(f"  epoch {h['epoch']:2d}  feas {h['feas']:.4f}  recon {h['recon']:.3f}  kl {h['kl']:.2f}")

# familiar terrain vs uniform noise
rng = np.random.default_rng(1)
m = terrain.generate(terrain.TerrainSpec("Steps", (4.0, 3.0), {"lead": 1.0, "step_height": 0.1}, 42))
ys, xs = np.nonzero(terrain.valid_mask(m.width, m.height))
pick = rng.choice(len(xs), 200, replace=False)
steps = terrain.sample_patches(m.data, xs[pick], ys[pick], np.zeros(200))
noise = rng.uniform(0, 0.5, size=(200, 16, 16))
for name, p in (("steps", steps), ("noise", noise)):
    err = feasnet.reconstruction_errors(params, p)
    print(f"{name:6s} recon error {err.mean():.3f}  ood weight {tensorizer.ood_weight(err).mean():.2f}")

# the tensor keeps feasibility on steps and suppresses the noise map
t_steps = tensorizer.tensorize(m, params)
t_noise = tensorizer.tensorize(terrain.ElevationMap(rng.uniform(0, 0.5, size=(40, 40))), params)
print(f"mean tensor value: steps map {t_steps.values[t_steps.valid_mask].mean():.2f}, "
      f"noise map {t_noise.values[t_noise.valid_mask].mean():.2f}")
