"""Shared fixtures: small trained nets reused across test modules."""

import numpy as np
import pytest

from feasplan import evaluator, feasnet, oracle, terrain
from feasplan.tensorizer import PolicyBundle

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def steps_flat_specs(seed=0):
    specs = [
        terrain.TerrainSpec("Steps", (4.0, 3.0), {"lead": 1.0, "jitter": 0.01, "step_height": h}, seed + i)
        for i, h in enumerate((0.05, 0.10, 0.15))
    ]
    specs.append(terrain.TerrainSpec("Flat", (2.0, 2.0), {"jitter": 0.01}, seed + 9))
    return specs


def _fit(arch, specs, n, epochs, seed=0, sigma_noise=oracle.SIGMA_NOISE):
    data = oracle.sample_dataset(arch, specs, n, seed=seed, sigma_noise=sigma_noise)
    params, history = feasnet.train(feasnet.init_params(seed), data, feasnet.TrainConfig(epochs=epochs, seed=seed))
    return PolicyBundle(arch, params), history


@pytest.fixture(scope="session")
def flat_net():
    """Net trained on jittered flat ground only, every label exactly 1."""
    specs = [terrain.TerrainSpec("Flat", (2.0, 2.0), {"jitter": 0.01}, s) for s in range(3)]
    bundle, _ = _fit(oracle.archetype("StepsExpert"), specs, 2048, 30, sigma_noise=0.0)
    return bundle.params


@pytest.fixture(scope="session")
def steps_bundle():
    """StepsExpert on Steps + Flat, 5k samples, 50 epochs."""
    return _fit(oracle.archetype("StepsExpert"), steps_flat_specs(), 5000, 50)


@pytest.fixture(scope="session")
def shared_pair():
    """StepsExpert and GapsExpert nets trained on the same Steps + Gaps + Flat terrain."""
    specs = evaluator.training_specs(["Steps", "Gaps"], seed=0)
    out = []
    for name in ("StepsExpert", "GapsExpert"):
        bundle, _ = _fit(oracle.archetype(name), specs, 8000, 30)
        out.append(bundle)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
