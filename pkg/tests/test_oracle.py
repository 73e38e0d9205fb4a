import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feasplan import oracle, terrain
from feasplan.oracle import TaskVector


def step_patch(height, at=3, side=16):
    """Patch with a full-width rise of ``height`` m ``at`` cells ahead of the center."""
    p = np.zeros((side, side))
    p[:, side // 2 + at :] = height
    return p


def gap_patch(width_cells, at=2, side=16, depth=0.5):
    p = np.zeros((side, side))
    p[:, side // 2 + at : side // 2 + at + width_cells] = -depth
    return p


def bridge_patch(width_cells, side=16, depth=0.5):
    p = np.full((side, side), -depth)
    lo = side // 2 - width_cells // 2
    p[lo : lo + width_cells, :] = 0.0
    return p


def slope_patch(deg, side=16):
    v = np.arange(side) - side // 2
    return np.tile((np.abs(v) * 0.05 * math.tan(math.radians(deg)))[:, None], (1, side))


@pytest.mark.parametrize("arch", oracle.default_archetypes(), ids=lambda a: a.name)
def test_flat_scores_one(arch):
    assert oracle.traverse_score(arch, np.zeros((16, 16))) == 1.0


def test_step_examples():
    steps = oracle.archetype("StepsExpert")
    gaps = oracle.archetype("GapsExpert")
    assert oracle.traverse_score(steps, step_patch(0.10)) == 1.0
    assert oracle.traverse_score(gaps, step_patch(0.10)) == 0.0
    assert oracle.traverse_score(steps, step_patch(0.15 * 1.25)) == pytest.approx(0.5, abs=1e-7)


def test_step_down_and_lookahead():
    steps = oracle.archetype("StepsExpert")
    assert oracle.traverse_score(steps, -step_patch(0.15 * 1.25)) == pytest.approx(0.5, abs=1e-7)
    # a rise behind the center is not on the way
    behind = np.zeros((16, 16))
    behind[:, :6] = 0.3
    assert oracle.traverse_score(steps, behind) == 1.0


def test_gap_rule():
    gaps = oracle.archetype("GapsExpert")
    steps = oracle.archetype("StepsExpert")
    assert oracle.traverse_score(gaps, gap_patch(3)) == 1.0  # 0.15 m
    assert oracle.traverse_score(steps, gap_patch(3)) == 0.0
    feats = oracle.patch_features(gap_patch(3))[0]
    assert feats[2] == pytest.approx(0.15)


def test_bridge_rule():
    bridge = oracle.archetype("BridgeExpert")
    steps = oracle.archetype("StepsExpert")
    patch = bridge_patch(7)  # 0.35 m deck
    assert oracle.patch_features(patch)[0, 3] == pytest.approx(0.35)
    assert oracle.traverse_score(bridge, patch) == 1.0
    # (0.6 - 0.35) / 0.6 over the support cap
    assert oracle.traverse_score(steps, patch) == pytest.approx(1 - (0.25 / 0.6) / 0.5, abs=1e-7)
    assert oracle.traverse_score(steps, bridge_patch(6)) == 0.0


def test_slope_rule():
    valley = oracle.archetype("ValleyExpert")
    steps = oracle.archetype("StepsExpert")
    patch = slope_patch(50.0)
    assert math.degrees(oracle.patch_features(patch)[0, 4]) == pytest.approx(50.0)
    assert oracle.traverse_score(valley, patch) == 1.0
    assert oracle.traverse_score(steps, patch) == 0.0


def test_skill_scales_caps():
    steps = oracle.archetype("StepsExpert", 0.5)
    assert oracle.traverse_score(steps, step_patch(0.075)) == 1.0
    assert oracle.traverse_score(steps, step_patch(0.075 * 1.5)) == pytest.approx(0.0, abs=1e-7)
    a = oracle.archetype("BridgeExpert", 0.2)
    assert a.effective_caps()[3] == 0.35


@settings(max_examples=80, deadline=None)
@given(h1=st.floats(0.0, 0.4), h2=st.floats(0.0, 0.4), s1=st.floats(0, 1), s2=st.floats(0, 1))
def test_monotone_in_step_and_skill(h1, h2, s1, s2):
    lo_h, hi_h = sorted((h1, h2))
    lo_s, hi_s = sorted((s1, s2))
    arch = oracle.archetype("StepsExpert", hi_s)
    assert oracle.traverse_score(arch, step_patch(hi_h)) <= oracle.traverse_score(arch, step_patch(lo_h))
    patch = step_patch(h1)
    assert oracle.traverse_score(oracle.archetype("StepsExpert", lo_s), patch) <= oracle.traverse_score(
        oracle.archetype("StepsExpert", hi_s), patch
    )


def test_zero_and_tiny_caps_agree():
    # a negligible step must score the same under a zero cap and a tiny one
    patch = step_patch(8e-153)
    scores = [oracle.traverse_score(oracle.archetype("StepsExpert", s), patch) for s in (0.0, 1e-152, 1e-3, 1.0)]
    assert scores == [1.0] * 4
    assert oracle.traverse_score(oracle.archetype("StepsExpert", 0.0), step_patch(0.01)) == 0.0


@settings(max_examples=40, deadline=None)
@given(w1=st.integers(1, 6), w2=st.integers(1, 6))
def test_monotone_in_gap(w1, w2):
    lo, hi = sorted((w1, w2))
    arch = oracle.archetype("GapsExpert")
    assert oracle.traverse_score(arch, gap_patch(hi)) <= oracle.traverse_score(arch, gap_patch(lo))


# -- reward labels ----------------------------------------------------------------


def test_reward_examples():
    assert oracle.reward_from_score(1.0, (0.5, 0.0, 0.0)) == 1.0
    assert oracle.reward_from_score(0.0, (0.25, 0.0, 0.0)) == pytest.approx(math.exp(-1), abs=1e-12)
    assert oracle.reward_from_score(0.0, (0.5, 0.0, 0.0)) == pytest.approx(math.exp(-2), abs=1e-12)
    arch = oracle.archetype("StepsExpert")
    assert oracle.label_reward(arch, np.zeros((16, 16))) == 1.0
    assert oracle.label_reward(arch, step_patch(0.3), TaskVector(0.25, 0, 0)) == pytest.approx(math.exp(-1))


@settings(max_examples=60, deadline=None)
@given(h=st.floats(0.0, 0.4), seed=st.integers(0, 1000))
def test_label_range(h, seed):
    arch = oracle.archetype("StepsExpert")
    patch = step_patch(h)
    r = oracle.label_reward(arch, patch, rng=np.random.default_rng(seed))
    assert 0.0 < r <= 1.0
    clean = oracle.label_reward(arch, patch)
    assert (clean == 1.0) == (oracle.traverse_score(arch, patch) == 1.0)
    assert clean == oracle.label_reward(arch, patch)


def test_task_clamp():
    with pytest.raises(ValueError):
        TaskVector(1.2, 1.2, 0.0)
    with pytest.raises(ValueError):
        TaskVector(float("nan"), 0.0, 0.0)


# -- datasets ---------------------------------------------------------------------


def test_flat_dataset_labels():
    ds = oracle.sample_dataset(oracle.archetype("General"), [terrain.TerrainSpec("Flat", (2.0, 2.0))], 1000, seed=3)
    assert len(ds) == 1000
    # noise is truncated at 3 sigma, so the floor is exp(-0.06 / 0.25)
    assert ds.labels.min() >= math.exp(-3 * oracle.SIGMA_NOISE / oracle.SIGMA_REWARD) - 1e-12
    assert ds.labels.max() <= 1.0
    assert ds.labels.mean() >= 0.92
    assert np.all(ds.tasks == np.array(oracle.FORWARD_TASK))


def test_dataset_deterministic():
    specs = [terrain.TerrainSpec("Steps", (3.0, 2.0), {"jitter": 0.01}, 1)]
    a = oracle.sample_dataset(oracle.archetype("StepsExpert"), specs, 300, seed=5)
    b = oracle.sample_dataset(oracle.archetype("StepsExpert"), specs, 300, seed=5)
    assert np.array_equal(a.patches, b.patches) and np.array_equal(a.labels, b.labels)
    c = oracle.sample_dataset(oracle.archetype("StepsExpert"), specs, 300, seed=6)
    assert not np.array_equal(a.labels, c.labels)


def test_steps_expert_on_gaps_is_poor():
    ds = oracle.sample_dataset(oracle.archetype("StepsExpert"), [terrain.TerrainSpec("Gaps", (4.0, 2.0))], 1000, seed=0)
    assert ds.labels.mean() < 0.5


def test_dataset_errors():
    arch = oracle.archetype("StepsExpert")
    with pytest.raises(ValueError, match="no map"):
        oracle.sample_dataset(arch, [terrain.TerrainSpec("Flat", (0.5, 0.5))], 10, seed=0)
    with pytest.raises(ValueError):
        oracle.sample_dataset(arch, [terrain.TerrainSpec("Flat", (2.0, 2.0))], 0, seed=0)
    with pytest.raises(ValueError):
        oracle.sample_dataset(arch, [terrain.TerrainSpec("Flat", (2.0, 2.0))], 5, seed=0, headings="random")


def test_grid_headings_only():
    ds = oracle.sample_dataset(oracle.archetype("StepsExpert"), [terrain.TerrainSpec("Flat", (2.0, 2.0))], 50, seed=0)
    assert ds.patches.shape == (50, 16, 16)


# -- archetypes -------------------------------------------------------------------


def test_default_archetypes():
    archs = oracle.default_archetypes()
    assert [a.name for a in archs] == list(oracle.ARCHETYPE_NAMES)
    assert [a.id for a in archs] == list(range(5))
    steps, gaps, bridge, valley, general = archs
    assert steps.max_step_up == 0.15
    assert gaps.max_gap == 0.15
    assert bridge.min_support_width == 0.35
    assert math.degrees(valley.max_lateral_slope) == pytest.approx(50.0)
    assert general.max_step_up == pytest.approx(0.6 * 0.15)
    assert general.max_gap == pytest.approx(0.6 * 0.15)
    assert math.degrees(general.max_lateral_slope) == pytest.approx(30.0)


def test_archetype_loading(tmp_path):
    path = tmp_path / "a.json"
    path.write_text('[{"name": "StepsExpert", "skill_level": 0.5, "max_step_up": 0.2}, {"name": "General", "id": 7}]')
    a, b = oracle.load_archetypes(path)
    assert (a.id, a.skill_level, a.max_step_up, a.max_step_down) == (0, 0.5, 0.2, 0.15)
    assert b.id == 7
    with pytest.raises(ValueError, match="unknown keys"):
        oracle.archetypes_from_list([{"name": "General", "speed": 3}])
    with pytest.raises(ValueError, match="unique"):
        oracle.archetypes_from_list([{"name": "General", "id": 1}, {"name": "StepsExpert", "id": 1}])
    with pytest.raises(ValueError):
        oracle.archetypes_from_list([{"name": "Wizard"}])


def test_archetype_invariants():
    with pytest.raises(ValueError):
        oracle.PolicyArchetype(0, "General", -0.1, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        oracle.archetype("General", 1.5)
