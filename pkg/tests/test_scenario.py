from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refgame.errors import GenerationError
from refgame.scenario import (
    Entity,
    ScenarioConfig,
    View,
    generate_scenario,
    generate_scenarios,
    load_scenarios,
    normalize_entity,
    pair_features,
    save_scenarios,
    scenario_from_dict,
    scenario_to_dict,
)

CFG = ScenarioConfig()


def test_generate_counts_and_intersection():
    rng = np.random.default_rng(42)
    s = generate_scenario(CFG, 4, rng)
    assert len(s.view_a.visible) == 7
    assert len(s.view_b.visible) == 7
    assert len(s.shared_ids) == 4
    assert s.num_shared == 4


def test_generate_rejects_bad_num_shared():
    with pytest.raises(ValueError):
        generate_scenario(CFG, 3, np.random.default_rng(0))


def test_generate_deterministic_given_seed():
    a = generate_scenario(CFG, 6, np.random.default_rng(123))
    b = generate_scenario(CFG, 6, np.random.default_rng(123))
    assert a == b
    assert json.dumps(scenario_to_dict(a)) == json.dumps(scenario_to_dict(b))


def test_generation_failure_when_budget_exhausted():
    tight = ScenarioConfig(max_attempts=1, min_separation=1.5)
    with pytest.raises(GenerationError):
        generate_scenario(tight, 4, np.random.default_rng(0))


def test_min_separation_over_1000_samples():
    scenarios = generate_scenarios(CFG, {5: 1000}, seed=5)
    worst = math.inf
    for s in scenarios:
        pts = [(e.x, e.y) for e in s.entities]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                worst = min(worst, math.dist(pts[i], pts[j]))
    assert worst >= CFG.min_separation


def test_entities_inside_views_and_privates_outside():
    for seed in range(20):
        s = generate_scenario(CFG, 5, np.random.default_rng(seed))
        for view in (s.view_a, s.view_b):
            other = s.view_b if view.agent == "A" else s.view_a
            for eid in view.visible:
                e = s.entity(eid)
                assert math.dist((e.x, e.y), view.center) + e.size <= view.radius + 1e-12
                if eid not in other.visible:
                    assert math.dist((e.x, e.y), other.center) - e.size >= other.radius - 1e-12


def test_view_order_canonical():
    s = generate_scenario(CFG, 5, np.random.default_rng(9))
    for view in (s.view_a, s.view_b):
        keys = [(s.entity(i).y, s.entity(i).x) for i in view.visible]
        assert keys == sorted(keys)


def test_normalize_center_is_origin():
    view = View(agent="A", center=(0.3, -0.2), radius=0.8, visible=(1,))
    e = Entity(id=1, x=0.3, y=-0.2, size=0.04, color=128.0)
    out = normalize_entity(e, view)
    assert out[0] == pytest.approx(0.0)
    assert out[1] == pytest.approx(0.0)


def test_normalize_color_endpoints():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(1, 2))
    dark = Entity(id=1, x=0, y=0, size=0.04, color=0.0)
    bright = Entity(id=2, x=0, y=0, size=0.04, color=256.0)
    assert normalize_entity(dark, view)[3] == pytest.approx(-1.0)
    assert normalize_entity(bright, view)[3] == pytest.approx(1.0)


def test_normalize_radius_scaling():
    view = View(agent="A", center=(0.1, 0.2), radius=0.5, visible=(1,))
    e = Entity(id=1, x=0.1 + 0.25, y=0.2, size=0.04, color=10.0)
    out = normalize_entity(e, view)
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(0.0)


def test_normalize_requires_visibility():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(2,))
    with pytest.raises(ValueError):
        normalize_entity(Entity(id=1, x=0, y=0, size=0.04, color=1.0), view)


@given(
    x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5),
    size=st.floats(0.02, 0.06), color=st.floats(0, 255.99),
)
@settings(max_examples=50, deadline=None)
def test_normalize_is_invertible_affine(x, y, size, color):
    view = View(agent="A", center=(0.1, -0.1), radius=0.9, visible=(7,))
    e = Entity(id=7, x=x, y=y, size=size, color=color)
    nx, ny, ns, nc = normalize_entity(e, view)
    assert abs(nx * view.radius + view.center[0] - x) < 1e-12
    assert abs(ny * view.radius + view.center[1] - y) < 1e-12
    assert abs((ns + 1) / 2 * (CFG.size_max - CFG.size_min) + CFG.size_min - size) < 1e-12
    assert abs((nc + 1) / 2 * 256.0 - color) < 1e-9


def test_pair_features_identical_attributes():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(1, 2))
    a = Entity(id=1, x=0.2, y=0.3, size=0.04, color=100.0)
    b = Entity(id=2, x=0.2, y=0.3, size=0.04, color=100.0)
    assert np.allclose(pair_features(a, b, view), np.zeros(5))


def test_pair_features_345_triangle():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(1, 2))
    a = Entity(id=1, x=0.0, y=0.0, size=0.04, color=100.0)
    b = Entity(id=2, x=0.3, y=0.4, size=0.04, color=100.0)
    assert pair_features(a, b, view)[2] == pytest.approx(0.5)


def test_pair_features_antisymmetric_except_distance():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(1, 2))
    a = Entity(id=1, x=0.1, y=-0.2, size=0.03, color=40.0)
    b = Entity(id=2, x=-0.4, y=0.5, size=0.055, color=200.0)
    ab = pair_features(a, b, view)
    ba = pair_features(b, a, view)
    assert np.allclose(ab[[0, 1, 3, 4]], -ba[[0, 1, 3, 4]])
    assert ab[2] == pytest.approx(ba[2])


def test_pair_features_same_entity_error():
    view = View(agent="A", center=(0.0, 0.0), radius=1.0, visible=(1,))
    e = Entity(id=1, x=0, y=0, size=0.04, color=1.0)
    with pytest.raises(ValueError):
        pair_features(e, e, view)


def test_scenario_json_roundtrip(tmp_path):
    scenarios = generate_scenarios(CFG, {4: 2, 5: 2, 6: 2}, seed=3)
    path = tmp_path / "scenarios.json"
    save_scenarios(scenarios, path)
    assert load_scenarios(path) == scenarios


def test_scenario_dict_field_names():
    s = generate_scenario(CFG, 4, np.random.default_rng(1))
    d = scenario_to_dict(s)
    assert set(d) == {"id", "entities", "views", "num_shared"}
    assert set(d["entities"][0]) == {"id", "x", "y", "size", "color"}
    assert set(d["views"]) == {"A", "B"}
    assert set(d["views"]["A"]) == {"center", "radius", "visible"}
    assert scenario_from_dict(d) == s
