import json

import numpy as np
import pytest

from hetnetopt.model import (InstanceError, ScenarioConfig,
                             Topology, UtilityConfig, export_gains_csv,
                             generate_topology, load_instance, save_instance,
                             uniform_weights)


def test_minimal_instance():
    cfg = ScenarioConfig(rng_seed=7, num_sectors=1, picos_per_sector=0,
                         users_per_sector=1)
    topo, gains = generate_topology(cfg)
    assert topo.num_tps == 1 and topo.num_users == 1
    assert gains.slow_gain[0][0] > 0


def test_default_scale_matches_evaluation():
    topo, gains = generate_topology(ScenarioConfig())
    assert topo.num_tps == 33
    assert topo.num_users == 99
    assert gains.slow_gain.shape == (99, 33)
    assert topo.tp_kind.count("macro") == 3


def test_generation_bit_reproducible():
    a = generate_topology(ScenarioConfig(rng_seed=123))[1]
    b = generate_topology(ScenarioConfig(rng_seed=123))[1]
    assert np.array_equal(a.slow_gain, b.slow_gain)
    c = generate_topology(ScenarioConfig(rng_seed=124))[1]
    assert not np.array_equal(a.slow_gain, c.slow_gain)


def test_every_user_connected():
    _, gains = generate_topology(ScenarioConfig(rng_seed=5))
    assert np.all(gains.slow_gain.max(axis=1) > 0)


def test_rejects_zero_users_or_tps():
    with pytest.raises(InstanceError):
        generate_topology(ScenarioConfig(users_per_sector=0))
    with pytest.raises(InstanceError):
        Topology(num_users=0, num_tps=1)
    with pytest.raises(InstanceError):
        Topology(num_users=1, num_tps=0)


def test_weight_simplex_invariant():
    w = uniform_weights(7)
    assert abs(w.sum() - 1.0) <= 1e-12
    UtilityConfig(alpha=1.0, weights=w)
    with pytest.raises(InstanceError):
        UtilityConfig(alpha=1.0, weights=np.array([0.5, 0.4]))
    with pytest.raises(InstanceError):
        UtilityConfig(alpha=0.0, weights=np.array([1.0]))


def test_instance_roundtrip(tmp_path):
    cfg = ScenarioConfig(rng_seed=2, num_sectors=1, picos_per_sector=2,
                         users_per_sector=4)
    topo, gains = generate_topology(cfg)
    util = UtilityConfig(alpha=0.5, weights=uniform_weights(4))
    path = tmp_path / "inst.json"
    save_instance(path, gains, util, topo)
    topo2, gains2, util2 = load_instance(path)
    assert topo2.num_users == 4 and topo2.num_tps == 3
    assert np.array_equal(gains2.slow_gain, gains.slow_gain)
    assert np.array_equal(util2.weights, util.weights)
    assert util2.alpha == util.alpha


def test_load_rejects_negative_gain(tmp_path):
    doc = {"K": 2, "B": 2, "tp_kind": ["macro", "pico"],
           "slow_gain": [[1.0, 2.0], [3.0, -0.5]],
           "weights": [0.5, 0.5], "alpha": 1.0}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(InstanceError, match=r"slow_gain\[1\]\[1\]"):
        load_instance(path)


def test_load_rejects_bad_weight_sum(tmp_path):
    doc = {"K": 2, "B": 1, "tp_kind": ["macro"],
           "slow_gain": [[1.0], [2.0]],
           "weights": [0.5, 0.4], "alpha": 1.0}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(InstanceError, match="sum to 1"):
        load_instance(path)


def test_load_rejects_missing_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"K": 1, "B": 1}))
    with pytest.raises(InstanceError, match="missing field"):
        load_instance(path)


def test_gains_csv_export(tmp_path):
    _, gains = generate_topology(ScenarioConfig(rng_seed=1, num_sectors=1,
                                                picos_per_sector=1,
                                                users_per_sector=2))
    path = tmp_path / "gains.csv"
    export_gains_csv(path, gains)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "user,tp0,tp1"
    assert len(lines) == 3
    assert float(lines[1].split(",")[1]) == gains.slow_gain[0][0]
