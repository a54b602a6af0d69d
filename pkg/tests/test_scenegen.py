import logging

import numpy as np
import pytest
from PIL import Image

from nightforge.errors import ConfigError
from nightforge.scenegen import (Direction, Headlight, MockSimulator, Scenario, ScenegenConfig,
                                 SimulatorError, TimeOfDay, View, Weather, capture,
                                 connect_with_retry, frames_per_scenario, read_sidecar, run_plan,
                                 scenario_matrix)


def _connected(**kw):
    sim = MockSimulator(**kw)
    sim.connect("localhost", 2000)
    return sim


def test_matrix_counts_and_order():
    cfg = ScenegenConfig(views=(View.SIDE, View.CENTER))
    m = scenario_matrix(cfg)
    assert len(m) == 8
    assert [s.scenario_id for s in m] == [s.scenario_id for s in scenario_matrix(cfg)]
    single = ScenegenConfig(views=(View.TOP,), directions=(Direction.DEPARTING,),
                            vehicle_counts=(1,))
    assert len(scenario_matrix(single)) == 1


def test_default_matrix():
    m = scenario_matrix(ScenegenConfig())
    assert len(m) == 12
    assert any(s.view is View.SIDE and s.direction is Direction.DEPARTING and s.vehicle_count == 1
               for s in m)
    assert {s.view for s in m} == {View.SIDE, View.CENTER, View.TOP}
    assert all(s.weather is Weather.CLEAR and s.time_of_day is TimeOfDay.NIGHT for s in m)


def test_empty_axis_is_config_error():
    with pytest.raises(ConfigError) as exc:
        scenario_matrix(ScenegenConfig(directions=()))
    assert exc.value.key == "directions"


def test_frames_per_scenario():
    assert frames_per_scenario(413, 12) == 35
    assert frames_per_scenario(413, 8) == 52
    assert frames_per_scenario(413, 1) == 413


def test_from_dict_and_env_override():
    cfg = ScenegenConfig.from_dict({"views": ["side"], "vehicle_counts": [2], "bogus": 1})
    assert cfg.views == (View.SIDE,) and cfg.vehicle_counts == (2,)
    env = cfg.with_env({"NIGHTFORGE_SIM_HOST": "sim.local", "NIGHTFORGE_SIM_PORT": "3000"})
    assert (env.host, env.port) == ("sim.local", 3000)


def test_capture_count_and_sidecar(tmp_path):
    sc = Scenario(View.SIDE, Direction.APPROACHING, 1)
    cfg = ScenegenConfig(width=32, height=24)
    recs = capture(_connected(), sc, 50, tmp_path, cfg)
    assert len(recs) == 50
    side = read_sidecar(tmp_path)
    pngs = sorted(p.name for p in tmp_path.glob("*.png"))
    assert sorted(r["image"] for r in side) == pngs and len(pngs) == 50
    assert all(r["scenario"]["weather"] == "CLEAR" and r["scenario"]["time_of_day"] == "NIGHT"
               for r in side)
    with Image.open(recs[0].image) as im:
        assert im.size == (32, 24)


def test_capture_is_dark_and_lit(tmp_path):
    sc = Scenario(View.CENTER, Direction.APPROACHING, 3, Headlight.HIGH_BEAM)
    [rec] = capture(_connected(), sc, 1, tmp_path, ScenegenConfig(width=64, height=64))
    arr = np.asarray(Image.open(rec.image), dtype=float)
    assert arr.mean() < 60 and arr.max() >= 200


def test_capture_reproducible(tmp_path):
    sc = Scenario(View.TOP, Direction.DEPARTING, 3)
    cfg = ScenegenConfig(width=24, height=24)
    a = capture(_connected(), sc, 3, tmp_path / "a", cfg)
    b = capture(_connected(), sc, 3, tmp_path / "b", cfg)
    for ra, rb in zip(a, b):
        assert ra.image.read_bytes() == rb.image.read_bytes()


def test_spawn_refusal_resamples(tmp_path, caplog):
    sim = _connected(refuse_next=1)
    sc = Scenario(View.SIDE, Direction.DEPARTING, 1)
    with caplog.at_level(logging.WARNING):
        recs = capture(sim, sc, 2, tmp_path, ScenegenConfig(width=16, height=16))
    assert len(recs) == 2
    assert "re-sampling" in caplog.text
    attempts = [e[1] for e in sim.log if e[0] == "spawn"]
    assert len(attempts) == 2 and attempts[0] != attempts[1]
    assert [v["point"] for v in sim.vehicles] == attempts[1:]


def test_refused_points_are_avoided(tmp_path):
    sim = _connected(refuse_spawns=range(7), n_spawn_points=8)
    capture(sim, Scenario(View.SIDE, Direction.DEPARTING, 1), 1, tmp_path,
            ScenegenConfig(width=16, height=16, max_spawn_retries=10))
    assert [v["point"] for v in sim.vehicles] == [7]


def test_spawn_gives_up(tmp_path):
    sim = _connected(refuse_spawns=range(8))
    with pytest.raises(SimulatorError):
        capture(sim, Scenario(View.SIDE, Direction.DEPARTING, 1), 1, tmp_path,
                ScenegenConfig(width=16, height=16, max_spawn_retries=3))


def test_connect_retry_with_backoff():
    sleeps = []
    sim = MockSimulator(fail_connects=2)
    connect_with_retry(sim, "h", 1, retries=3, backoff=0.5, sleep=sleeps.append)
    assert sim.connected and sleeps == [0.5, 1.0]
    with pytest.raises(SimulatorError):
        connect_with_retry(MockSimulator(fail_connects=5), "h", 1, retries=2, sleep=lambda s: None)


def test_run_plan_hits_target(tmp_path):
    cfg = ScenegenConfig(width=16, height=16, target_images=25, ticks_per_frame=1)
    summary = run_plan(MockSimulator(), cfg, tmp_path, sleep=lambda s: None)
    assert summary.frames_per_scenario == 3
    assert len(summary.records) == 36 >= 25
    assert len(read_sidecar(tmp_path)) == len(list(tmp_path.glob("*.png"))) == 36


def test_scenario_scope_lock():
    with pytest.raises(ValueError):
        Scenario(View.SIDE, Direction.APPROACHING, 1, weather="RAIN")
    with pytest.raises(ValueError):
        Scenario(View.SIDE, Direction.APPROACHING, 1, time_of_day="DAY")
    with pytest.raises(ValueError):
        Scenario(View.SIDE, Direction.APPROACHING, 0)
