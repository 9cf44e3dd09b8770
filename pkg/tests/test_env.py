import numpy as np
import pytest

from cnfp.env import NavigationEnv, ProtocolError, violation_counts
from cnfp.flows import FlowChain
from cnfp.regions import BatteryRule, WorldLayout, battery_region, in_free_space, obstacle_region


def _place(env, position, goal, battery=100.0):
    env.reset(seed=0)
    env.position = np.array(position, dtype=float)
    env.goal = np.array(goal, dtype=float)
    env.battery = battery


def test_same_seed_same_observation():
    a = NavigationEnv(seed=7).reset()
    b = NavigationEnv(seed=7).reset()
    np.testing.assert_array_equal(a, b)


def test_resets_land_in_free_space_with_full_battery():
    env = NavigationEnv(seed=1)
    layout = env.layout
    for _ in range(10_000):
        o = env.reset()
        assert o[2] == 100.0
        assert in_free_space(o[:2], layout) and in_free_space(o[3:], layout)


def test_reward_is_negative_distance():
    env = NavigationEnv()
    _place(env, (-4.0, -4.0), (-1.0, 0.0))
    env.position = np.array([-4.0, -4.0])
    res = env.step(np.zeros(2))
    assert res.reward == pytest.approx(-5.0)
    assert not res.goal_reached


def test_battery_drains_by_one_away_from_stations():
    env = NavigationEnv()
    _place(env, (3.0, 3.0), (-3.0, -3.0), battery=57.0)
    res = env.step(np.array([0.2, 0.0]))
    assert res.observation[2] == 56.0


def test_station_visit_recharges():
    env = NavigationEnv()
    _place(env, (4.0, 0.0), (-3.0, -3.0), battery=30.0)
    res = env.step(np.array([0.8, 0.0]))
    assert res.observation[2] == 100.0


def test_action_into_obstacle_is_flagged_and_clipped():
    env = NavigationEnv()
    _place(env, (-1.5, 0.0), (3.0, 3.0))
    res = env.step(np.array([1.0, 0.0]))
    assert res.violation_obstacle
    assert res.observation[0] == pytest.approx(-1.0 - env.layout.margin)


def test_goal_bonus_and_resample():
    env = NavigationEnv(seed=3)
    _place(env, (3.0, 3.0), (3.5, 3.0))
    res = env.step(np.array([0.4, 0.0]))
    assert res.goal_reached
    assert res.reward == pytest.approx(10.0 - 0.1)
    assert not np.allclose(res.observation[3:], [3.5, 3.0])


def test_truncation_and_protocol_errors():
    env = NavigationEnv(max_steps=3)
    with pytest.raises(ProtocolError):
        env.step(np.zeros(2))
    env.reset(seed=0)
    flags = [env.step(np.zeros(2)).truncated for _ in range(3)]
    assert flags == [False, False, True]
    with pytest.raises(ProtocolError):
        env.step(np.zeros(2))
    env.reset()
    with pytest.raises(ValueError):
        env.step(np.array([np.nan, 0.0]))


def test_straight_to_goal_controller_hits_the_obstacle():
    env = NavigationEnv()
    _place(env, (-3.0, 0.0), (3.0, 0.0))
    results = []
    for _ in range(20):
        o = env.observation()
        d = o[3:] - o[:2]
        results.append(env.step(d / max(1.0, np.linalg.norm(d))))
    obstacle, _ = violation_counts(results)
    assert obstacle >= 1
    assert violation_counts([]) == (0, 0)
    assert tuple(env.episode_violations) == violation_counts(results)


def test_random_cnfp_actions_never_violate():
    layout, rule = WorldLayout(), BatteryRule()
    rng = np.random.default_rng(0)
    env = NavigationEnv(layout, rule, seed=0)
    for _ in range(20):
        o = env.reset()
        while True:
            chain = FlowChain([battery_region(o, layout, rule), obstacle_region(o, layout)])
            y, _ = chain.forward(rng.normal(scale=2.0, size=2))
            res = env.step(y)
            o = res.observation
            if res.truncated:
                break
        assert env.episode_violations == [0, 0]
