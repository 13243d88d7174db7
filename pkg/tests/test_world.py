import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paeb.world import (
    ACTOR_SPECS, Actor, EgoVehicle, SimConfig, WorldState, detect_collision, step_world,
    stopping_distance,
)


def _euler_stop_oracle(v: float, a: float, dt: float) -> float:
    # plain float loop, independent of the world types
    x = 0.0
    while v > 0:
        x += v * dt
        v = max(0.0, v - a * dt)
    return x


def _head_on_oracle(v: float, gap: float, ped_speed: float, radius: float, a: float, dt: float):
    x, p, t = 0.0, gap, 0.0
    while v > 0:
        x += v * dt
        v = max(0.0, v - a * dt)
        p -= ped_speed * dt
        t += dt
        if p - radius < x:
            return t, v
    return None


# =============================================================================
# Stepping
# =============================================================================


class TestStepWorld:
    def test_constant_velocity(self):
        s = step_world(WorldState(ego=EgoVehicle(speed=10.0)), 0.1)
        assert s.ego.position == pytest.approx(1.0)
        assert s.ego.speed == 10.0
        assert s.time == pytest.approx(0.1)

    def test_braking_floors_at_zero(self):
        s = step_world(WorldState(ego=EgoVehicle(speed=1.0, braking_active=True)), 0.2)
        assert s.ego.speed == 0.0

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step_world(WorldState(), 0.0)

    def test_actor_moves_along_heading(self):
        actor = Actor.create("P2", 30.0, -5.0, heading=90.0, speed=2.0)
        s = step_world(WorldState(actor=actor), 0.5)
        assert s.actor.x == pytest.approx(30.0)
        assert s.actor.y == pytest.approx(-4.0)
        assert s.actor.gait_phase != actor.gait_phase

    def test_collided_state_is_frozen(self):
        actor = Actor.create("P2", 0.0, 0.0)
        s = WorldState(ego=EgoVehicle(speed=5.0), actor=actor, collided=True)
        assert step_world(s, 0.1) is s

    def test_head_on_runner_collides_at_reduced_speed(self):
        cfg = SimConfig()
        actor = Actor.create("P5", 20.0, 0.0, heading=180.0, speed=4.0)
        s = WorldState(ego=EgoVehicle(speed=16.0, braking_active=True), actor=actor)
        dt = 1e-3
        while not s.collided and s.ego.speed > 0:
            s = step_world(s, dt)
        expected = _head_on_oracle(16.0, 20.0, 4.0, actor.radius, cfg.max_deceleration, dt)
        assert expected is not None and s.collided
        assert s.ego.speed == pytest.approx(expected[1], abs=0.02)
        assert s.ego.speed < 16.0


class TestStoppingDistance:
    @pytest.mark.parametrize("v,expected", [(0.0, 0.0), (19.44, 24.07), (16.0, 16.31)])
    def test_closed_form(self, v, expected):
        assert stopping_distance(v, 7.85) == pytest.approx(expected, abs=0.005)

    def test_below_trigger_distance(self):
        assert stopping_distance(19.44, 7.85) < 19.44 * 4.0

    @pytest.mark.parametrize("a", [0.0, -1.0])
    def test_rejects_bad_deceleration(self, a):
        with pytest.raises(ValueError):
            stopping_distance(10.0, a)

    @pytest.mark.parametrize("v", [5.0, 8.0, 11.0, 14.0, 17.0, 20.0])
    def test_integrator_matches_closed_form(self, v):
        s = WorldState(ego=EgoVehicle(speed=v, braking_active=True))
        while s.ego.speed > 0:
            s = step_world(s, 1e-3)
        assert s.ego.position == pytest.approx(stopping_distance(v, 7.85), rel=0.005)
        assert s.ego.position == pytest.approx(_euler_stop_oracle(v, 7.85, 1e-3), rel=1e-9)


class TestCollision:
    def test_far_apart(self):
        assert not detect_collision(WorldState(actor=Actor.create("P1", 50.0, 5.0)))

    def test_coincident(self):
        assert detect_collision(WorldState(actor=Actor.create("P1", 0.0, 0.0)))

    def test_open_boundary(self):
        ego = EgoVehicle()
        actor = Actor.create("P1", -1.0, ego.width / 2 + ACTOR_SPECS["P1"].base_width / 2)
        assert not detect_collision(WorldState(ego=ego, actor=actor))

    def test_no_actor(self):
        assert not detect_collision(WorldState())


# =============================================================================
# Properties
# =============================================================================


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(v=st.floats(0.0, 25.0), steps=st.integers(1, 60))
    def test_braking_monotone(self, v, steps):
        s = WorldState(ego=EgoVehicle(speed=v, braking_active=True))
        prev = s.ego.speed
        for _ in range(steps):
            s = step_world(s, 0.1)
            assert s.ego.speed <= prev
            assert s.ego.braking_active
            prev = s.ego.speed

    @settings(max_examples=60, deadline=None)
    @given(v=st.floats(5.0, 20.0), d=st.floats(3.0, 60.0), y=st.floats(-3.0, 3.0))
    def test_collided_monotone_and_time_nondecreasing(self, v, d, y):
        s = WorldState(ego=EgoVehicle(speed=v), actor=Actor.create("P2", d, y))
        seen = False
        for _ in range(100):
            t = s.time
            s = step_world(s, 0.1)
            assert s.time >= t
            if seen:
                assert s.collided
            seen = seen or s.collided


class TestSimConfig:
    def test_yaml_round_trip(self, tmp_path):
        import yaml
        p = tmp_path / "sim.yaml"
        p.write_text(yaml.safe_dump({"sim": {"dt": 0.05, "timeout": 12.0, "seed": 3}}))
        cfg = SimConfig.load(p)
        assert (cfg.dt, cfg.timeout, cfg.seed) == (0.05, 12.0, 3)
        assert cfg.max_deceleration == 7.85

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            SimConfig.from_dict({"dtt": 0.1})

    def test_ego_validation(self):
        with pytest.raises(ValueError):
            EgoVehicle(speed=-1.0)
        with pytest.raises(ValueError):
            Actor.create("P1", 0.0, 0.0, speed=5.0)
        assert math.isclose(SimConfig().make_ego(10.0).speed, 10.0)
