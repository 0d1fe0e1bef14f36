import math

import numpy as np
import pytest

from leocov.control import (CondensedQP, ControlParams, make_waypoints, mwmpc_run,
                            solve_constrained_lqr)
from leocov.errors import ParameterError, StallError
from leocov.orbit import RelativeState, circle_residual, cw_discrete, deviation_angle, on_circle_position


def riccati_oracle(q0, q_target, sys, Q, R, N):
    """Finite-horizon LQR on the error e = q - q_target, with the affine drift
    (A - I) q_target carried in an augmented constant state."""
    A, B = sys.A_d, sys.B_d
    Az = np.block([[A, ((A - np.eye(4)) @ q_target)[:, None]], [np.zeros((1, 4)), np.ones((1, 1))]])
    Bz = np.vstack([B, np.zeros((1, 2))])
    Qz = np.zeros((5, 5))
    Qz[:4, :4] = Q
    P = Qz.copy()
    gains = []
    for _ in range(N):
        S = R + Bz.T @ P @ Bz
        K = np.linalg.solve(S, Bz.T @ P @ Az)
        P = Qz + Az.T @ P @ (Az - Bz @ K)
        P = 0.5 * (P + P.T)
        gains.append(K)
    gains.reverse()
    z = np.append(q0 - q_target, 1.0)
    cost = float(z @ P @ z)
    U = []
    for K in gains:
        u = -K @ z
        U.append(u)
        z = Az @ z + Bz @ u
    return cost, np.array(U)


@pytest.fixture(scope="module")
def setup(orbit):
    params = ControlParams()
    sys = cw_discrete(orbit, params.dt)
    return params, sys, CondensedQP.build(sys, params.Q_aug, params.R, params.N)


def far_target(orbit, d=0.03):
    return np.concatenate([on_circle_position(d, orbit.r_s), np.zeros(2)])


class TestSolver:
    @pytest.mark.parametrize("q", [np.zeros(4), np.array([0.0, 0.2, 0.0, 0.0])])
    def test_at_target(self, setup, q):
        # origin and pure along-track offsets are equilibria of the linear model
        params, sys, qp = setup
        sol = solve_constrained_lqr(q, q, sys, params, qp)
        np.testing.assert_allclose(sol.U, 0.0, atol=1e-15)
        assert sol.cost == pytest.approx(0.0, abs=1e-25) and sol.converged

    def test_radial_offset_needs_station_keeping(self, setup, orbit):
        params, sys, qp = setup
        q = far_target(orbit)
        sol = solve_constrained_lqr(q, q, sys, params, qp)
        assert np.abs(sol.U).max() > 0 and sol.converged

    @pytest.mark.parametrize("d", [0.001, 0.03, -0.04])
    def test_matches_riccati_without_bound(self, setup, orbit, d):
        params, sys, _ = setup
        free = ControlParams(u_max=math.inf)
        rng = np.random.default_rng(int(abs(d) * 1e4))
        q0 = np.concatenate([rng.normal(scale=0.01, size=2), rng.normal(scale=1e-3, size=2)])
        qt = far_target(orbit, d)
        sol = solve_constrained_lqr(q0, qt, sys, free)
        cost, U = riccati_oracle(q0, qt, sys, free.Q_aug, free.R, free.N)
        assert sol.cost == pytest.approx(cost, rel=1e-6)
        np.testing.assert_allclose(sol.inputs, U, atol=1e-9 * max(1.0, np.abs(U).max()))

    def test_bound_respected_and_active(self, setup, orbit):
        params, sys, qp = setup
        qt = far_target(orbit, 0.04)
        q0 = np.zeros(4)
        free = solve_constrained_lqr(q0, qt, sys, ControlParams(u_max=math.inf))
        assert np.linalg.norm(free.inputs, axis=1).max() > params.u_max
        sol = solve_constrained_lqr(q0, qt, sys, params, qp)
        norms = np.linalg.norm(sol.inputs, axis=1)
        assert norms.max() <= params.u_max + 1e-12
        assert np.any(norms >= params.u_max * (1 - 1e-9))
        assert sol.converged and sol.residual < 1e-8
        assert sol.cost >= free.cost

    def test_random_problems_converge(self, setup, orbit):
        params, sys, qp = setup
        rng = np.random.default_rng(1)
        for _ in range(20):
            q0 = np.concatenate([on_circle_position(rng.uniform(-0.04, 0.04), orbit.r_s),
                                 rng.normal(scale=2e-3, size=2)])
            qt = far_target(orbit, rng.uniform(-0.04, 0.04))
            sol = solve_constrained_lqr(q0, qt, sys, params, qp)
            assert sol.residual < 1e-8
            assert np.linalg.norm(sol.inputs, axis=1).max() <= params.u_max + 1e-12

    def test_prediction_matches_propagation(self, setup, orbit):
        # the open-loop plan replayed through the dynamics lands on the predicted states
        params, sys, qp = setup
        q0 = np.zeros(4)
        sol = solve_constrained_lqr(q0, far_target(orbit, 0.02), sys, params, qp)
        s = RelativeState.from_q(q0)
        for u in sol.inputs:
            s = RelativeState.from_q(sys.A_d @ s.q + sys.B_d @ u)
        np.testing.assert_allclose(s.q, sol.states[-1], atol=1e-8)
        assert sol.states.shape == (params.N + 1, 4)


class TestParams:
    @pytest.mark.parametrize("kw", [
        {"Q_aug": np.diag([1.0, 1.0, 1.0, 0.0])}, {"R": -np.eye(2)}, {"Q_aug": np.eye(3)},
        {"dt": 0.0}, {"N": 0}, {"W": 0}, {"u_max": 0.0}, {"arrive_eps": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            ControlParams(**kw)

    def test_horizon_length(self):
        assert ControlParams().T_f == pytest.approx(18.0)


class TestWaypoints:
    def test_single(self, orbit):
        pt = on_circle_position(0.02, orbit.r_s)
        plan = make_waypoints(np.zeros(2), pt, 1, orbit)
        assert len(plan) == 1 and plan.points[0] is not pt
        np.testing.assert_array_equal(plan.points[0], pt)

    def test_midpoint(self, orbit):
        a = on_circle_position(-0.01, orbit.r_s)
        b = on_circle_position(0.03, orbit.r_s)
        plan = make_waypoints(a, b, 2, orbit)
        assert deviation_angle(plan.points[0], orbit.r_s) == pytest.approx(0.01, abs=1e-14)
        np.testing.assert_array_equal(plan.points[-1], b)

    def test_on_circle(self, orbit):
        plan = make_waypoints(np.zeros(2), on_circle_position(-0.04, orbit.r_s), 7, orbit)
        assert all(circle_residual(p, orbit.r_s) < 1e-10 for p in plan.points)
        d = [deviation_angle(p, orbit.r_s) for p in plan.points]
        np.testing.assert_allclose(np.diff(d), -0.04 / 7, atol=1e-14)

    def test_invalid(self, orbit):
        with pytest.raises(ParameterError):
            make_waypoints(np.zeros(2), np.zeros(2), 0, orbit)


class TestMwmpc:
    def test_reaches_target(self, setup, orbit):
        params, sys, _ = setup
        pt = on_circle_position(0.03, orbit.r_s)
        plan = make_waypoints(np.zeros(2), pt, params.W, orbit)
        res = mwmpc_run(RelativeState(np.zeros(2), np.zeros(2)), plan, sys, params)
        assert res.status == "arrived" and res.waypoint_index == params.W
        assert np.linalg.norm(res.states[-1] - np.concatenate([pt, np.zeros(2)])) < params.arrive_eps
        assert max(np.linalg.norm(u) for u in res.inputs) <= params.u_max + 1e-12
        assert res.control_cost == pytest.approx(sum(float(u @ u) for u in res.inputs) * params.dt)
        assert res.time == pytest.approx(len(res.inputs) * params.dt)

    def test_start_at_target(self, setup, orbit):
        params, sys, _ = setup
        pt = on_circle_position(0.01, orbit.r_s)
        res = mwmpc_run(RelativeState(pt, np.zeros(2)), make_waypoints(pt, pt, 1, orbit), sys, params)
        assert res.status == "arrived" and res.control_cost == 0.0 and res.inputs == []

    def test_attack_stops_at_next_waypoint(self, setup, orbit):
        params, sys, _ = setup
        plan = make_waypoints(np.zeros(2), on_circle_position(0.03, orbit.r_s), 3, orbit)
        t_attack = 5.0
        res = mwmpc_run(RelativeState(np.zeros(2), np.zeros(2)), plan, sys, params,
                        event_probe=lambda t: t >= t_attack)
        assert res.status == "attacked"
        assert res.waypoint_index < 3
        reached = plan.points[res.waypoint_index - 1]
        assert np.linalg.norm(res.states[-1] - np.concatenate([reached, np.zeros(2)])) < params.arrive_eps
        assert res.time >= t_attack

    def test_stall(self, setup, orbit):
        params, sys, _ = setup
        tight = ControlParams(max_steps_per_waypoint=3)
        plan = make_waypoints(np.zeros(2), on_circle_position(0.03, orbit.r_s), 1, orbit)
        with pytest.raises(StallError) as exc:
            mwmpc_run(RelativeState(np.zeros(2), np.zeros(2)), plan, sys, tight)
        assert len(exc.value.trajectory) == 4

    def test_monotone_approach(self, setup, orbit):
        params, sys, _ = setup
        pt = on_circle_position(-0.035, orbit.r_s)
        plan = make_waypoints(np.zeros(2), pt, 1, orbit)
        res = mwmpc_run(RelativeState(np.zeros(2), np.zeros(2)), plan, sys, params)
        target = np.concatenate([pt, np.zeros(2)])
        d = np.array([np.linalg.norm(q - target) for q in res.states])
        assert np.all(d[5:] <= d[:-5] + 1e-12)
