"""Lane-keeping planner tests.

Model coefficients are checked against hand-computed values at 76 km/h,
the barrier-free problem against a dynamic-programming oracle, and the
planner against symmetry and closed-loop regulation checks on its own
prediction model.
"""
import dataclasses
import math

import numpy as np
import pytest

from cilqr_drive import SolverConfig, solve
from cilqr_drive.lateral import (
    LateralPlanner,
    LateralState,
    LateralTuning,
    VehicleParams,
    build_lateral_dynamics,
    build_lateral_problem,
    plan_steering,
)

from oracles import lqr_dp_solve

V_76_KMH = 76.0 / 3.6  # 21.111... m/s
DT = 0.05

# frozen hand-computed coefficients at 76 km/h, dt = 0.05
A22_76 = 1.0 - 16000.0 / (1150.0 * V_76_KMH)    # 0.340961...
A23 = 16000.0 / 1150.0                            # 13.913043...
A24_76 = 800.0 / (1150.0 * V_76_KMH)              # 0.032951...
A42_76 = -800.0 / (2000.0 * V_76_KMH)             # -0.018947...
A43 = -800.0 / 2000.0                             # -0.4
A44_76 = 1.0 + 2112.0 / (2000.0 * V_76_KMH)       # 1.050021...
B1 = 8000.0 / 1150.0                              # 6.956521...
B2 = 10160.0 / 2000.0                             # 5.08

TIGHT = SolverConfig(max_outer_iterations=60, cost_tolerance=1e-12,
                     regularization_init=1e-10)


class TestDynamicsCoefficients:
    def test_matrix_entries_at_76_kmh(self):
        dyn = build_lateral_dynamics(VehicleParams(), V_76_KMH, DT)
        A, B = dyn.A, dyn.B
        np.testing.assert_allclose(A[0], [1.0, DT, 0.0, 0.0], atol=0)
        np.testing.assert_allclose(A[2], [0.0, 0.0, 1.0, DT], atol=0)
        assert A[1, 0] == 0.0 and A[3, 0] == 0.0
        assert A[1, 1] == pytest.approx(A22_76, rel=1e-14)
        assert A[1, 1] == pytest.approx(0.34096, abs=1e-5)
        assert A[1, 2] == pytest.approx(A23, rel=1e-14)
        assert A[1, 3] == pytest.approx(A24_76, rel=1e-14)
        assert A[3, 1] == pytest.approx(A42_76, rel=1e-14)
        assert A[3, 2] == pytest.approx(A43, rel=1e-14)
        assert A[3, 3] == pytest.approx(A44_76, rel=1e-14)
        np.testing.assert_allclose(B[:, 0], [0.0, B1, 0.0, B2], rtol=1e-14)
        assert B[1, 0] == pytest.approx(6.9565, abs=1e-4)
        assert B[3, 0] == pytest.approx(5.08, abs=0)

    def test_speed_scaling_only_hits_v_terms(self):
        slow = build_lateral_dynamics(VehicleParams(), 10.0, DT)
        fast = build_lateral_dynamics(VehicleParams(), 30.0, DT)
        # speed-independent entries agree, 1/v entries scale by 1/3
        assert slow.A[1, 2] == fast.A[1, 2]
        assert slow.A[3, 2] == fast.A[3, 2]
        np.testing.assert_allclose(slow.B, fast.B)
        assert (1.0 - slow.A[1, 1]) == pytest.approx(3.0 * (1.0 - fast.A[1, 1]))
        assert slow.A[3, 1] == pytest.approx(3.0 * fast.A[3, 1])

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            build_lateral_dynamics(VehicleParams(), V_76_KMH, 0.0)
        with pytest.raises(ValueError):
            VehicleParams(m=-1.0)
        with pytest.raises(ValueError):
            LateralState(delta_lat=0.0, theta=3.5)
        with pytest.raises(ValueError):
            LateralState(delta_lat=float("nan"), theta=0.0)


class TestProblemShape:
    def test_problem_dimensions_and_weights(self):
        state = LateralState(delta_lat=0.3, theta=0.01)
        tuning = LateralTuning()
        dyn = build_lateral_dynamics(VehicleParams(), V_76_KMH, tuning.dt)
        spec = build_lateral_problem(state, dyn, tuning)
        assert spec.horizon == 30
        assert spec.n == 4 and spec.m == 1
        np.testing.assert_allclose(np.diag(spec.cost.Q), [20.0, 1.0, 20.0, 1.0])
        np.testing.assert_allclose(spec.cost.R, [[1.0]])
        np.testing.assert_allclose(spec.cost.x_ref, np.zeros(4))
        assert len(spec.barriers) == 2
        assert len(spec.terminal_barriers) == 1

    def test_centering_branch_tracks_offset_sign(self):
        tuning = LateralTuning()
        dyn = build_lateral_dynamics(VehicleParams(), V_76_KMH, tuning.dt)
        left = build_lateral_problem(LateralState(0.4, 0.0), dyn, tuning)
        right = build_lateral_problem(LateralState(-0.4, 0.0), dyn, tuning)
        centered = build_lateral_problem(LateralState(0.0, 0.0), dyn, tuning)
        assert left.barriers[1].sign == 1.0
        assert right.barriers[1].sign == -1.0
        assert centered.barriers[1].sign == 1.0  # zero counts as nonnegative


class TestRiccatiEquivalence:
    def test_barrier_free_problem_matches_dp_oracle(self):
        """With barriers stripped the CILQR solution is the exact LQR one."""
        state = LateralState(delta_lat=0.5, theta=-0.02,
                             delta_lat_rate=0.1, theta_rate=0.0)
        tuning = LateralTuning()
        dyn = build_lateral_dynamics(VehicleParams(), V_76_KMH, tuning.dt)
        spec = build_lateral_problem(state, dyn, tuning)
        bare = dataclasses.replace(spec, barriers=[], terminal_barriers=[])
        result = solve(bare, config=TIGHT)
        assert result.info.converged
        _, u_opt = lqr_dp_solve(
            dyn.A, dyn.B, np.zeros(4), np.diag(tuning.q_diag),
            np.array([[tuning.r]]), np.diag(tuning.q_diag),
            np.zeros(4), state.as_vector(), tuning.horizon)
        np.testing.assert_allclose(result.trajectory.controls, u_opt,
                                   atol=1e-6)


class TestPlanSteering:
    def test_normalization_ties_command_to_angle(self):
        cmd, info = plan_steering(LateralState(1.5, 0.0), V_76_KMH)
        assert cmd.steer_cmd == cmd.delta_rad / (math.pi / 6.0)
        assert info.converged

    def test_centered_state_keeps_wheel_nearly_still(self):
        cmd, _ = plan_steering(LateralState(0.0, 0.0), V_76_KMH)
        assert abs(cmd.steer_cmd) < 0.01

    def test_left_offset_steers_right(self):
        cmd, _ = plan_steering(LateralState(0.5, 0.0), V_76_KMH)
        assert cmd.steer_cmd < 0.0
        assert -1.0 < cmd.steer_cmd

    def test_command_strictly_inside_unit_interval(self):
        # even hopeless initial conditions must respect the steering barrier
        for d in (-3.0, -1.0, 0.2, 2.5):
            for th in (-0.3, 0.0, 0.25):
                cmd, info = plan_steering(LateralState(d, th), V_76_KMH)
                assert -1.0 < cmd.steer_cmd < 1.0
                assert abs(cmd.delta_rad) < math.pi / 6.0
                margins = info.solve_info.log_range_margins
                assert margins and min(min(pair) for pair in margins) > 0.0

    def test_mirror_symmetry(self):
        """Negating the state negates the command to solver precision."""
        state = LateralState(0.5, -0.03, delta_lat_rate=-0.2, theta_rate=0.01)
        mirror = LateralState(-0.5, 0.03, delta_lat_rate=0.2, theta_rate=-0.01)
        cmd_a, _ = plan_steering(state, V_76_KMH)
        cmd_b, _ = plan_steering(mirror, V_76_KMH)
        assert cmd_a.steer_cmd == pytest.approx(-cmd_b.steer_cmd, abs=1e-6)

    def test_speed_clamp_is_flagged_and_finite(self):
        cmd, info = plan_steering(LateralState(0.5, 0.0), 0.2)
        assert info.speed_clamped
        assert math.isfinite(cmd.steer_cmd)
        cmd2, info2 = plan_steering(LateralState(0.5, 0.0), V_76_KMH)
        assert not info2.speed_clamped
        assert cmd.steer_cmd != cmd2.steer_cmd


class TestLateralPlanner:
    def test_warm_start_buffer_shifts(self):
        planner = LateralPlanner()
        planner.plan(LateralState(0.5, 0.0), V_76_KMH)
        assert planner._warm is not None
        assert planner._warm.shape == (30, 1)
        planner.reset()
        assert planner._warm is None

    def test_repeat_call_is_deterministic(self):
        a, _ = LateralPlanner().plan(LateralState(0.7, 0.02), V_76_KMH)
        b, _ = LateralPlanner().plan(LateralState(0.7, 0.02), V_76_KMH)
        assert a.steer_cmd == b.steer_cmd

    def test_closed_loop_regulates_half_meter_offset(self):
        """Receding-horizon loop on the prediction model itself.

        From 0.5 m offset at 76 km/h the offset must shrink below 0.05 m
        within 5 s (100 cycles at 20 Hz) without wild excursions.
        """
        planner = LateralPlanner()
        dyn = build_lateral_dynamics(planner.params, V_76_KMH, DT)
        x = np.array([0.5, 0.0, 0.0, 0.0])
        worst = 0.0
        for _ in range(100):
            state = LateralState(x[0], x[2], delta_lat_rate=x[1],
                                 theta_rate=x[3])
            cmd, _ = planner.plan(state, V_76_KMH)
            x = dyn.step(x, np.array([cmd.delta_rad]))
            worst = max(worst, abs(x[0]))
        assert abs(x[0]) < 0.05
        assert worst <= 0.55
