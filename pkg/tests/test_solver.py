import numpy as np
import pytest

import diffinc as d

from _battery import bang_bang, constant_one, decay, relay, sliding_2d


def _constant(v, lo=-10.0, hi=10.0):
    return d.ConstantSetMap(
        value=d.ConvexSet(np.array([[float(v)]])), domain=d.Box(lo=(lo,), hi=(hi,))
    )


class TestStepPlan:
    def test_h_is_c_over_k(self):
        plan = d.StepPlan(k=4, c=2.0)
        assert plan.h == 0.5

    def test_from_safety_sets_c(self):
        plan = d.StepPlan.from_safety(r=1.0, m=1.25, k=10)
        assert plan.c == 0.8 and plan.r == 1.0 and plan.m == 1.25

    def test_rejects_c_above_safety_ratio(self):
        with pytest.raises(ValueError):
            d.StepPlan(k=10, c=1.0, r=1.0, m=2.0)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            d.StepPlan(k=0, c=1.0)
        with pytest.raises(ValueError):
            d.StepPlan(k=True, c=1.0)

    def test_rejects_nonpositive_c(self):
        with pytest.raises(ValueError):
            d.StepPlan(k=10, c=0.0)


class TestTrajectoryValidation:
    def test_consistency_violation_raises(self):
        with pytest.raises(ValueError):
            d.Trajectory(
                times=np.array([0.0, 1.0]),
                states=np.array([[0.0], [0.7]]),
                velocities=np.array([[1.0]]),
                delta=0.1, h=1.0, m=0.0, k=1,
            )

    def test_decreasing_times_raise(self):
        with pytest.raises(ValueError):
            d.Trajectory(
                times=np.array([0.0, 0.0]),
                states=np.array([[0.0], [0.0]]),
                velocities=np.array([[0.0]]),
                delta=0.0, h=1.0, m=0.0, k=1,
            )

    def test_interval_larger_than_step_raises(self):
        with pytest.raises(ValueError):
            d.Trajectory(
                times=np.array([0.0, 2.0]),
                states=np.array([[0.0], [2.0]]),
                velocities=np.array([[1.0]]),
                delta=0.0, h=1.0, m=0.0, k=1,
            )

    def test_one_dim_states_are_promoted(self):
        tr = d.Trajectory(
            times=np.array([0.0, 1.0]),
            states=np.array([0.0, 1.0]),
            velocities=np.array([1.0]),
            delta=0.0, h=1.0, m=0.0, k=1,
        )
        assert tr.states.shape == (2, 1) and tr.dim == 1

    def test_arrays_frozen(self):
        tr = d.Trajectory(
            times=np.array([0.0, 1.0]),
            states=np.array([[0.0], [1.0]]),
            velocities=np.array([[1.0]]),
            delta=0.0, h=1.0, m=0.0, k=1,
        )
        with pytest.raises(ValueError):
            tr.states[0, 0] = 5.0

    def test_at_interpolates_and_hits_breakpoints(self):
        tr = d.Trajectory(
            times=np.array([0.0, 1.0, 2.0]),
            states=np.array([[0.0], [1.0], [1.5]]),
            velocities=np.array([[1.0], [0.5]]),
            delta=0.0, h=1.0, m=0.0, k=2,
        )
        assert tr.at(1.0)[0] == 1.0          # exact row, no interpolation
        assert tr.at(0.5)[0] == 0.5
        assert tr.at(1.5)[0] == 1.25
        with pytest.raises(ValueError):
            tr.at(2.5)


class TestEulerConstruction:
    def test_constant_field_is_exact_to_the_bit(self):
        F = _constant(1.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), d.StepPlan(k=100, c=1.0), d.Centroid())
        assert np.array_equal(tr.states[:, 0], tr.times)
        assert tr.exit is None and tr.k == 100

    def test_times_are_t0_plus_ih(self):
        F = _constant(0.0)
        plan = d.StepPlan(k=8, c=1.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), plan, d.Centroid(), t0=0.25)
        assert np.array_equal(tr.times, 0.25 + plan.h * np.arange(9))

    def test_delta_certificate_is_h_times_one_plus_m(self):
        F = _constant(1.0)
        plan = d.StepPlan(k=10, c=1.0, m=2.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), plan, d.Centroid())
        assert tr.delta == plan.h * 3.0 and tr.m == 2.0

    def test_m_estimated_when_absent(self):
        F = _constant(1.0, lo=-2.0, hi=2.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), d.StepPlan(k=10, c=0.5), d.Centroid())
        assert tr.m == 1.25  # safety factor times the sampled bound of 1

    def test_x0_outside_domain_rejected(self):
        with pytest.raises(ValueError):
            d.euler_delta_solution(
                _constant(1.0, lo=-1.0, hi=1.0), np.array([2.0]),
                d.StepPlan(k=10, c=1.0), d.Centroid(),
            )

    def test_dyadic_time_shift_is_bitwise_invariant(self):
        # h = 0.5/512 is a power of two: shifting t0 must not change states
        F = _constant(1.0)
        plan = d.StepPlan(k=512, c=0.5)
        a = d.euler_delta_solution(F, np.array([0.0]), plan, d.Centroid(), t0=0.0)
        b = d.euler_delta_solution(F, np.array([0.0]), plan, d.Centroid(), t0=0.25)
        assert np.array_equal(a.times + 0.25, b.times)
        assert np.array_equal(a.states, b.states)

    def test_same_seed_reruns_bitwise_identical(self):
        F = bang_bang()
        plan = d.StepPlan(k=300, c=1.0)
        runs = [
            d.euler_delta_solution(F, np.array([0.0]), plan, d.RandomSeeded(11))
            for _ in range(2)
        ]
        assert np.array_equal(runs[0].states, runs[1].states)
        assert np.array_equal(runs[0].velocities, runs[1].velocities)

    def test_different_seeds_differ(self):
        F = bang_bang()
        plan = d.StepPlan(k=300, c=1.0)
        a = d.euler_delta_solution(F, np.array([0.0]), plan, d.RandomSeeded(11))
        b = d.euler_delta_solution(F, np.array([0.0]), plan, d.RandomSeeded(12))
        assert not np.array_equal(a.states, b.states)

    def test_strategy_labels_recorded(self):
        F = _constant(1.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), d.StepPlan(k=4, c=0.25), d.VertexIndex(0))
        assert tr.strategy == "vertex:0"


class TestExitClipping:
    def test_breakpoint_exit_truncates_exactly(self):
        # v = 2 from 0 on [-1, 1]: the wall is met exactly at breakpoint 0.5
        F = _constant(2.0, lo=-1.0, hi=1.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), d.StepPlan(k=10, c=1.0, m=100.0), d.Centroid())
        assert tr.times.size == 6
        assert tr.final_time == 0.5 and tr.final_state[0] == 1.0
        assert tr.exit == d.ExitInfo(time=0.5, face="x1_max")

    def test_midinterval_exit_appends_clipped_row(self):
        F = _constant(2.0, lo=-1.0, hi=1.0)
        tr = d.euler_delta_solution(F, np.array([0.05]), d.StepPlan(k=10, c=1.0, m=100.0), d.Centroid())
        assert tr.exit is not None and tr.exit.face == "x1_max"
        assert tr.final_time == 0.475 and tr.final_state[0] == 1.0

    def test_min_face_exit(self):
        F = _constant(-2.0, lo=-1.0, hi=1.0)
        tr = d.euler_delta_solution(F, np.array([-0.05]), d.StepPlan(k=10, c=1.0, m=100.0), d.Centroid())
        assert tr.exit.face == "x1_min" and tr.final_state[0] == -1.0

    def test_2d_exit_reports_crossing_axis(self):
        tr = d.euler_delta_solution(
            sliding_2d(), np.array([0.0, 1.0]), d.StepPlan(k=2000, c=3.0), d.SlidingAware()
        )
        assert tr.exit.face == "x1_max"
        assert tr.final_state[0] == 2.0
        assert tr.final_time == 2.0


class TestRefine:
    def test_distances_halve_for_smooth_field(self):
        traj, rep = d.refine(
            decay(), np.array([1.0]), 1.0, d.Centroid(),
            k_schedule=(100, 200, 400, 800), tol=1e-3,
        )
        assert traj.k == 800
        assert rep.k_values == (100, 200, 400, 800)
        assert len(rep.sup_distances) == 3
        for a, b in zip(rep.sup_distances, rep.sup_distances[1:]):
            assert 0.4 < b / a < 0.6
        assert rep.converged

    def test_not_converged_is_reported_not_raised(self):
        traj, rep = d.refine(
            decay(), np.array([1.0]), 1.0, d.Centroid(),
            k_schedule=(10, 20), tol=1e-12,
        )
        assert not rep.converged and rep.tol == 1e-12

    def test_schedule_needs_two_levels(self):
        with pytest.raises(ValueError):
            d.refine(decay(), np.array([1.0]), 1.0, d.Centroid(), k_schedule=(100,))

    def test_schedule_must_increase(self):
        with pytest.raises(ValueError):
            d.refine(decay(), np.array([1.0]), 1.0, d.Centroid(), k_schedule=(200, 100))


class TestContinueToBoundary:
    def test_reaches_the_wall_with_shrinking_legs(self):
        F = _constant(1.0)
        tr = d.continue_to_boundary(
            F, np.array([0.9]), d.Box(lo=(-1.0,), hi=(1.0,)),
            d.StepPlan(k=8, c=1.0), d.Centroid(), t_max=1.0,
        )
        assert tr.exit is not None and tr.exit.face == "x1_max"
        assert abs(tr.exit.time - 0.1) < 2e-9
        assert abs(tr.final_state[0] - 1.0) < 2e-9

    def test_t_max_reached_without_exit(self):
        tr = d.continue_to_boundary(
            decay(), np.array([0.5]), d.Box(lo=(-1.0,), hi=(1.0,)),
            d.StepPlan(k=16, c=1.0), d.Centroid(), t_max=2.0,
        )
        assert tr.exit is None
        assert tr.final_time == 2.0

    def test_zero_velocity_near_wall_stagnates(self):
        # enormous bound forces vanishing legs while the state never moves
        steep = d.SingleValuedMap(
            f=lambda x: 1e12 * (x - 0.5), domain=d.Box(lo=(-1.0,), hi=(1.0,))
        )
        with pytest.raises(d.SolverStagnationError):
            d.continue_to_boundary(
                steep, np.array([0.5]), d.Box(lo=(-1.0,), hi=(1.0,)),
                d.StepPlan(k=2, c=1.0), d.Centroid(), t_max=1.0,
            )

    def test_start_on_boundary_rejected(self):
        with pytest.raises(ValueError):
            d.continue_to_boundary(
                _constant(1.0), np.array([1.0]), d.Box(lo=(-1.0,), hi=(1.0,)),
                d.StepPlan(k=8, c=1.0), d.Centroid(), t_max=1.0,
            )


class TestVerifyDeltaSolution:
    def test_honest_run_has_zero_residuals(self):
        F = _constant(0.0, lo=-5.0, hi=5.0)
        tr = d.euler_delta_solution(F, np.array([1.0]), d.StepPlan(k=8, c=1.0), d.Centroid())
        rep = d.verify_delta_solution(tr, F)
        assert rep.passed and float(rep.residuals.max()) == 0.0

    def test_fabricated_drift_is_caught_with_exact_residual(self):
        # velocity 1 against F = {0} with delta = 0.1: residual 0.9 per leg
        F = _constant(0.0, lo=-5.0, hi=5.0)
        tr = d.Trajectory(
            times=np.array([0.0, 0.5, 1.0]),
            states=np.array([[0.0], [0.5], [1.0]]),
            velocities=np.array([[1.0], [1.0]]),
            delta=0.1, h=0.5, m=0.0, k=2,
        )
        rep = d.verify_delta_solution(tr, F)
        assert not rep.passed
        assert rep.residuals.tolist() == [0.9, 0.9]
        assert rep.failing == 2

    def test_battery_runs_verify_across_strategies(self):
        for mk, x0 in ((relay, np.array([0.5])), (bang_bang, np.array([0.0]))):
            F = mk()
            m = 1.25 * d.estimate_bound(F, F.domain)
            for strat in (d.VertexIndex(0), d.Centroid(), d.SlidingAware()):
                plan = d.StepPlan.from_safety(r=0.4, m=m, k=50)
                tr = d.euler_delta_solution(F, x0, plan, strat)
                assert d.verify_delta_solution(tr, F).passed


class TestEquicontinuity:
    def test_constant_slope_passes_its_own_bound(self):
        F = _constant(1.0)
        tr = d.euler_delta_solution(F, np.array([0.0]), d.StepPlan(k=32, c=1.0), d.Centroid())
        rep = d.equicontinuity_check([tr], 1.0)
        assert rep.passed and rep.max_ratio == 1.0

    def test_slope_above_bound_is_located(self):
        tr = d.Trajectory(
            times=np.array([0.0, 1.0, 1.5]),
            states=np.array([[0.0], [0.0], [1.0]]),
            velocities=np.array([[0.0], [2.0]]),
            delta=0.0, h=1.0, m=2.0, k=2,
        )
        rep = d.equicontinuity_check([tr], 1.0)
        assert not rep.passed
        assert rep.max_ratio == 2.0
        assert rep.violations == ((0, 1, 2, 2.0),)
        assert d.equicontinuity_check([tr], 2.0).passed


class TestTrajectoryFiles:
    def test_round_trip_is_byte_identical(self, tmp_path):
        tr = d.euler_delta_solution(
            bang_bang(), np.array([0.0]), d.StepPlan(k=64, c=1.0), d.RandomSeeded(5), seed=5
        )
        p = tmp_path / "traj.csv"
        d.write_trajectory(tr, p)
        first = p.read_bytes()
        meta_first = (tmp_path / "traj.meta").read_bytes()
        back = d.read_trajectory(p)
        assert np.array_equal(back.times, tr.times)
        assert np.array_equal(back.states, tr.states)
        assert np.array_equal(back.velocities, tr.velocities)
        assert back.delta == tr.delta and back.k == tr.k
        d.write_trajectory(back, p)
        assert p.read_bytes() == first
        assert (tmp_path / "traj.meta").read_bytes() == meta_first

    def test_exit_info_survives_round_trip(self, tmp_path):
        F = _constant(2.0, lo=-1.0, hi=1.0)
        tr = d.euler_delta_solution(F, np.array([0.05]), d.StepPlan(k=10, c=1.0, m=100.0), d.Centroid())
        p = tmp_path / "traj.csv"
        d.write_trajectory(tr, p)
        back = d.read_trajectory(p)
        assert back.exit == tr.exit

    def test_malformed_row_names_file_and_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,x1,v1\n0.0,1.0,1.0\n1.0,2.0\n")
        (tmp_path / "bad.meta").write_text(
            '{\n  "delta": 0.1,\n  "exit": null,\n  "h": 1.0,\n  "k": 1,\n'
            '  "m": 0.0,\n  "seed": null,\n  "strategy": ""\n}\n'
        )
        with pytest.raises(ValueError, match=r"bad\.csv:3"):
            d.read_trajectory(p)
