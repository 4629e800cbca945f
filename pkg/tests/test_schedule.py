import numpy as np
import pytest

from trajlab.errors import InvalidRangeError, NonMonotoneSpliceError
from trajlab.schedule import (
    SIGMA_MAX,
    SIGMA_MIN,
    TAU_MAX,
    TAU_MIN,
    GridKind,
    IndexConvention,
    SolverTag,
    build_noise_schedule,
    ddim_grid,
    dpm_grid,
    fragmented_plan,
    hybrid_grid,
    plan_to_csv,
    uniform_plan,
)


class TestNoiseSchedule:
    def test_table_matches_direct_product(self):
        sched = build_noise_schedule(1000, 0.00085, 0.012)
        betas = np.linspace(0.00085, 0.012, 1000)
        # independent oracle: explicit running product
        prod = 1.0
        expected = []
        for b in betas:
            prod *= 1.0 - b
            expected.append(prod)
        assert np.allclose(sched.alpha_bars, expected, rtol=1e-12)
        assert sched.alpha_bars[0] == pytest.approx(1.0 - 0.00085, abs=1e-15)

    def test_alpha_bar_near_data_end(self):
        sched = build_noise_schedule(1000, 0.00085, 0.012)
        # evaluator pinned to 1 at t=0, close to 1 - beta_start right after
        assert sched.alpha_bar(0.0) == 1.0
        assert sched.alpha_bar(0.0) == pytest.approx(1.0 - 0.00085, abs=1e-3)
        assert sched.alpha_bar(1.0 / 1000) == pytest.approx(1.0 - 0.00085, abs=1e-15)

    def test_constant_beta_hand_product(self):
        sched = build_noise_schedule(3, 0.1, 0.1 + 1e-12)
        assert np.allclose(sched.alpha_bars, [0.9, 0.81, 0.729], atol=1e-9)

    def test_monotone_and_in_range(self):
        sched = build_noise_schedule()
        assert np.all(np.diff(sched.alpha_bars) < 0)
        ts = np.linspace(0, 1, 777)
        vals = sched.alpha_bar(ts)
        assert np.all(vals > 0) and np.all(vals <= 1)

    def test_invalid_ranges(self):
        with pytest.raises(InvalidRangeError):
            build_noise_schedule(2, 0.1, 0.1)
        with pytest.raises(InvalidRangeError):
            build_noise_schedule(1, 0.001, 0.01)
        with pytest.raises(InvalidRangeError):
            build_noise_schedule(10, 0.0, 0.01)
        sched = build_noise_schedule()
        with pytest.raises(InvalidRangeError):
            sched.alpha_bar(1.5)


class TestGrids:
    def test_ddim_grid_values(self):
        # direct evaluation of the linear rule
        grid = ddim_grid(5)
        expected = [0.9999, 0.74995, 0.5, 0.25005, 0.0001]
        assert np.allclose(grid.values, expected, atol=1e-12)
        assert grid.kind is GridKind.DDIM_LINEAR

    def test_ddim_endpoints_only(self):
        assert np.allclose(ddim_grid(2).values, [TAU_MAX, TAU_MIN], atol=0)

    @pytest.mark.parametrize("T", [2, 3, 7, 16, 50])
    def test_ddim_constant_spacing(self, T):
        diffs = np.diff(ddim_grid(T).values)
        assert np.all(np.abs(diffs - diffs[0]) < 1e-12)

    def test_dpm_grid_values(self):
        grid = dpm_grid(3)
        middle = np.sqrt(SIGMA_MAX * SIGMA_MIN)
        assert np.allclose(grid.values, [0.99, middle, 0.01], atol=1e-12)
        assert grid.values[1] == pytest.approx(0.09950, abs=5e-6)

    def test_dpm_endpoints_only(self):
        assert np.allclose(dpm_grid(2).values, [SIGMA_MAX, SIGMA_MIN], atol=0)

    @pytest.mark.parametrize("T", [2, 3, 7, 16, 50])
    def test_dpm_constant_ratio(self, T):
        vals = dpm_grid(T).values
        ratios = vals[:-1] / vals[1:]
        assert np.all(np.abs(ratios - ratios[0]) < 1e-12)

    @pytest.mark.parametrize("make", [ddim_grid, dpm_grid])
    def test_endpoint_bands(self, make):
        for T in range(2, 13):
            vals = make(T).values
            assert 0.99 <= vals[0] < 1.0
            assert 0.0 < vals[-1] <= 0.01

    @pytest.mark.parametrize("make", [ddim_grid, dpm_grid])
    def test_short_grid_rejected(self, make):
        with pytest.raises(InvalidRangeError):
            make(1)


class TestHybridPlan:
    def test_reference_operating_point_from_data(self):
        plan = hybrid_grid(6, 1, 3)  # default FROM_DATA
        assert plan.dpm_steps_in_convention() == (1, 2, 3)
        tau, sigma = ddim_grid(6).values, dpm_grid(6).values
        expected = [tau[0], tau[1], sigma[2], sigma[3], sigma[4], tau[5]]
        assert np.allclose(plan.timesteps, expected, atol=0)
        assert np.all(np.diff(plan.timesteps) < 0)

    def test_from_noise_variant_of_same_window_is_non_monotone(self):
        # the same indices counted from the noise end splice sigma values
        # into the middle of the tau ramp, which breaks monotonicity
        with pytest.raises(NonMonotoneSpliceError) as err:
            hybrid_grid(6, 1, 3, IndexConvention.FROM_NOISE)
        assert err.value.index == 3

    def test_single_step_window_from_noise(self):
        plan = hybrid_grid(2, 0, 0, IndexConvention.FROM_NOISE)
        assert plan.solver_tags == (SolverTag.DPM, SolverTag.DDIM)
        assert np.allclose(plan.timesteps, [SIGMA_MAX, TAU_MIN], atol=0)

    def test_window_order_validated(self):
        with pytest.raises(InvalidRangeError):
            hybrid_grid(6, 3, 1)
        with pytest.raises(InvalidRangeError):
            hybrid_grid(6, 0, 6)

    def test_exhaustive_monotone_or_error(self):
        # every accepted plan is strictly decreasing; every rejection is
        # the dedicated splice error
        for T in range(2, 13):
            for conv in IndexConvention:
                for s1 in range(T):
                    for s2 in range(s1, T):
                        if s2 >= T:
                            continue
                        try:
                            plan = hybrid_grid(T, s1, s2, conv)
                        except NonMonotoneSpliceError:
                            continue
                        assert np.all(np.diff(plan.timesteps) < 0)

    def test_uniform_plans(self):
        ddim = uniform_plan(6, SolverTag.DDIM)
        dpm = uniform_plan(6, SolverTag.DPM)
        assert all(t is SolverTag.DDIM for t in ddim.solver_tags)
        assert all(t is SolverTag.DPM for t in dpm.solver_tags)
        assert np.allclose(ddim.timesteps, ddim_grid(6).values, atol=0)
        assert np.allclose(dpm.timesteps, dpm_grid(6).values, atol=0)

    def test_fragmented_plan_reanchors_each_segment(self):
        plan = fragmented_plan(11, 5, 10)
        assert plan.fragmented
        # the DPM segment restarts at its grid maximum: a non-monotone jump
        assert plan.timesteps[5] == SIGMA_MAX
        assert plan.timesteps[4] < plan.timesteps[5]
        assert len(plan) == 11
        assert plan.solver_tags[4] is SolverTag.DDIM
        assert plan.solver_tags[5] is SolverTag.DPM

    def test_csv_round_shape(self):
        plan = hybrid_grid(6, 1, 3)
        text = plan_to_csv(plan)
        lines = text.strip().splitlines()
        assert lines[0] == "step_index,timestep,solver_tag"
        assert len(lines) == 7
        # values survive a parse round trip exactly (repr serialization)
        parsed = [float(line.split(",")[1]) for line in lines[1:]]
        assert np.array_equal(np.array(parsed), plan.timesteps)

    def test_fingerprint_distinguishes_plans(self):
        a = hybrid_grid(6, 1, 3)
        b = hybrid_grid(6, 1, 4)
        assert a.fingerprint() != b.fingerprint()
        assert a.fingerprint() == hybrid_grid(6, 1, 3).fingerprint()
