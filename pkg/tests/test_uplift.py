import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from upliftemm import (
    ContinuousPlan,
    DiscretePlan,
    Emm,
    MarketSpec,
    DiscreteJumpSpec,
    TimeFunction,
    batch_weights,
    build_uplifted_emm,
    physical_emm,
    reduce_market,
    solve_unique_emm,
    uplift_batch,
    uplift_complete_neglect,
    uplift_continuous,
    uplift_general,
    verify_uplift,
)
from upliftemm.errors import InvalidIntensities, NotComplete, PlanMismatch

from conftest import (
    INTENSITIES,
    LOADINGS,
    RATE,
    SIGMA,
    make_three_stock_market,
    make_uniform_mark_market,
)


class TestCompleteNeglectUplift:
    def test_appends_physical_intensity(self, three_stock_market, neglect_plan):
        emm, fict, fict_emm = build_uplifted_emm(three_stock_market, neglect_plan)
        assert emm.theta[0].constant_value == pytest.approx(0.5, abs=1e-12)
        values = [fn.constant_value for fn in emm.intensities]
        assert values[:2] == pytest.approx([1.5, 1.2], abs=1e-12)
        # the neglected driver keeps its physical intensity object
        assert emm.intensities[2] is three_stock_market.jumps.intensities[2]

    def test_nothing_neglected_is_fictitious_solution(self, three_stock_market):
        # make the original complete by dropping the third driver entirely
        spec = MarketSpec(
            horizon=1.0, s0=three_stock_market.s0, alpha=three_stock_market.alpha,
            rate=RATE, sigma=three_stock_market.sigma,
            jumps=DiscreteJumpSpec(
                intensities=INTENSITIES[:2],
                loadings=[row[:2] for row in LOADINGS],
            ),
        )
        plan = DiscretePlan(retain=(0, 1))
        emm, _, fict_emm = build_uplifted_emm(spec, plan)
        assert emm.theta == fict_emm.theta
        assert emm.intensities == fict_emm.intensities

    def test_brownian_reduction_pads_theta_with_zeros(self):
        # two stocks, three Brownians, no jumps: keep the first two columns
        spec = MarketSpec(
            horizon=1.0, s0=[10.0, 20.0],
            alpha=[0.06, 0.03], rate=0.02,
            sigma=[[0.2, 0.0, 0.1], [0.1, 0.3, 0.05]],
        )
        plan = DiscretePlan(keep_brownians=(0, 1))
        emm, fict, fict_emm = build_uplifted_emm(spec, plan)
        assert len(emm.theta) == 3
        assert emm.theta[2].constant_value == 0.0
        # theta~ = truncated-sigma^{-1} (alpha - r), the complete-market solution
        sig = np.array([[0.2, 0.0], [0.1, 0.3]])
        expected = np.linalg.solve(sig, np.array([0.04, 0.01]))
        got = [emm.theta[0].constant_value, emm.theta[1].constant_value]
        assert np.allclose(got, expected, atol=1e-12)
        assert verify_uplift(emm, spec).max_residual < 1e-12

    def test_sequential_equals_one_shot(self):
        # four drivers, neglect two of them, uplift one at a time
        spec = MarketSpec(
            horizon=1.0, s0=[100.0, 50.0, 25.0],
            alpha=list(np.array([0.19, 0.155, -0.06]) + RATE), rate=RATE,
            sigma=[[s] for s in SIGMA],
            jumps=DiscreteJumpSpec(
                intensities=[2.0, 1.0, 3.0, 0.5],
                loadings=[
                    [0.1, -0.2, 0.2, 0.15],
                    [0.05, 0.1, -0.15, 0.3],
                    [-0.1, 0.3, 0.25, -0.2],
                ],
            ),
        )
        one_shot, _, fict_emm = build_uplifted_emm(
            spec, DiscretePlan(retain=(0, 1), neglect=(2, 3))
        )
        # sequential: first extend to drivers {0, 1, 2}, then to all four
        mid = MarketSpec(
            horizon=1.0, s0=spec.s0, alpha=spec.alpha, rate=RATE, sigma=spec.sigma,
            jumps=DiscreteJumpSpec(
                intensities=spec.jumps.intensities[:3],
                loadings=tuple(row[:3] for row in spec.jumps.loadings),
            ),
        )
        step1 = uplift_complete_neglect(
            fict_emm, mid, DiscretePlan(retain=(0, 1), neglect=(2,))
        )
        step2 = uplift_complete_neglect(
            step1, spec, DiscretePlan(retain=(0, 1, 2), neglect=(3,))
        )
        assert step2.theta == one_shot.theta
        assert step2.intensities == one_shot.intensities

    def test_incomplete_fictitious_market_refused(self, three_stock_market):
        plan = DiscretePlan(retain=(0,), neglect=(1, 2))
        with pytest.raises(NotComplete), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            build_uplifted_emm(three_stock_market, plan)

    def test_nonpositive_solution_refused(self):
        y, lam, sigma = 0.2, 1.0, 0.25
        alpha = RATE + sigma * 0.3 + (lam - (-0.5)) * y
        spec = MarketSpec(
            horizon=1.0, s0=[1.0, 1.0], alpha=[alpha, RATE], rate=RATE,
            sigma=[[sigma], [0.4]],
            jumps=DiscreteJumpSpec(intensities=[lam], loadings=[[y], [0.0]]),
        )
        with pytest.raises(InvalidIntensities):
            solve_unique_emm(spec)


class TestBatchUplift:
    def test_members_split_by_weight(self, three_stock_market, batch_plan):
        emm, fict, fict_emm = build_uplifted_emm(three_stock_market, batch_plan)
        gamma_star = fict_emm.intensities[1].constant_value
        vals = [fn.constant_value for fn in emm.intensities]
        assert vals[1] == pytest.approx(gamma_star * 0.25, abs=1e-14)
        assert vals[2] == pytest.approx(gamma_star * 0.75, abs=1e-14)
        assert verify_uplift(emm, three_stock_market).passed

    def test_no_premium_batch_keeps_physical(self):
        # alpha built so the batch solves exactly to gamma* = gamma
        spec = make_three_stock_market()
        gamma, deltas = batch_weights(spec, (1, 2))
        ybar = [
            sum(d.constant_value * LOADINGS[i][m] for d, m in zip(deltas, (1, 2)))
            for i in range(3)
        ]
        theta, lam0_star = 0.4, 1.7
        alpha = [
            RATE + SIGMA[i] * theta + (2.0 - lam0_star) * LOADINGS[i][0] + 0.0 * ybar[i]
            for i in range(3)
        ]
        spec = MarketSpec(
            horizon=1.0, s0=spec.s0, alpha=alpha, rate=RATE, sigma=spec.sigma,
            jumps=spec.jumps,
        )
        emm, _, fict_emm = build_uplifted_emm(
            spec, DiscretePlan(retain=(0,), batches=((1, 2),))
        )
        assert fict_emm.intensities[1].constant_value == pytest.approx(4.0, abs=1e-12)
        assert emm.intensities[1].constant_value == pytest.approx(1.0, abs=1e-12)
        assert emm.intensities[2].constant_value == pytest.approx(3.0, abs=1e-12)

    def test_weight_ratios_preserved_time_varying(self, time_varying_market):
        grid = np.linspace(0.0, 1.0, 256)
        plan = DiscretePlan(retain=(0,), batches=((1, 2),))
        emm, fict, fict_emm = build_uplifted_emm(time_varying_market, plan, grid)
        gamma_star = np.atleast_1d(fict_emm.intensities[1].value(grid))
        jumps = time_varying_market.jumps
        gamma = np.atleast_1d(jumps.intensities[1].value(grid)) + np.atleast_1d(
            jumps.intensities[2].value(grid)
        )
        for m in (1, 2):
            lam_m_star = np.atleast_1d(emm.intensities[m].value(grid))
            lam_m = np.atleast_1d(jumps.intensities[m].value(grid))
            assert np.max(np.abs(lam_m_star / gamma_star - lam_m / gamma)) < 1e-12

    def test_trinomial_structure(self):
        # one retained driver and one 2-member batch: the solved vector
        # (theta*, lam0*, gamma*) maps to (theta*, lam0*, gamma* d, gamma* (1-d))
        spec = make_three_stock_market()
        plan = DiscretePlan(retain=(0,), batches=((1, 2),))
        emm, fict, fict_emm = build_uplifted_emm(spec, plan)
        gamma_star = fict_emm.intensities[1].constant_value
        delta = INTENSITIES[1] / (INTENSITIES[1] + INTENSITIES[2])
        assert emm.intensities[1].constant_value == pytest.approx(
            gamma_star * delta, abs=1e-13
        )
        assert emm.intensities[2].constant_value == pytest.approx(
            gamma_star * (1 - delta), abs=1e-13
        )


class TestContinuousUplift:
    def test_uniform_two_cell_density_values(self, uniform_mark_market):
        plan = ContinuousPlan(cells=((-0.5, 0.0), (0.0, 0.5)))
        given = Emm(theta=(0.0,), intensities=(1.5, 3.5))  # probabilities .3/.7
        emm = uplift_continuous(given, uniform_mark_market, plan)
        f = emm.jump_measure.density_value
        assert f(-0.25) == pytest.approx(0.6, abs=1e-12)
        assert f(0.25) == pytest.approx(1.4, abs=1e-12)

    def test_physical_probabilities_reproduce_density(self, uniform_mark_market):
        plan = ContinuousPlan(cells=((-0.5, 0.0), (0.0, 0.5)))
        given = Emm(theta=(0.0,), intensities=(2.0, 2.0))
        emm = uplift_continuous(given, uniform_mark_market, plan)
        ys = np.linspace(-0.49, 0.49, 33)
        base = uniform_mark_market.jumps.density
        assert np.allclose(emm.jump_measure.density_value(ys), base.pdf(ys), atol=1e-12)

    def test_cell_masses_and_means_against_quadrature(self, uniform_mark_market):
        plan = ContinuousPlan(cells=((-0.5, 0.0), (0.0, 0.5)))
        given = Emm(theta=(0.0,), intensities=(1.5, 3.5))
        emm = uplift_continuous(given, uniform_mark_market, plan)
        mm = emm.jump_measure
        fict = reduce_market(uniform_mark_market, plan)
        probs = mm.cell_probabilities(0.0)
        for k, (a, b) in enumerate(plan.cells):
            mass, _ = quad(lambda y: mm.density_value(y), a, b)
            assert mass == pytest.approx(probs[k], abs=1e-8)
            num, _ = quad(lambda y: y * mm.density_value(y), a, b)
            loading = fict.spec.jumps.loadings[0][k].constant_value
            assert num / mass == pytest.approx(loading, abs=1e-8)
        total, _ = quad(
            lambda y: mm.density_value(y), -0.5, 0.5, points=[0.0], limit=200
        )
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_reweighted_density_vanishes_off_the_support(self):
        # the base density has a zero-mass bin: the reweighted density must
        # be zero there too (equivalent measures share null sets)
        from upliftemm import ContinuousJumpSpec, Density

        base = Density(
            "histogram", (0.0, 1.0),
            {"edges": [0.0, 0.3, 0.6, 1.0], "weights": [0.5, 0.0, 0.5]},
        )
        spec = MarketSpec(
            horizon=1.0, s0=[10.0, 20.0], alpha=[0.05, 0.03], rate=0.02,
            sigma=[[0.2], [0.3]],
            jumps=ContinuousJumpSpec(density=base, total_intensity=2.0),
        )
        plan = ContinuousPlan(cells=((0.0, 0.3), (0.3, 1.0)))
        given = Emm(theta=(0.0,), intensities=(0.8, 1.1))
        emm = uplift_continuous(given, spec, plan)
        assert emm.jump_measure.density_value(0.45) == 0.0
        assert emm.jump_measure.density_value(1.5) == 0.0

    def test_remainder_keeps_physical_measure(self, uniform_mark_market):
        plan = ContinuousPlan(cells=((-0.5, 0.0),), neglect_remainder=True)
        given = Emm(theta=(0.0,), intensities=(1.0,))
        emm = uplift_continuous(given, uniform_mark_market, plan)
        mm = emm.jump_measure
        # phi = d(lambda~)/d(lambda) is one on the remainder
        assert mm.phi(0.25, 0.0) == pytest.approx(1.0, abs=1e-12)
        # total = 1.0 (cell) + 4 * 0.5 (physical remainder)
        assert mm.total_intensity(0.0) == pytest.approx(3.0, abs=1e-12)

    def test_end_to_end_two_stock_remainder_market(self):
        spec = make_uniform_mark_market()
        plan = ContinuousPlan(cells=((-0.5, 0.0),), neglect_remainder=True)
        emm, fict, fict_emm = build_uplifted_emm(spec, plan)
        rep = verify_uplift(emm, spec)
        assert rep.passed, rep.max_residual


class TestGeneralDispatch:
    def test_discrete_dispatch_matches_specialized(self, three_stock_market):
        plan = DiscretePlan(retain=(0,), batches=((1, 2),))
        fict = reduce_market(three_stock_market, plan)
        fict_emm = solve_unique_emm(fict.spec)
        via_general = uplift_general(fict_emm, three_stock_market, plan)
        via_batch = uplift_batch(fict_emm, three_stock_market, plan)
        assert via_general.theta == via_batch.theta
        assert via_general.intensities == via_batch.intensities

    def test_plan_kind_checked(self, three_stock_market, uniform_mark_market):
        plan = ContinuousPlan(cells=((-0.5, 0.0), (0.0, 0.5)))
        given = Emm(theta=(0.0,), intensities=(1.0, 1.0))
        with pytest.raises(PlanMismatch):
            uplift_continuous(given, three_stock_market, plan)


class TestVerify:
    def test_perturbed_intensity_fails(self, three_stock_market, neglect_plan):
        emm, _, _ = build_uplifted_emm(three_stock_market, neglect_plan)
        tampered = Emm(
            theta=emm.theta,
            intensities=(
                emm.intensities[0],
                emm.intensities[1],
                TimeFunction.constant(emm.intensities[2].constant_value + 0.1),
            ),
        )
        rep = verify_uplift(tampered, three_stock_market)
        assert not rep.passed
        min_loading = np.min(np.abs(np.array(LOADINGS)[:, 2]))
        assert rep.max_residual >= 0.1 * min_loading - 1e-12

    def test_physical_measure_on_zero_premium_market(self):
        spec = MarketSpec(
            horizon=1.0, s0=[1.0], alpha=[0.05], rate=0.05, sigma=[[0.2]],
            jumps=DiscreteJumpSpec(intensities=[2.0], loadings=[[0.0]]),
        )
        rep = verify_uplift(physical_emm(spec), spec)
        assert rep.max_residual == 0.0

    def test_canonical_uplift_residual_tiny(self, three_stock_market, neglect_plan):
        emm, _, _ = build_uplifted_emm(three_stock_market, neglect_plan)
        assert verify_uplift(emm, three_stock_market).max_residual < 1e-12


class TestGridwiseTimeVarying:
    def test_grid_solution_matches_per_time_construction(self, time_varying_market):
        grid = np.linspace(0.0, 1.0, 256)
        plan = DiscretePlan(retain=(0,), batches=((1, 2),))
        emm, fict, fict_emm = build_uplifted_emm(time_varying_market, plan, grid)
        # constructed targets: theta = 0.5, lam0* = 1.5, gamma* = 0.8 gamma(t)
        theta_vals = np.atleast_1d(emm.theta[0].value(grid))
        assert np.max(np.abs(theta_vals - 0.5)) < 1e-12
        lam0 = np.atleast_1d(emm.intensities[0].value(grid))
        assert np.max(np.abs(lam0 - 1.5)) < 1e-12
        gamma = 2.0 + grid
        gamma_star = np.atleast_1d(fict_emm.intensities[1].value(grid))
        assert np.max(np.abs(gamma_star - 0.8 * gamma)) < 1e-11
        assert verify_uplift(emm, time_varying_market, grid).passed
