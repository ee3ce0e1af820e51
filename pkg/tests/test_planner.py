import numpy as np
import pytest

from koopflow.data import MeasurementConfig
from koopflow.ensemble import Ensemble
from koopflow.errors import BudgetExhaustedError
from koopflow.fields import (Domain, LinearField, cross_mask, free_mask,
                             make_vortex_test)
from koopflow.gp import GPRegressor, Kernel
from koopflow.planner import (Campaign, EnsembleEstimator, GPEstimator,
                              metric_mask, next_active, serpentine_lattice)

from oracles import brute_force_argmax

UNIT = Domain(0.0, 1.0, 0.0, 1.0)


class TestNextActive:
    def test_unique_maximum_selected(self):
        _, _, pts = UNIT.grid(5, 5)
        values = np.zeros(25)
        values[13] = 1.0
        idx, point = next_active(values, pts, UNIT, [], tol=0.01)
        assert idx == 13
        assert np.allclose(point, pts[13])

    def test_visited_maximum_skipped(self):
        _, _, pts = UNIT.grid(5, 5)
        values = np.linspace(0, 1, 25)
        best = pts[24]
        idx, _ = next_active(values, pts, UNIT, [best], tol=0.01)
        assert idx == 23

    def test_matches_brute_force_on_random_maps(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            nx, ny = rng.integers(4, 12, size=2)
            dom = Domain(0.0, 1.0, 0.0, 1.0)
            if rng.random() < 0.5:
                mask_grid = rng.random((7, 7)) < 0.15
                dom = dom.with_mask(
                    cross_mask(dom, 7, 7, 0.0, 0.0))  # empty cross
                dom.obstacle_mask.blocked[:] = mask_grid
            _, _, pts = dom.grid(nx, ny)
            values = rng.normal(size=nx * ny)
            n_visited = rng.integers(0, 5)
            visited = [pts[rng.integers(0, nx * ny)] for _ in range(n_visited)]
            tol = float(rng.uniform(0.01, 0.2))
            eligible = free_mask(dom, pts, visited, tol)
            expected = brute_force_argmax(values, eligible)
            if expected is None:
                with pytest.raises(BudgetExhaustedError):
                    next_active(values, pts, dom, visited, tol)
            else:
                idx, _ = next_active(values, pts, dom, visited, tol)
                assert idx == expected

    def test_tie_breaks_to_lowest_index(self):
        _, _, pts = UNIT.grid(4, 4)
        values = np.ones(16)
        idx, _ = next_active(values, pts, UNIT, [], tol=0.01)
        assert idx == 0

    def test_exhausted_domain_raises(self):
        _, _, pts = UNIT.grid(3, 3)
        with pytest.raises(BudgetExhaustedError):
            next_active(np.ones(9), pts, UNIT, list(pts), tol=0.01)


class TestSerpentine:
    def test_nine_point_pattern(self):
        pts = serpentine_lattice(UNIT, 9)
        # first three share the lowest row, left to right
        assert np.allclose(pts[:3, 1], pts[0, 1])
        assert pts[0, 0] < pts[1, 0] < pts[2, 0]
        # next three share the middle row, right to left
        assert np.allclose(pts[3:6, 1], pts[3, 1])
        assert pts[3, 0] > pts[4, 0] > pts[5, 0]
        assert pts[3, 1] > pts[0, 1]

    def test_half_cell_margin(self):
        pts = serpentine_lattice(UNIT, 16)
        assert np.allclose(pts[0], [0.125, 0.125])

    def test_visits_n_distinct_points(self):
        for n in (1, 4, 9, 25, 36):
            pts = serpentine_lattice(UNIT, n)
            assert pts.shape == (n, 2)
            assert np.unique(pts, axis=0).shape[0] == n

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            serpentine_lattice(UNIT, 10)


class TestMetricMask:
    def test_masks_obstacle_cells_only(self):
        field = make_vortex_test()
        _, _, pts = field.domain.grid(21, 21)
        mask = metric_mask(field.domain, pts)
        assert not mask.all()
        assert mask.any()
        blocked = field.domain.obstacle_mask.blocked_at(pts)
        assert np.array_equal(mask, ~blocked)


def linear_campaign(sampler="uniform", estimator_kind="enkode", n_total=9,
                    seed=0, noise=0.0, nu=0, epochs=2000, lr=1e-2):
    a = np.array([[0.0, 0.6], [-0.6, 0.0]])
    field = LinearField(a, Domain(-1, 1, -1, 1))
    dt = 0.05
    _, _, grid_pts = field.domain.grid(12, 12)
    ss = np.random.SeedSequence(seed).spawn(3)
    measurement = MeasurementConfig(noise, dt, ss[1])
    if estimator_kind == "enkode":
        ens = Ensemble.create(field.domain, nu, 3, dt=dt, seed=ss[2],
                              learning_rate=lr, weight_decay=0.0,
                              epochs_per_update=epochs)
        est = EnsembleEstimator(ens)
    else:
        gp = GPRegressor(Kernel("matern32"), noise_var=1e-6, seed=ss[2])
        est = GPEstimator(gp, dt)
    rng = np.random.default_rng(ss[0])
    return Campaign(field, est, sampler, n_total, grid_pts, measurement,
                    exclusion_tol=2.0 / 11, init_rng=rng)


class TestCampaign:
    def test_single_sample_campaign(self):
        c = linear_campaign(sampler="active", n_total=1, epochs=50)
        result = c.run()
        assert result.completed
        assert len(result.reports) == 1
        assert result.visited.shape == (1, 2)

    def test_uniform_linear_field_high_cs(self):
        # noiseless linear dynamics with the identity lift are exactly
        # representable: final alignment should be essentially perfect
        c = linear_campaign(sampler="uniform", n_total=9)
        result = c.run()
        assert result.completed
        assert result.reports[-1].cs_mean > 0.99

    def test_dataset_grows_one_row_per_iteration(self):
        c = linear_campaign(sampler="active", n_total=6, epochs=30)
        result = c.run()
        assert [r.n for r in result.reports] == list(range(1, 7))
        assert result.visited.shape == (6, 2)

    def test_no_point_selected_twice_in_active_mode(self):
        c = linear_campaign(sampler="active", n_total=10, epochs=30)
        result = c.run()
        tol = c.exclusion_tol
        pts = result.visited
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        off_diag = d[~np.eye(len(pts), dtype=bool)]
        assert off_diag.min() > tol

    def test_active_selection_maximizes_exported_map(self):
        c = linear_campaign(sampler="active", n_total=5, epochs=30)
        result = c.run(snapshot_all=True)
        for n in range(1, 5):
            snap = result.snapshots[n]
            visited_before = result.visited[:n]
            chosen = result.visited[n]
            eligible = free_mask(c.domain, c.grid_points, visited_before,
                                 c.exclusion_tol)
            best = np.where(eligible, snap.uncertainty.values, -np.inf).max()
            chosen_idx = np.argmin(
                np.linalg.norm(c.grid_points - chosen, axis=1))
            assert snap.uncertainty.values[chosen_idx] == pytest.approx(best)

    def test_campaigns_bit_reproducible(self):
        r1 = linear_campaign(sampler="active", n_total=5, seed=3, epochs=40).run()
        r2 = linear_campaign(sampler="active", n_total=5, seed=3, epochs=40).run()
        assert np.array_equal(r1.visited, r2.visited)
        for a, b in zip(r1.reports, r2.reports):
            assert a.cs_mean == b.cs_mean
            assert a.epe_mean == b.epe_mean

    def test_gp_campaign_runs(self):
        c = linear_campaign(sampler="active", estimator_kind="gp", n_total=5)
        result = c.run()
        assert result.completed
        assert result.method == "gp-m32"
        assert len(result.reports) == 5

    def test_gp_uncertainty_argmax_in_free_space(self):
        c = linear_campaign(sampler="active", estimator_kind="gp", n_total=6)
        result = c.run(snapshot_all=True)
        for n in range(1, 6):
            chosen = result.visited[n]
            assert free_mask(c.domain, chosen, result.visited[:n],
                             c.exclusion_tol)

    def test_uniform_substitutes_blocked_lattice_points(self):
        field = make_vortex_test()
        dt = 0.01
        _, _, grid_pts = field.domain.grid(15, 15)
        ss = np.random.SeedSequence(1).spawn(3)
        ens = Ensemble.create(field.domain, 0, 2, dt=dt, seed=ss[2],
                              epochs_per_update=20)
        c = Campaign(field, EnsembleEstimator(ens), "uniform", 9, grid_pts,
                     MeasurementConfig(0.0, dt, ss[1]), exclusion_tol=1.0 / 14,
                     init_rng=np.random.default_rng(ss[0]))
        result = c.run()
        assert result.completed
        # the 3x3 lattice center (0.5, 0.5) is blocked by the cross: every
        # visited point must be free of the mask
        blocked = field.domain.obstacle_mask.blocked_at(result.visited)
        assert not np.any(blocked)

    def test_aborts_with_partial_results_when_domain_exhausts(self):
        c = linear_campaign(sampler="active", n_total=50, epochs=10)
        c.exclusion_tol = 0.9  # huge exclusion radius empties the grid fast
        result = c.run()
        assert result.status == "aborted"
        assert result.reason is not None
        assert 0 < len(result.reports) < 50

    def test_ocean_fixture_campaign(self):
        # gridded data with a NaN-derived obstacle mask runs end to end
        from pathlib import Path
        from koopflow.data import ingest_erddap_csv
        field = ingest_erddap_csv(Path(__file__).parent / "fixtures" / "ocean_sample.csv")
        _, _, grid_pts = field.domain.grid(20, 20)
        ss = np.random.SeedSequence(4).spawn(3)
        gp = GPRegressor(Kernel("matern32"), noise_var=1e-6, seed=ss[2])
        c = Campaign(field, GPEstimator(gp, 0.02), "active", 5, grid_pts,
                     MeasurementConfig(0.0, 0.02, ss[1]),
                     exclusion_tol=0.01, init_rng=np.random.default_rng(ss[0]))
        result = c.run()
        assert result.completed
        assert len(result.reports) == 5
        assert np.isfinite(result.reports[-1].epe_mean)
        blocked = field.domain.obstacle_mask.blocked_at(result.visited)
        assert not np.any(blocked)
