import math

import numpy as np
import pytest

from symode import expressions as ex
from symode import metrics
from symode.datasets import GenConfig, sample_system
from symode.integrate import Trajectory


def rotation_truth():
    return ex.OdeSystem((ex.neg(ex.var(1)), ex.var(0)))


def spiral_prediction():
    return ex.OdeSystem(
        (
            ex.add(ex.neg(ex.var(1)), ex.mul(ex.const(0.1), ex.var(0))),
            ex.add(ex.var(0), ex.mul(ex.const(0.1), ex.var(1))),
        )
    )


def traj_1d(values):
    values = np.asarray(values, dtype=float)
    return Trajectory(times=np.arange(len(values), dtype=float), states=values[:, None])


class TestRSquared:
    def test_perfect_prediction(self):
        t = traj_1d([0, 1, 2, 3])
        assert metrics.r_squared(t, t) == 1.0

    def test_mean_prediction_scores_zero(self):
        truth = traj_1d([0, 1, 2, 3])
        mean = traj_1d([1.5, 1.5, 1.5, 1.5])
        assert metrics.r_squared(truth, mean) == 0.0

    def test_hand_arithmetic(self):
        truth = traj_1d([0, 1, 2, 3])
        pred = traj_1d([0, 1, 2, 4])  # SSE 1, SST 5
        assert metrics.r_squared(truth, pred) == pytest.approx(0.8)

    def test_non_finite_prediction_is_failure(self):
        truth = traj_1d([0, 1, 2, 3])
        bad = Trajectory(
            times=truth.times, states=np.array([[0.0], [1.0], [2.0], [3.0]])
        )
        object.__setattr__(bad, "states", np.array([[0.0], [np.inf], [2.0], [3.0]]))
        assert metrics.r_squared(truth, bad) == metrics.R2_FAILURE

    def test_grid_mismatch_raises(self):
        a = traj_1d([0, 1, 2])
        b = Trajectory(times=np.array([0.0, 1.0, 2.5]), states=np.zeros((3, 1)))
        with pytest.raises(ValueError):
            metrics.r_squared(a, b)

    def test_joint_over_components(self):
        times = np.arange(3.0)
        truth = Trajectory(times=times, states=np.array([[0.0, 10.0], [1.0, 10.0], [2.0, 10.0]]))
        pred = Trajectory(times=times, states=np.array([[0.0, 10.0], [1.0, 11.0], [2.0, 10.0]]))
        # SST = 2 (first component only), SSE = 1 (second component miss)
        assert metrics.r_squared(truth, pred) == pytest.approx(0.5)


class TestPR2Above:
    def test_counting_with_failures(self):
        assert metrics.p_r2_above([1.0, 0.95, 0.5, -math.inf]) == 0.5

    def test_all_above(self):
        assert metrics.p_r2_above([0.91, 0.99]) == 1.0

    def test_threshold_is_strict(self):
        assert metrics.p_r2_above([0.9]) == 0.0

    def test_reported_fraction_shape(self):
        # 38 of 62 scored systems -> 0.613 to table precision
        scores = [0.95] * 38 + [0.1] * 24
        assert round(metrics.p_r2_above(scores), 3) == 0.613

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics.p_r2_above([])


class TestDivergence:
    def test_rotation_truth_is_divergence_free(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = rng.uniform(-3, 3, 2)
            assert metrics.divergence_at(rotation_truth(), p) == 0.0

    def test_spiral_prediction_constant_source(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            p = rng.uniform(-3, 3, 2)
            assert metrics.divergence_at(spiral_prediction(), p) == pytest.approx(0.2)

    def test_quadratic_1d(self):
        system = ex.OdeSystem((ex.pow2(ex.var(0)),))
        assert metrics.divergence_at(system, [3.0]) == pytest.approx(6.0)

    def test_matches_finite_differences_on_random_systems(self):
        config = GenConfig(n_points=10)
        rng = np.random.default_rng(9)
        checked = 0
        for seed in range(20):
            system = sample_system(config, seed)
            d = system.dimension
            for _ in range(10):
                p = rng.uniform(-2, 2, d)
                analytic = metrics.divergence_at(system, p)
                h = 1e-5
                numeric = 0.0
                for k in range(d):
                    hi, lo = p.copy(), p.copy()
                    hi[k] += h
                    lo[k] -= h
                    numeric += (
                        ex.evaluate(system.equations[k], hi)
                        - ex.evaluate(system.equations[k], lo)
                    ) / (2 * h)
                if not (np.isfinite(analytic) and np.isfinite(numeric)):
                    continue
                if abs(numeric) > 1e6:  # too steep for the FD oracle
                    continue
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-6)
                checked += 1
        assert checked >= 100


class TestDivergenceField:
    def test_rotation_field_all_zero(self):
        region = metrics.Region(lower=(-2, -2), upper=(2, 2), resolution=(8, 8))
        field = metrics.divergence_field(rotation_truth(), region)
        assert field.valid.all()
        assert np.all(field.values == 0.0)

    def test_singular_line_masked(self):
        system = ex.OdeSystem((ex.inv(ex.var(0)),))
        region = metrics.Region(lower=(-1,), upper=(1,), resolution=(5,))  # grid hits 0
        field = metrics.divergence_field(system, region)
        assert field.valid.sum() == 4 and not field.valid[2]
        assert np.isnan(field.values[2])

    def test_grid_shape(self):
        region = metrics.Region(lower=(0, 0), upper=(1, 1), resolution=(2, 2))
        field = metrics.divergence_field(rotation_truth(), region)
        assert field.points.shape == (4, 2) and field.values.shape == (4,)

    def test_csv_export(self, tmp_path):
        region = metrics.Region(lower=(0, 0), upper=(1, 1), resolution=(2, 2))
        field = metrics.divergence_field(spiral_prediction(), region)
        path = tmp_path / "field.csv"
        field.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x_0,x_1,div,valid"
        assert len(lines) == 5

    def test_grid_cap(self):
        with pytest.raises(ValueError, match="cap"):
            metrics.Region(lower=(0, 0), upper=(1, 1), resolution=(2000, 2000))


class TestDivDiff:
    def region(self):
        return metrics.Region(lower=(-2, -1), upper=(2, 3), resolution=(10, 10))

    def test_identical_systems_score_zero(self):
        assert metrics.div_diff(rotation_truth(), rotation_truth(), self.region()) == 0.0

    def test_rotation_vs_spiral_is_log_of_1p2(self):
        value = metrics.div_diff(rotation_truth(), spiral_prediction(), self.region())
        assert value == pytest.approx(math.log(1.2), abs=1e-9)
        other = metrics.Region(lower=(5, 5), upper=(9, 9), resolution=(4, 4))
        assert metrics.div_diff(rotation_truth(), spiral_prediction(), other) == pytest.approx(
            math.log(1.2), abs=1e-9
        )

    def test_symmetry(self):
        a, b = rotation_truth(), spiral_prediction()
        r = self.region()
        assert metrics.div_diff(a, b, r) == metrics.div_diff(b, a, r)

    def test_monotone_in_source_strength(self):
        r = self.region()
        truth = rotation_truth()
        values = []
        for c in (0.05, 0.1, 0.2, 0.4):
            pred = ex.OdeSystem(
                (
                    ex.add(ex.neg(ex.var(1)), ex.mul(ex.const(c), ex.var(0))),
                    ex.add(ex.var(0), ex.mul(ex.const(c), ex.var(1))),
                )
            )
            values.append(metrics.div_diff(truth, pred, r))
        assert values == sorted(values) and len(set(values)) == 4

    def test_region_only_dependence_is_bitwise(self):
        r1 = metrics.Region(lower=(-2, -1), upper=(2, 3), resolution=(10, 10))
        r2 = metrics.Region(lower=(-2, -1), upper=(2, 3), resolution=(10, 10))
        a = metrics.div_diff(rotation_truth(), spiral_prediction(), r1)
        b = metrics.div_diff(rotation_truth(), spiral_prediction(), r2)
        assert a == b

    def test_degenerate_region_rejected(self):
        truth = ex.OdeSystem((ex.sqrt(ex.var(0)),))  # divergence NaN for x < 0
        pred = ex.OdeSystem((ex.var(0),))
        region = metrics.Region(lower=(-10,), upper=(1,), resolution=(12,))
        with pytest.raises(metrics.DegenerateRegionError):
            metrics.div_diff(truth, pred, region)

    def test_masked_evaluation_succeeds_above_floor(self):
        truth = ex.OdeSystem((ex.sqrt(ex.var(0)),))
        pred = ex.OdeSystem((ex.mul(ex.const(1.001), ex.sqrt(ex.var(0))),))
        region = metrics.Region(lower=(-1,), upper=(9,), resolution=(11,))  # 1 of 11 invalid
        value = metrics.div_diff(truth, pred, region)
        assert np.isfinite(value) and value > 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            metrics.div_diff(rotation_truth(), ex.OdeSystem((ex.var(0),)), self.region())


class TestRegionFromTrajectory:
    def test_unit_box_with_padding(self):
        times = np.linspace(0, 1, 5)
        states = np.stack([np.linspace(0, 1, 5), np.linspace(0, 1, 5)], axis=1)
        region = metrics.region_from_trajectory(Trajectory(times=times, states=states))
        assert region.lower == (-0.1, -0.1) and region.upper == (1.1, 1.1)
        assert region.resolution == (20, 20)

    def test_constant_trajectory_min_width(self):
        traj = Trajectory(times=np.linspace(0, 1, 4), states=np.full((4, 1), 5.0))
        region = metrics.region_from_trajectory(traj)
        assert region.lower[0] == pytest.approx(5.0 - 5e-4)
        assert region.upper[0] == pytest.approx(5.0 + 5e-4)

    def test_resolution_by_dimension(self):
        times = np.linspace(0, 1, 4)
        for d, g in ((1, 20), (2, 20), (3, 10), (4, 6)):
            traj = Trajectory(times=times, states=np.random.default_rng(0).uniform(0, 1, (4, d)))
            region = metrics.region_from_trajectory(traj)
            assert region.resolution == (g,) * d
        assert metrics.Region(lower=(0,) * 4, upper=(1,) * 4, resolution=(6,) * 4).n_points == 1296
